"""PCA false-color rendering of feature maps."""
from __future__ import annotations

import numpy as np

from .fmap import ArrayLike, FeatureMap, as_array, pca_project


def pca_image(fmap: ArrayLike, scale: int = 1) -> tuple[FeatureMap, list[str]]:
    """Top-3 principal components as RGB in [0, 1], nearest-upscaled by ``scale``.

    Maps with fewer than three channels are zero-padded; flat components
    render as mid-gray.
    """
    x = as_array(fmap)
    warnings = []
    if scale < 1:
        raise ValueError("scale must be a positive integer")
    c = x.shape[2]
    if c < 3:
        warnings.append(f"feature map has {c} channel(s); padding to 3 with zeros")
        x = np.concatenate([x, np.zeros(x.shape[:2] + (3 - c,))], axis=2)
    dims = 3 if x.shape[0] * x.shape[1] >= 3 else 1
    proj = pca_project(x, dims)
    rgb = proj.map.data.copy()
    flat = rgb.reshape(-1, dims)
    flat_cols = flat.max(axis=0) == flat.min(axis=0)
    rgb[..., flat_cols] = 0.5
    if dims == 1:
        rgb = np.repeat(rgb, 3, axis=2)
    if proj.degenerate:
        warnings.append("feature covariance is rank-deficient; some components are flat")
    if scale > 1:
        rgb = rgb.repeat(scale, axis=0).repeat(scale, axis=1)
    return FeatureMap(rgb), warnings
