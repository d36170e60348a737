"""Dense feature maps and the handful of operations every other module leans on."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np

from .errors import ValidationError
from .linalg import sym_eig


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """An (H, W, C) grid of float64 values.

    The array is copied on construction and marked read-only, so a FeatureMap
    can be shared freely.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValidationError(f"feature map must be (H, W, C), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValidationError(f"feature map dimensions must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("feature map contains NaN or Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    def tokens(self) -> np.ndarray:
        """Row-major (H*W, C) view of the data."""
        return self.data.reshape(-1, self.channels)

    def __eq__(self, other):
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"FeatureMap(shape={self.shape})"


ArrayLike = Union[FeatureMap, np.ndarray]


def as_array(x: ArrayLike) -> np.ndarray:
    if isinstance(x, FeatureMap):
        return x.data
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValidationError(f"expected an (H, W, C) array, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    variance: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


def channel_stats(fmap: ArrayLike) -> ChannelStats:
    """Per-channel mean and population variance (divisor H*W)."""
    x = as_array(fmap)
    flat = x.reshape(-1, x.shape[-1])
    mean = flat.mean(axis=0)
    var = ((flat - mean) ** 2).mean(axis=0)
    return ChannelStats(mean=mean, variance=np.maximum(var, 0.0))


@lru_cache(maxsize=256)
def _lerp_table(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per output sample: lower source index, upper source index, fraction."""
    src = np.maximum((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    for a in (i0, i1, frac):
        a.setflags(write=False)
    return i0, i1, frac


@lru_cache(maxsize=256)
def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    i0, i1, frac = _lerp_table(n_in, n_out)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    m.setflags(write=False)
    return m


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """1-D bilinear interpolation weights, shape (n_out, n_in).

    Half-pixel centers (align_corners off), source coordinates clamped at the
    edges. Resizing a map is ``Ry @ X @ Rx.T`` applied per channel, which is
    also what makes the backward pass a pair of transposes.
    """
    if n_in < 1 or n_out < 1:
        raise ValidationError(f"resize extents must be positive, got {n_in} -> {n_out}")
    return _resize_matrix(int(n_in), int(n_out))


def resize_array(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = x.shape[:2]
    if (h, w) == (out_h, out_w):
        return x.copy()
    if min(out_h, out_w) < 1:
        raise ValidationError(f"output size must be >= 1, got {out_h}x{out_w}")
    # a + f * (b - a) rather than the matrix product, so constants stay exact
    i0, i1, f = _lerp_table(h, out_h)
    lo = x[i0]
    x = lo + f[:, None, None] * (x[i1] - lo)
    i0, i1, f = _lerp_table(w, out_w)
    lo = x[:, i0]
    return lo + f[None, :, None] * (x[:, i1] - lo)


def resize_array_backward(g: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Adjoint of :func:`resize_array` (gradient w.r.t. the source map)."""
    out_h, out_w = g.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return g.copy()
    ry = resize_matrix(in_h, out_h)
    rx = resize_matrix(in_w, out_w)
    return np.einsum("ai,abc,bj->ijc", ry, g, rx)


def bilinear_resize(src: ArrayLike, out_h: int, out_w: int) -> FeatureMap:
    if out_h < 1 or out_w < 1:
        raise ValidationError(f"output size must be >= 1, got {out_h}x{out_w}")
    x = as_array(src)
    if x.size == 0:
        raise ValidationError("cannot resize an empty map")
    return FeatureMap(resize_array(x, out_h, out_w))


@dataclass(frozen=True)
class PCAProjection:
    map: FeatureMap
    components: np.ndarray  # (C, dims), columns are principal directions
    eigenvalues: np.ndarray
    degenerate: bool


def pca_project(fmap: ArrayLike, dims: int, rel_tol: float = 1e-10) -> PCAProjection:
    """Project tokens onto their top principal components, each rescaled to [0, 1].

    Components whose eigenvalue is numerically zero are replaced by zeros and
    the result is flagged ``degenerate``.
    """
    x = as_array(fmap)
    h, w, c = x.shape
    if dims < 1 or dims > c:
        raise ValidationError(f"dims must be in [1, {c}], got {dims}")
    if h * w < dims:
        raise ValidationError(f"need at least {dims} tokens, got {h * w}")
    tokens = x.reshape(-1, c)
    centered = tokens - tokens.mean(axis=0)
    cov = centered.T @ centered / len(tokens)
    eig = sym_eig((cov + cov.T) / 2)
    lam = eig.eigenvalues[:dims]
    vecs = eig.eigenvectors[:, :dims].copy()
    floor = rel_tol * max(float(eig.eigenvalues[0]), 0.0)
    live = lam > max(floor, 1e-300)
    vecs[:, ~live] = 0.0

    proj = centered @ vecs
    lo = proj.min(axis=0)
    span = proj.max(axis=0) - lo
    out = np.zeros_like(proj)
    ok = span > 0
    out[:, ok] = (proj[:, ok] - lo[ok]) / span[ok]
    return PCAProjection(
        map=FeatureMap(out.reshape(h, w, dims)),
        components=vecs,
        eigenvalues=lam,
        degenerate=not bool(live.all()),
    )
