"""Resolution-independent procedural images.

An image is a continuous function on the unit square (soft-edged colored
blobs over a smooth gradient), so the same "image" can be rendered at any
resolution without resampling artifacts.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import ValidationError
from ..fmap import FeatureMap


@dataclass(frozen=True)
class ProceduralImage:
    seed: int
    blobs: int = 6

    @cached_property
    def _params(self):
        rng = np.random.default_rng([0x1A6E, self.seed])
        base = rng.uniform(0.2, 0.8, size=3)
        tilt = rng.normal(0.0, 0.25, size=(2, 3))
        centers = rng.uniform(0.0, 1.0, size=(self.blobs, 2))
        radii = rng.uniform(0.08, 0.3, size=self.blobs)
        colors = rng.uniform(-0.6, 0.6, size=(self.blobs, 3))
        return base, tilt, centers, radii, colors

    def render(self, res: int) -> FeatureMap:
        if res < 1:
            raise ValidationError("resolution must be positive")
        base, tilt, centers, radii, colors = self._params
        u = (np.arange(res) + 0.5) / res
        yy, xx = np.meshgrid(u, u, indexing="ij")
        img = base + (yy - 0.5)[..., None] * tilt[0] + (xx - 0.5)[..., None] * tilt[1]
        for (cy, cx), rad, col in zip(centers, radii, colors):
            d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
            # soft disc: edge width fixed in image units, so edges look the same at every size
            w = 0.5 * (1.0 - np.tanh((d - rad) / 0.03))
            img = img + w[..., None] * col
        return FeatureMap(1.0 / (1.0 + np.exp(-4.0 * (img - 0.5))))


def image_stream(seed: int):
    """Infinite deterministic sequence of procedural images."""
    i = 0
    while True:
        yield ProceduralImage(seed=int(np.random.SeedSequence([seed, i]).generate_state(1)[0]))
        i += 1


def corpus(seed: int, n: int) -> list[ProceduralImage]:
    it = image_stream(seed)
    return [next(it) for _ in range(n)]
