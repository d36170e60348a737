"""Scale-equivariance measure: how much normalized features move across input sizes."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .fmap import ArrayLike, FeatureMap, as_array, resize_array

EPS = 1e-8


class Direction(str, enum.Enum):
    DOWN = "down"
    UP = "up"


@dataclass(frozen=True)
class ScaleSeries:
    maps: tuple[FeatureMap, ...]
    direction: Direction = Direction.DOWN

    def __post_init__(self):
        maps = tuple(m if isinstance(m, FeatureMap) else FeatureMap(m) for m in self.maps)
        if len(maps) < 2:
            raise ValidationError("a scale series needs at least two maps")
        if len({m.channels for m in maps}) != 1:
            raise ValidationError("all maps in a series must share the channel count")
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "direction", Direction(self.direction))


def scale_variance(
    maps: Sequence[ArrayLike],
    direction: Direction | str = Direction.DOWN,
    ddof: int = 1,
) -> float:
    """Mean across-scale variance of reference-normalized, size-aligned features.

    The reference is the map with the fewest elements (``down``) or the most
    (``up``); its per-channel mean and population std normalize every map,
    all maps are bilinearly resized to the smallest (largest) H and W, and
    the variance across the stack (``ddof=1`` by default, matching
    ``torch.var``) is averaged over positions and channels.
    """
    arrs = [as_array(m) for m in maps]
    if len(arrs) < 2:
        raise ValidationError("a scale series needs at least two maps")
    if len({a.shape[2] for a in arrs}) != 1:
        raise ValidationError("all maps in a series must share the channel count")
    direction = Direction(direction)
    pick = min if direction is Direction.DOWN else max
    ref = pick(arrs, key=lambda a: a.size)
    th = pick(a.shape[0] for a in arrs)
    tw = pick(a.shape[1] for a in arrs)

    flat = ref.reshape(-1, ref.shape[2])
    mean = flat.mean(axis=0)
    std = np.sqrt(((flat - mean) ** 2).mean(axis=0))
    stack = np.stack([resize_array((a - mean) / (std + EPS), th, tw) for a in arrs])
    # shift by one member first: same variance, and exactly 0 for identical maps
    return float(np.var(stack - stack[0], axis=0, ddof=ddof).mean())


FeatureGenerator = Callable[[FeatureMap], FeatureMap]
ImageSource = Callable[[int], FeatureMap]


def equivariance_suite(
    generator: FeatureGenerator,
    images: Iterable[ImageSource],
    fine: Sequence[int],
    coarse: Sequence[int],
    direction: Direction | str = Direction.DOWN,
) -> tuple[float, float]:
    """Corpus-mean scale variance on a fine and a coarse resolution ladder.

    Each entry of ``images`` renders one image at a requested resolution.
    """
    fine_vals, coarse_vals = [], []
    for render in images:
        for ladder, acc in ((fine, fine_vals), (coarse, coarse_vals)):
            feats = [generator(render(res)) for res in ladder]
            acc.append(scale_variance(feats, direction))
    if not fine_vals:
        raise ValidationError("empty image corpus")
    return float(np.mean(fine_vals)), float(np.mean(coarse_vals))


def tiled(generator: FeatureGenerator, tile: int) -> FeatureGenerator:
    """Run ``generator`` on non-overlapping ``tile``-sized crops and reassemble."""

    def run(image: FeatureMap) -> FeatureMap:
        x = as_array(image)
        h, w = x.shape[:2]
        if h % tile or w % tile:
            raise ValidationError(f"image {h}x{w} is not a multiple of tile {tile}")
        rows = []
        for y in range(0, h, tile):
            row = [as_array(generator(FeatureMap(x[y : y + tile, xx : xx + tile]))) for xx in range(0, w, tile)]
            rows.append(np.concatenate(row, axis=1))
        return FeatureMap(np.concatenate(rows, axis=0))

    return run
