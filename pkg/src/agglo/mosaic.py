"""Mosaic packing of low-resolution images for a fixed high-resolution teacher."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .fmap import ArrayLike, FeatureMap, as_array


@dataclass(frozen=True)
class MosaicLayout:
    canvas: int
    k: int
    cell: int
    sub: int
    pad_before: int
    patch: int
    # per-cell (y, x) offset of the sub-image inside its cell, raster order
    offsets: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        if not self.offsets:
            object.__setattr__(self, "offsets", ((self.pad_before, self.pad_before),) * (self.k * self.k))
        self.validate()

    @property
    def pad_after(self) -> int:
        return self.cell - self.sub - self.pad_before

    @property
    def cells(self) -> int:
        return self.k * self.k

    @property
    def grid(self) -> int:
        """Canvas side in tokens."""
        return self.canvas // self.patch

    @property
    def sub_tokens(self) -> int:
        return self.sub // self.patch

    def cell_origin(self, i: int) -> tuple[int, int]:
        """Top-left pixel of sub-image ``i`` on the canvas."""
        cy, cx = divmod(i, self.k)
        oy, ox = self.offsets[i]
        return cy * self.cell + oy, cx * self.cell + ox

    def validate(self) -> None:
        p = self.patch
        if min(self.canvas, self.k, self.cell, self.sub, p) < 1 or self.pad_before < 0:
            raise ValidationError("layout sizes must be positive")
        if self.k * self.cell > self.canvas:
            raise ValidationError("cells overflow the canvas")
        if any(v % p for v in (self.canvas, self.cell, self.sub, self.pad_before)):
            raise ValidationError(f"canvas, cell, sub and padding must be multiples of patch {p}")
        if self.sub + self.pad_before > self.cell:
            raise ValidationError("sub-image does not fit in its cell")
        if len(self.offsets) != self.cells:
            raise ValidationError("need one offset per cell")
        for oy, ox in self.offsets:
            if oy % p or ox % p or not (0 <= oy <= self.cell - self.sub and 0 <= ox <= self.cell - self.sub):
                raise ValidationError(f"bad cell offset {(oy, ox)}")

    def to_dict(self) -> dict:
        return {
            "canvas": self.canvas, "k": self.k, "cell": self.cell, "sub": self.sub,
            "pad_before": self.pad_before, "pad_after": self.pad_after, "patch": self.patch,
            "offsets": [list(o) for o in self.offsets],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MosaicLayout":
        try:
            return cls(
                canvas=int(d["canvas"]), k=int(d["k"]), cell=int(d["cell"]), sub=int(d["sub"]),
                pad_before=int(d["pad_before"]), patch=int(d["patch"]),
                offsets=tuple((int(a), int(b)) for a, b in d.get("offsets", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad mosaic layout: {exc}") from None

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


def layout_for(student_res: int, canvas: int, patch: int, jitter_seed: int | None = None) -> MosaicLayout:
    """k = canvas // student_res cells per side, sub-images centered in their
    cells with the leading pad rounded down to a patch multiple.

    With ``jitter_seed`` each sub-image instead lands at a random
    patch-aligned offset within its cell.
    """
    if min(student_res, canvas, patch) < 1:
        raise ValidationError("sizes must be positive")
    if student_res > canvas:
        raise ValidationError(f"student resolution {student_res} exceeds canvas {canvas}")
    if student_res % patch or canvas % patch:
        raise ValidationError(f"resolutions must be multiples of patch {patch}")
    k = canvas // student_res
    cell = (canvas // k) // patch * patch
    pad_before = ((cell - student_res) // 2) // patch * patch
    offsets: tuple[tuple[int, int], ...] = ()
    if jitter_seed is not None:
        rng = np.random.default_rng(jitter_seed)
        slots = (cell - student_res) // patch + 1
        offsets = tuple(
            (int(rng.integers(slots)) * patch, int(rng.integers(slots)) * patch) for _ in range(k * k)
        )
    return MosaicLayout(canvas=canvas, k=k, cell=cell, sub=student_res, pad_before=pad_before,
                        patch=patch, offsets=offsets)


def pack(images: Sequence[ArrayLike], layout: MosaicLayout, pad_value: float = 0.0) -> FeatureMap:
    """Place ``k*k`` equally-sized images raster-order onto the canvas."""
    arrs = [as_array(im) for im in images]
    if len(arrs) != layout.cells:
        raise ValidationError(f"layout needs {layout.cells} images, got {len(arrs)}")
    shapes = {a.shape for a in arrs}
    if len(shapes) != 1:
        raise ValidationError("mosaic images must share one shape")
    h, w, c = arrs[0].shape
    if (h, w) != (layout.sub, layout.sub):
        raise ValidationError(f"images must be {layout.sub}x{layout.sub}, got {h}x{w}")
    canvas = np.full((layout.canvas, layout.canvas, c), float(pad_value))
    for i, a in enumerate(arrs):
        y, x = layout.cell_origin(i)
        canvas[y : y + h, x : x + w] = a
    return FeatureMap(canvas)


def unpack_images(canvas: ArrayLike, layout: MosaicLayout) -> list[FeatureMap]:
    """Pixel-level inverse of :func:`pack`."""
    x = as_array(canvas)
    if x.shape[:2] != (layout.canvas, layout.canvas):
        raise ValidationError("canvas does not match layout")
    out = []
    for i in range(layout.cells):
        y, xo = layout.cell_origin(i)
        out.append(FeatureMap(x[y : y + layout.sub, xo : xo + layout.sub]))
    return out


def unpack_features(features: ArrayLike, layout: MosaicLayout) -> list[FeatureMap]:
    """Crop each sub-image's token block out of patch-level canvas features."""
    f = as_array(features)
    g = layout.grid
    if f.shape[:2] != (g, g):
        raise ValidationError(f"feature grid {f.shape[:2]} does not match layout grid {g}x{g}")
    n = layout.sub_tokens
    out = []
    for i in range(layout.cells):
        y, x = layout.cell_origin(i)
        ty, tx = y // layout.patch, x // layout.patch
        out.append(FeatureMap(f[ty : ty + n, tx : tx + n]))
    return out


def pad_to_canvas(image: ArrayLike, canvas: int, pad_value: float = 0.0) -> FeatureMap:
    """Place one image at the top-left of a ``canvas``-sized frame."""
    x = as_array(image)
    h, w, c = x.shape
    if h > canvas or w > canvas:
        raise ValidationError(f"image {h}x{w} larger than canvas {canvas}")
    out = np.full((canvas, canvas, c), float(pad_value))
    out[:h, :w] = x
    return FeatureMap(out)


def crop_features(features: ArrayLike, image_res: int, patch: int) -> FeatureMap:
    """Top-left token block covering the unpadded ``image_res`` region."""
    f = as_array(features)
    n = image_res // patch
    if image_res % patch or n > f.shape[0] or n > f.shape[1]:
        raise ValidationError("crop does not align with the feature grid")
    return FeatureMap(f[:n, :n])


def teacher_cost_ratio(k: int) -> float:
    """Teacher passes per sub-image with mosaics, relative to one padded pass each."""
    if k < 1:
        raise ValidationError("k must be positive")
    return 1.0 / (k * k)
