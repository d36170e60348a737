"""Procedural stand-ins for the foundation-model teachers.

Three families keep the structural contrasts that matter for distillation:

* ``patch-stats``: fixed low resolution, per-patch color mean/std (CLIP-like).
* ``oriented-gradient``: any resolution, patch color plus image gradients in
  normalized coordinates, so outputs are scale-consistent (DINOv2-like).
* ``segment``: fixed high resolution, strictly patch-local with a sharp
  nonlinearity that produces flat regions with hard boundaries (SAM-like).

Only elementwise arithmetic is used on the per-patch path so that a
patch-local teacher gives bit-identical features for a patch wherever it
sits on the canvas.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from ..errors import ValidationError
from ..fmap import FeatureMap, as_array, resize_array

KINDS = ("patch-stats", "oriented-gradient", "segment")
GRADIENT_GRID = 8


def softsign(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.abs(x))


def _dense(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # broadcast-multiply-sum rather than matmul: per-element results must not
    # depend on where a row sits in the batch
    return (x[..., :, None] * w).sum(axis=-2)


def patch_means(image: np.ndarray, patch: int) -> np.ndarray:
    h, w, c = image.shape
    blocks = image.reshape(h // patch, patch, w // patch, patch, c)
    return blocks.mean(axis=(1, 3))


@dataclass(frozen=True)
class TeacherSpec:
    id: str
    kind: str
    native_res: Optional[int]  # None means any patch-multiple resolution
    channels: int
    variance_scale: float = 1.0
    summary: bool = False
    summary_channels: int = 8
    patch: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown teacher kind {self.kind!r}")
        if self.channels < 1 or self.channels & (self.channels - 1):
            raise ValidationError("teacher channels must be a power of two")
        if self.summary and (self.summary_channels < 1 or self.summary_channels & (self.summary_channels - 1)):
            raise ValidationError("summary channels must be a power of two")
        if not self.variance_scale > 0:
            raise ValidationError("variance_scale must be positive")
        if self.native_res is not None and self.native_res % self.patch:
            raise ValidationError("native resolution must be a multiple of the patch size")

    @property
    def any_res(self) -> bool:
        return self.native_res is None

    @property
    def patch_local(self) -> bool:
        return self.kind == "segment"

    def to_dict(self) -> dict:
        return dict(vars(self))


class Teacher:
    def __init__(self, spec: TeacherSpec):
        self.spec = spec

    @cached_property
    def _weights(self):
        s = self.spec
        rng = np.random.default_rng([0x7EAC, s.seed, sum(map(ord, s.id)), KINDS.index(s.kind)])
        n_in = {"patch-stats": 6, "oriented-gradient": 9, "segment": 3}[s.kind]
        hidden = 16
        a = rng.normal(0.0, 1.5 / np.sqrt(n_in), size=(n_in, hidden))
        a0 = rng.normal(0.0, 0.5, size=hidden)
        b = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, s.channels))
        sm = rng.normal(0.0, 1.0 / np.sqrt(s.channels), size=(s.channels, s.summary_channels))
        return a, a0, b, sm

    def accepts(self, res: int) -> bool:
        s = self.spec
        if res % s.patch:
            return False
        return s.any_res or res == s.native_res

    def __call__(self, image) -> tuple[FeatureMap, Optional[np.ndarray]]:
        """Patch features (H/patch, W/patch, C) and the optional summary vector."""
        s = self.spec
        x = as_array(image)
        h, w = x.shape[:2]
        if h % s.patch or w % s.patch:
            raise ValidationError(f"image {h}x{w} not divisible by patch {s.patch}")
        if not s.any_res and (h, w) != (s.native_res, s.native_res):
            raise ValidationError(f"teacher {s.id!r} only accepts {s.native_res}x{s.native_res}, got {h}x{w}")
        a, a0, b, sm = self._weights
        m = patch_means(x, s.patch)
        if s.kind == "patch-stats":
            sq = patch_means(x * x, s.patch)
            std = np.sqrt(np.maximum(sq - m * m, 0.0))
            inp = np.concatenate([m - 0.5, 4.0 * std], axis=-1)
            feat = _dense(softsign(_dense(inp, a) + a0), b)
        elif s.kind == "oriented-gradient":
            gh, gw = m.shape[:2]
            # derivatives per unit image length, taken on a fixed coarse grid so
            # their magnitude does not grow with input resolution
            base = resize_array(x, GRADIENT_GRID, GRADIENT_GRID)
            gy = resize_array(np.gradient(base, axis=0) * GRADIENT_GRID, gh, gw)
            gx = resize_array(np.gradient(base, axis=1) * GRADIENT_GRID, gh, gw)
            inp = np.concatenate([m - 0.5, 0.3 * gy, 0.3 * gx], axis=-1)
            feat = _dense(softsign(_dense(inp, a) + a0), b)
        else:
            pre = _dense(m - 0.5, a) + a0
            feat = _dense(softsign(8.0 * pre), b)
        feat = feat * s.variance_scale
        summary = None
        if s.summary:
            summary = softsign(feat.reshape(-1, s.channels).mean(axis=0) @ sm / s.variance_scale) * s.variance_scale
        return FeatureMap(feat), summary


def default_teachers(seed: int = 0, low_res: int = 32, high_res: int = 64, sam_scale: float = 10.0) -> list[TeacherSpec]:
    """A CLIP-like, a DINOv2-like and a SAM-like teacher at desk scale."""
    return [
        TeacherSpec("clip", "patch-stats", low_res, 8, 0.1, summary=True, seed=seed),
        TeacherSpec("dino", "oriented-gradient", None, 16, 1.0, summary=True, seed=seed),
        TeacherSpec("sam", "segment", high_res, 16, sam_scale, summary=False, seed=seed),
    ]
