"""A small patch-based student with per-teacher adaptor heads.

Backbone: patch embedding + cropped learned position table, then ``depth``
blocks of (box-window token mixing -> linear, residual) and (LayerNorm ->
linear -> GELU -> linear, residual). Each teacher gets a patch adaptor and,
if it emits a summary, a summary adaptor fed with the mean patch token. An
adaptor is Linear -> LayerNorm -> GELU -> Linear.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from ..errors import ValidationError
from ..fmap import as_array
from . import nn

Tap = Union[int, tuple[int, int]]


@dataclass(frozen=True)
class StudentConfig:
    patch: int = 8
    width: int = 32
    depth: int = 2
    ff_hidden: int = 64
    adaptor_hidden: int = 32
    max_grid: int = 16
    window: int = 3
    in_channels: int = 3
    # which backbone activations feed the adaptors: block index or inclusive (first, last) range
    feature_tap: Tap = -1
    init_seed: int = 0


@dataclass(frozen=True)
class HeadSpec:
    patch_channels: int
    summary_channels: Optional[int] = None


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    h, w, c = image.shape
    if h % patch or w % patch:
        raise ValidationError(f"image {h}x{w} is not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    return image.reshape(gh, patch, gw, patch, c).transpose(0, 2, 1, 3, 4).reshape(gh, gw, patch * patch * c)


@dataclass
class BackboneForward:
    grid: tuple[int, int]
    blocks: list  # per-block output (gh, gw, D)
    caches: list
    embed_cache: tuple
    features: np.ndarray = field(default=None)  # adaptor input after tap selection
    tap: Tap = -1


class Student:
    def __init__(self, config: StudentConfig, heads: dict[str, HeadSpec]):
        self.config = config
        self.heads = dict(heads)
        self.params: dict[str, np.ndarray] = {}
        rng = np.random.default_rng([0x57D, config.init_seed])
        cfg = config
        d = cfg.width
        pin = cfg.patch * cfg.patch * cfg.in_channels
        self._init_linear(rng, "embed", pin, d)
        self.params["pos"] = np.zeros((cfg.max_grid, cfg.max_grid, d))
        for i in range(cfg.depth):
            self._init_linear(rng, f"block{i}.mix", d, d, scale=0.5)
            self._init_ln(f"block{i}.ln", d)
            self._init_linear(rng, f"block{i}.ff1", d, cfg.ff_hidden)
            self._init_linear(rng, f"block{i}.ff2", cfg.ff_hidden, d, scale=0.5)
        for tid, spec in sorted(self.heads.items()):
            self._init_adaptor(rng, f"head.{tid}.patch", d, spec.patch_channels)
            if spec.summary_channels:
                self._init_adaptor(rng, f"head.{tid}.summary", d, spec.summary_channels)
        self.resolve_tap(cfg.feature_tap)

    # -- parameters ---------------------------------------------------------

    def _init_linear(self, rng, name, n_in, n_out, scale=1.0):
        self.params[f"{name}.W"] = rng.normal(0.0, scale / np.sqrt(n_in), size=(n_in, n_out))
        self.params[f"{name}.b"] = np.zeros(n_out)

    def _init_ln(self, name, d):
        self.params[f"{name}.g"] = np.ones(d)
        self.params[f"{name}.b"] = np.zeros(d)

    def _init_adaptor(self, rng, name, d, out):
        h = self.config.adaptor_hidden
        self._init_linear(rng, f"{name}.fc1", d, h)
        self._init_ln(f"{name}.ln", h)
        self._init_linear(rng, f"{name}.fc2", h, out)

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def backbone_param_names(self) -> list[str]:
        return [k for k in self.params if not k.startswith("head.")]

    # -- taps ---------------------------------------------------------------

    def resolve_tap(self, tap: Tap) -> tuple[int, int]:
        depth = self.config.depth
        if isinstance(tap, (tuple, list)):
            if len(tap) != 2:
                raise ValidationError(f"dense tap must be (first, last), got {tap!r}")
            a, b = (int(v) + depth if int(v) < 0 else int(v) for v in tap)
            if a > b:
                raise ValidationError(f"empty tap range {tap!r}")
        else:
            a = b = int(tap) + depth if int(tap) < 0 else int(tap)
        if not (0 <= a < depth and 0 <= b < depth):
            raise ValidationError(f"tap {tap!r} out of range for depth {depth}")
        return a, b

    def select(self, blocks: Sequence[np.ndarray], tap: Tap) -> np.ndarray:
        """Sparse tap = one block's output; dense tap = mean over a block range."""
        a, b = self.resolve_tap(tap)
        if a == b:
            return blocks[a]
        return sum(blocks[a : b + 1]) / (b - a + 1)

    # -- backbone -----------------------------------------------------------

    def forward(self, image, tap: Optional[Tap] = None) -> BackboneForward:
        cfg = self.config
        p = self.params
        x = patchify(as_array(image), cfg.patch)
        gh, gw = x.shape[:2]
        if gh > cfg.max_grid or gw > cfg.max_grid:
            raise ValidationError(f"{gh}x{gw} token grid exceeds max_grid {cfg.max_grid}")
        h, emb_cache = nn.linear_fwd(p, "embed", x)
        h = h + p["pos"][:gh, :gw]
        blocks, caches = [], []
        for i in range(cfg.depth):
            mixed = nn.box_mix(h, cfg.window)
            m, c_mix = nn.linear_fwd(p, f"block{i}.mix", mixed)
            u = h + m
            ln, c_ln = nn.layernorm_fwd(p, f"block{i}.ln", u)
            a, c_ff1 = nn.linear_fwd(p, f"block{i}.ff1", ln)
            g, c_gelu = nn.gelu_fwd(a)
            v, c_ff2 = nn.linear_fwd(p, f"block{i}.ff2", g)
            h = u + v
            blocks.append(h)
            caches.append((c_mix, c_ln, c_ff1, c_gelu, c_ff2))
        tap = cfg.feature_tap if tap is None else tap
        out = BackboneForward(grid=(gh, gw), blocks=blocks, caches=caches, embed_cache=emb_cache, tap=tap)
        out.features = self.select(blocks, tap)
        return out

    def backward(self, fwd: BackboneForward, g_features: np.ndarray, grads: dict) -> None:
        """Backpropagate a gradient on ``fwd.features`` through the backbone."""
        cfg = self.config
        p = self.params
        a, b = self.resolve_tap(fwd.tap)
        share = g_features / (b - a + 1)
        g = np.zeros_like(g_features)
        for i in reversed(range(cfg.depth)):
            if a <= i <= b:
                g = g + share
            c_mix, c_ln, c_ff1, c_gelu, c_ff2 = fwd.caches[i]
            # h_out = u + ff(ln(u)); u = h_in + mix(h_in)
            gv = nn.linear_bwd(p, c_ff2, g, grads)
            ga = nn.gelu_bwd(c_gelu, gv)
            gln = nn.linear_bwd(p, c_ff1, ga, grads)
            gu = g + nn.layernorm_bwd(p, c_ln, gln, grads)
            gm = nn.linear_bwd(p, c_mix, gu, grads)
            g = gu + nn.box_mix_bwd(gm, cfg.window)
        gh, gw = fwd.grid
        gpos = np.zeros_like(p["pos"])
        gpos[:gh, :gw] = g
        nn._acc(grads, "pos", gpos)
        nn.linear_bwd(p, fwd.embed_cache, g, grads)

    # -- adaptors -----------------------------------------------------------

    def adaptor_fwd(self, name: str, x: np.ndarray):
        p = self.params
        h1, c1 = nn.linear_fwd(p, f"{name}.fc1", x)
        h2, c2 = nn.layernorm_fwd(p, f"{name}.ln", h1)
        h3, c3 = nn.gelu_fwd(h2)
        y, c4 = nn.linear_fwd(p, f"{name}.fc2", h3)
        return y, (c1, c2, c3, c4)

    def adaptor_bwd(self, cache, g: np.ndarray, grads: dict) -> np.ndarray:
        p = self.params
        c1, c2, c3, c4 = cache
        g = nn.linear_bwd(p, c4, g, grads)
        g = nn.gelu_bwd(c3, g)
        g = nn.layernorm_bwd(p, c2, g, grads)
        return nn.linear_bwd(p, c1, g, grads)

    def patch_head(self, tid: str, fwd: BackboneForward):
        return self.adaptor_fwd(f"head.{tid}.patch", fwd.features)

    def summary_input(self, fwd: BackboneForward) -> np.ndarray:
        return fwd.features.reshape(-1, fwd.features.shape[-1]).mean(axis=0)

    def summary_head(self, tid: str, fwd: BackboneForward):
        if not self.heads[tid].summary_channels:
            raise ValidationError(f"teacher {tid!r} has no summary adaptor")
        return self.adaptor_fwd(f"head.{tid}.summary", self.summary_input(fwd))

    def summary_input_bwd(self, fwd: BackboneForward, g: np.ndarray) -> np.ndarray:
        gh, gw = fwd.grid
        return np.broadcast_to(g / (gh * gw), fwd.features.shape).copy()


def student_forward(model: Student, image, taps: Sequence[Tap] = ()):
    """Return ``(tap activations, final tokens, summary vector)``.

    The summary vector is the mean final token (before any summary adaptor).
    """
    fwd = model.forward(image, tap=-1)
    tapped = [model.select(fwd.blocks, t) for t in taps]
    return tapped, fwd.blocks[-1], model.summary_input(fwd)
