"""Bipartite soft matching over token grids with strided sink layouts.

Targets ("sinks") sit on a strided lattice; every other token is a source.
Each source looks only at its single most similar target, and the ``r``
sources with the highest best-affinity are folded into their targets. The
plan keeps enough bookkeeping to broadcast merged tokens back to every
original position.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .fmap import ArrayLike, FeatureMap, as_array

UNMERGED = -1


@dataclass(frozen=True)
class SinkLayout:
    stride_y: int
    stride_x: int
    offset_y: int = 0
    offset_x: int = 0

    def __post_init__(self):
        if self.stride_y < 1 or self.stride_x < 1:
            raise ValidationError("strides must be positive")
        if not (0 <= self.offset_y < self.stride_y and 0 <= self.offset_x < self.stride_x):
            raise ValidationError("offsets must lie in [0, stride)")

    @classmethod
    def square(cls, stride: int, offset: int = 0) -> "SinkLayout":
        return cls(stride, stride, offset, offset)

    def target_count(self, rows: int, cols: int) -> int:
        ny = max(0, math.ceil((rows - self.offset_y) / self.stride_y))
        nx = max(0, math.ceil((cols - self.offset_x) / self.stride_x))
        return ny * nx

    def target_mask(self, rows: int, cols: int) -> np.ndarray:
        ys = np.arange(rows)
        xs = np.arange(cols)
        my = (ys >= self.offset_y) & ((ys - self.offset_y) % self.stride_y == 0)
        mx = (xs >= self.offset_x) & ((xs - self.offset_x) % self.stride_x == 0)
        return (my[:, None] & mx[None, :]).reshape(-1)


@dataclass(frozen=True, eq=False)
class MergePlan:
    rows: int
    cols: int
    layout: SinkLayout
    r: int
    assignment: np.ndarray  # (N,), target raster index or UNMERGED
    kept_order: np.ndarray  # raster indices of survivors, ascending

    @property
    def n_tokens(self) -> int:
        return self.rows * self.cols

    @property
    def survivors(self) -> int:
        return len(self.kept_order)

    def representative(self) -> np.ndarray:
        """For each original position, the index into the compressed list."""
        slot = np.full(self.n_tokens, -1, dtype=np.int64)
        slot[self.kept_order] = np.arange(len(self.kept_order))
        merged = self.assignment != UNMERGED
        slot[merged] = slot[self.assignment[merged]]
        return slot

    def to_dict(self) -> dict:
        lay = self.layout
        return {
            "rows": self.rows,
            "cols": self.cols,
            "layout": {"stride_y": lay.stride_y, "stride_x": lay.stride_x,
                       "offset_y": lay.offset_y, "offset_x": lay.offset_x},
            "r": self.r,
            "survivors": self.survivors,
            "assignment": self.assignment.tolist(),
            "kept_order": self.kept_order.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MergePlan":
        try:
            plan = cls(
                rows=int(d["rows"]),
                cols=int(d["cols"]),
                layout=SinkLayout(**{k: int(v) for k, v in d["layout"].items()}),
                r=int(d["r"]),
                assignment=np.asarray(d["assignment"], dtype=np.int64),
                kept_order=np.asarray(d["kept_order"], dtype=np.int64),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad merge plan: {exc}") from None
        plan.validate()
        return plan

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def validate(self) -> None:
        n = self.n_tokens
        if self.assignment.shape != (n,):
            raise ValidationError("assignment length does not match the grid")
        targets = self.layout.target_mask(self.rows, self.cols)
        merged = self.assignment != UNMERGED
        if int(merged.sum()) != self.r:
            raise ValidationError("assignment count differs from r")
        if merged[targets].any():
            raise ValidationError("a target is assigned to another token")
        dst = self.assignment[merged]
        if ((dst < 0) | (dst >= n)).any() or not targets[dst].all():
            raise ValidationError("a source is assigned to a non-target")
        expect = np.flatnonzero(~merged)
        if not np.array_equal(self.kept_order, expect):
            raise ValidationError("kept_order is not the raster-ordered survivor set")


def _grid(tokens: ArrayLike) -> np.ndarray:
    return as_array(tokens)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    out = np.zeros_like(x)
    nz = norm[:, 0] > 0
    out[nz] = x[nz] / norm[nz]
    return out


def plan(tokens: ArrayLike, layout: SinkLayout, r: int, criterion: ArrayLike | None = None) -> MergePlan:
    """Choose which sources merge into which targets.

    Affinity is the cosine similarity of ``criterion`` vectors (the tokens
    themselves by default; e.g. attention keys otherwise). Zero vectors have
    affinity 0 to everything. Ties go to the lower raster index, both when
    picking a source's target and when ranking sources.
    """
    x = _grid(tokens)
    rows, cols = x.shape[:2]
    crit = x if criterion is None else _grid(criterion)
    if crit.shape[:2] != (rows, cols):
        raise ValidationError(f"criterion grid {crit.shape[:2]} does not match tokens {(rows, cols)}")
    n = rows * cols
    is_target = layout.target_mask(rows, cols)
    tgt_idx = np.flatnonzero(is_target)
    src_idx = np.flatnonzero(~is_target)
    if len(tgt_idx) == 0:
        raise ValidationError("layout places no targets on this grid")
    if r < 0 or r > len(src_idx):
        raise ValidationError(f"r={r} outside [0, {len(src_idx)}] for this layout")

    assignment = np.full(n, UNMERGED, dtype=np.int64)
    if r > 0:
        flat = _unit_rows(crit.reshape(n, -1))
        aff = flat[src_idx] @ flat[tgt_idx].T
        best = aff.argmax(axis=1)
        best_aff = aff[np.arange(len(src_idx)), best]
        order = np.argsort(-best_aff, kind="stable")[:r]
        assignment[src_idx[order]] = tgt_idx[best[order]]
    kept = np.flatnonzero(assignment == UNMERGED)
    return MergePlan(rows=rows, cols=cols, layout=layout, r=int(r), assignment=assignment, kept_order=kept)


def _check_plan(x: np.ndarray, p: MergePlan) -> None:
    if x.shape[:2] != (p.rows, p.cols):
        raise ValidationError(f"plan is for a {p.rows}x{p.cols} grid, got {x.shape[:2]}")


def merge(tokens: ArrayLike, p: MergePlan) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(values (M, C), counts (M,))`` in ``kept_order``.

    A surviving target holds the plain mean of itself and its merged sources.
    """
    x = _grid(tokens)
    _check_plan(x, p)
    flat = x.reshape(p.n_tokens, -1)
    slot = p.representative()
    m = p.survivors
    # average offsets from each survivor rather than raw values, so a group
    # of identical tokens reproduces that token exactly
    base = flat[p.kept_order]
    sums = np.zeros((m, flat.shape[1]))
    np.add.at(sums, slot, flat - base[slot])
    counts = np.bincount(slot, minlength=m).astype(np.int64)
    return base + sums / counts[:, None], counts


def unmerge(values: np.ndarray, p: MergePlan) -> FeatureMap:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or len(values) != p.survivors:
        raise ValidationError(f"expected ({p.survivors}, C) compressed tokens, got {values.shape}")
    return FeatureMap(values[p.representative()].reshape(p.rows, p.cols, -1))


def reconstruction_error(original: ArrayLike, p: MergePlan) -> float:
    """Normalized MSE of merge+unmerge: squared error over squared deviation
    from the per-channel means (so predicting the channel mean scores 1)."""
    x = _grid(original)
    values, _ = merge(x, p)
    recon = unmerge(values, p).data
    sse = float(((x - recon) ** 2).sum())
    flat = x.reshape(-1, x.shape[-1])
    sst = float(((flat - flat.mean(axis=0)) ** 2).sum())
    if sst == 0:
        return 0.0 if sse == 0 else math.inf
    return sse / sst


def stride_for_budget(rows: int, cols: int, out_tokens: int) -> tuple[SinkLayout, int]:
    """Smallest square stride whose target count fits within ``out_tokens``.

    The targets always survive, so a budget can only be met when the target
    count does not exceed it; the remaining ``r = N - out_tokens`` merges
    come from sources.
    """
    n = rows * cols
    if rows < 1 or cols < 1:
        raise ValidationError("grid must be non-empty")
    if not 1 <= out_tokens <= n:
        raise ValidationError(f"token budget must be in [1, {n}], got {out_tokens}")
    for s in range(1, max(rows, cols) + 1):
        layout = SinkLayout.square(s)
        if layout.target_count(rows, cols) <= out_tokens:
            return layout, n - out_tokens
    raise ValidationError("no stride meets the budget")  # unreachable: s=max(rows, cols) gives one target
