"""Multi-teacher, multi-resolution distillation loop for the toy student."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .. import phis
from ..errors import DivergenceError, ValidationError
from ..fmap import FeatureMap, resize_array, resize_array_backward
from ..mosaic import crop_features, layout_for, pack, pad_to_canvas, unpack_features
from . import nn
from .config import Partition, StageSpec, TrainConfig
from .gradcheck import grad_check
from .images import ProceduralImage
from .student import HeadSpec, Student
from .teachers import Teacher

log = logging.getLogger(__name__)


@dataclass
class Target:
    patch: np.ndarray  # (th, tw, C), in the space the loss is computed in
    summary: Optional[np.ndarray] = None


@dataclass
class LossReport:
    patch: dict[str, float] = field(default_factory=dict)
    summary: dict[str, float] = field(default_factory=dict)
    total: float = 0.0
    fidelity: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"patch": self.patch, "summary": self.summary, "total": self.total, "fidelity": self.fidelity}


@dataclass(frozen=True)
class TeacherTransforms:
    patch: phis.PhiSTransform
    summary: Optional[phis.PhiSTransform] = None


# -- teacher targets -------------------------------------------------------------


def split_batch(batch_size: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder split of ``batch_size`` images, at least one per partition."""
    n = len(fractions)
    if batch_size < n:
        raise ValidationError("batch smaller than the number of partitions")
    raw = [f * batch_size for f in fractions]
    counts = [max(1, int(math.floor(r))) for r in raw]
    while sum(counts) < batch_size:
        i = max(range(n), key=lambda j: (raw[j] - counts[j], -j))
        counts[i] += 1
    while sum(counts) > batch_size:
        i = max((j for j in range(n) if counts[j] > 1), key=lambda j: (counts[j] - raw[j], -j))
        counts[i] -= 1
    return counts


def raw_teacher_outputs(
    teacher: Teacher, images: Sequence[ProceduralImage], res: int, mode: str = "mosaic"
) -> list[tuple[FeatureMap, Optional[np.ndarray]]]:
    """Teacher outputs paired with a student running at ``res``.

    Any-resolution teachers see the image at ``res``. A fixed-resolution,
    patch-local teacher below its native size sees mosaics (or single padded
    canvases) and its features are cropped back out; summaries are dropped
    in that case since they describe the whole canvas. Other fixed-resolution
    teachers see the image at their native size and the student's output is
    resampled to their grid by the loss.
    """
    spec = teacher.spec
    if spec.any_res or res == spec.native_res:
        return [teacher(im.render(res)) for im in images]
    if spec.patch_local and res < spec.native_res:
        canvas = spec.native_res
        if mode == "pad_crop":
            out = []
            for im in images:
                feats, _ = teacher(pad_to_canvas(im.render(res), canvas))
                out.append((crop_features(feats, res, spec.patch), None))
            return out
        layout = layout_for(res, canvas, spec.patch)
        rendered = [im.render(res) for im in images]
        out = []
        for start in range(0, len(rendered), layout.cells):
            chunk = rendered[start : start + layout.cells]
            blanks = layout.cells - len(chunk)
            chunk = chunk + [FeatureMap(np.zeros_like(chunk[0].data))] * blanks
            feats, _ = teacher(pack(chunk, layout))
            crops = unpack_features(feats, layout)
            out.extend((c, None) for c in crops[: layout.cells - blanks])
        return out
    return [teacher(im.render(spec.native_res)) for im in images]


def fit_transforms(teacher: Teacher, images: Sequence[ProceduralImage], res: Optional[int] = None) -> TeacherTransforms:
    """Fit PHI-S to the teacher's patch tokens (and summaries) over ``images``."""
    spec = teacher.spec
    r = spec.native_res if not spec.any_res else res
    if r is None:
        raise ValidationError(f"teacher {spec.id!r} is any-resolution; give a fitting resolution")
    outs = [teacher(im.render(r)) for im in images]
    patch_t = phis.fit(np.concatenate([f.tokens() for f, _ in outs]))
    summary_t = None
    if spec.summary:
        summary_t = phis.fit(np.stack([s for _, s in outs]))
    return TeacherTransforms(patch_t, summary_t)


def make_target(raw: tuple[FeatureMap, Optional[np.ndarray]], tr: Optional[TeacherTransforms]) -> Target:
    feats, summary = raw
    if tr is None:
        return Target(feats.data, summary)
    s = None
    if summary is not None and tr.summary is not None:
        s = phis.apply_array(tr.summary, summary)
    return Target(phis.apply_array(tr.patch, feats.data), s)


# -- loss --------------------------------------------------------------------


def distillation_loss(
    model: Student,
    fwd,
    targets: dict[str, Target],
    transforms: Optional[dict[str, TeacherTransforms]] = None,
    patch_weight: float = 1.0,
    summary_weight: float = 1.0,
    teacher_weights: Optional[dict[str, float]] = None,
    with_grad: bool = True,
    phis_targets: bool = True,
):
    """Per-teacher patch MSE + summary cosine distance for one image.

    Student adaptor outputs are bilinearly resized to each teacher's grid
    before the MSE. Returns ``(report, grads, g_features)``: adaptor
    parameter gradients in ``grads`` and the gradient w.r.t. the backbone
    features still to be pushed through :meth:`Student.backward`.
    """
    report = LossReport()
    grads: dict[str, np.ndarray] = {}
    g_feat = np.zeros_like(fwd.features) if with_grad else None
    gh, gw = fwd.grid
    for tid, tgt in targets.items():
        if tid not in model.heads:
            raise ValidationError(f"student has no adaptor for teacher {tid!r}")
        w = (teacher_weights or {}).get(tid, 1.0)
        y, cache = model.patch_head(tid, fwd)
        th, tw = tgt.patch.shape[:2]
        yr = resize_array(y, th, tw)
        loss, g = nn.mse(yr, tgt.patch)
        report.patch[tid] = loss
        report.total += w * patch_weight * loss
        if transforms is not None and tid in transforms:
            tr = transforms[tid].patch
            if phis_targets:
                err = phis.invert_array(tr, yr) - phis.invert_array(tr, tgt.patch)
            else:
                err = yr - tgt.patch
            report.fidelity[tid] = phis.fidelity_from_mse(tr.phi_sq, float(np.mean(err * err)))
        if with_grad:
            gy = resize_array_backward(w * patch_weight * g, gh, gw)
            g_feat += model.adaptor_bwd(cache, gy, grads)
        if tgt.summary is not None and model.heads[tid].summary_channels:
            z, zcache = model.summary_head(tid, fwd)
            dist, gz = nn.cosine_distance(z, tgt.summary)
            report.summary[tid] = dist
            report.total += w * summary_weight * dist
            if with_grad:
                gs = model.adaptor_bwd(zcache, w * summary_weight * gz, grads)
                g_feat += model.summary_input_bwd(fwd, gs)
    return report, grads, g_feat


# -- training ----------------------------------------------------------------


@dataclass
class StepBatch:
    """Everything one SGD step needs, with teacher targets already computed."""

    entries: list  # (partition index, Partition, ProceduralImage id, rendered image, {tid: Target})
    fractions: list[float]
    counts: list[int]


class Trainer:
    def __init__(self, config: TrainConfig):
        self.config = config
        self.teachers = {t.id: Teacher(t) for t in config.teachers}
        heads = {
            t.id: HeadSpec(t.channels, t.summary_channels if t.summary else None) for t in config.teachers
        }
        self.student = Student(replace(config.student, init_seed=config.seed), heads)
        fit_images = [ProceduralImage(seed=int(s)) for s in
                      np.random.SeedSequence([config.seed, 0xF17]).generate_state(config.phis_fit_images)]
        fit_res = max((p.resolution for st in config.stages for p in st.partitions), default=32)
        self.transforms = {tid: fit_transforms(t, fit_images, fit_res) for tid, t in self.teachers.items()}
        self.iteration = 0

    def image(self, stage: int, i: int) -> ProceduralImage:
        return ProceduralImage(seed=int(np.random.SeedSequence([self.config.seed, 1 + stage, i]).generate_state(1)[0]))

    def schedule(self, stage: StageSpec, step: int) -> list[tuple[int, list[int]]]:
        """Image indices per partition for ``step`` of ``stage``.

        Partitions walk the same image order with independent cursors, so over
        an epoch each partition visits every image once.
        """
        counts = split_batch(self.config.batch_size, [p.fraction for p in stage.partitions])
        return [(pi, list(range(step * n, (step + 1) * n))) for pi, n in enumerate(counts)]

    def prepare(self, stage: StageSpec, step: int) -> StepBatch:
        cfg = self.config
        entries = []
        plan = self.schedule(stage, step)
        for pi, idxs in plan:
            part = stage.partitions[pi]
            images = [self.image(stage.index, i) for i in idxs]
            per_teacher = {
                tid: raw_teacher_outputs(self.teachers[tid], images, part.resolution, cfg.high_res_mode)
                for tid in part.teachers
            }
            for j, im in enumerate(images):
                targets = {
                    tid: make_target(per_teacher[tid][j], self.transforms[tid] if cfg.phis else None)
                    for tid in part.teachers
                }
                entries.append((pi, part, idxs[j], im.render(part.resolution), targets))
        return StepBatch(entries, [p.fraction for p in stage.partitions], [len(i) for _, i in plan])

    def loss_and_grad(self, batch: StepBatch, with_grad: bool = True):
        cfg = self.config
        model = self.student
        grads = model.zero_grads() if with_grad else None
        total = 0.0
        per: dict[str, dict[str, list[float]]] = {}
        for pi, part, _, image, targets in batch.entries:
            scale = batch.fractions[pi] / batch.counts[pi]
            fwd = model.forward(image)
            rep, g_head, g_feat = distillation_loss(
                model, fwd, targets, self.transforms, cfg.patch_weight, cfg.summary_weight,
                cfg.teacher_weights, with_grad=with_grad, phis_targets=cfg.phis,
            )
            total += scale * rep.total
            for tid in targets:
                d = per.setdefault(tid, {"patch": [], "summary": [], "fidelity": []})
                d["patch"].append(rep.patch[tid])
                if tid in rep.summary:
                    d["summary"].append(rep.summary[tid])
                if tid in rep.fidelity:
                    d["fidelity"].append(rep.fidelity[tid])
            if with_grad:
                g_bb: dict[str, np.ndarray] = {}
                model.backward(fwd, g_feat, g_bb)
                for src in (g_head, g_bb):
                    for k, v in src.items():
                        grads[k] += scale * v
        report = LossReport(total=total)
        for tid, d in per.items():
            report.patch[tid] = float(np.mean(d["patch"]))
            if d["summary"]:
                report.summary[tid] = float(np.mean(d["summary"]))
            if d["fidelity"] and cfg.log_fidelity:
                report.fidelity[tid] = float(np.mean(d["fidelity"]))
        return total, grads, report

    def step(self, stage: StageSpec, step: int) -> dict:
        batch = self.prepare(stage, step)
        total, grads, report = self.loss_and_grad(batch)
        if not math.isfinite(total) or total > self.config.divergence_threshold:
            raise DivergenceError(
                f"loss {total:.3e} exceeded {self.config.divergence_threshold:.1e} at iteration "
                f"{self.iteration} (stage {stage.index}); per-teacher patch losses {report.patch}"
            )
        lr = self.config.lr
        if lr:
            for k, g in grads.items():
                self.student.params[k] -= lr * g
        record = {
            "iter": self.iteration,
            "stage": stage.index,
            "partition": [
                {"index": pi, "resolution": stage.partitions[pi].resolution,
                 "teachers": list(stage.partitions[pi].teachers), "images": idxs}
                for pi, idxs in self.schedule(stage, step)
            ],
            "losses": {tid: {"patch": report.patch[tid], **({"summary": report.summary[tid]} if tid in report.summary else {})}
                       for tid in sorted(report.patch)},
            "total": total,
            "fidelity": {tid: report.fidelity[tid] for tid in sorted(report.fidelity)},
        }
        self.iteration += 1
        return record

    def run_stage(self, stage: StageSpec) -> list[dict]:
        log.info("stage %d: %d iterations at %s", stage.index, stage.iterations, stage.resolutions)
        records = []
        for s in range(stage.iterations):
            records.append(self.step(stage, s))
            if log.isEnabledFor(logging.DEBUG):
                log.debug("iter %d total %.6f", records[-1]["iter"], records[-1]["total"])
        return records

    def run(self) -> list[dict]:
        out = []
        for stage in self.config.stages:
            out.extend(self.run_stage(stage))
        return out


def run_stage(model_or_trainer: Trainer, stage: StageSpec) -> list[dict]:
    return model_or_trainer.run_stage(stage)


def epoch_terms(trainer: Trainer, stage: StageSpec, n_images: int) -> list[tuple[int, str]]:
    """The (image index, teacher) loss terms one epoch of ``n_images`` produces."""
    terms = []
    step = 0
    seen = {pi: 0 for pi in range(len(stage.partitions))}
    while min(seen.values()) < n_images:
        for pi, idxs in trainer.schedule(stage, step):
            for i in idxs:
                if i < n_images:
                    terms.extend((i, t) for t in stage.partitions[pi].teachers)
            seen[pi] = max(seen[pi], idxs[-1] + 1)
        step += 1
    return terms


def write_log(records: Iterable[dict], path) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def teacher_gradient_energy(trainer: Trainer, images: Sequence[ProceduralImage], res: int, use_phis: bool) -> dict[str, float]:
    """Squared norm of each teacher's patch-loss gradient on the shared backbone."""
    model = trainer.student
    names = model.backbone_param_names()
    out = {}
    for tid, teacher in trainer.teachers.items():
        raws = raw_teacher_outputs(teacher, images, res, trainer.config.high_res_mode)
        acc = {k: np.zeros_like(model.params[k]) for k in names}
        for im, raw in zip(images, raws):
            tgt = make_target((raw[0], None), trainer.transforms[tid] if use_phis else None)
            fwd = model.forward(im.render(res))
            _, _, g_feat = distillation_loss(model, fwd, {tid: tgt}, summary_weight=0.0)
            g = {}
            model.backward(fwd, g_feat, g)
            for k in names:
                acc[k] += g[k] / len(images)
        out[tid] = float(sum(np.sum(v * v) for v in acc.values()))
    return out


def check_gradients(trainer: Trainer, n: int = 200, seed: int = 0, stage: int = -1, step: float = 1e-5):
    """Finite-difference check of the full loss (all heads, both loss terms)
    on the first batch of ``stage``."""
    batch = trainer.prepare(trainer.config.stages[stage], 0)
    return grad_check(
        trainer.student.params,
        lambda: trainer.loss_and_grad(batch, with_grad=False)[0],
        lambda: trainer.loss_and_grad(batch)[1],
        n=n, step=step, seed=seed,
    )
