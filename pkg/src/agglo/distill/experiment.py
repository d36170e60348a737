"""Resolution-segregated vs multi-resolution training on identical budgets."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np
from scipy.stats import spearmanr

from .. import phis
from ..fmap import FeatureMap, resize_array
from ..scale_eq import equivariance_suite
from .config import TrainConfig, multires_stages, segregated_stages
from .images import corpus
from .student import StudentConfig
from .teachers import default_teachers
from .train import Trainer, raw_teacher_outputs


@dataclass(frozen=True)
class ModeSwitchConfig:
    seed: int = 0
    iterations: int = 600
    low_res: int = 32
    mid_res: int = 48
    high_res: int = 64
    lr: float = 0.1
    batch_size: int = 4
    fine: tuple[int, ...] = (32, 40, 48, 56, 64, 72, 80, 88, 96)
    coarse: tuple[int, ...] = (32, 64, 96)
    fidelity_ladder: tuple[int, ...] = (32, 40, 48, 56, 64)
    corpus_size: int = 6
    student: StudentConfig = StudentConfig()

    def train_config(self, variant: str) -> TrainConfig:
        if variant == "segregated":
            stages = segregated_stages(self.iterations, self.low_res, self.high_res)
        elif variant == "multires":
            stages = multires_stages(self.iterations, self.low_res, self.mid_res, self.high_res)
        else:
            raise ValueError(f"unknown variant {variant!r}")
        return TrainConfig(
            teachers=tuple(default_teachers(self.seed, self.low_res, self.high_res)),
            stages=stages,
            student=self.student,
            lr=self.lr,
            batch_size=self.batch_size,
            seed=self.seed,
            log_fidelity=False,
        )


def student_generator(trainer: Trainer):
    def run(image: FeatureMap) -> FeatureMap:
        return FeatureMap(trainer.student.forward(image).features)

    return run


def fidelity_curve(trainer: Trainer, tid: str, images, ladder) -> list[float]:
    """Pooled fidelity to one teacher at each student resolution, in the
    teacher's original feature space."""
    model = trainer.student
    teacher = trainer.teachers[tid]
    tr = trainer.transforms[tid].patch
    out = []
    for res in ladder:
        raws = raw_teacher_outputs(teacher, images, res, mode="pad_crop")
        errs = []
        for im, (feat, _) in zip(images, raws):
            fwd = model.forward(im.render(res))
            y, _ = model.patch_head(tid, fwd)
            th, tw = feat.shape[:2]
            pred = phis.invert_array(tr, resize_array(y, th, tw))
            errs.append(np.mean((pred - feat.data) ** 2))
        out.append(phis.fidelity_from_mse(tr.phi_sq, float(np.mean(errs))))
    return out


def evaluate(trainer: Trainer, cfg: ModeSwitchConfig, images) -> dict:
    renders = [im.render for im in images]
    fine, coarse = equivariance_suite(student_generator(trainer), renders, cfg.fine, cfg.coarse)
    curves = {tid: fidelity_curve(trainer, tid, images, cfg.fidelity_ladder) for tid in sorted(trainer.teachers)}
    rank = {}
    for tid, ys in curves.items():
        rho = spearmanr(cfg.fidelity_ladder, ys).statistic
        rank[tid] = float(rho) if np.isfinite(rho) else 0.0
    return {"scale_variance": {"fine": fine, "coarse": coarse}, "fidelity": curves, "rank_correlation": rank}


def mode_switch_experiment(cfg: ModeSwitchConfig, variants=("segregated", "multires")) -> dict:
    """Train one student per schedule from the same initialization and
    report scale variance plus per-resolution fidelity for each."""
    images = corpus(cfg.seed + 10_000, cfg.corpus_size)
    report = {"config": {k: v for k, v in asdict(cfg).items() if k != "student"}, "variants": {}}
    for name in variants:
        trainer = Trainer(cfg.train_config(name))
        trainer.run()
        report["variants"][name] = evaluate(trainer, cfg, images)
    return report
