"""Training configuration: teachers, stages, partitions."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

from ..errors import ValidationError
from .student import StudentConfig
from .teachers import TeacherSpec, default_teachers


@dataclass(frozen=True)
class Partition:
    teachers: tuple[str, ...]
    resolution: int
    fraction: float

    def __post_init__(self):
        object.__setattr__(self, "teachers", tuple(self.teachers))
        if not self.teachers:
            raise ValidationError("a partition needs at least one teacher")
        if self.resolution < 1:
            raise ValidationError("partition resolution must be positive")
        if not 0 < self.fraction <= 1:
            raise ValidationError("partition fraction must be in (0, 1]")


@dataclass(frozen=True)
class StageSpec:
    index: int
    iterations: int
    partitions: tuple[Partition, ...]

    def __post_init__(self):
        object.__setattr__(self, "partitions", tuple(self.partitions))
        if self.iterations < 0:
            raise ValidationError("iterations must be nonnegative")
        if not self.partitions:
            raise ValidationError("a stage needs at least one partition")
        total = sum(p.fraction for p in self.partitions)
        if not math.isclose(total, 1.0, abs_tol=1e-9):
            raise ValidationError(f"partition fractions sum to {total}, not 1")

    @property
    def resolutions(self) -> tuple[int, ...]:
        return tuple(sorted({p.resolution for p in self.partitions}))

    @property
    def teachers(self) -> set[str]:
        return {t for p in self.partitions for t in p.teachers}


@dataclass(frozen=True)
class TrainConfig:
    teachers: tuple[TeacherSpec, ...]
    stages: tuple[StageSpec, ...]
    student: StudentConfig = field(default_factory=StudentConfig)
    lr: float = 1e-2
    batch_size: int = 4
    seed: int = 0
    phis: bool = True
    phis_fit_images: int = 24
    # "mosaic" or "pad_crop" for patch-local fixed high-res teachers below their native size
    high_res_mode: str = "mosaic"
    patch_weight: float = 1.0
    summary_weight: float = 1.0
    teacher_weights: Optional[dict] = None
    divergence_threshold: float = 1e6
    log_fidelity: bool = True

    def __post_init__(self):
        object.__setattr__(self, "teachers", tuple(self.teachers))
        object.__setattr__(self, "stages", tuple(self.stages))
        ids = [t.id for t in self.teachers]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate teacher ids")
        if self.high_res_mode not in ("mosaic", "pad_crop"):
            raise ValidationError(f"unknown high_res_mode {self.high_res_mode!r}")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be positive")
        if self.lr < 0:
            raise ValidationError("learning rate must be nonnegative")
        known = set(ids)
        for st in self.stages:
            for p in st.partitions:
                missing = set(p.teachers) - known
                if missing:
                    raise ValidationError(f"stage {st.index} references unknown teachers {sorted(missing)}")
                if p.resolution % self.student.patch:
                    raise ValidationError(f"resolution {p.resolution} is not a multiple of patch {self.student.patch}")
            if len(st.partitions) > self.batch_size:
                raise ValidationError("more partitions than images per batch")

    def teacher(self, tid: str) -> TeacherSpec:
        for t in self.teachers:
            if t.id == tid:
                return t
        raise ValidationError(f"unknown teacher {tid!r}")

    def weight(self, tid: str) -> float:
        return float((self.teacher_weights or {}).get(tid, 1.0))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["student"]["feature_tap"] = self.student.feature_tap
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        try:
            teachers = tuple(TeacherSpec(**t) for t in d["teachers"])
            stages = tuple(
                StageSpec(
                    index=int(s.get("index", i)),
                    iterations=int(s["iterations"]),
                    partitions=tuple(Partition(tuple(p["teachers"]), int(p["resolution"]), float(p["fraction"]))
                                     for p in s["partitions"]),
                )
                for i, s in enumerate(d["stages"])
            )
            student = dict(d.get("student", {}))
            if isinstance(student.get("feature_tap"), list):
                student["feature_tap"] = tuple(student["feature_tap"])
            rest = {k: v for k, v in d.items() if k not in ("teachers", "stages", "student")}
            return cls(teachers=teachers, stages=stages, student=StudentConfig(**student), **rest)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad training config: {exc}") from None


def segregated_stages(iterations: int, low_res: int = 32, high_res: int = 64,
                      low_teachers=("clip", "dino"), high_teachers=("sam",),
                      high_fraction: float = 0.5) -> tuple[StageSpec, ...]:
    """Baseline schedule: low-res teachers only at low res, high-res teacher only at high res."""
    return (
        StageSpec(0, iterations, (
            Partition(tuple(low_teachers), low_res, 1.0 - high_fraction),
            Partition(tuple(high_teachers), high_res, high_fraction),
        )),
    )


def multires_stages(iterations: int, low_res: int = 32, mid_res: int = 48, high_res: int = 64,
                    teachers=("clip", "dino", "sam")) -> tuple[StageSpec, ...]:
    """Staged multi-resolution schedule, every teacher at every resolution.

    Low res, then medium res, then low and high res simultaneously; the
    iteration budget is split evenly (remainder to the last stage).
    """
    t = tuple(teachers)
    a = iterations // 3
    b = iterations // 3
    c = iterations - a - b
    return (
        StageSpec(0, a, (Partition(t, low_res, 1.0),)),
        StageSpec(1, b, (Partition(t, mid_res, 1.0),)),
        StageSpec(2, c, (Partition(t, low_res, 0.5), Partition(t, high_res, 0.5))),
    )


def default_config(seed: int = 0, iterations: int = 200, schedule: str = "multires", **overrides) -> TrainConfig:
    stages = multires_stages(iterations) if schedule == "multires" else segregated_stages(iterations)
    return TrainConfig(teachers=tuple(default_teachers(seed)), stages=stages, seed=seed, **overrides)
