"""PCA-Hadamard isotropic standardization of teacher features, and fidelity."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateError, ValidationError
from .fmap import ArrayLike, FeatureMap, as_array
from .linalg import sym_eig

EIG_CLAMP = 1e-12


def hadamard(c: int) -> np.ndarray:
    """Normalized Sylvester Hadamard matrix of order ``c`` (a power of two)."""
    if c < 1 or c & (c - 1):
        raise ValidationError(f"Hadamard order must be a power of two, got {c}")
    h = np.ones((1, 1))
    while h.shape[0] < c:
        h = np.block([[h, h], [h, -h]])
    return h / math.sqrt(c)


def _as_samples(x) -> np.ndarray:
    if isinstance(x, FeatureMap):
        return x.tokens()
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 3:
        return arr.reshape(-1, arr.shape[-1])
    if arr.ndim != 2:
        raise ValidationError(f"samples must be (N, C) or (H, W, C), got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class PhiSTransform:
    mean: np.ndarray
    rotation: np.ndarray
    phi: float
    eigenvalues: np.ndarray
    fitted_on: int

    @property
    def channels(self) -> int:
        return len(self.mean)

    @property
    def phi_sq(self) -> float:
        return self.phi * self.phi

    def to_dict(self) -> dict:
        return {
            "channels": self.channels,
            "mean": self.mean.tolist(),
            "rotation": self.rotation.tolist(),
            "phi": self.phi,
            "eigenvalues": self.eigenvalues.tolist(),
            "fitted_on": self.fitted_on,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhiSTransform":
        try:
            c = int(d["channels"])
            mean = np.asarray(d["mean"], dtype=np.float64)
            rot = np.asarray(d["rotation"], dtype=np.float64)
            phi = float(d["phi"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad transform record: {exc}") from None
        if mean.shape != (c,) or rot.shape != (c, c):
            raise ValidationError("transform arrays do not match 'channels'")
        if not phi > 0:
            raise ValidationError("phi must be positive")
        lam = np.asarray(d.get("eigenvalues", np.full(c, phi * phi)), dtype=np.float64)
        return cls(mean=mean, rotation=rot, phi=phi, eigenvalues=lam, fitted_on=int(d.get("fitted_on", 0)))


def fit(samples, min_samples: int | None = None) -> PhiSTransform:
    """Fit the standardization to a set of feature vectors.

    ``samples`` is (N, C) or any (H, W, C) map whose tokens are the samples.
    Covariance uses the population divisor; the per-channel sample mean is
    removed before rotating (and restored by :func:`invert`).
    """
    x = _as_samples(samples)
    n, c = x.shape
    hc = hadamard(c)
    need = c + 1 if min_samples is None else min_samples
    if n < need:
        raise ValidationError(f"need at least {need} samples for {c} channels, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / n
    eig = sym_eig((cov + cov.T) / 2)
    lam = np.where(eig.eigenvalues < EIG_CLAMP, 0.0, eig.eigenvalues)
    phi = math.sqrt(float(lam.mean()))
    if phi == 0.0:
        raise DegenerateError("teacher distribution has zero total variance")
    rotation = hc @ eig.eigenvectors.T
    return PhiSTransform(mean=mean, rotation=rotation, phi=phi, eigenvalues=lam, fitted_on=n)


def _check_channels(t: PhiSTransform, c: int) -> None:
    if c != t.channels:
        raise ValidationError(f"transform has {t.channels} channels, input has {c}")


def apply_array(t: PhiSTransform, x: np.ndarray) -> np.ndarray:
    """x' = R (x - mean) / phi along the last axis."""
    _check_channels(t, x.shape[-1])
    return (x - t.mean) @ t.rotation.T / t.phi


def invert_array(t: PhiSTransform, x: np.ndarray) -> np.ndarray:
    _check_channels(t, x.shape[-1])
    return (t.phi * x) @ t.rotation + t.mean


def apply(t: PhiSTransform, fmap: ArrayLike) -> FeatureMap:
    return FeatureMap(apply_array(t, as_array(fmap)))


def invert(t: PhiSTransform, fmap: ArrayLike) -> FeatureMap:
    return FeatureMap(invert_array(t, as_array(fmap)))


def fidelity_from_mse(phi_sq: float, mse: float) -> float:
    if phi_sq < 0 or mse < 0:
        raise ValidationError("phi_sq and mse must be nonnegative")
    if mse == 0:
        return math.inf
    return phi_sq / mse


def fidelity(phi_sq: float, student, teacher) -> float:
    """Teacher variance over student error: phi^2 / MSE(student, teacher).

    Exact agreement returns ``math.inf``.
    """
    s = np.asarray(as_array(student) if isinstance(student, FeatureMap) else student, dtype=np.float64)
    t = np.asarray(as_array(teacher) if isinstance(teacher, FeatureMap) else teacher, dtype=np.float64)
    if s.shape != t.shape:
        raise ValidationError(f"shape mismatch {s.shape} vs {t.shape}")
    return fidelity_from_mse(phi_sq, float(np.mean((s - t) ** 2)))


@dataclass(frozen=True)
class FidelityRow:
    teacher: str
    phi_sq: float
    mse: float
    fidelity: float


@dataclass(frozen=True)
class FidelityReport:
    per_teacher: tuple[FidelityRow, ...]
    geometric_mean: float

    def to_dict(self) -> dict:
        return {
            "per_teacher": [vars(r) for r in self.per_teacher],
            "geometric_mean": self.geometric_mean,
        }


def geometric_mean(values: Iterable[float]) -> float:
    vals = [float(v) for v in values]
    if not vals:
        raise ValidationError("geometric mean of an empty list")
    if any(v <= 0 for v in vals):
        raise ValidationError("geometric mean needs positive values")
    if any(math.isinf(v) for v in vals):
        return math.inf
    return math.exp(sum(math.log(v) for v in vals) / len(vals))


def fidelity_report(rows: Sequence[tuple[str, float, float]]) -> FidelityReport:
    """Build a report from ``(teacher, phi_sq, mse)`` rows."""
    out = tuple(FidelityRow(name, float(p), float(m), fidelity_from_mse(p, m)) for name, p, m in rows)
    return FidelityReport(per_teacher=out, geometric_mean=geometric_mean(r.fidelity for r in out))
