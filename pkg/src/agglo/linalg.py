"""Cyclic Jacobi eigensolver for small symmetric matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, ValidationError


@dataclass(frozen=True)
class SymEig:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns, orthonormal


def _off_diagonal_max(a: np.ndarray) -> float:
    if len(a) < 2:
        return 0.0
    off = np.abs(a - np.diag(np.diag(a)))
    return float(off.max())


def sym_eig(
    a: np.ndarray,
    tol: float = 1e-12,
    max_sweeps: int = 100,
    symmetry_tol: float = 1e-10,
) -> SymEig:
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the largest off-diagonal magnitude drops below
    ``tol * max(1, max|A|)``. Eigenvalues come back sorted descending; each
    eigenvector is signed so that its largest-magnitude entry is positive.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix contains NaN or Inf")
    n = a.shape[0]
    if n == 0:
        raise ValidationError("empty matrix")
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a - a.T).max() > symmetry_tol * scale:
        raise ValidationError("matrix is not symmetric")
    a = (a + a.T) / 2
    v = np.eye(n)
    threshold = tol * scale

    for _ in range(max_sweeps):
        if _off_diagonal_max(a) < threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        residual = _off_diagonal_max(a)
        if residual >= threshold:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps", residual)

    lam = np.diag(a).copy()
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    v = v[:, order]
    pivots = np.abs(v).argmax(axis=0)
    signs = np.sign(v[pivots, np.arange(n)])
    signs[signs == 0] = 1.0
    v = v * signs
    return SymEig(eigenvalues=lam, eigenvectors=v)
