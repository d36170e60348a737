"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..errors import ValidationError

LossFn = Callable[[], float]
GradFn = Callable[[], dict]


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    checked: int
    worst: tuple[str, tuple, float, float]  # (param, index, analytic, numeric)

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def sample_entries(params: dict[str, np.ndarray], n: int, rng: np.random.Generator) -> list[tuple[str, tuple]]:
    """Pick ``n`` parameter entries, spread round-robin over the arrays so
    every array gets probed when ``n`` is at least the number of arrays."""
    names = sorted(params)
    n = min(n, sum(params[k].size for k in names))
    pools = {k: list(rng.permutation(params[k].size)) for k in names}
    picks: list[tuple[str, tuple]] = []
    i = 0
    while len(picks) < n:
        name = names[i % len(names)]
        i += 1
        if pools[name]:
            flat = int(pools[name].pop())
            picks.append((name, tuple(int(v) for v in np.unravel_index(flat, params[name].shape))))
    return picks


def grad_check(
    params: dict[str, np.ndarray],
    loss: LossFn,
    grad: GradFn,
    n: int = 200,
    step: float = 1e-5,
    seed: int = 0,
    entries: Optional[list[tuple[str, tuple]]] = None,
) -> GradCheckResult:
    """Compare ``grad()`` against central differences of ``loss()``.

    ``params`` is perturbed in place (and restored) between loss evaluations.
    Relative error per entry is |a - n| / max(|a|, |n|, 1e-8).
    """
    if step <= 0:
        raise ValidationError("finite-difference step must be positive")
    analytic = grad()
    if entries is None:
        entries = sample_entries(params, n, np.random.default_rng(seed))
    worst = ("", (), 0.0, 0.0)
    max_err = 0.0
    for name, idx in entries:
        arr = params[name]
        orig = arr[idx]
        arr[idx] = orig + step
        up = loss()
        arr[idx] = orig - step
        down = loss()
        arr[idx] = orig
        num = (up - down) / (2 * step)
        a = float(analytic[name][idx])
        err = abs(a - num) / max(abs(a), abs(num), 1e-8)
        if err > max_err or not worst[0]:
            max_err = max(max_err, err)
            worst = (name, idx, a, num)
    return GradCheckResult(max_rel_error=max_err, checked=len(entries), worst=worst)
