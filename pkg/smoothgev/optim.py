"""
Damped Newton maximization with backtracking line search.

The objective callback returns ``(value, gradient, hessian)``; with
``derivatives=False`` only the value is needed. ``-inf`` values mark points
outside the model support and are rejected by the line search.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np
from scipy import sparse

from smoothgev.errors import FitError, SingularPrecisionError
from smoothgev.linalg import PrecisionFactor
from smoothgev.logger import FitLogger

Objective = Callable[[np.ndarray, bool], tuple[float, Optional[np.ndarray], Any]]

ARMIJO = 1e-4
MIN_STEP = 1e-10
# Gradient level accepted when the line search can no longer make progress.
STALL_GTOL = 1e-5
MAX_DAMPING_TRIES = 30


@dataclass
class NewtonResult:
    x: np.ndarray
    value: float
    gradient: np.ndarray
    hessian: Any
    iterations: int
    converged: bool
    message: str


def _identity_like(h, n: int):
    return sparse.identity(n, format="csc") if sparse.issparse(h) else np.eye(n)


def ascent_direction(hessian, gradient: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve ``(-H + tau I) d = g`` with the smallest tau that factorizes."""
    n = gradient.size
    neg_h = -hessian
    diag = neg_h.diagonal() if sparse.issparse(neg_h) else np.diag(neg_h)
    base = 1e-8 * max(1.0, float(np.max(np.abs(diag))) if n else 1.0)
    tau = 0.0
    eye = _identity_like(hessian, n)
    for _ in range(MAX_DAMPING_TRIES):
        try:
            factor = PrecisionFactor(neg_h + tau * eye if tau > 0 else neg_h)
            direction = factor.solve(gradient)
            if np.all(np.isfinite(direction)) and gradient @ direction > 0:
                return direction, tau
        except SingularPrecisionError:
            pass
        tau = base if tau == 0.0 else tau * 10.0
    # steepest ascent as a last resort
    return gradient / max(1.0, float(np.max(np.abs(diag)))), np.inf


def newton_maximize(
    objective: Objective,
    x0: np.ndarray,
    max_iter: int = 200,
    gtol: float = 1e-8,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    logger: Optional[FitLogger] = None,
    stage: str = "newton",
) -> NewtonResult:
    """Maximize ``objective`` from ``x0``.

    Converged when ``max|g| <= gtol * (1 + |f|)``. The value never decreases
    between accepted iterates.
    """
    x = np.array(x0, dtype=float)
    if project is not None:
        x = project(x)
    f, g, h = objective(x, True)
    if not np.isfinite(f):
        raise FitError("starting point lies outside the model support", last_iterate=x)
    start = time.perf_counter()

    for it in range(max_iter + 1):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= gtol * (1.0 + abs(f)):
            return NewtonResult(x, f, g, h, it, True, "gradient tolerance reached")
        if it == max_iter:
            break

        direction, damping = ascent_direction(h, g)
        slope = float(g @ direction)
        step = 1.0
        accepted = False
        while step >= MIN_STEP:
            trial = x + step * direction
            if project is not None:
                trial = project(trial)
            f_trial, _, _ = objective(trial, False)
            if np.isfinite(f_trial) and f_trial >= f + ARMIJO * step * slope:
                accepted = True
                break
            step *= 0.5

        if not accepted:
            converged = gnorm <= STALL_GTOL * (1.0 + abs(f))
            return NewtonResult(x, f, g, h, it, converged, "line search stalled")

        x = trial
        f, g, h = objective(x, True)
        if logger is not None:
            logger.log_iteration(
                stage,
                it + 1,
                f,
                float(np.max(np.abs(g))) if g.size else 0.0,
                step,
                damping,
                time.perf_counter() - start,
            )

    return NewtonResult(x, f, g, h, max_iter, False, f"no convergence in {max_iter} iterations")
