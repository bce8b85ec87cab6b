"""
Negatively oriented scoring rules for GEV predictive distributions.
"""

from abc import ABC, abstractmethod
from typing import Callable, Optional

import numpy as np
from scipy import special

from smoothgev.errors import ScoreError
from smoothgev.gev import EULER_GAMMA, XI_EPS, GevParams, mean_var, quantile

WCRP_NODES = 1000


def _arrays(mu, sigma, xi, y):
    return np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mu, sigma, xi, y)))


class ScoringRule(ABC):
    """A score S(F, y); smaller is better.

    ``score`` works on broadcast arrays of GEV parameters and observations.
    With ``strict`` an undefined score raises ScoreError, otherwise it is NaN.
    """

    name: str = ""
    # scores are defined for xi strictly below this bound
    xi_bound: float = 1.0

    @abstractmethod
    def _score(self, mu, sigma, xi, y) -> np.ndarray:
        pass

    def score(self, mu, sigma, xi, y, strict: bool = True) -> np.ndarray:
        mu, sigma, xi, y = _arrays(mu, sigma, xi, y)
        undefined = xi >= self.xi_bound
        if strict and np.any(undefined):
            raise ScoreError(
                f"{self.name} score is undefined for xi >= {self.xi_bound} "
                f"(got xi={float(xi[undefined].ravel()[0])})"
            )
        safe_xi = np.where(undefined, 0.0, xi)
        out = self._score(mu, sigma, safe_xi, y)
        return np.where(undefined, np.nan, out)

    def __call__(self, params: GevParams, y: float) -> float:
        return float(self.score(params.mu, params.sigma, params.xi, y))


class SquaredError(ScoringRule):
    name = "se"
    xi_bound = 1.0

    def _score(self, mu, sigma, xi, y):
        mean, _ = mean_var(mu, sigma, xi)
        return (y - mean) ** 2


class DawidSebastiani(ScoringRule):
    name = "ds"
    xi_bound = 0.5

    def _score(self, mu, sigma, xi, y):
        mean, var = mean_var(mu, sigma, xi)
        return (y - mean) ** 2 / var + np.log(var)


class ContinuousRankedProbability(ScoringRule):
    """Closed-form CRPS of the GEV distribution."""

    name = "crp"
    xi_bound = 1.0

    def _score(self, mu, sigma, xi, y):
        x = (y - mu) / sigma
        gumbel = np.abs(xi) <= XI_EPS
        safe_xi = np.where(gumbel, 1.0, xi)

        # w = -log G(y), with the values outside the support set explicitly
        t = 1.0 + xi * x
        inside = t > 0
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            w = np.exp(-np.log(np.where(inside, t, 1.0)) / safe_xi)
        w = np.where(inside, w, np.where(xi > 0, np.inf, 0.0))
        g = np.exp(-w)

        a = 1.0 - safe_xi
        gamma_a = special.gamma(a)
        lower = np.where(np.isinf(w), 1.0, special.gammainc(a, np.where(np.isinf(w), 0.0, w)))
        general = (mu - y - sigma / safe_xi) * (1.0 - 2.0 * g) - (sigma / safe_xi) * (
            2.0**safe_xi * gamma_a - 2.0 * gamma_a * lower
        )

        # Gumbel limit: sigma * (-x + gamma - log 2 - 2 Ei(-exp(-x)))
        with np.errstate(over="ignore"):
            u = np.exp(-x)
        tiny = u < 1e-300
        ei = np.where(tiny, EULER_GAMMA - x, special.expi(-np.where(tiny, 1.0, u)))
        gumbel_val = sigma * (-x + EULER_GAMMA - np.log(2.0) - 2.0 * ei)
        return np.where(gumbel, gumbel_val, general)


class WeightedCrps(ScoringRule):
    """Quantile-weighted CRPS approximated on the nodes p_i = i/N, i = 1..N-1."""

    name = "wcrp"
    xi_bound = 1.0

    def __init__(self, weight: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 nodes: int = WCRP_NODES):
        if nodes < 2:
            raise ValueError("the weighted CRPS needs at least 2 nodes")
        self.weight = weight if weight is not None else (lambda p: p**2)
        self.nodes = nodes

    def _score(self, mu, sigma, xi, y):
        p = np.arange(1, self.nodes) / self.nodes
        shape = (p.size,) + (1,) * mu.ndim
        pp = p.reshape(shape)
        q = quantile(pp, mu[None], sigma[None], xi[None])
        terms = ((y[None] <= q).astype(float) - pp) * (q - y[None]) * self.weight(pp)
        return 2.0 / self.nodes * terms.sum(axis=0)


SCORING_RULES: dict[str, ScoringRule] = {
    "se": SquaredError(),
    "ds": DawidSebastiani(),
    "crp": ContinuousRankedProbability(),
    "wcrp": WeightedCrps(),
}


def score_se(F: GevParams, y: float) -> float:
    return SCORING_RULES["se"](F, y)


def score_ds(F: GevParams, y: float) -> float:
    return SCORING_RULES["ds"](F, y)


def score_crp(F: GevParams, y: float) -> float:
    return SCORING_RULES["crp"](F, y)


def score_wcrp(F: GevParams, y: float, weight=None, N: int = WCRP_NODES) -> float:
    if weight is None and N == WCRP_NODES:
        return SCORING_RULES["wcrp"](F, y)
    return WeightedCrps(weight, N)(F, y)
