"""
Return levels, risk ratios and parameter changes between two years, with
Monte Carlo credible intervals from the Gaussian approximation of a fit.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd

from smoothgev.errors import SpecError
from smoothgev.fit import FitResult, posterior_draws
from smoothgev.gev import cdf, pdf, quantile
from smoothgev.model import ModelFrame, ParameterField

MIN_DRAWS = 100
DEFAULT_DRAWS = 2000
DEFAULT_P = 0.01


@dataclass(frozen=True)
class ReturnSpec:
    """Exceedance probability p and the two year indices being compared."""

    p: float = DEFAULT_P
    year_from: int = 1
    year_to: int = 1

    def validate(self, T: int) -> "ReturnSpec":
        if not 0 < self.p < 1:
            raise SpecError(f"exceedance probability must lie in (0, 1), got {self.p}")
        for t in (self.year_from, self.year_to):
            if not 1 <= t <= T:
                raise SpecError(f"year index {t} outside 1..{T}")
        return self


def return_period(p: float) -> float:
    """Mean waiting time in years between exceedances of probability p."""
    _check_p(p)
    return 1.0 / p


def _check_p(p: float) -> None:
    if not 0 < p < 1:
        raise SpecError(f"exceedance probability must lie in (0, 1), got {p}")


def return_levels(field: ParameterField, frame: ModelFrame, t: int, p: float) -> np.ndarray:
    """Per-box level exceeded with probability p in year t."""
    _check_p(p)
    mu, sigma, xi = field.evaluate_year(frame, t)
    return quantile(1.0 - p, mu, sigma, xi)


def return_level(field: ParameterField, frame: ModelFrame, box: int, t: int, p: float) -> float:
    _check_p(p)
    mu, sigma, xi = field.evaluate(frame, box, t)
    return float(quantile(1.0 - p, mu, sigma, xi))


def return_level_difference(field, frame, p, t_from, t_to) -> np.ndarray:
    """y_{t_to}(p) - y_{t_from}(p), split into location and scaled-quantile parts
    so a pure location trend gives exactly the location change."""
    _check_p(p)
    mu_a, sigma_a, xi = field.evaluate_year(frame, t_from)
    mu_b, sigma_b, _ = field.evaluate_year(frame, t_to)
    z = quantile(1.0 - p, 0.0, 1.0, xi)
    return (mu_b - mu_a) + (sigma_b * z - sigma_a * z)


def risk_ratio(field, frame, p, t_from, t_to) -> np.ndarray:
    """Per-box P(Y_{t_to} > y_{t_from}(p)) / p."""
    threshold = return_levels(field, frame, t_from, p)
    mu, sigma, xi = field.evaluate_year(frame, t_to)
    return (1.0 - cdf(threshold, mu, sigma, xi)) / p


def parameter_change(field, frame, t_from, t_to) -> tuple[np.ndarray, np.ndarray]:
    """Per-box change in location and in scale (natural units)."""
    mu_a, sigma_a, _ = field.evaluate_year(frame, t_from)
    mu_b, sigma_b, _ = field.evaluate_year(frame, t_to)
    return mu_b - mu_a, sigma_b - sigma_a


Functional = Callable[[ParameterField, ModelFrame, float, int, int], np.ndarray]

FUNCTIONALS: dict[str, Functional] = {
    "rl_diff": return_level_difference,
    "risk_ratio": risk_ratio,
    "loc_change": lambda f, fr, p, a, b: parameter_change(f, fr, a, b)[0],
    "scale_change": lambda f, fr, p, a, b: parameter_change(f, fr, a, b)[1],
}


def _functional(name: str) -> Functional:
    if name not in FUNCTIONALS:
        raise SpecError(f"unknown functional {name!r}; choose from {sorted(FUNCTIONALS)}")
    return FUNCTIONALS[name]


@dataclass
class IntervalField:
    functional: str
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    draws: int

    def to_frame(self, box_id: Optional[np.ndarray] = None) -> pd.DataFrame:
        ids = np.arange(self.estimate.size) if box_id is None else box_id
        return pd.DataFrame(
            {"box_id": ids, "estimate": self.estimate, "lower": self.lower, "upper": self.upper}
        )


def bonferroni_levels(alpha: float, m: int) -> tuple[float, float]:
    """Quantile levels alpha/(2m) and 1 - alpha/(2m)."""
    if not 0 < alpha < 1:
        raise SpecError(f"alpha must lie in (0, 1), got {alpha}")
    if m < 1:
        raise SpecError(f"Bonferroni count must be at least 1, got {m}")
    return alpha / (2 * m), 1.0 - alpha / (2 * m)


def draw_functional(
    fit: FitResult,
    functional: str,
    p: float,
    t_from: int,
    t_to: int,
    draws: int = DEFAULT_DRAWS,
    seed: Union[int, Sequence[int]] = 0,
    threads: int = 1,
) -> np.ndarray:
    """Functional evaluated on every posterior draw, shape (draws, n)."""
    if draws < MIN_DRAWS:
        raise SpecError(f"at least {MIN_DRAWS} posterior draws are required, got {draws}")
    ReturnSpec(p, t_from, t_to).validate(fit.frame.T)
    func = _functional(functional)
    thetas = posterior_draws(fit, draws, seed)

    def one(theta):
        return func(fit.layout.unpack(theta), fit.frame, p, t_from, t_to)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        values = list(pool.map(one, thetas))
    return np.vstack(values)


def mc_intervals(
    fit: FitResult,
    functional: str,
    p: float = DEFAULT_P,
    t_from: int = 1,
    t_to: int = 1,
    draws: int = DEFAULT_DRAWS,
    level: float = 0.95,
    seed: Union[int, Sequence[int]] = 0,
    threads: int = 1,
) -> IntervalField:
    """Per-box plug-in estimate with empirical posterior quantile interval."""
    if not 0 < level < 1:
        raise SpecError(f"interval level must lie in (0, 1), got {level}")
    values = draw_functional(fit, functional, p, t_from, t_to, draws, seed, threads)
    estimate = _functional(functional)(fit.field, fit.frame, p, t_from, t_to)
    return interval_field(functional, values, estimate, level)


def interval_field(functional: str, values: np.ndarray, estimate: np.ndarray, level: float = 0.95) -> IntervalField:
    """Equal-tailed per-box intervals from draws of shape (draws, n)."""
    if not 0 < level < 1:
        raise SpecError(f"interval level must lie in (0, 1), got {level}")
    alpha = 1.0 - level
    lower, upper = np.quantile(values, [alpha / 2, 1 - alpha / 2], axis=0)
    return IntervalField(functional, np.asarray(estimate, dtype=float), lower, upper, level, int(values.shape[0]))


@dataclass(frozen=True)
class RegionalInterval:
    region: str
    boxes: int
    estimate: float
    lower: float
    upper: float


def summarize_regions(
    values: np.ndarray,
    estimate: np.ndarray,
    regions: Sequence[str],
    n_regions_for_bonferroni: int,
    alpha: float = 0.05,
    labels: Optional[Sequence[str]] = None,
    include_all: bool = False,
) -> dict[str, RegionalInterval]:
    """Bonferroni-adjusted intervals for regional means of per-box draws.

    ``values`` has shape (draws, n) and ``regions`` labels every box. With
    ``include_all`` an extra ``"all"`` entry averages over every box.
    """
    values = np.asarray(values, dtype=float)
    regions = np.asarray(regions).astype(str)
    if values.ndim != 2 or values.shape[1] != regions.size:
        raise SpecError(f"{regions.size} region labels for draws of shape {values.shape}")
    lo, hi = bonferroni_levels(alpha, n_regions_for_bonferroni)
    labels = sorted(set(regions.tolist())) if labels is None else list(labels)
    groups = {label: regions == label for label in labels}
    if include_all:
        groups["all"] = np.ones(regions.size, dtype=bool)
    out = {}
    for label, mask in groups.items():
        if not mask.any():
            raise SpecError(f"region {label!r} has no boxes")
        means = values[:, mask].mean(axis=1)
        lower, upper = np.quantile(means, [lo, hi])
        out[label] = RegionalInterval(
            region=label,
            boxes=int(mask.sum()),
            estimate=float(np.asarray(estimate)[mask].mean()),
            lower=float(lower),
            upper=float(upper),
        )
    return out


def regional_mc_intervals(
    fit: FitResult,
    functional: str,
    regions: Sequence[str],
    n_regions_for_bonferroni: int,
    p: float = DEFAULT_P,
    t_from: int = 1,
    t_to: int = 1,
    draws: int = DEFAULT_DRAWS,
    alpha: float = 0.05,
    seed: Union[int, Sequence[int]] = 0,
    labels: Optional[Sequence[str]] = None,
    include_all: bool = False,
    threads: int = 1,
) -> dict[str, RegionalInterval]:
    """Intervals for the spatial mean of a functional over each region of one fit.

    The quantile levels are Bonferroni-adjusted for ``n_regions_for_bonferroni``
    simultaneous regions.
    """
    regions = np.asarray(regions).astype(str)
    if regions.size != fit.frame.n:
        raise SpecError(f"{regions.size} region labels for {fit.frame.n} boxes")
    bonferroni_levels(alpha, n_regions_for_bonferroni)
    values = draw_functional(fit, functional, p, t_from, t_to, draws, seed, threads)
    estimate = _functional(functional)(fit.field, fit.frame, p, t_from, t_to)
    return summarize_regions(values, estimate, regions, n_regions_for_bonferroni, alpha, labels, include_all)


def sign_census(values: np.ndarray) -> dict[str, float]:
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return {"positive": float("nan"), "negative": float("nan"), "zero": float("nan")}
    return {
        "positive": float(np.mean(values > 0)),
        "negative": float(np.mean(values < 0)),
        "zero": float(np.mean(values == 0)),
    }


def interval_excludes_zero(interval: IntervalField, null: float = 0.0) -> dict[str, float]:
    """Fraction of boxes whose interval lies entirely above or below ``null``."""
    return {
        "above": float(np.mean(interval.lower > null)),
        "below": float(np.mean(interval.upper < null)),
    }


def averaged_density(field, frame, boxes, t: int, y_grid) -> np.ndarray:
    """GEV density at the region-averaged (mu, sigma, xi) of year t."""
    boxes = np.atleast_1d(np.asarray(boxes, dtype=int))
    if boxes.size == 0:
        raise SpecError("averaged density needs a non-empty region")
    mu, sigma, xi = field.evaluate(frame, boxes, t)
    return pdf(np.asarray(y_grid, dtype=float), mu.mean(), sigma.mean(), xi.mean())
