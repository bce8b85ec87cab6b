"""
Goodness-of-fit checks: probability integral transform, standard-Gumbel
residuals with probability/quantile plot coordinates, and Pearson residuals.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import pandas as pd
from scipy import stats

from smoothgev.errors import DataWarning, SpecError
from smoothgev.fit import FitResult
from smoothgev.gev import XI_EPS, cdf, mean_var
from smoothgev.grid import GriddedDataset
from smoothgev.model import ModelFrame, ParameterField

PIT_BINS = 20
GUMBEL_REFERENCE = {5.0: 0.9933, 6.0: 0.9975, 7.0: 0.9991, 8.0: 0.9997}

Model = Union[FitResult, ParameterField]


def _cells(model: Model, data: GriddedDataset, frame: Optional[ModelFrame]):
    """(box, t, y, mu, sigma, xi) for every non-missing observation, row-major."""
    if isinstance(model, FitResult):
        field, frame = model.field, frame or model.frame
    else:
        field = model
        if frame is None:
            raise SpecError("a ModelFrame is required when passing a bare ParameterField")
    if frame.n != data.n:
        raise SpecError(f"model has {frame.n} boxes but the data has {data.n}")
    box, col = np.nonzero(~data.missing)
    mu, sigma, xi = field.evaluate(frame, box, col + 1)
    return box, col + 1, data.txx[box, col], mu, sigma, xi


def pit_values(model: Model, data: GriddedDataset, frame: Optional[ModelFrame] = None) -> np.ndarray:
    """F_it(y_it) for every non-missing observation."""
    _, _, y, mu, sigma, xi = _cells(model, data, frame)
    return cdf(y, mu, sigma, xi)


def gumbel_transform(y, mu, sigma, xi) -> np.ndarray:
    """Z = log(1 + xi (y - mu) / sigma) / xi; -inf/+inf outside the support."""
    y, mu, sigma, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (y, mu, sigma, xi)))
    x = (y - mu) / sigma
    gumbel = np.abs(xi) <= XI_EPS
    t = 1.0 + xi * x
    inside = t > 0
    safe_xi = np.where(gumbel, 1.0, xi)
    general = np.log(np.where(inside, t, 1.0)) / safe_xi
    general = np.where(inside, general, np.where(xi > 0, -np.inf, np.inf))
    return np.where(gumbel, x, general)


def gumbel_residuals(model: Model, data: GriddedDataset, frame: Optional[ModelFrame] = None) -> np.ndarray:
    """Standard-Gumbel residuals; support violations come back infinite with a DataWarning."""
    _, _, y, mu, sigma, xi = _cells(model, data, frame)
    z = gumbel_transform(y, mu, sigma, xi)
    flagged = int(np.sum(~np.isfinite(z)))
    if flagged:
        warnings.warn(
            f"{flagged} observation(s) fall outside the fitted GEV support",
            DataWarning,
            stacklevel=2,
        )
    return z


def pp_qq_points(z) -> tuple[np.ndarray, np.ndarray]:
    """Probability and quantile plot coordinates against the standard Gumbel.

    Both arrays have shape (m, 2) and use plotting positions k / (m + 1).
    """
    z = np.sort(np.asarray(z, dtype=float).ravel())
    m = z.size
    if m < 2:
        raise SpecError(f"probability and quantile plots need at least 2 values, got {m}")
    pos = np.arange(1, m + 1) / (m + 1)
    pp = np.column_stack([pos, np.exp(-np.exp(-z))])
    qq = np.column_stack([z, -np.log(-np.log(pos))])
    return pp, qq


def pit_ks_test(pit) -> tuple[float, float]:
    """Kolmogorov-Smirnov statistic and p-value of PIT values against U(0, 1)."""
    pit = np.asarray(pit, dtype=float).ravel()
    if pit.size == 0:
        raise SpecError("no PIT values to test")
    result = stats.kstest(pit, "uniform")
    return float(result.statistic), float(result.pvalue)


def pit_histogram(pit, bins: int = PIT_BINS) -> pd.DataFrame:
    """Equal-width bin counts of PIT values on [0, 1]."""
    counts, edges = np.histogram(np.asarray(pit, dtype=float), bins=bins, range=(0.0, 1.0))
    return pd.DataFrame({"lower": edges[:-1], "upper": edges[1:], "count": counts})


def gumbel_reference_quantiles() -> pd.DataFrame:
    """Standard Gumbel probabilities of the values 5 to 8 beside their rounded reference values."""
    values = np.array(sorted(GUMBEL_REFERENCE))
    return pd.DataFrame(
        {
            "z": values,
            "probability": np.exp(-np.exp(-values)),
            "reference": [GUMBEL_REFERENCE[v] for v in values],
        }
    )


@dataclass
class PearsonResiduals:
    residuals: list[np.ndarray]
    summary: pd.DataFrame

    @property
    def flagged(self) -> int:
        return int(self.summary["flagged"].sum())


def pearson_residuals(model: Model, data: GriddedDataset, frame: Optional[ModelFrame] = None) -> PearsonResiduals:
    """(y - E[Y]) / sd[Y] per box; cells with infinite variance are flagged and skipped."""
    box, _, y, mu, sigma, xi = _cells(model, data, frame)
    mean, var = mean_var(mu, sigma, xi)
    defined = np.isfinite(var)
    r = np.where(defined, (y - mean) / np.sqrt(np.where(defined, var, 1.0)), np.nan)
    residuals, rows = [], []
    for i in range(data.n):
        sel = box == i
        ok = r[sel][defined[sel]]
        residuals.append(ok)
        rows.append(
            {
                "box_id": data.grid.box_id[i],
                "n": int(ok.size),
                "mean": float(ok.mean()) if ok.size else np.nan,
                "std": float(ok.std(ddof=1)) if ok.size > 1 else np.nan,
                "flagged": int(np.sum(sel & ~defined)),
            }
        )
    summary = pd.DataFrame(rows)
    if summary["flagged"].sum():
        warnings.warn(
            f"{int(summary['flagged'].sum())} cell(s) have infinite predictive variance",
            DataWarning,
            stacklevel=2,
        )
    return PearsonResiduals(residuals, summary)


@dataclass
class DiagnosticReport:
    pit: np.ndarray
    pp_points: np.ndarray
    qq_points: np.ndarray
    pearson: PearsonResiduals
    histogram: pd.DataFrame
    support_violations: int
    ks_statistic: float
    ks_pvalue: float


def diagnose(model: Model, data: GriddedDataset, frame: Optional[ModelFrame] = None,
             bins: int = PIT_BINS) -> DiagnosticReport:
    pit = pit_values(model, data, frame)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DataWarning)
        z = gumbel_residuals(model, data, frame)
    finite = z[np.isfinite(z)]
    pp, qq = pp_qq_points(finite)
    ks = pit_ks_test(pit)
    return DiagnosticReport(
        pit=pit,
        pp_points=pp,
        qq_points=qq,
        pearson=pearson_residuals(model, data, frame),
        histogram=pit_histogram(pit, bins),
        support_violations=int(z.size - finite.size),
        ks_statistic=ks[0],
        ks_pvalue=ks[1],
    )
