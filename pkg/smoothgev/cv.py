"""
K-fold cross-validation of penalized fits and the sign-flip exchangeability
test for paired per-observation scores.
"""

from __future__ import annotations

import itertools
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from smoothgev.errors import DegenerateTestWarning, FitError, SpecError
from smoothgev.fit import FitOptions, fit_smooth
from smoothgev.grid import GriddedDataset, PenaltyMatrix
from smoothgev.model import CovariateSeries, ModelSpec
from smoothgev.scoring import SCORING_RULES

DEFAULT_FOLDS = 5
DEFAULT_REPS = 1_000_000
MAX_EXACT_N = 20
_CHUNK_ELEMENTS = 2**22


@dataclass(frozen=True)
class FoldAssignment:
    """Fold label (1..k) of every observation; 0 marks missing cells."""

    folds: np.ndarray
    k: int
    seed: int

    def mask(self, fold: int) -> np.ndarray:
        return self.folds == fold

    def sizes(self) -> np.ndarray:
        return np.array([int(np.sum(self.folds == f)) for f in range(1, self.k + 1)])


def make_folds(data: GriddedDataset, k: int = DEFAULT_FOLDS, seed: int = 0) -> FoldAssignment:
    """Random observation-level assignment with fold sizes differing by at most one."""
    if k < 2:
        raise SpecError(f"cross-validation needs at least 2 folds, got {k}")
    box, col = np.nonzero(~data.missing)
    n_obs = box.size
    if n_obs < k:
        raise SpecError(f"{n_obs} observations cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(n_obs)
    labels = np.empty(n_obs, dtype=int)
    labels[order] = np.arange(n_obs) % k + 1
    folds = np.zeros(data.txx.shape, dtype=int)
    folds[box, col] = labels
    return FoldAssignment(folds=folds, k=k, seed=seed)


SCORE_COLUMNS = ("model", "fold", "box", "box_id", "year", "t", "y", "se", "ds", "crp", "wcrp")


@dataclass
class ScoreReport:
    """Per-observation held-out scores for one or more models."""

    records: pd.DataFrame
    folds: Optional[FoldAssignment] = None
    aic: dict[str, float] = field(default_factory=dict)
    p_values: dict[str, float] = field(default_factory=dict)

    @property
    def models(self) -> list[str]:
        return list(dict.fromkeys(self.records["model"]))

    def mean_table(self, rules: Sequence[str] = tuple(SCORING_RULES)) -> pd.DataFrame:
        """Mean score per model and rule, with the AIC column when available."""
        table = self.records.groupby("model", sort=False)[list(rules)].mean()
        table["n"] = self.records.groupby("model", sort=False).size()
        if self.aic:
            table["aic"] = [self.aic.get(m, np.nan) for m in table.index]
        return table

    def scores(self, model: str, rule: str) -> np.ndarray:
        """One model's scores ordered by (box, t), for pairing across models."""
        sub = self.records[self.records["model"] == model].sort_values(["box", "t"])
        return sub[rule].to_numpy()

    @classmethod
    def concat(cls, reports: Sequence["ScoreReport"]) -> "ScoreReport":
        records = pd.concat([r.records for r in reports], ignore_index=True)
        aic: dict[str, float] = {}
        for r in reports:
            aic.update(r.aic)
        return cls(records=records, folds=reports[0].folds if reports else None, aic=aic)


def _score_fold(args) -> pd.DataFrame:
    data, spec, cov, penalty, folds, fold, options, label = args
    held_out = folds.mask(fold)
    try:
        fit = fit_smooth(data.masked(held_out), spec, cov, penalty, options)
    except FitError as exc:
        exc.diagnostics.update({"model": label, "fold": fold})
        raise FitError(f"{label} fit failed on fold {fold}: {exc}", exc.last_iterate, exc.diagnostics) from exc
    box, col = np.nonzero(held_out)
    mu, sigma, xi = fit.field.evaluate(fit.frame, box, col + 1)
    y = data.txx[box, col]
    frame = pd.DataFrame(
        {
            "model": label,
            "fold": fold,
            "box": box,
            "box_id": data.grid.box_id[box],
            "year": data.years[col],
            "t": col + 1,
            "y": y,
        }
    )
    for name, rule in SCORING_RULES.items():
        frame[name] = rule.score(mu, sigma, xi, y, strict=False)
    return frame


def cross_validate(
    data: GriddedDataset,
    spec: ModelSpec,
    cov: CovariateSeries,
    penalty: Optional[PenaltyMatrix],
    folds: FoldAssignment,
    opts: Optional[FitOptions] = None,
    threads: int = 1,
) -> ScoreReport:
    """Fit on every fold's complement and score the held-out observations.

    Scores that are undefined for a predictive distribution (infinite mean
    or variance) are NaN and excluded from the means.
    """
    if folds.folds.shape != data.txx.shape:
        raise SpecError("fold assignment does not match the dataset")
    options = opts or FitOptions()
    jobs = [(data, spec, cov, penalty, folds, k, options, spec.label) for k in range(1, folds.k + 1)]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        frames = list(pool.map(_score_fold, jobs))
    records = pd.concat(frames, ignore_index=True).sort_values(["fold", "box", "t"], kind="stable")
    return ScoreReport(records=records.reset_index(drop=True), folds=folds)


def bonferroni_adjust(p: float, m: int) -> float:
    return float(min(1.0, p * m))


@dataclass(frozen=True)
class ExchangeabilityResult:
    p_value: float
    t_obs: float
    reps: int
    swapped: bool
    degenerate: bool

    def __float__(self) -> float:
        return self.p_value


def _differences(scores_a, scores_b) -> np.ndarray:
    a = np.asarray(scores_a, dtype=float).ravel()
    b = np.asarray(scores_b, dtype=float).ravel()
    if a.size != b.size:
        raise SpecError(f"score lists differ in length ({a.size} != {b.size})")
    if a.size == 0:
        raise SpecError("score lists are empty")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise SpecError("score lists must be finite")
    return a - b


def exchangeability_test(
    scores_a,
    scores_b,
    reps: int = DEFAULT_REPS,
    seed: int = 0,
    threads: int = 1,
) -> ExchangeabilityResult:
    """Monte Carlo sign-flip test of pairwise exchangeability of two score lists.

    Model B is taken to be the one with the lower mean score; the lists are
    swapped (with a warning) when A has the lower mean. ``p`` is the fraction
    of random sign flips whose mean difference reaches the observed one.
    """
    if reps < 1:
        raise SpecError("the number of sign-flip replicates must be positive")
    d = _differences(scores_a, scores_b)
    swapped = False
    if d.mean() < 0:
        d = -d
        swapped = True
        warnings.warn(
            "model A has the lower mean score; testing with the lists swapped",
            UserWarning,
            stacklevel=2,
        )
    n = d.size
    t_obs = float(d.mean())
    if np.all(d == 0):
        warnings.warn(
            "all score differences are zero; returning p = 1",
            DegenerateTestWarning,
            stacklevel=2,
        )
        return ExchangeabilityResult(1.0, 0.0, reps, swapped, True)

    tol = 1e-12 * np.abs(d).sum() / n
    rows = max(1, min(10_000, _CHUNK_ELEMENTS // n))
    chunks = [(c, min(rows, reps - c * rows)) for c in range(-(-reps // rows))]

    def count(chunk) -> int:
        index, size = chunk
        rng = np.random.default_rng([seed, index])
        signs = rng.integers(0, 2, size=(size, n), dtype=np.int8) * 2 - 1
        t = signs.astype(float) @ d / n
        return int(np.sum(t >= t_obs - tol))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        hits = sum(pool.map(count, chunks))
    return ExchangeabilityResult(hits / reps, t_obs, reps, swapped, False)


def exact_exchangeability_p(d) -> float:
    """Exact sign-flip p-value by enumerating all 2^N sign vectors."""
    d = np.asarray(d, dtype=float).ravel()
    if d.size > MAX_EXACT_N:
        raise SpecError(f"exact enumeration is limited to N <= {MAX_EXACT_N}")
    if d.mean() < 0:
        d = -d
    t_obs = d.mean()
    tol = 1e-12 * np.abs(d).sum() / max(d.size, 1)
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=d.size)))
    t = signs @ d / d.size
    return float(np.mean(t >= t_obs - tol))
