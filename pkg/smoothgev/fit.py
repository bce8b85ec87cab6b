"""
Penalized maximum likelihood for spatially smooth GEV models.

``fit_smooth`` maximizes the penalized log-likelihood at fixed smoothing
parameters with sparse damped Newton, and chooses the smoothing parameters by
maximizing a Laplace approximation to the log marginal likelihood over
log lambda. ``fit_independent`` is the box-by-box baseline.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np
from scipy import optimize, sparse, stats
from scipy.sparse import linalg as spla

from smoothgev.errors import (
    EstimationError,
    FitError,
    SingularPrecisionError,
    SpecError,
)
from smoothgev.gev import EULER_GAMMA, XI_FLOOR, fit_lmoments
from smoothgev.grid import GriddedDataset, PenaltyMatrix, build_neighborhood, build_penalty
from smoothgev.linalg import PrecisionFactor
from smoothgev.logger import FitLogger
from smoothgev.model import CovariateSeries, ModelFrame, ModelSpec, ParameterField
from smoothgev.objective import ParameterLayout, PenalizedProblem, SmoothingParams
from smoothgev.optim import NewtonResult, newton_maximize

INIT_XI_RANGE = (-0.5, 0.3)
INIT_SMOOTHING = 1.0
MIN_BOX_OBS_INIT = 3
MIN_BOX_OBS_INDEPENDENT = 5
LOG10_LAMBDA_BOUNDS = (-4.0, 8.0)
LOG10_LAMBDA_START = 1.0
GRID_LOG10_LAMBDA = tuple(np.arange(-2.0, 6.0 + 1e-9, 0.5))


@dataclass
class FitOptions:
    """Tolerances and overrides for ``fit_smooth``.

    ``lambdas`` fixes the smoothing parameters (a dict per field or one value
    for every field) and skips the outer optimization.
    """

    gtol: float = 1e-8
    max_iter: int = 200
    max_outer: int = 40
    outer_step_tol: float = 1e-3
    outer_fd_step: float = 1e-3
    lambdas: Optional[Mapping[str, float] | float] = None
    log10_bounds: tuple[float, float] = LOG10_LAMBDA_BOUNDS
    log10_start: float = LOG10_LAMBDA_START
    grid: tuple[float, ...] = GRID_LOG10_LAMBDA
    grid_cycles: int = 2
    force_grid: bool = False
    threads: int = 1
    logger: Optional[FitLogger] = None


@dataclass
class FitResult:
    field: ParameterField
    lambdas: SmoothingParams
    penalized_ll: float
    unpenalized_ll: float
    precision: sparse.csc_matrix
    edf: float
    converged: bool
    iterations: int
    layout: ParameterLayout
    frame: ModelFrame
    theta: np.ndarray
    influence_diag: np.ndarray
    marginal_loglik: float = float("nan")
    outer_method: str = "fixed"
    outer_evaluations: int = 0
    _factor: Optional[PrecisionFactor] = dc_field(default=None, repr=False)
    _covariance: Optional[np.ndarray] = dc_field(default=None, repr=False)

    @property
    def spec(self) -> ModelSpec:
        return self.frame.spec

    @property
    def n_params(self) -> int:
        return self.layout.size

    def factor(self) -> PrecisionFactor:
        if self._factor is None:
            self._factor = PrecisionFactor(self.precision)
        return self._factor

    def covariance(self) -> np.ndarray:
        """precision^{-1}, the covariance of the Gaussian approximation."""
        if self._covariance is None:
            self._covariance = self.factor().inverse()
        return self._covariance

    def standard_errors(self, block: str) -> np.ndarray:
        sl = self.layout.block(block)
        return np.sqrt(np.diag(self.covariance())[sl])

    def block_edf(self, block: str) -> float:
        return float(self.influence_diag[self.layout.block(block)].sum())


@dataclass
class IndependentFit:
    """Box-by-box maximum likelihood estimates.

    Coefficient and standard-error arrays hold NaN for flagged boxes.
    """

    spec: ModelSpec
    coefficients: dict[str, np.ndarray]
    std_errors: dict[str, np.ndarray]
    covariances: list[Optional[np.ndarray]]
    loglik: np.ndarray
    converged: np.ndarray
    messages: list[str]

    @property
    def n(self) -> int:
        return int(self.converged.size)

    def params_at(self, frame: ModelFrame, t: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-box (mu, sigma, xi) at year index t."""
        x = float(frame.cov.at(t))
        c = self.coefficients
        mu = c["mu0"] + c.get("mu1", np.zeros(self.n)) * x
        sigma = np.exp(c["sigma0"] + c.get("sigma1", np.zeros(self.n)) * x)
        return mu, sigma, c["xi"]


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def _box_start(values: np.ndarray) -> Optional[tuple[float, float, float]]:
    """(mu, log sigma, xi) from L-moments, with a Gumbel moment fallback."""
    if values.size < MIN_BOX_OBS_INIT:
        return None
    try:
        p = fit_lmoments(values)
        return p.mu, np.log(p.sigma), p.xi
    except EstimationError:
        sd = float(np.std(values))
        if sd <= 0:
            return None
        sigma = np.sqrt(6.0) * sd / np.pi
        return float(np.mean(values)) - EULER_GAMMA * sigma, float(np.log(sigma)), 0.0


def initial_theta(problem: PenalizedProblem) -> np.ndarray:
    """Per-box L-moment estimates, clipped and smoothed by one penalized solve.

    Trend and fixed-effect coefficients start at zero. The scale is widened
    and the shape damped until every observation lies inside the support.
    """
    data, layout, penalty = problem.data, problem.layout, problem.penalty
    starts = [_box_start(row[~np.isnan(row)]) for row in data.txx]
    known = np.array([s is not None for s in starts])
    if not known.any():
        pooled = data.txx[~np.isnan(data.txx)]
        fallback = _box_start(pooled)
        if fallback is None:
            raise EstimationError("not enough data to initialize the fit")
        fill = np.array(fallback)
    else:
        fill = np.mean([s for s in starts if s is not None], axis=0)
    box = np.array([s if s is not None else fill for s in starts], dtype=float).reshape(data.n, 3)
    box[:, 2] = np.clip(box[:, 2], *INIT_XI_RANGE)

    smoother = (sparse.identity(data.n, format="csc") + INIT_SMOOTHING * penalty.S).tocsc()
    theta = np.zeros(layout.size)
    for name, col in (("mu0", 0), ("sigma0", 1), ("xi", 2)):
        smoothed = spla.spsolve(smoother, box[:, col]) if data.n > 1 else box[:, col]
        theta[layout.block(name)] = np.atleast_1d(smoothed)

    s0, xi = layout.block("sigma0"), layout.block("xi")
    for _ in range(80):
        if np.isfinite(problem.loglik(theta)):
            return theta
        theta[s0] += np.log(2.0)
        theta[xi] *= 0.5
    raise FitError("could not find a starting point inside the GEV support", last_iterate=theta)


def _project_shape(layout: ParameterLayout):
    xi = layout.block("xi")

    def project(theta: np.ndarray) -> np.ndarray:
        if np.any(theta[xi] <= -1.0):
            theta = theta.copy()
            theta[xi] = np.maximum(theta[xi], XI_FLOOR)
        return theta

    return project


# ---------------------------------------------------------------------------
# Inner problem
# ---------------------------------------------------------------------------


def _resolve_lambdas(layout: ParameterLayout, lambdas) -> SmoothingParams:
    if isinstance(lambdas, SmoothingParams):
        return lambdas
    if isinstance(lambdas, Mapping):
        absent = [f for f in layout.box_fields if f not in lambdas]
        if absent:
            raise SpecError(f"no smoothing parameter given for {absent}")
        return SmoothingParams({f: lambdas[f] for f in layout.box_fields})
    return SmoothingParams.uniform(layout.box_fields, float(lambdas))


def _inner(problem: PenalizedProblem, lambdas: SmoothingParams, theta0: np.ndarray,
           options: FitOptions, stage: str = "inner") -> NewtonResult:
    return newton_maximize(
        problem.objective(lambdas),
        theta0,
        max_iter=options.max_iter,
        gtol=options.gtol,
        project=_project_shape(problem.layout),
        logger=options.logger,
        stage=stage,
    )


def _summarize(problem: PenalizedProblem, lambdas: SmoothingParams, result: NewtonResult,
               influence: bool = True):
    """Precision, edf terms and Laplace criterion at an inner optimum."""
    ll, _, hess_ll = problem.likelihood_derivatives(result.x)
    unpen = (-hess_ll).tocsc()
    precision = (unpen + problem.penalty_hessian(lambdas)).tocsc()
    factor = PrecisionFactor(precision)
    diag = None
    if influence:
        # diag(precision^{-1} H_unpen); H_unpen is symmetric
        diag = np.asarray((factor.inverse() * unpen.toarray()).sum(axis=1)).ravel()
    rank = problem.penalty.rank
    marginal = (
        result.value
        + 0.5 * sum(rank * np.log(2.0 * lambdas[f]) for f in problem.layout.box_fields)
        - 0.5 * factor.logdet
    )
    return {
        "loglik": ll,
        "precision": precision,
        "factor": factor,
        "influence": diag,
        "marginal": float(marginal),
    }


def _build_result(problem, lambdas, result, summary, method, evaluations) -> FitResult:
    res = FitResult(
        field=problem.layout.unpack(result.x),
        lambdas=lambdas,
        penalized_ll=float(result.value),
        unpenalized_ll=float(summary["loglik"]),
        precision=summary["precision"],
        edf=float(summary["influence"].sum()),
        converged=bool(result.converged),
        iterations=int(result.iterations),
        layout=problem.layout,
        frame=problem.frame,
        theta=result.x.copy(),
        influence_diag=summary["influence"],
        marginal_loglik=summary["marginal"],
        outer_method=method,
        outer_evaluations=evaluations,
    )
    res._factor = summary["factor"]
    return res


def fit_fixed_lambda(
    problem: PenalizedProblem,
    lambdas,
    theta0: Optional[np.ndarray] = None,
    options: Optional[FitOptions] = None,
) -> FitResult:
    """Maximize the penalized log-likelihood at fixed smoothing parameters."""
    options = options or FitOptions()
    lambdas = _resolve_lambdas(problem.layout, lambdas)
    theta0 = initial_theta(problem) if theta0 is None else theta0
    result = _inner(problem, lambdas, theta0, options)
    if not result.converged:
        raise FitError(
            f"penalized Newton iteration did not converge: {result.message}",
            last_iterate=result.x,
            diagnostics={"iterations": result.iterations, "objective": result.value,
                         "lambdas": dict(lambdas.values)},
        )
    return _build_result(problem, lambdas, result, _summarize(problem, lambdas, result), "fixed", 0)


# ---------------------------------------------------------------------------
# Outer problem
# ---------------------------------------------------------------------------


class _InnerFailure(Exception):
    pass


class _OuterSearch:
    """Evaluates the Laplace criterion over log10 lambda, tracking the best point."""

    def __init__(self, problem: PenalizedProblem, theta0: np.ndarray, options: FitOptions):
        self.problem = problem
        self.fields = problem.layout.box_fields
        self.options = options
        self.theta = theta0
        self.best = None
        self.evaluations = 0

    def criterion(self, log10_lambda: np.ndarray) -> float:
        lambdas = SmoothingParams.from_log10(self.fields, log10_lambda)
        self.evaluations += 1
        result = _inner(self.problem, lambdas, self.theta, self.options)
        if not result.converged:
            raise _InnerFailure(result)
        try:
            summary = _summarize(self.problem, lambdas, result, influence=False)
        except SingularPrecisionError as exc:
            raise _InnerFailure(result) from exc
        self.theta = result.x
        value = summary["marginal"]
        if self.options.logger is not None:
            self.options.logger.log_iteration(
                "outer", self.evaluations, value, float(np.max(np.abs(result.gradient), initial=0.0))
            )
        if self.best is None or value > self.best[0]:
            self.best = (value, lambdas, result, summary)
        return value

    def quasi_newton(self) -> bool:
        opts = self.options
        k = len(self.fields)
        bounds = [opts.log10_bounds] * k
        previous = {"x": np.full(k, opts.log10_start)}

        def stop_on_small_step(intermediate_result):
            x = intermediate_result.x
            if np.max(np.abs(x - previous["x"])) < opts.outer_step_tol:
                raise StopIteration
            previous["x"] = np.array(x)

        try:
            res = optimize.minimize(
                lambda r: -self.criterion(r),
                np.full(k, opts.log10_start),
                method="L-BFGS-B",
                bounds=bounds,
                callback=stop_on_small_step,
                options={"maxiter": opts.max_outer, "eps": opts.outer_fd_step},
            )
        except (_InnerFailure, FitError, EstimationError, SingularPrecisionError):
            return False
        return bool(np.all(np.isfinite(res.x))) and self.best is not None

    def grid_search(self) -> bool:
        opts = self.options
        current = np.full(len(self.fields), opts.log10_start)
        ok = False
        for _ in range(opts.grid_cycles):
            for k in range(len(self.fields)):
                scores = []
                for g in opts.grid:
                    trial = current.copy()
                    trial[k] = g
                    try:
                        scores.append(self.criterion(trial))
                        ok = True
                    except (_InnerFailure, FitError, SingularPrecisionError):
                        scores.append(-np.inf)
                if np.any(np.isfinite(scores)):
                    current[k] = opts.grid[int(np.argmax(scores))]
        return ok


def fit_smooth(
    data: GriddedDataset,
    spec: ModelSpec,
    cov: CovariateSeries,
    penalty: Optional[PenaltyMatrix] = None,
    opts: Optional[FitOptions] = None,
) -> FitResult:
    """Jointly fit every box with GMRF-penalized coefficient fields."""
    options = opts or FitOptions()
    penalty = penalty or build_penalty(build_neighborhood(data.grid))
    frame = ModelFrame.build(data, spec, cov)
    problem = PenalizedProblem(data, frame, penalty)
    theta0 = initial_theta(problem)

    if options.lambdas is not None:
        return fit_fixed_lambda(problem, options.lambdas, theta0, options)
    if penalty.rank == 0:
        # no neighbour pairs: the penalty vanishes for every lambda
        fit = fit_fixed_lambda(problem, 1.0, theta0, options)
        fit.outer_method = "none"
        return fit

    search = _OuterSearch(problem, theta0, options)
    method = "grid"
    if not options.force_grid and search.quasi_newton():
        method = "lbfgs"
    else:
        if not options.force_grid:
            warnings.warn(
                "smoothing-parameter optimization failed; falling back to a grid search",
                RuntimeWarning,
                stacklevel=2,
            )
        search.theta = theta0
        search.grid_search()

    if search.best is None:
        raise FitError(
            "no smoothing parameters gave a converged inner fit",
            last_iterate=search.theta,
            diagnostics={"evaluations": search.evaluations},
        )
    _, lambdas, result, _ = search.best
    summary = _summarize(problem, lambdas, result)
    return _build_result(problem, lambdas, result, summary, method, search.evaluations)


# ---------------------------------------------------------------------------
# Independent fits and comparisons
# ---------------------------------------------------------------------------


def _independent_spec(spec: ModelSpec) -> ModelSpec:
    return ModelSpec(
        mu_trend="varying" if spec.mu_trend != "none" else "none",
        logsigma_trend=spec.logsigma_trend,
        elevation_effect=False,
        label=f"{spec.label}-independent",
    )


def _fit_one_box(args) -> tuple[Optional[np.ndarray], Optional[np.ndarray], float, str]:
    data, box, spec, cov, options = args
    single = GriddedDataset(
        grid=data.grid.subset(np.array([box])),
        years=data.years,
        txx=data.txx[[box]],
        allow_empty_boxes=True,
    )
    if np.sum(~np.isnan(single.txx)) < MIN_BOX_OBS_INDEPENDENT:
        return None, None, np.nan, "fewer than 5 observations"
    try:
        problem = PenalizedProblem(single, ModelFrame.build(single, spec, cov), build_penalty(build_neighborhood(single.grid)))
        fit = fit_fixed_lambda(problem, 1.0, None, options)
        return fit.theta, fit.covariance(), fit.unpenalized_ll, "ok"
    except (FitError, EstimationError, SingularPrecisionError) as exc:
        return None, None, np.nan, str(exc)


def fit_independent(
    data: GriddedDataset,
    spec: ModelSpec,
    cov: CovariateSeries,
    opts: Optional[FitOptions] = None,
) -> IndependentFit:
    """Maximum likelihood separately in every box; failures are flagged per box."""
    options = opts or FitOptions()
    box_spec = _independent_spec(spec)
    fields = box_spec.box_fields
    jobs = [(data, i, box_spec, cov, FitOptions(gtol=options.gtol, max_iter=options.max_iter))
            for i in range(data.n)]
    with ThreadPoolExecutor(max_workers=max(1, options.threads)) as pool:
        outcomes = list(pool.map(_fit_one_box, jobs))

    coefficients = {f: np.full(data.n, np.nan) for f in fields}
    std_errors = {f: np.full(data.n, np.nan) for f in fields}
    covariances, messages = [], []
    loglik = np.full(data.n, np.nan)
    converged = np.zeros(data.n, dtype=bool)
    for i, (theta, cov_i, ll, msg) in enumerate(outcomes):
        covariances.append(cov_i)
        messages.append(msg)
        if theta is None:
            continue
        converged[i] = True
        loglik[i] = ll
        se = np.sqrt(np.diag(cov_i))
        for k, f in enumerate(fields):
            coefficients[f][i] = theta[k]
            std_errors[f][i] = se[k]
    return IndependentFit(box_spec, coefficients, std_errors, covariances, loglik, converged, messages)


def uncertainty_ratio(indep: IndependentFit, smooth: FitResult) -> np.ndarray:
    """Per-box SE_indep(xi) / SE_smooth(xi); NaN where the independent fit is flagged."""
    smooth_se = smooth.standard_errors("xi")
    ratio = np.full(indep.n, np.nan)
    ok = indep.converged
    ratio[ok] = indep.std_errors["xi"][ok] / smooth_se[ok]
    return ratio


def compare_independent_smooth(indep: IndependentFit, smooth: FitResult) -> dict[str, Any]:
    """Summary of the shape estimates and their standard-error ratio."""
    ratio = uncertainty_ratio(indep, smooth)
    valid = ratio[np.isfinite(ratio)]
    xi_indep = indep.coefficients["xi"][indep.converged]
    return {
        "boxes": int(indep.n),
        "boxes_compared": int(valid.size),
        "xi_independent_range": [float(np.min(xi_indep)), float(np.max(xi_indep))] if xi_indep.size else None,
        "xi_smooth_range": [float(smooth.field.xi.min()), float(smooth.field.xi.max())],
        "se_ratio_mean": float(valid.mean()) if valid.size else float("nan"),
        "se_ratio_min": float(valid.min()) if valid.size else float("nan"),
        "se_ratio_fraction_above_one": float(np.mean(valid > 1)) if valid.size else float("nan"),
    }


# ---------------------------------------------------------------------------
# Posterior approximation and model comparison
# ---------------------------------------------------------------------------


def posterior_draws(fit: FitResult, count: int, seed: Union[int, Sequence[int]]) -> np.ndarray:
    """``count`` draws of theta from N(theta_hat, precision^{-1}), shape (count, p).

    Draw k uses the random stream ``default_rng([*seed, k])``; a tuple seed
    gives independent streams to fits that are sampled side by side.
    """
    if count < 1:
        raise SpecError("posterior sample size must be positive")
    key = [int(s) for s in np.atleast_1d(seed)]
    factor = fit.factor()
    z = np.column_stack(
        [np.random.default_rng([*key, k]).standard_normal(fit.n_params) for k in range(count)]
    )
    return fit.theta[None, :] + factor.sample(z).T


def posterior_sample(fit: FitResult, count: int, seed: Union[int, Sequence[int]]) -> list[ParameterField]:
    if not fit.converged:
        raise FitError("posterior sampling needs a converged fit", last_iterate=fit.theta)
    return [fit.layout.unpack(row) for row in posterior_draws(fit, count, seed)]


def aic(fit: FitResult) -> float:
    return -2.0 * fit.unpenalized_ll + 2.0 * fit.edf


def wald_zero_test(fit: FitResult, block: str) -> float:
    """p-value of the Wald test that every coefficient in ``block`` is zero.

    Uses the rank-r pseudo-inverse of the block covariance with r the
    rounded effective degrees of freedom of the block.
    """
    try:
        sl = fit.layout.block(block)
    except SpecError as exc:
        raise SpecError(f"block {block!r} has dimension 0 in {fit.spec.label}") from exc
    b = fit.theta[sl]
    if b.size == 0:
        raise SpecError(f"block {block!r} has dimension 0")
    cov_b = fit.covariance()[sl, sl]
    cov_b = 0.5 * (cov_b + cov_b.T)
    eigval, eigvec = np.linalg.eigh(cov_b)
    order = np.argsort(eigval)[::-1]
    eigval, eigvec = eigval[order], eigvec[:, order]
    r = int(min(b.size, max(1, round(fit.block_edf(block)))))
    kept = eigval[:r]
    if np.any(kept <= 0) or not np.all(np.isfinite(kept)):
        raise SpecError(f"covariance of block {block!r} is not invertible")
    proj = eigvec[:, :r].T @ b
    statistic = float(np.sum(proj**2 / kept))
    return float(stats.chi2.sf(statistic, df=r))
