"""
Generalized extreme value (GEV) distribution: density, distribution function,
quantiles, moments, log-likelihood and single-sample estimation.

Array functions (``cdf``, ``pdf``, ``logpdf``, ``quantile``, ``mean_var``)
broadcast over numpy inputs; the ``gev_*`` functions are the scalar surface
built on top of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy import special

from smoothgev.errors import DomainError, EstimationError, FitError

XI_EPS = 1e-6
EULER_GAMMA = float(np.euler_gamma)

# Shape values at or below this are projected back during optimization.
XI_FLOOR = -1.0 + 1e-3

MLE_MAX_ITER = 200
MLE_GTOL = 1e-8

_SERIES_CUTOFF = 0.05
_N_TERMS = 18
_K1 = np.arange(1, 1 + _N_TERMS, dtype=float)
_K2 = np.arange(2, 2 + _N_TERMS, dtype=float)
_K3 = np.arange(3, 3 + _N_TERMS, dtype=float)
# log1p(a) / a
_LOG1P_RATIO_COEF = (-1.0) ** (_K1 + 1) / _K1
# (log1p(a) - a / (1 + a)) / a**2
_P_COEF = (-1.0) ** _K2 * (_K2 - 1) / _K2
# (2a / (1 + a) - 2 log1p(a) + a**2 / (1 + a)**2) / a**3
_Q_COEF = (-1.0) ** _K3 * (_K3 - 1) * (_K3 - 2) / _K3
# log Gamma(1 - x) - EULER_GAMMA * x, for |x| small
_ZETA_COEF = np.concatenate([[0.0, 0.0], special.zeta(_K2) / _K2])


@dataclass(frozen=True)
class GevParams:
    """Location ``mu``, scale ``sigma`` (> 0) and shape ``xi`` of a GEV distribution."""

    mu: float
    sigma: float
    xi: float

    def __post_init__(self):
        if not (np.isfinite(self.mu) and np.isfinite(self.sigma) and np.isfinite(self.xi)):
            raise DomainError(f"GEV parameters must be finite, got {self}")
        if self.sigma <= 0:
            raise DomainError(f"GEV scale must be positive, got sigma={self.sigma}")

    @property
    def valid_for_inference(self) -> bool:
        """Likelihood inference is irregular for xi <= -1."""
        return self.xi > -1.0

    @property
    def upper_endpoint(self) -> float:
        return self.mu - self.sigma / self.xi if self.xi < -XI_EPS else np.inf

    @property
    def lower_endpoint(self) -> float:
        return self.mu - self.sigma / self.xi if self.xi > XI_EPS else -np.inf

    def as_array(self) -> np.ndarray:
        return np.array([self.mu, self.sigma, self.xi])


@dataclass(frozen=True)
class Sample:
    """Annual maxima of one grid box with their year indices (1 = first year)."""

    values: np.ndarray
    years: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        years = (
            np.arange(1, values.size + 1)
            if self.years is None
            else np.asarray(self.years).ravel()
        )
        if values.size < 1:
            raise DomainError("a sample needs at least one value")
        if years.size != values.size:
            raise DomainError(
                f"values and years differ in length ({values.size} != {years.size})"
            )
        if np.any(np.diff(years) <= 0):
            raise DomainError("sample years must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise DomainError("sample values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "years", years)

    @property
    def n(self) -> int:
        return int(self.values.size)


# ---------------------------------------------------------------------------
# Array functions
# ---------------------------------------------------------------------------


def _broadcast(*arrays):
    return np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in arrays))


def _check_scale(sigma: np.ndarray) -> None:
    if np.any(~np.isfinite(sigma)) or np.any(sigma <= 0):
        raise DomainError("GEV scale must be finite and positive")


def cdf(y, mu, sigma, xi) -> np.ndarray:
    """Distribution function G(y); 0 below and 1 above the support."""
    y, mu, sigma, xi = _broadcast(y, mu, sigma, xi)
    _check_scale(sigma)
    if np.any(~np.isfinite(y)):
        raise DomainError("cdf argument must be finite")
    z = (y - mu) / sigma
    gumbel = np.abs(xi) <= XI_EPS
    t = 1.0 + xi * z
    inside = t > 0
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        safe_xi = np.where(gumbel, 1.0, xi)
        log_t = np.log(np.where(inside, t, 1.0))
        general = np.exp(-np.exp(-log_t / safe_xi))
        general = np.where(inside, general, np.where(xi > 0, 0.0, 1.0))
        out = np.where(gumbel, np.exp(-np.exp(-z)), general)
    return out


def logpdf(y, mu, sigma, xi) -> np.ndarray:
    """Log-density; ``-inf`` outside the support."""
    y, mu, sigma, xi = _broadcast(y, mu, sigma, xi)
    _check_scale(sigma)
    if np.any(~np.isfinite(y)):
        raise DomainError("density argument must be finite")
    z = (y - mu) / sigma
    gumbel = np.abs(xi) <= XI_EPS
    t = 1.0 + xi * z
    inside = t > 0
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        safe_xi = np.where(gumbel, 1.0, xi)
        log_t = np.log(np.where(inside, t, 1.0))
        general = -np.log(sigma) - (1.0 + 1.0 / safe_xi) * log_t - np.exp(-log_t / safe_xi)
        general = np.where(inside, general, -np.inf)
        gumbel_val = -np.log(sigma) - z - np.exp(-z)
        out = np.where(gumbel, gumbel_val, general)
    return out


def pdf(y, mu, sigma, xi) -> np.ndarray:
    return np.exp(logpdf(y, mu, sigma, xi))


def quantile(prob, mu, sigma, xi) -> np.ndarray:
    """Inverse distribution function for prob in (0, 1)."""
    prob, mu, sigma, xi = _broadcast(prob, mu, sigma, xi)
    _check_scale(sigma)
    if np.any(~(prob > 0)) or np.any(~(prob < 1)):
        raise DomainError("quantile probability must lie strictly between 0 and 1")
    log_y = np.log(-np.log(prob))
    gumbel = np.abs(xi) <= XI_EPS
    safe_xi = np.where(gumbel, 1.0, xi)
    general = mu + sigma * np.expm1(-safe_xi * log_y) / safe_xi
    return np.where(gumbel, mu - sigma * log_y, general)


def _lgamma_one_minus(x: np.ndarray) -> np.ndarray:
    """log Gamma(1 - x), accurate near x = 0."""
    small = np.abs(x) < _SERIES_CUTOFF
    series = EULER_GAMMA * x + npoly.polyval(x, _ZETA_COEF)
    with np.errstate(invalid="ignore"):
        direct = special.gammaln(1.0 - x)
    return np.where(small, series, direct)


def mean_var(mu, sigma, xi) -> tuple[np.ndarray, np.ndarray]:
    """Mean (finite iff xi < 1) and variance (finite iff xi < 1/2); +inf otherwise."""
    mu, sigma, xi = _broadcast(mu, sigma, xi)
    _check_scale(sigma)
    gumbel = np.abs(xi) <= XI_EPS
    safe_xi = np.where(gumbel, 1.0, xi)

    mean_ok = xi < 1.0
    x1 = np.where(mean_ok, xi, 0.0)
    lg1 = _lgamma_one_minus(x1)
    mean_general = mu + sigma * np.expm1(lg1) / safe_xi
    mean = np.where(gumbel, mu + sigma * EULER_GAMMA, mean_general)
    mean = np.where(mean_ok, mean, np.inf)

    var_ok = xi < 0.5
    x2 = np.where(var_ok, xi, 0.0)
    g1 = np.exp(_lgamma_one_minus(x2))
    # log Gamma(1 - 2x) - 2 log Gamma(1 - x); the linear terms cancel analytically
    excess = _lgamma_one_minus(2 * x2) - 2 * _lgamma_one_minus(x2)
    small = np.abs(x2) < _SERIES_CUTOFF
    k = _K2
    series_coef = np.concatenate([[0.0, 0.0], special.zeta(k) * (2.0**k - 2.0) / k])
    excess = np.where(small, npoly.polyval(x2, series_coef), excess)
    var_general = sigma**2 * g1**2 * np.expm1(excess) / safe_xi**2
    var = np.where(gumbel, np.pi**2 * sigma**2 / 6.0, var_general)
    var = np.where(var_ok, var, np.inf)
    return mean, var


class LogDensityTerms(NamedTuple):
    """Per-observation log-density and its derivatives in (mu, log sigma, xi)."""

    value: np.ndarray
    d_mu: np.ndarray
    d_psi: np.ndarray
    d_xi: np.ndarray
    d_mu_mu: np.ndarray
    d_mu_psi: np.ndarray
    d_mu_xi: np.ndarray
    d_psi_psi: np.ndarray
    d_psi_xi: np.ndarray
    d_xi_xi: np.ndarray


def _series_or_direct(a: np.ndarray, coef: np.ndarray, direct) -> np.ndarray:
    small = np.abs(a) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, a)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(small, npoly.polyval(a, coef), direct(safe))


def logpdf_terms(y, mu, psi, xi) -> LogDensityTerms:
    """Log-density with analytic first and second derivatives.

    ``psi`` is log sigma. The xi-dependent pieces are evaluated through
    functions of a = xi * z with series expansions near a = 0, so values and
    derivatives pass continuously through the Gumbel limit. Outside the
    support the value is ``-inf`` and the derivatives are zero.
    """
    y, mu, psi, xi = _broadcast(y, mu, psi, xi)
    sigma = np.exp(psi)
    z_raw = (y - mu) / sigma
    a_raw = xi * z_raw
    inside = 1.0 + a_raw > 0
    z = np.where(inside, z_raw, 0.0)
    a = np.where(inside, a_raw, 0.0)
    t = 1.0 + a

    log_ratio = _series_or_direct(a, _LOG1P_RATIO_COEF, lambda s: np.log1p(s) / s)
    u = a * log_ratio
    w = np.exp(-z * log_ratio)
    value = np.where(inside, -psi - u - z * log_ratio - w, -np.inf)

    p_term = _series_or_direct(a, _P_COEF, lambda s: (np.log1p(s) - s / (1 + s)) / s**2)
    q_term = _series_or_direct(
        a,
        _Q_COEF,
        lambda s: (2 * s / (1 + s) - 2 * np.log1p(s) + s**2 / (1 + s) ** 2) / s**3,
    )
    big_a = z**2 * p_term
    big_a_xi = z**3 * q_term

    h_z = (w - 1.0 - xi) / t
    h_zz = (1.0 + xi) * (xi - w) / t**2
    h_xi = (1.0 - w) * big_a - z / t
    h_zxi = (w * big_a - 1.0) / t - (w - 1.0 - xi) * z / t**2
    h_xixi = -w * big_a**2 + (1.0 - w) * big_a_xi + z**2 / t**2

    zero = np.zeros_like(z)

    def keep(arr):
        return np.where(inside, arr, zero)

    return LogDensityTerms(
        value=value,
        d_mu=keep(-h_z / sigma),
        d_psi=keep(-1.0 - z * h_z),
        d_xi=keep(h_xi),
        d_mu_mu=keep(h_zz / sigma**2),
        d_mu_psi=keep((z * h_zz + h_z) / sigma),
        d_mu_xi=keep(-h_zxi / sigma),
        d_psi_psi=keep(z * h_z + z**2 * h_zz),
        d_psi_xi=keep(-z * h_zxi),
        d_xi_xi=keep(h_xixi),
    )


# ---------------------------------------------------------------------------
# Scalar surface
# ---------------------------------------------------------------------------


def _check_point(y: float) -> float:
    if not np.isfinite(y):
        raise DomainError(f"argument must be finite, got {y}")
    return float(y)


def gev_cdf(p: GevParams, y: float) -> float:
    return float(cdf(_check_point(y), p.mu, p.sigma, p.xi))


def gev_pdf(p: GevParams, y: float) -> float:
    return float(pdf(_check_point(y), p.mu, p.sigma, p.xi))


def gev_quantile(p: GevParams, prob: float) -> float:
    return float(quantile(prob, p.mu, p.sigma, p.xi))


def gev_loglik(p: GevParams, s: Sample) -> float:
    """Sum of log-densities; ``-inf`` when any observation is outside the support."""
    return float(np.sum(logpdf(s.values, p.mu, p.sigma, p.xi)))


def gev_mean_var(p: GevParams) -> tuple[float, float]:
    mean, var = mean_var(p.mu, p.sigma, p.xi)
    return float(mean), float(var)


def gev_sample(p: GevParams, size: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws."""
    u = rng.random(size)
    u = np.where(u > 0, u, np.nextafter(0.0, 1.0))
    return quantile(u, p.mu, p.sigma, p.xi)


def gev_loglik_derivatives(p: GevParams, s: Sample) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian of the log-likelihood in (mu, sigma, xi)."""
    grad_psi, hess_psi = _loglik_derivatives_psi(
        np.array([p.mu, np.log(p.sigma), p.xi]), s.values
    )
    return _to_natural(grad_psi, hess_psi, p.sigma)


def _loglik_derivatives_psi(theta: np.ndarray, values: np.ndarray):
    terms = logpdf_terms(values, theta[0], theta[1], theta[2])
    grad = np.array([terms.d_mu.sum(), terms.d_psi.sum(), terms.d_xi.sum()])
    hess = np.array(
        [
            [terms.d_mu_mu.sum(), terms.d_mu_psi.sum(), terms.d_mu_xi.sum()],
            [terms.d_mu_psi.sum(), terms.d_psi_psi.sum(), terms.d_psi_xi.sum()],
            [terms.d_mu_xi.sum(), terms.d_psi_xi.sum(), terms.d_xi_xi.sum()],
        ]
    )
    return grad, hess


def _to_natural(grad_psi: np.ndarray, hess_psi: np.ndarray, sigma: float):
    jac = np.array([1.0, 1.0 / sigma, 1.0])
    grad = grad_psi * jac
    hess = hess_psi * np.outer(jac, jac)
    hess[1, 1] -= grad_psi[1] / sigma**2
    return grad, hess


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------


def sample_lmoments(values) -> tuple[float, float, float]:
    """Sample L-moments (l1, l2, t3) from unbiased probability weighted moments."""
    x = np.sort(np.asarray(values, dtype=float).ravel())
    n = x.size
    if n < 3:
        raise EstimationError(f"L-moment estimation needs at least 3 values, got {n}")
    j = np.arange(1, n + 1, dtype=float)
    b0 = x.mean()
    b1 = np.sum((j - 1) / (n - 1) * x) / n
    b2 = np.sum((j - 1) * (j - 2) / ((n - 1) * (n - 2)) * x) / n
    l1 = b0
    l2 = 2 * b1 - b0
    l3 = 6 * b2 - 6 * b1 + b0
    scale = max(abs(l1), np.ptp(x), 1.0)
    if l2 <= 1e-12 * scale:
        raise EstimationError("sample has no spread; L-moment estimation is degenerate")
    return float(l1), float(l2), float(l3 / l2)


def fit_lmoments(s: Sample | np.ndarray) -> GevParams:
    """L-moment point estimates using the rational approximation for the shape."""
    values = s.values if isinstance(s, Sample) else np.asarray(s, dtype=float)
    l1, l2, t3 = sample_lmoments(values)
    c = 2.0 / (3.0 + t3) - np.log(2.0) / np.log(3.0)
    k = 7.8590 * c + 2.9554 * c**2
    if abs(k) <= XI_EPS:
        sigma = l2 / np.log(2.0)
        mu = l1 - EULER_GAMMA * sigma
    else:
        gamma_k = special.gamma(1.0 + k)
        sigma = l2 * k / (-np.expm1(-k * np.log(2.0)) * gamma_k)
        mu = l1 - sigma * (1.0 - gamma_k) / k
    return GevParams(mu=float(mu), sigma=float(sigma), xi=float(-k))


@dataclass
class MleResult:
    params: GevParams
    covariance: np.ndarray
    loglik: float
    iterations: int
    gradient: np.ndarray

    def __iter__(self):
        # (params, covariance) unpacking
        yield self.params
        yield self.covariance


def feasible_start(values: np.ndarray, start: GevParams, max_tries: int = 60) -> GevParams:
    """Widen the scale and damp the shape until every value is inside the support."""
    mu, sigma, xi = start.mu, start.sigma, start.xi
    xi = max(xi, XI_FLOOR)
    for _ in range(max_tries):
        if np.all(np.isfinite(logpdf(values, mu, sigma, xi))):
            return GevParams(mu, sigma, xi)
        sigma *= 1.5
        xi *= 0.8
    raise EstimationError("could not find a starting point inside the GEV support")


def _project_shape(theta: np.ndarray) -> np.ndarray:
    if theta[2] <= -1.0:
        theta = theta.copy()
        theta[2] = XI_FLOOR
    return theta


def fit_mle(
    s: Sample | np.ndarray,
    init: Optional[GevParams] = None,
    max_iter: int = MLE_MAX_ITER,
    gtol: float = MLE_GTOL,
) -> MleResult:
    """Maximum likelihood by damped Newton in (mu, log sigma, xi).

    Starts from the L-moment estimate unless ``init`` is given. Returns the
    estimate and the inverse observed information in (mu, sigma, xi).
    """
    from smoothgev.optim import newton_maximize

    values = s.values if isinstance(s, Sample) else np.asarray(s, dtype=float)
    start = init if init is not None else fit_lmoments(values)
    start = feasible_start(values, start)

    def objective(theta: np.ndarray, derivatives: bool):
        terms = logpdf_terms(values, theta[0], theta[1], theta[2])
        value = float(terms.value.sum())
        if not derivatives or not np.isfinite(value):
            return value, None, None
        grad, hess = _loglik_derivatives_psi(theta, values)
        return value, grad, hess

    result = newton_maximize(
        objective,
        np.array([start.mu, np.log(start.sigma), start.xi]),
        max_iter=max_iter,
        gtol=gtol,
        project=_project_shape,
    )
    if not result.converged:
        raise FitError(
            f"GEV maximum likelihood did not converge: {result.message}",
            last_iterate=result.x,
            diagnostics={"iterations": result.iterations, "loglik": result.value},
        )
    mu, psi, xi = result.x
    params = GevParams(mu=float(mu), sigma=float(np.exp(psi)), xi=float(xi))
    grad, hess = _to_natural(result.gradient, np.asarray(result.hessian), params.sigma)
    try:
        covariance = np.linalg.inv(-hess)
    except np.linalg.LinAlgError as exc:
        raise FitError(
            "observed information is singular at the GEV maximum",
            last_iterate=result.x,
        ) from exc
    return MleResult(
        params=params,
        covariance=covariance,
        loglik=result.value,
        iterations=result.iterations,
        gradient=grad,
    )
