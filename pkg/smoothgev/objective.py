"""
Penalized log-likelihood over all grid boxes.

The coefficient vector theta is packed block-wise: one length-n block per
spatially varying field (``ModelSpec.box_fields``), followed by one entry per
fixed effect. Every observation's GEV predictors (mu, log sigma, xi) are
linear in theta, so the likelihood gradient and Hessian are assembled from
the per-observation derivatives with ``np.bincount`` and a sparse COO sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from scipy import sparse

from smoothgev.errors import SpecError
from smoothgev.gev import logpdf_terms
from smoothgev.grid import GriddedDataset, PenaltyMatrix
from smoothgev.model import ModelFrame, ModelSpec, ParameterField

_PREDICTORS = ("mu", "psi", "xi")


@dataclass(frozen=True)
class SmoothingParams:
    """One positive smoothing parameter per spatially varying field."""

    values: Mapping[str, float]

    def __post_init__(self):
        clean = {}
        for name, lam in self.values.items():
            lam = float(lam)
            if not (np.isfinite(lam) and lam > 0):
                raise SpecError(f"smoothing parameter for {name} must be positive, got {lam}")
            clean[name] = lam
        object.__setattr__(self, "values", clean)

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    @property
    def log(self) -> dict[str, float]:
        return {k: float(np.log(v)) for k, v in self.values.items()}

    @classmethod
    def uniform(cls, fields, value: float) -> "SmoothingParams":
        return cls({f: value for f in fields})

    @classmethod
    def from_log10(cls, fields, log10_values) -> "SmoothingParams":
        return cls({f: 10.0 ** float(v) for f, v in zip(fields, log10_values)})


@dataclass(frozen=True)
class ParameterLayout:
    """Maps theta to named coefficient blocks and back."""

    spec: ModelSpec
    n: int
    include_beta: bool

    @classmethod
    def for_frame(cls, frame: ModelFrame) -> "ParameterLayout":
        include_beta = frame.spec.elevation_effect and bool(np.any(np.abs(frame.elev_centered) > 1e-12))
        return cls(spec=frame.spec, n=frame.n, include_beta=include_beta)

    @property
    def box_fields(self) -> tuple[str, ...]:
        return self.spec.box_fields

    @property
    def fixed_effects(self) -> tuple[str, ...]:
        return tuple(f for f in self.spec.fixed_effects if f != "beta" or self.include_beta)

    @property
    def size(self) -> int:
        return self.n * len(self.box_fields) + len(self.fixed_effects)

    def block(self, name: str) -> slice:
        if name in self.box_fields:
            k = self.box_fields.index(name)
            return slice(k * self.n, (k + 1) * self.n)
        if name in self.fixed_effects:
            start = self.n * len(self.box_fields) + self.fixed_effects.index(name)
            return slice(start, start + 1)
        raise SpecError(f"{self.spec.label} has no coefficient block {name!r}")

    def blocks(self) -> dict[str, slice]:
        return {name: self.block(name) for name in self.box_fields + self.fixed_effects}

    def pack(self, field: ParameterField) -> np.ndarray:
        field.check(self.spec, self.n)
        theta = np.zeros(self.size)
        for name in self.box_fields:
            theta[self.block(name)] = getattr(field, name)
        for name in self.fixed_effects:
            theta[self.block(name)] = field.beta if name == "beta" else field.mu1
        return theta

    def unpack(self, theta: np.ndarray) -> ParameterField:
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.size:
            raise SpecError(f"theta has {theta.size} entries, expected {self.size}")
        parts = {name: theta[self.block(name)].copy() for name in self.box_fields}
        mu1 = parts.get("mu1")
        if "mu1" in self.fixed_effects:
            mu1 = float(theta[self.block("mu1")][0])
        beta = float(theta[self.block("beta")][0]) if "beta" in self.fixed_effects else 0.0
        return ParameterField(
            mu0=parts["mu0"],
            sigma0=parts["sigma0"],
            xi=parts["xi"],
            mu1=mu1,
            sigma1=parts.get("sigma1"),
            beta=beta,
        )


class PenalizedProblem:
    """Penalized log-likelihood of one dataset under one model."""

    def __init__(self, data: GriddedDataset, frame: ModelFrame, penalty: PenaltyMatrix):
        if penalty.n != data.n or frame.n != data.n:
            raise SpecError(
                f"penalty ({penalty.n}), frame ({frame.n}) and data ({data.n}) disagree on the box count"
            )
        self.data = data
        self.frame = frame
        self.penalty = penalty
        self.layout = ParameterLayout.for_frame(frame)

        box, col = np.nonzero(~data.missing)
        self.box = box
        self.t = col + 1
        self.y = data.txx[box, col]
        self.m = self.y.size
        x = frame.cov.x[col] if self.m else np.zeros(0)
        self._terms = self._design(box, x, frame.elev_centered[box])

    def _design(self, box, x, elev) -> dict[str, list[tuple[np.ndarray, np.ndarray]]]:
        """(theta index, multiplier) pairs whose sum gives each predictor."""
        lay = self.layout
        ones = np.ones(self.m)

        def per_box(name):
            return lay.block(name).start + box

        def fixed(name):
            return np.full(self.m, lay.block(name).start)

        mu = [(per_box("mu0"), ones)]
        if "mu1" in lay.box_fields:
            mu.append((per_box("mu1"), x))
        elif "mu1" in lay.fixed_effects:
            mu.append((fixed("mu1"), x))
        if "beta" in lay.fixed_effects:
            mu.append((fixed("beta"), elev))
        psi = [(per_box("sigma0"), ones)]
        if "sigma1" in lay.box_fields:
            psi.append((per_box("sigma1"), x))
        xi = [(per_box("xi"), ones)]
        return {"mu": mu, "psi": psi, "xi": xi}

    def predictors(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        return {
            p: sum(theta[idx] * mult for idx, mult in terms)
            for p, terms in self._terms.items()
        }

    def loglik(self, theta: np.ndarray) -> float:
        pred = self.predictors(theta)
        return float(logpdf_terms(self.y, pred["mu"], pred["psi"], pred["xi"]).value.sum())

    def penalty_value(self, theta: np.ndarray, lambdas: SmoothingParams) -> float:
        total = 0.0
        for name in self.layout.box_fields:
            total += lambdas[name] * self.penalty.quadratic(theta[self.layout.block(name)])
        return total

    def penalty_hessian(self, lambdas: SmoothingParams) -> sparse.csc_matrix:
        """Block-diagonal 2 * lambda_k * S_k (the negative Hessian of the penalty)."""
        blocks = [2.0 * lambdas[name] * self.penalty.S for name in self.layout.box_fields]
        n_fixed = len(self.layout.fixed_effects)
        if n_fixed:
            blocks.append(sparse.csr_matrix((n_fixed, n_fixed)))
        return sparse.block_diag(blocks, format="csc").astype(float)

    def likelihood_derivatives(self, theta: np.ndarray):
        """(loglik, gradient, Hessian) of the unpenalized log-likelihood."""
        pred = self.predictors(theta)
        terms = logpdf_terms(self.y, pred["mu"], pred["psi"], pred["xi"])
        value = float(terms.value.sum())
        size = self.layout.size
        first = {"mu": terms.d_mu, "psi": terms.d_psi, "xi": terms.d_xi}
        second = {
            ("mu", "mu"): terms.d_mu_mu,
            ("mu", "psi"): terms.d_mu_psi,
            ("mu", "xi"): terms.d_mu_xi,
            ("psi", "psi"): terms.d_psi_psi,
            ("psi", "xi"): terms.d_psi_xi,
            ("xi", "xi"): terms.d_xi_xi,
        }

        grad = np.zeros(size)
        for p in _PREDICTORS:
            for idx, mult in self._terms[p]:
                grad += np.bincount(idx, weights=first[p] * mult, minlength=size)

        rows, cols, vals = [], [], []
        for a, p in enumerate(_PREDICTORS):
            for q in _PREDICTORS[a:]:
                d = second[(p, q)]
                for idx_p, mult_p in self._terms[p]:
                    for idx_q, mult_q in self._terms[q]:
                        w = d * mult_p * mult_q
                        rows.append(idx_p)
                        cols.append(idx_q)
                        vals.append(w)
                        if p != q:
                            rows.append(idx_q)
                            cols.append(idx_p)
                            vals.append(w)
        if rows:
            hess = sparse.coo_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(size, size),
            ).tocsc()
        else:
            hess = sparse.csc_matrix((size, size))
        return value, grad, hess

    def evaluate(self, theta: np.ndarray, lambdas: SmoothingParams, derivatives: bool = True):
        """Penalized objective ``sum_i l_i - sum_k lambda_k v_k' S v_k`` and its derivatives."""
        theta = np.asarray(theta, dtype=float)
        if not derivatives:
            ll = self.loglik(theta)
            if not np.isfinite(ll):
                return -np.inf, None, None
            return ll - self.penalty_value(theta, lambdas), None, None
        ll, grad, hess = self.likelihood_derivatives(theta)
        if not np.isfinite(ll):
            return -np.inf, None, None
        pen_h = self.penalty_hessian(lambdas)
        value = ll - self.penalty_value(theta, lambdas)
        return value, grad - pen_h @ theta, (hess - pen_h).tocsc()

    def objective(self, lambdas: SmoothingParams):
        """Callback in the form expected by ``newton_maximize``."""

        def f(theta, derivatives):
            return self.evaluate(theta, lambdas, derivatives)

        return f


def penalized_objective(
    field: ParameterField,
    spec: ModelSpec,
    data: GriddedDataset,
    cov,
    lambdas: SmoothingParams,
    penalty: PenaltyMatrix,
):
    """Value, gradient and sparse Hessian of the penalized log-likelihood at ``field``.

    The gradient and Hessian are ordered as ``ParameterLayout`` packs theta;
    they are None when an observation falls outside the GEV support.
    """
    frame = ModelFrame.build(data, spec, cov)
    problem = PenalizedProblem(data, frame, penalty)
    return problem.evaluate(problem.layout.pack(field), lambdas)
