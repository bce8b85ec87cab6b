"""
Serialization helpers: fit results to and from JSON, result tables to CSV.
"""

from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping, Union

import numpy as np
import pandas as pd
from scipy import sparse

from smoothgev.errors import SpecError
from smoothgev.fit import FitResult
from smoothgev.model import ModelFrame, ModelSpec, ParameterField, build_covariate
from smoothgev.objective import ParameterLayout, SmoothingParams

FORMAT_VERSION = 1
# excluded from the determinism contract
TIMESTAMP_KEY = "created_at"

PathLike = Union[str, Path]


def _floats(values) -> list[float]:
    return [float(v) for v in np.asarray(values, dtype=float).ravel()]


def field_to_dict(field: ParameterField) -> dict[str, Any]:
    out: dict[str, Any] = {
        "mu0": _floats(field.mu0),
        "sigma0": _floats(field.sigma0),
        "xi": _floats(field.xi),
        "beta": float(field.beta),
    }
    if isinstance(field.mu1, np.ndarray):
        out["mu1"] = _floats(field.mu1)
    elif field.mu1 is not None:
        out["mu1"] = float(field.mu1)
    if field.sigma1 is not None:
        out["sigma1"] = _floats(field.sigma1)
    return out


def field_from_dict(payload: Mapping[str, Any]) -> ParameterField:
    mu1 = payload.get("mu1")
    return ParameterField(
        mu0=np.asarray(payload["mu0"], dtype=float),
        sigma0=np.asarray(payload["sigma0"], dtype=float),
        xi=np.asarray(payload["xi"], dtype=float),
        mu1=np.asarray(mu1, dtype=float) if isinstance(mu1, list) else mu1,
        sigma1=np.asarray(payload["sigma1"], dtype=float) if payload.get("sigma1") is not None else None,
        beta=float(payload.get("beta", 0.0)),
    )


def fit_result_to_dict(fit: FitResult, box_id=None, region=None) -> dict[str, Any]:
    """JSON-ready record of a fit; the precision matrix is stored as COO triplets."""
    spec = fit.spec
    coo = sparse.triu(fit.precision).tocoo()
    frame = fit.frame
    return {
        "format_version": FORMAT_VERSION,
        TIMESTAMP_KEY: datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "model": {
            "label": spec.label,
            "mu_trend": spec.mu_trend,
            "logsigma_trend": spec.logsigma_trend,
            "elevation_effect": spec.elevation_effect,
        },
        "region": region,
        "box_id": [str(b) for b in (box_id if box_id is not None else range(frame.n))],
        "lambdas": {k: float(v) for k, v in fit.lambdas.values.items()},
        "penalized_ll": float(fit.penalized_ll),
        "unpenalized_ll": float(fit.unpenalized_ll),
        "marginal_loglik": float(fit.marginal_loglik),
        "edf": float(fit.edf),
        "converged": bool(fit.converged),
        "iterations": int(fit.iterations),
        "outer_method": fit.outer_method,
        "outer_evaluations": int(fit.outer_evaluations),
        "include_beta": bool(fit.layout.include_beta),
        "field": field_to_dict(fit.field),
        "theta": _floats(fit.theta),
        "influence_diag": _floats(fit.influence_diag),
        "precision": {
            "shape": list(fit.precision.shape),
            "row": coo.row.astype(int).tolist(),
            "col": coo.col.astype(int).tolist(),
            "data": _floats(coo.data),
        },
        "frame": {
            "years": [int(y) for y in frame.cov.years] if frame.cov.years is not None else None,
            "co2_ppm": _floats(frame.cov.co2_ppm),
            "elev_centered": _floats(frame.elev_centered),
            "elevation_mean": float(frame.elevation_mean),
        },
    }


def fit_result_from_dict(payload: Mapping[str, Any]) -> FitResult:
    if payload.get("format_version") != FORMAT_VERSION:
        raise SpecError(f"unsupported fit format version {payload.get('format_version')!r}")
    m = payload["model"]
    spec = ModelSpec(m["mu_trend"], m["logsigma_trend"], m["elevation_effect"], m["label"])
    fr = payload["frame"]
    co2 = np.asarray(fr["co2_ppm"], dtype=float)
    years = np.asarray(fr["years"], dtype=int) if fr.get("years") is not None else None
    cov = build_covariate(co2, years)
    frame = ModelFrame(
        spec=spec,
        cov=cov,
        elev_centered=np.asarray(fr["elev_centered"], dtype=float),
        elevation_mean=float(fr["elevation_mean"]),
    )
    layout = ParameterLayout(spec=spec, n=frame.n, include_beta=bool(payload["include_beta"]))
    pr = payload["precision"]
    upper = sparse.coo_matrix((pr["data"], (pr["row"], pr["col"])), shape=tuple(pr["shape"]))
    precision = (upper + sparse.triu(upper, k=1).T).tocsc()
    return FitResult(
        field=field_from_dict(payload["field"]),
        lambdas=SmoothingParams(payload["lambdas"]),
        penalized_ll=float(payload["penalized_ll"]),
        unpenalized_ll=float(payload["unpenalized_ll"]),
        precision=precision,
        edf=float(payload["edf"]),
        converged=bool(payload["converged"]),
        iterations=int(payload["iterations"]),
        layout=layout,
        frame=frame,
        theta=np.asarray(payload["theta"], dtype=float),
        influence_diag=np.asarray(payload["influence_diag"], dtype=float),
        marginal_loglik=float(payload["marginal_loglik"]),
        outer_method=payload["outer_method"],
        outer_evaluations=int(payload["outer_evaluations"]),
    )


def write_json(payload: Mapping[str, Any], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path: PathLike) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    return json.loads(path.read_text())


def save_fit(fit: FitResult, path: PathLike, box_id=None, region=None) -> Path:
    return write_json(fit_result_to_dict(fit, box_id, region), path)


def load_fit(path: PathLike) -> FitResult:
    return fit_result_from_dict(read_json(path))


def write_table(frame: pd.DataFrame, path: PathLike) -> Path:
    """CSV with floats at full (17 digit) precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def coefficient_table(fit: FitResult, box_id=None) -> pd.DataFrame:
    """One row per box: coefficients plus beta and standard errors of the box fields."""
    table = fit.field.to_frame(box_id)
    table["beta"] = fit.field.beta
    for name in fit.layout.box_fields:
        table[f"se_{name}"] = fit.standard_errors(name)
    return table
