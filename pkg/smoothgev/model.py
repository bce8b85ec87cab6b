"""
Model family, covariates and per-box coefficient fields.

Mod1 to Mod5 differ in which GEV parameters carry the log-CO2 covariate and
whether that trend varies between boxes. Every model has an elevation fixed
effect on the location and a time-constant shape.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from smoothgev.errors import IngestionError, SpecError
from smoothgev.gev import GevParams
from smoothgev.grid import GriddedDataset

PREINDUSTRIAL_CO2_PPM = 280.0

MU_TRENDS = ("none", "varying", "homogeneous")
SIGMA_TRENDS = ("none", "varying")


@dataclass(frozen=True)
class CovariateSeries:
    """x_t = log(co2_t / 280) for consecutive year indices t = 1, 2, ..."""

    co2_ppm: np.ndarray
    x: np.ndarray
    years: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.x.size)

    def at(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.x.size):
            raise SpecError(f"year index outside 1..{self.x.size}")
        return self.x[t - 1]

    def aligned(self, years: np.ndarray) -> "CovariateSeries":
        """Restrict to the given calendar years, in order."""
        years = np.asarray(years, dtype=int)
        if self.years is None:
            if self.x.size < years.size:
                raise SpecError(
                    f"covariate has {self.x.size} values but {years.size} years are modelled"
                )
            return CovariateSeries(self.co2_ppm[: years.size], self.x[: years.size], years)
        pos = {int(y): i for i, y in enumerate(self.years)}
        absent = [int(y) for y in years if int(y) not in pos]
        if absent:
            raise SpecError(f"no CO2 value for year(s) {absent}")
        index = np.array([pos[int(y)] for y in years], dtype=int)
        return CovariateSeries(self.co2_ppm[index], self.x[index], years)


def build_covariate(co2, years=None) -> CovariateSeries:
    co2 = np.asarray(co2, dtype=float).ravel()
    if co2.size == 0:
        raise SpecError("CO2 series is empty")
    if np.any(~np.isfinite(co2)) or np.any(co2 <= 0):
        raise SpecError("CO2 concentrations must be positive and finite")
    if years is not None:
        years = np.asarray(years, dtype=int).ravel()
        if years.size != co2.size:
            raise SpecError("CO2 years and values differ in length")
        if np.any(np.diff(years) != 1):
            raise SpecError("CO2 years must be consecutive")
    return CovariateSeries(co2_ppm=co2, x=np.log(co2 / PREINDUSTRIAL_CO2_PPM), years=years)


def load_covariate(source: Union[str, Path, pd.DataFrame]) -> CovariateSeries:
    """Read a co2 table with columns year, co2_ppm."""
    if isinstance(source, pd.DataFrame):
        frame = source
    else:
        path = Path(source)
        if not path.exists():
            raise FileNotFoundError(f"covariate table {path} does not exist")
        frame = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in ("year", "co2_ppm") if c not in frame.columns]
    if missing:
        raise IngestionError(f"co2 table is missing columns {missing}")
    frame = frame.sort_values("year")
    return build_covariate(frame["co2_ppm"].to_numpy(), frame["year"].to_numpy())


@dataclass(frozen=True)
class ModelSpec:
    mu_trend: str = "none"
    logsigma_trend: str = "none"
    elevation_effect: bool = True
    label: str = "custom"

    def __post_init__(self):
        if self.mu_trend not in MU_TRENDS:
            raise SpecError(f"mu_trend must be one of {MU_TRENDS}, got {self.mu_trend!r}")
        if self.logsigma_trend not in SIGMA_TRENDS:
            raise SpecError(f"logsigma_trend must be one of {SIGMA_TRENDS}, got {self.logsigma_trend!r}")

    @classmethod
    def from_name(cls, name: str) -> "ModelSpec":
        key = name.strip().lower()
        if key not in MODELS:
            raise SpecError(f"unknown model {name!r}; choose from {sorted(MODELS)}")
        return MODELS[key]

    @property
    def box_fields(self) -> tuple[str, ...]:
        """Spatially varying (penalized) coefficient fields, in packing order."""
        fields = ["mu0"]
        if self.mu_trend == "varying":
            fields.append("mu1")
        fields.append("sigma0")
        if self.logsigma_trend == "varying":
            fields.append("sigma1")
        fields.append("xi")
        return tuple(fields)

    @property
    def fixed_effects(self) -> tuple[str, ...]:
        """Unpenalized scalar coefficients."""
        fixed = []
        if self.elevation_effect:
            fixed.append("beta")
        if self.mu_trend == "homogeneous":
            fixed.append("mu1")
        return tuple(fixed)

    @property
    def has_trend(self) -> bool:
        return self.mu_trend != "none" or self.logsigma_trend != "none"


MODELS = {
    "mod1": ModelSpec("none", "none", True, "Mod1"),
    "mod2": ModelSpec("varying", "none", True, "Mod2"),
    "mod3": ModelSpec("none", "varying", True, "Mod3"),
    "mod4": ModelSpec("varying", "varying", True, "Mod4"),
    "mod5": ModelSpec("homogeneous", "none", True, "Mod5"),
}


@dataclass(frozen=True)
class ModelFrame:
    """Everything besides the coefficients needed to evaluate (mu, sigma, xi) per box and year."""

    spec: ModelSpec
    cov: CovariateSeries
    elev_centered: np.ndarray
    elevation_mean: float = 0.0

    @property
    def n(self) -> int:
        return int(self.elev_centered.size)

    @property
    def T(self) -> int:
        return len(self.cov)

    @classmethod
    def build(cls, data: GriddedDataset, spec: ModelSpec, cov: CovariateSeries) -> "ModelFrame":
        elev = data.grid.elevation_km
        mean = float(elev.mean()) if elev.size else 0.0
        return cls(
            spec=spec,
            cov=cov.aligned(data.years),
            elev_centered=elev - mean,
            elevation_mean=mean,
        )

    def with_spec(self, spec: ModelSpec) -> "ModelFrame":
        return replace(self, spec=spec)


def _as_box_array(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float).ravel()
    if arr.size != n:
        raise SpecError(f"field {name} has {arr.size} entries, expected {n}")
    return arr


@dataclass(frozen=True)
class ParameterField:
    """Per-box coefficients. ``sigma0``/``sigma1`` are on the log scale.

    ``mu1`` is a per-box array for spatially varying trends, a float for a
    homogeneous trend and None when the location has no trend.
    """

    mu0: np.ndarray
    sigma0: np.ndarray
    xi: np.ndarray
    mu1: Union[np.ndarray, float, None] = None
    sigma1: Optional[np.ndarray] = None
    beta: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.mu0).size
        object.__setattr__(self, "mu0", _as_box_array(self.mu0, n, "mu0"))
        object.__setattr__(self, "sigma0", _as_box_array(self.sigma0, n, "sigma0"))
        object.__setattr__(self, "xi", _as_box_array(self.xi, n, "xi"))
        if self.mu1 is not None and np.ndim(self.mu1) > 0:
            object.__setattr__(self, "mu1", _as_box_array(self.mu1, n, "mu1"))
        elif self.mu1 is not None:
            object.__setattr__(self, "mu1", float(self.mu1))
        if self.sigma1 is not None:
            object.__setattr__(self, "sigma1", _as_box_array(self.sigma1, n, "sigma1"))
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def n(self) -> int:
        return int(self.mu0.size)

    def check(self, spec: ModelSpec, n: Optional[int] = None) -> None:
        """Raise SpecError when the populated fields disagree with ``spec``."""
        if n is not None and self.n != n:
            raise SpecError(f"field has {self.n} boxes, expected {n}")
        if spec.mu_trend == "none" and self.mu1 is not None:
            raise SpecError(f"{spec.label} has no location trend but mu1 is set")
        if spec.mu_trend == "varying" and not isinstance(self.mu1, np.ndarray):
            raise SpecError(f"{spec.label} needs a per-box mu1 field")
        if spec.mu_trend == "homogeneous" and not isinstance(self.mu1, float):
            raise SpecError(f"{spec.label} needs a scalar mu1")
        if spec.logsigma_trend == "none" and self.sigma1 is not None:
            raise SpecError(f"{spec.label} has no scale trend but sigma1 is set")
        if spec.logsigma_trend == "varying" and self.sigma1 is None:
            raise SpecError(f"{spec.label} needs a per-box sigma1 field")

    def mu1_per_box(self) -> np.ndarray:
        if self.mu1 is None:
            return np.zeros(self.n)
        return np.broadcast_to(np.asarray(self.mu1, dtype=float), (self.n,)).copy()

    def sigma1_per_box(self) -> np.ndarray:
        return np.zeros(self.n) if self.sigma1 is None else self.sigma1

    def evaluate(self, frame: ModelFrame, boxes, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(mu, sigma, xi) at broadcast box indices and year indices."""
        self.check(frame.spec, frame.n)
        boxes, t = np.broadcast_arrays(np.asarray(boxes, dtype=int), np.asarray(t, dtype=int))
        x = frame.cov.at(t)
        beta = self.beta if frame.spec.elevation_effect else 0.0
        mu = self.mu0[boxes] + self.mu1_per_box()[boxes] * x + beta * frame.elev_centered[boxes]
        sigma = np.exp(self.sigma0[boxes] + self.sigma1_per_box()[boxes] * x)
        return mu, sigma, self.xi[boxes]

    def evaluate_year(self, frame: ModelFrame, t: int):
        """Per-box (mu, sigma, xi) at one year index."""
        return self.evaluate(frame, np.arange(self.n), t)

    def evaluate_all(self, frame: ModelFrame):
        """(mu, sigma, xi), each of shape (n, T)."""
        boxes = np.arange(self.n)[:, None]
        years = np.arange(1, frame.T + 1)[None, :]
        return self.evaluate(frame, boxes, years)

    def gev_params(self, frame: ModelFrame, box: int, t: int) -> GevParams:
        mu, sigma, xi = self.evaluate(frame, box, t)
        return GevParams(float(mu), float(sigma), float(xi))

    def shifted(self, **changes) -> "ParameterField":
        return replace(self, **changes)

    def to_frame(self, box_id: Optional[np.ndarray] = None) -> pd.DataFrame:
        """Coefficient table with columns box_id, mu0, mu1, sigma0, sigma1, xi."""
        ids = np.arange(self.n) if box_id is None else np.asarray(box_id)
        return pd.DataFrame(
            {
                "box_id": ids,
                "mu0": self.mu0,
                "mu1": self.mu1_per_box() if self.mu1 is not None else np.nan,
                "sigma0": self.sigma0,
                "sigma1": self.sigma1 if self.sigma1 is not None else np.nan,
                "xi": self.xi,
            }
        )


def gev_params_at(
    field: ParameterField,
    spec: ModelSpec,
    box: int,
    t: int,
    cov: CovariateSeries,
    elev_centered: float,
) -> GevParams:
    """GEV parameters for one box and year index from explicit covariate and centred elevation."""
    field.check(spec)
    if not 0 <= box < field.n:
        raise SpecError(f"box {box} outside 0..{field.n - 1}")
    x = float(cov.at(t))
    mu = field.mu0[box] + field.mu1_per_box()[box] * x
    if spec.elevation_effect:
        mu += field.beta * elev_centered
    log_sigma = field.sigma0[box] + field.sigma1_per_box()[box] * x
    return GevParams(float(mu), float(np.exp(log_sigma)), float(field.xi[box]))
