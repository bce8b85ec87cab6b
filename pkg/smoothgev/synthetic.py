"""
Ground-truth simulator: smooth coefficient fields on a rectangular lattice and
annual maxima drawn from the implied GEV distributions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd
from dotenv import dotenv_values

from smoothgev.errors import SpecError
from smoothgev.gev import quantile
from smoothgev.grid import Grid, GriddedDataset
from smoothgev.model import CovariateSeries, ModelFrame, ModelSpec, ParameterField, build_covariate

XI_TRUTH_RANGE = (-0.5, 0.3)
CO2_START_PPM = 311.3
CO2_GROWTH = 1.31


@dataclass(frozen=True)
class FieldShape:
    """Band-limited random field: ``mean + amplitude * unit-variance sinusoid mix``."""

    mean: float = 0.0
    amplitude: float = 0.0
    modes: int = 2


def _default_shapes() -> dict[str, FieldShape]:
    return {
        "mu0": FieldShape(30.0, 2.0),
        "mu1": FieldShape(3.0, 1.5),
        "sigma0": FieldShape(float(np.log(1.5)), 0.1),
        "sigma1": FieldShape(0.0, 0.0),
        "xi": FieldShape(-0.2, 0.05),
        "elevation": FieldShape(0.3, 0.15),
    }


@dataclass(frozen=True)
class TruthScenario:
    nx: int = 10
    ny: int = 10
    n_years: int = 69
    first_year: int = 1950
    model: str = "mod2"
    seed: int = 0
    spacing: float = 0.25
    lon0: float = 0.0
    lat0: float = 45.0
    n_regions: int = 1
    missing_fraction: float = 0.0
    beta: float = -5.0
    shapes: dict[str, FieldShape] = field(default_factory=_default_shapes)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1 or self.n_years < 1:
            raise SpecError("scenario grid and year counts must be positive")
        if not 0 <= self.missing_fraction < 1:
            raise SpecError("missing_fraction must lie in [0, 1)")
        if not 1 <= self.n_regions <= self.nx:
            raise SpecError(f"n_regions must lie in 1..{self.nx}")
        ModelSpec.from_name(self.model)

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec.from_name(self.model)

    def covariate(self) -> CovariateSeries:
        """CO2 growing geometrically by CO2_GROWTH over the simulated years."""
        steps = np.arange(self.n_years) / max(self.n_years - 1, 1)
        co2 = CO2_START_PPM * CO2_GROWTH**steps
        return build_covariate(co2, np.arange(self.first_year, self.first_year + self.n_years))


def smooth_field(nx: int, ny: int, shape: FieldShape, rng: np.random.Generator) -> np.ndarray:
    """Sum of low-frequency sinusoids on the unit square, scaled to unit spatial std."""
    if shape.amplitude == 0 or nx * ny == 1:
        return np.full(nx * ny, shape.mean)
    u, v = np.meshgrid(np.linspace(0, 1, nx), np.linspace(0, 1, ny), indexing="xy")
    total = np.zeros_like(u)
    for fx in range(shape.modes + 1):
        for fy in range(shape.modes + 1):
            if fx == fy == 0:
                continue
            a = rng.normal() / (fx**2 + fy**2)
            phase = rng.uniform(0, 2 * np.pi)
            total += a * np.sin(np.pi * (fx * u + fy * v) + phase)
    total = total.ravel()
    sd = total.std()
    if sd > 0:
        total = (total - total.mean()) / sd
    return shape.mean + shape.amplitude * total


def truth_field(scenario: TruthScenario) -> tuple[ParameterField, np.ndarray]:
    """True coefficients and the box elevations (km)."""
    spec = scenario.spec

    def draw(name, k):
        return smooth_field(scenario.nx, scenario.ny, scenario.shapes.get(name, FieldShape()),
                            np.random.default_rng([scenario.seed, 1_000_000 + k]))

    mu1 = None
    if spec.mu_trend == "varying":
        mu1 = draw("mu1", 1)
    elif spec.mu_trend == "homogeneous":
        mu1 = scenario.shapes.get("mu1", FieldShape()).mean
    sigma1 = draw("sigma1", 3) if spec.logsigma_trend == "varying" else None
    field_ = ParameterField(
        mu0=draw("mu0", 0),
        sigma0=draw("sigma0", 2),
        xi=np.clip(draw("xi", 4), *XI_TRUTH_RANGE),
        mu1=mu1,
        sigma1=sigma1,
        beta=scenario.beta,
    )
    elevation = np.maximum(draw("elevation", 5), 0.0)
    return field_, elevation


def scenario_grid(scenario: TruthScenario, elevation: np.ndarray) -> Grid:
    ix, iy = np.meshgrid(np.arange(scenario.nx), np.arange(scenario.ny), indexing="xy")
    ix, iy = ix.ravel(), iy.ravel()
    band = np.minimum(ix * scenario.n_regions // scenario.nx, scenario.n_regions - 1)
    return Grid(
        box_id=np.arange(ix.size),
        lon=scenario.lon0 + scenario.spacing * ix,
        lat=scenario.lat0 + scenario.spacing * iy,
        elevation_km=elevation,
        region=np.array([f"R{b + 1}" for b in band]),
        spacing=scenario.spacing,
    )


def simulate(scenario: TruthScenario) -> tuple[GriddedDataset, ParameterField]:
    """Draw every annual maximum independently from its true GEV distribution.

    Box i uses the random stream ``default_rng([seed, i])``, so the data do not
    depend on the order in which boxes are generated.
    """
    field_, elevation = truth_field(scenario)
    grid = scenario_grid(scenario, elevation)
    cov = scenario.covariate()
    years = cov.years
    empty = GriddedDataset(grid=grid, years=years, txx=np.zeros((grid.n, years.size)))
    frame = ModelFrame.build(empty, scenario.spec, cov)
    mu, sigma, xi = field_.evaluate_all(frame)

    txx = np.empty((grid.n, years.size))
    for i in range(grid.n):
        rng = np.random.default_rng([scenario.seed, i])
        u = rng.random(years.size)
        u = np.where(u > 0, u, np.nextafter(0.0, 1.0))
        txx[i] = quantile(u, mu[i], sigma[i], xi[i])
        if scenario.missing_fraction > 0:
            drop = rng.random(years.size) < scenario.missing_fraction
            if drop.all():
                drop[rng.integers(years.size)] = False
            txx[i, drop] = np.nan
    return GriddedDataset(grid=grid, years=years, txx=txx), field_


# ---------------------------------------------------------------------------
# Scenario files and outputs
# ---------------------------------------------------------------------------

_SCALAR_KEYS = {f.name: f.type for f in fields(TruthScenario) if f.name != "shapes"}


def _coerce(raw: str, kind: str):
    kind = str(kind)
    if "int" in kind:
        return int(raw)
    if "float" in kind:
        return float(raw)
    return raw.strip()


def load_scenario(source: Union[str, Path, dict]) -> TruthScenario:
    """Scenario from a flat KEY=value file.

    Scalar keys match ``TruthScenario`` fields; field shapes use
    ``<FIELD>_MEAN``, ``<FIELD>_AMPLITUDE`` and ``<FIELD>_MODES``.
    """
    if isinstance(source, dict):
        raw = source
    else:
        path = Path(source)
        if not path.exists():
            raise FileNotFoundError(f"scenario file {path} does not exist")
        raw = dotenv_values(path)
    values = {str(k).strip().lower().replace("-", "_"): v for k, v in raw.items() if v is not None}
    kwargs = {}
    shapes = _default_shapes()
    for key, value in values.items():
        if key in _SCALAR_KEYS:
            try:
                kwargs[key] = _coerce(value, _SCALAR_KEYS[key])
            except ValueError as exc:
                raise SpecError(f"scenario key {key} has an invalid value {value!r}") from exc
            continue
        name, _, attr = key.rpartition("_")
        if name in shapes and attr in ("mean", "amplitude", "modes"):
            cast = int if attr == "modes" else float
            shapes[name] = replace(shapes[name], **{attr: cast(value)})
        else:
            raise SpecError(f"unknown scenario key {key!r}")
    return TruthScenario(shapes=shapes, **kwargs)


def scenario_to_dict(scenario: TruthScenario) -> dict[str, str]:
    out = {k: str(v) for k, v in asdict(scenario).items() if k != "shapes"}
    for name, shape in scenario.shapes.items():
        out[f"{name}_mean"] = repr(shape.mean)
        out[f"{name}_amplitude"] = repr(shape.amplitude)
        out[f"{name}_modes"] = str(shape.modes)
    return out


def save_scenario(scenario: TruthScenario, path: Union[str, Path]) -> Path:
    """Write the scenario as a flat KEY=value file that ``load_scenario`` reads back."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{k.upper()}={v}\n" for k, v in scenario_to_dict(scenario).items()))
    return path


def write_scenario_outputs(
    data: GriddedDataset,
    truth: ParameterField,
    cov: CovariateSeries,
    out_dir: Union[str, Path],
) -> dict[str, Path]:
    """Write txx.csv, grid.csv, co2.csv and truth.csv in the ingestion formats."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    txx, grid = data.to_frames()
    paths = {name: out / f"{name}.csv" for name in ("txx", "grid", "co2", "truth")}
    txx.to_csv(paths["txx"], index=False, float_format="%.17g")
    grid.to_csv(paths["grid"], index=False, float_format="%.17g")
    pd.DataFrame({"year": cov.years, "co2_ppm": cov.co2_ppm}).to_csv(
        paths["co2"], index=False, float_format="%.17g"
    )
    truth_frame = truth.to_frame(data.grid.box_id)
    truth_frame["beta"] = truth.beta
    truth_frame.to_csv(paths["truth"], index=False, float_format="%.17g")
    return paths
