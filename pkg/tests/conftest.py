"""Shared fixtures: small lattices, covariates and simulated datasets."""

import numpy as np
import pytest

from smoothgev.grid import Grid, GriddedDataset
from smoothgev.model import build_covariate
from smoothgev.synthetic import FieldShape, TruthScenario, simulate


def lattice(nx: int, ny: int, region=None, elevation=None) -> Grid:
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    n = nx * ny
    return Grid(
        box_id=np.arange(n),
        lon=ix.ravel().astype(float),
        lat=iy.ravel().astype(float),
        elevation_km=np.zeros(n) if elevation is None else np.asarray(elevation, dtype=float),
        region=np.array(["R1"] * n) if region is None else np.asarray(region),
        spacing=1.0,
    )


@pytest.fixture
def make_lattice():
    return lattice


@pytest.fixture
def make_dataset():
    """Dataset of GEV draws on an nx x ny lattice with constant parameters."""

    def build(nx=2, ny=2, years=30, mu=20.0, sigma=1.5, xi=-0.1, seed=0, elevation=None):
        grid = lattice(nx, ny, elevation=elevation)
        rng = np.random.default_rng(seed)
        u = rng.random((grid.n, years))
        x = (-np.log(u)) ** (-xi)
        txx = mu + sigma * (x - 1.0) / xi
        return GriddedDataset(grid=grid, years=np.arange(1950, 1950 + years), txx=txx)

    return build


@pytest.fixture
def flat_covariate():
    """CO2 series over 1950..2049 growing by a factor 1.31 across the first 69 years."""
    co2 = 311.3 * 1.31 ** (np.arange(100) / 68.0)
    return build_covariate(co2, np.arange(1950, 2050))


@pytest.fixture(scope="session")
def trend_scenario():
    return TruthScenario(
        nx=5,
        ny=4,
        n_years=40,
        model="mod2",
        seed=11,
        n_regions=2,
        shapes={
            "mu0": FieldShape(30.0, 1.5),
            "mu1": FieldShape(4.0, 1.0),
            "sigma0": FieldShape(float(np.log(1.5)), 0.05),
            "sigma1": FieldShape(),
            "xi": FieldShape(-0.2, 0.03),
            "elevation": FieldShape(0.3, 0.1),
        },
    )


@pytest.fixture(scope="session")
def trend_data(trend_scenario):
    data, truth = simulate(trend_scenario)
    return data, truth, trend_scenario.covariate()
