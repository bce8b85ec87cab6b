"""
Grid-box bookkeeping: lattice geometry, neighbourhoods, the GMRF penalty
matrix, annual-maximum extraction and dataset ingestion.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse import csgraph

from smoothgev.errors import DataWarning, IngestionError

MAX_MISSING_DAYS = 10
LATTICE_TOL = 1e-6

TXX_COLUMNS = ("box_id", "year", "txx_celsius")
GRID_COLUMNS = ("box_id", "lon", "lat", "elevation_km", "region")
DAILY_COLUMNS = ("box_id", "date", "tmax_celsius")

TableSource = Union[str, Path, pd.DataFrame]


@dataclass(frozen=True)
class Grid:
    """Boxes of a regular lon/lat lattice. Box ``i`` is row ``i`` of every array."""

    box_id: np.ndarray
    lon: np.ndarray
    lat: np.ndarray
    elevation_km: np.ndarray
    region: np.ndarray
    spacing: Optional[float] = None

    def __post_init__(self):
        n = len(self.box_id)
        for name in ("lon", "lat", "elevation_km", "region"):
            if len(getattr(self, name)) != n:
                raise IngestionError(f"grid column {name} has {len(getattr(self, name))} rows, expected {n}")
        if len(np.unique(self.box_id)) != n:
            raise IngestionError("grid box ids must be unique")
        object.__setattr__(self, "box_id", np.asarray(self.box_id))
        object.__setattr__(self, "lon", np.asarray(self.lon, dtype=float))
        object.__setattr__(self, "lat", np.asarray(self.lat, dtype=float))
        object.__setattr__(self, "elevation_km", np.asarray(self.elevation_km, dtype=float))
        object.__setattr__(self, "region", np.asarray(self.region, dtype=object).astype(str))
        if self.spacing is None:
            object.__setattr__(self, "spacing", infer_spacing(self.lon, self.lat))
        elif not self.spacing > 0:
            raise IngestionError(f"grid spacing must be positive, got {self.spacing}")

    @property
    def n(self) -> int:
        return int(len(self.box_id))

    def lattice_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer column/row of every box on the lattice."""
        if self.n == 0:
            return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
        fx = (self.lon - self.lon.min()) / self.spacing
        fy = (self.lat - self.lat.min()) / self.spacing
        ix, iy = np.rint(fx), np.rint(fy)
        off = np.maximum(np.abs(fx - ix), np.abs(fy - iy))
        if np.any(off > LATTICE_TOL * max(1.0, fx.max(initial=0), fy.max(initial=0))):
            bad = int(np.argmax(off))
            raise IngestionError(
                f"box {self.box_id[bad]} at ({self.lon[bad]}, {self.lat[bad]}) is not on a "
                f"lattice with spacing {self.spacing}"
            )
        return ix.astype(int), iy.astype(int)

    def subset(self, index: np.ndarray) -> "Grid":
        return Grid(
            box_id=self.box_id[index],
            lon=self.lon[index],
            lat=self.lat[index],
            elevation_km=self.elevation_km[index],
            region=self.region[index],
            spacing=self.spacing,
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "box_id": self.box_id,
                "lon": self.lon,
                "lat": self.lat,
                "elevation_km": self.elevation_km,
                "region": self.region,
            }
        )


def infer_spacing(lon: np.ndarray, lat: np.ndarray) -> float:
    """Smallest positive coordinate step; 1.0 for a grid of one row and column."""
    steps = []
    for coord in (np.asarray(lon, dtype=float), np.asarray(lat, dtype=float)):
        diffs = np.diff(np.unique(coord))
        diffs = diffs[diffs > LATTICE_TOL]
        if diffs.size:
            steps.append(diffs.min())
    return float(min(steps)) if steps else 1.0


@dataclass(frozen=True)
class Neighborhood:
    """Edge-sharing neighbours of each box, stored as sorted index arrays."""

    adjacency: tuple[np.ndarray, ...]

    @property
    def n(self) -> int:
        return len(self.adjacency)

    def pairs(self) -> np.ndarray:
        """Unordered neighbour pairs (i < j), shape (m, 2)."""
        rows = [(i, j) for i, nbrs in enumerate(self.adjacency) for j in nbrs if i < j]
        return np.array(rows, dtype=int).reshape(-1, 2)

    def degree(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=int)

    def adjacency_matrix(self) -> sparse.csr_matrix:
        p = self.pairs()
        ones = np.ones(len(p))
        a = sparse.coo_matrix((ones, (p[:, 0], p[:, 1])), shape=(self.n, self.n))
        return (a + a.T).tocsr()

    def components(self) -> np.ndarray:
        """Connected-component label of every box."""
        if self.n == 0:
            return np.zeros(0, dtype=int)
        _, labels = csgraph.connected_components(self.adjacency_matrix(), directed=False)
        return labels


def build_neighborhood(grid: Grid) -> Neighborhood:
    ix, iy = grid.lattice_indices()
    position: dict[tuple[int, int], int] = {}
    for i, key in enumerate(zip(ix.tolist(), iy.tolist())):
        if key in position:
            raise IngestionError(
                f"boxes {grid.box_id[position[key]]} and {grid.box_id[i]} share coordinates "
                f"({grid.lon[i]}, {grid.lat[i]})"
            )
        position[key] = i
    adjacency = []
    for x, y in zip(ix.tolist(), iy.tolist()):
        nbrs = [
            position[k]
            for k in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1))
            if k in position
        ]
        adjacency.append(np.array(sorted(nbrs), dtype=int))
    return Neighborhood(adjacency=tuple(adjacency))


@dataclass(frozen=True)
class PenaltyMatrix:
    """GMRF structure matrix S with S_ii = |N(i)| and S_ij = -1 for neighbours."""

    S: sparse.csr_matrix
    component_labels: np.ndarray

    @property
    def n(self) -> int:
        return self.S.shape[0]

    @property
    def n_components(self) -> int:
        return int(self.component_labels.max()) + 1 if self.n else 0

    @property
    def rank(self) -> int:
        return self.n - self.n_components

    def quadratic(self, v: np.ndarray) -> float:
        v = np.asarray(v, dtype=float)
        return float(v @ (self.S @ v))


def build_penalty(nb: Neighborhood) -> PenaltyMatrix:
    adj = nb.adjacency_matrix().astype(np.int64)
    s = sparse.diags(nb.degree().astype(np.int64), format="csr") - adj
    return PenaltyMatrix(S=s.tocsr(), component_labels=nb.components())


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GriddedDataset:
    """Annual maxima on a grid: ``txx[i, t - 1]`` for box i and year index t.

    ``years`` holds the calendar year of every column; year index 1 is the
    first column. Missing values are NaN.
    """

    grid: Grid
    years: np.ndarray
    txx: np.ndarray
    allow_empty_boxes: bool = field(default=False, repr=False)

    def __post_init__(self):
        txx = np.asarray(self.txx, dtype=float)
        years = np.asarray(self.years, dtype=int)
        if txx.shape != (self.grid.n, years.size):
            raise IngestionError(f"txx has shape {txx.shape}, expected {(self.grid.n, years.size)}")
        if np.any(np.diff(years) <= 0):
            raise IngestionError("dataset years must be strictly increasing")
        if np.any(np.isinf(txx)):
            raise IngestionError("txx values must be finite or missing")
        if not self.allow_empty_boxes:
            empty = np.all(np.isnan(txx), axis=1)
            if np.any(empty):
                raise IngestionError(
                    f"box {self.grid.box_id[np.argmax(empty)]} has no non-missing year"
                )
        object.__setattr__(self, "txx", txx)
        object.__setattr__(self, "years", years)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def T(self) -> int:
        return int(self.years.size)

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.txx)

    @property
    def n_obs(self) -> int:
        return int(np.sum(~self.missing))

    def year_index(self, calendar_year: int) -> int:
        hits = np.flatnonzero(self.years == calendar_year)
        if hits.size == 0:
            raise IngestionError(f"year {calendar_year} is not in the dataset")
        return int(hits[0]) + 1

    def observations(self) -> pd.DataFrame:
        """Long table of non-missing values: box (row index), box_id, year, t, txx."""
        box, col = np.nonzero(~self.missing)
        return pd.DataFrame(
            {
                "box": box,
                "box_id": self.grid.box_id[box],
                "year": self.years[col],
                "t": col + 1,
                "txx": self.txx[box, col],
            }
        )

    def region_counts(self) -> dict[str, int]:
        labels, counts = np.unique(self.grid.region, return_counts=True)
        return {str(k): int(v) for k, v in zip(labels, counts)}

    def regions(self) -> list[str]:
        return sorted(self.region_counts())

    def subset_region(self, label: str) -> "GriddedDataset":
        index = np.flatnonzero(self.grid.region == label)
        if index.size == 0:
            raise IngestionError(f"region {label!r} has no boxes")
        return GriddedDataset(
            grid=self.grid.subset(index),
            years=self.years,
            txx=self.txx[index],
            allow_empty_boxes=self.allow_empty_boxes,
        )

    def masked(self, mask: np.ndarray) -> "GriddedDataset":
        """Copy with the entries where ``mask`` is True set missing."""
        txx = self.txx.copy()
        txx[np.asarray(mask, dtype=bool)] = np.nan
        return GriddedDataset(grid=self.grid, years=self.years, txx=txx, allow_empty_boxes=True)

    def with_txx(self, txx: np.ndarray) -> "GriddedDataset":
        return GriddedDataset(
            grid=self.grid, years=self.years, txx=txx, allow_empty_boxes=self.allow_empty_boxes
        )

    def to_frames(self) -> tuple[pd.DataFrame, pd.DataFrame]:
        """txx and grid tables in the ingestion format."""
        box, col = np.indices(self.txx.shape)
        txx = pd.DataFrame(
            {
                "box_id": self.grid.box_id[box.ravel()],
                "year": self.years[col.ravel()],
                "txx_celsius": self.txx.ravel(),
            }
        )
        return txx, self.grid.to_frame()


def annual_maximum(values: Sequence[float], missing: Optional[Sequence[bool]] = None,
                   n_days: Optional[int] = None) -> float:
    """TXx of one year: NaN when more than MAX_MISSING_DAYS days are missing.

    ``n_days`` is the length of the calendar year; days absent from
    ``values`` count as missing.
    """
    values = np.asarray(values, dtype=float)
    present = ~np.isnan(values)
    if missing is not None:
        present &= ~np.asarray(missing, dtype=bool)
    n_days = values.size if n_days is None else n_days
    n_missing = n_days - int(present.sum())
    if n_missing > MAX_MISSING_DAYS or not present.any():
        return float("nan")
    return float(values[present].max())


def annual_maxima(daily: pd.DataFrame) -> pd.DataFrame:
    """Reduce a daily table (box_id, date, tmax_celsius) to the txx table format."""
    _require_columns(daily, DAILY_COLUMNS, "daily")
    frame = daily.loc[:, list(DAILY_COLUMNS)].copy()
    frame["date"] = pd.to_datetime(frame["date"], errors="coerce")
    if frame["date"].isna().any():
        row = int(np.flatnonzero(frame["date"].isna())[0])
        raise IngestionError(f"daily row {row} has an unparseable date")
    if frame.duplicated(["box_id", "date"]).any():
        row = int(np.flatnonzero(frame.duplicated(["box_id", "date"]))[0])
        raise IngestionError(f"daily row {row} duplicates an earlier (box_id, date)")
    frame["tmax_celsius"] = pd.to_numeric(frame["tmax_celsius"], errors="coerce")
    frame["year"] = frame["date"].dt.year

    rows = []
    for (box_id, year), group in frame.groupby(["box_id", "year"], sort=True):
        n_days = 366 if pd.Timestamp(year=int(year), month=1, day=1).is_leap_year else 365
        rows.append((box_id, int(year), annual_maximum(group["tmax_celsius"].to_numpy(), n_days=n_days)))
    return pd.DataFrame(rows, columns=list(TXX_COLUMNS))


def extract_txx(daily: TableSource, grid_meta: TableSource, spacing: Optional[float] = None) -> GriddedDataset:
    """Annual maxima from daily data, assembled into a dataset over ``grid_meta``."""
    return ingest_dataset(annual_maxima(_read_table(daily)), grid_meta, spacing=spacing)


def _read_table(source: TableSource) -> pd.DataFrame:
    if isinstance(source, pd.DataFrame):
        return source.copy()
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"input table {path} does not exist")
    return pd.read_csv(path, float_precision="round_trip")


def _require_columns(frame: pd.DataFrame, columns: Sequence[str], what: str) -> None:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise IngestionError(f"{what} table is missing columns {missing}")


def ingest_dataset(txx_table: TableSource, grid_meta: TableSource, spacing: Optional[float] = None) -> GriddedDataset:
    """Validate and assemble the txx and grid tables.

    Boxes whose every year is missing are dropped with a ``DataWarning``.
    The year axis covers every calendar year between the first and last
    year present.
    """
    txx = _read_table(txx_table)
    meta = _read_table(grid_meta)
    _require_columns(txx, TXX_COLUMNS, "txx")
    _require_columns(meta, GRID_COLUMNS, "grid")

    if meta["box_id"].duplicated().any():
        row = int(np.flatnonzero(meta["box_id"].duplicated())[0])
        raise IngestionError(f"grid row {row} repeats box_id {meta['box_id'].iloc[row]}")
    dup = txx.duplicated(["box_id", "year"])
    if dup.any():
        row = int(np.flatnonzero(dup)[0])
        raise IngestionError(
            f"txx row {row} duplicates (box_id={txx['box_id'].iloc[row]}, year={txx['year'].iloc[row]})"
        )
    unknown = ~txx["box_id"].isin(meta["box_id"])
    if unknown.any():
        row = int(np.flatnonzero(unknown)[0])
        raise IngestionError(f"txx row {row} refers to box_id {txx['box_id'].iloc[row]} absent from the grid")
    for col in ("lon", "lat", "elevation_km"):
        values = pd.to_numeric(meta[col], errors="coerce")
        if values.isna().any():
            row = int(np.flatnonzero(values.isna())[0])
            raise IngestionError(f"grid row {row} has a non-numeric {col}")
        meta[col] = values
    if meta["region"].isna().any():
        row = int(np.flatnonzero(meta["region"].isna())[0])
        raise IngestionError(f"grid row {row} has no region label")
    years = pd.to_numeric(txx["year"], errors="coerce")
    if years.isna().any() or np.any(years != np.round(years)):
        row = int(np.flatnonzero(years.isna() | (years != np.round(years)))[0])
        raise IngestionError(f"txx row {row} has an invalid year")
    values = pd.to_numeric(txx["txx_celsius"], errors="coerce")
    bad = values.isna() & txx["txx_celsius"].notna() & (txx["txx_celsius"].astype(str).str.strip() != "")
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise IngestionError(f"txx row {row} has a non-numeric txx_celsius value")

    meta = meta.reset_index(drop=True)
    if spacing is None and len(meta):
        # from the full grid, so dropped columns do not widen the step
        spacing = infer_spacing(meta["lon"].to_numpy(), meta["lat"].to_numpy())
    if len(years):
        calendar = np.arange(int(years.min()), int(years.max()) + 1)
    else:
        calendar = np.zeros(0, dtype=int)
    row_of = {b: i for i, b in enumerate(meta["box_id"].tolist())}
    matrix = np.full((len(meta), calendar.size), np.nan)
    rows = txx["box_id"].map(row_of).to_numpy()
    cols = years.to_numpy().astype(int) - (calendar[0] if calendar.size else 0)
    matrix[rows, cols] = values.to_numpy()

    empty = np.all(np.isnan(matrix), axis=1)
    if np.any(empty):
        dropped = meta["box_id"][empty].tolist()
        warnings.warn(
            f"dropping {len(dropped)} box(es) with no non-missing year: {dropped}",
            DataWarning,
            stacklevel=2,
        )
    keep = ~empty
    grid = Grid(
        box_id=meta["box_id"].to_numpy()[keep],
        lon=meta["lon"].to_numpy()[keep],
        lat=meta["lat"].to_numpy()[keep],
        elevation_km=meta["elevation_km"].to_numpy()[keep],
        region=meta["region"].astype(str).to_numpy()[keep],
        spacing=spacing,
    )
    # validates lattice structure and coordinate uniqueness up front
    build_neighborhood(grid)
    return GriddedDataset(grid=grid, years=calendar, txx=matrix[keep])
