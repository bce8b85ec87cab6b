"""Tests for grid geometry, the neighbourhood penalty and dataset ingestion."""

import numpy as np
import pandas as pd
import pytest

from smoothgev.errors import DataWarning, IngestionError
from smoothgev.grid import (
    MAX_MISSING_DAYS,
    Grid,
    GriddedDataset,
    annual_maxima,
    annual_maximum,
    build_neighborhood,
    build_penalty,
    extract_txx,
    infer_spacing,
    ingest_dataset,
)


def grid_table(n_boxes: int = 3) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "box_id": [f"b{i}" for i in range(n_boxes)],
            "lon": np.arange(n_boxes) * 0.25,
            "lat": np.full(n_boxes, 45.0),
            "elevation_km": np.linspace(0.1, 0.5, n_boxes),
            "region": ["north"] * n_boxes,
        }
    )


def txx_table(boxes, years) -> pd.DataFrame:
    rows = [(b, y, 30.0 + k + 0.1 * y) for k, b in enumerate(boxes) for y in years]
    return pd.DataFrame(rows, columns=["box_id", "year", "txx_celsius"])


class TestNeighborhood:
    """Edge-sharing adjacency on the lattice."""

    def test_two_by_two(self, make_lattice) -> None:
        """Every box of a 2x2 grid has exactly two neighbours."""
        nb = build_neighborhood(make_lattice(2, 2))
        assert nb.degree().tolist() == [2, 2, 2, 2]
        assert nb.adjacency[0].tolist() == [1, 2]
        assert nb.adjacency[3].tolist() == [1, 2]

    def test_three_by_three_degrees(self, make_lattice) -> None:
        """Corners have 2, edges 3 and the centre 4 neighbours."""
        nb = build_neighborhood(make_lattice(3, 3))
        assert nb.degree().tolist() == [2, 3, 2, 3, 4, 3, 2, 3, 2]
        assert len(nb.pairs()) == 12

    def test_single_box(self, make_lattice) -> None:
        """A lone box has no neighbours."""
        nb = build_neighborhood(make_lattice(1, 1))
        assert nb.degree().tolist() == [0]
        assert nb.pairs().shape == (0, 2)

    def test_diagonal_is_not_a_neighbour(self) -> None:
        """Boxes touching at a corner are not neighbours."""
        grid = Grid(
            box_id=np.array([0, 1]),
            lon=np.array([0.0, 1.0]),
            lat=np.array([0.0, 1.0]),
            elevation_km=np.zeros(2),
            region=np.array(["R1", "R1"]),
            spacing=1.0,
        )
        assert build_neighborhood(grid).degree().tolist() == [0, 0]

    def test_duplicate_coordinates(self) -> None:
        """Two boxes on the same lattice point are rejected."""
        grid = Grid(
            box_id=np.array(["a", "b"]),
            lon=np.array([0.0, 0.0]),
            lat=np.array([0.0, 0.0]),
            elevation_km=np.zeros(2),
            region=np.array(["R1", "R1"]),
            spacing=1.0,
        )
        with pytest.raises(IngestionError, match="share coordinates"):
            build_neighborhood(grid)

    def test_off_lattice_box(self) -> None:
        """A coordinate between lattice points is rejected."""
        grid = Grid(
            box_id=np.array([0, 1, 2]),
            lon=np.array([0.0, 1.0, 1.5]),
            lat=np.zeros(3),
            elevation_km=np.zeros(3),
            region=np.array(["R1"] * 3),
            spacing=1.0,
        )
        with pytest.raises(IngestionError, match="not on a lattice"):
            build_neighborhood(grid)

    def test_infer_spacing(self) -> None:
        """The smallest coordinate step is the spacing."""
        assert infer_spacing(np.array([0.0, 0.25, 0.5]), np.array([45.0, 45.0, 45.25])) == pytest.approx(0.25)
        assert infer_spacing(np.array([3.0]), np.array([4.0])) == 1.0


class TestPenalty:
    """The GMRF structure matrix."""

    def test_two_by_two_matrix(self, make_lattice) -> None:
        """Diagonal holds the degree, off-diagonal -1 for neighbours."""
        s = build_penalty(build_neighborhood(make_lattice(2, 2))).S.toarray()
        expected = np.array(
            [
                [2, -1, -1, 0],
                [-1, 2, 0, -1],
                [-1, 0, 2, -1],
                [0, -1, -1, 2],
            ]
        )
        np.testing.assert_array_equal(s, expected)

    def test_quadratic_is_sum_over_pairs(self, make_lattice) -> None:
        """v'Sv equals the sum of squared neighbour differences."""
        nb = build_neighborhood(make_lattice(4, 3))
        penalty = build_penalty(nb)
        v = np.random.default_rng(5).normal(size=12)
        pairs = nb.pairs()
        direct = np.sum((v[pairs[:, 0]] - v[pairs[:, 1]]) ** 2)
        assert penalty.quadratic(v) == pytest.approx(direct, rel=1e-12)

    def test_positive_semidefinite(self, make_lattice) -> None:
        """Eigenvalues are non-negative and constants are in the null space."""
        penalty = build_penalty(build_neighborhood(make_lattice(3, 4)))
        s = penalty.S.toarray().astype(float)
        assert np.linalg.eigvalsh(s).min() > -1e-10
        np.testing.assert_array_equal(s @ np.ones(12), np.zeros(12))

    def test_rank_connected(self, make_lattice) -> None:
        """A connected lattice has rank n - 1."""
        penalty = build_penalty(build_neighborhood(make_lattice(3, 3)))
        assert penalty.n_components == 1
        assert penalty.rank == 8
        assert np.linalg.matrix_rank(penalty.S.toarray()) == 8

    def test_rank_per_component(self) -> None:
        """Each connected component removes one from the rank."""
        grid = Grid(
            box_id=np.arange(4),
            lon=np.array([0.0, 1.0, 3.0, 4.0]),
            lat=np.zeros(4),
            elevation_km=np.zeros(4),
            region=np.array(["R1"] * 4),
            spacing=1.0,
        )
        penalty = build_penalty(build_neighborhood(grid))
        assert penalty.n_components == 2
        assert penalty.rank == 2

    def test_single_box_rank_zero(self, make_lattice) -> None:
        """One box gives a zero penalty of rank 0."""
        penalty = build_penalty(build_neighborhood(make_lattice(1, 1)))
        assert penalty.rank == 0
        assert penalty.quadratic(np.array([3.0])) == 0.0


class TestAnnualMaximum:
    """Yearly reduction of daily maxima."""

    def test_ten_missing_days_kept(self) -> None:
        """Exactly MAX_MISSING_DAYS missing days still gives a value."""
        values = np.arange(365, dtype=float)
        missing = np.zeros(365, dtype=bool)
        missing[-MAX_MISSING_DAYS:] = True
        assert annual_maximum(values, missing) == 354.0

    def test_twelve_missing_days_dropped(self) -> None:
        """Twelve missing days make the year missing."""
        values = np.arange(365, dtype=float)
        missing = np.zeros(365, dtype=bool)
        missing[:12] = True
        assert np.isnan(annual_maximum(values, missing))

    def test_absent_days_count_as_missing(self) -> None:
        """Days absent from the record count against the limit."""
        assert np.isnan(annual_maximum(np.ones(350), n_days=365))
        assert annual_maximum(np.ones(355), n_days=365) == 1.0

    def test_nan_values_are_missing(self) -> None:
        """NaN entries are treated as missing days."""
        values = np.full(365, 20.0)
        values[100] = 35.0
        values[:5] = np.nan
        assert annual_maximum(values) == 35.0

    def test_daily_table(self) -> None:
        """Daily rows reduce to one TXx per box and year."""
        dates = pd.date_range("2001-01-01", "2002-12-31", freq="D")
        daily = pd.DataFrame(
            {
                "box_id": "b0",
                "date": dates.strftime("%Y-%m-%d"),
                "tmax_celsius": np.where(dates.year == 2001, 25.0, 27.0) + (dates.dayofyear == 200) * 5.0,
            }
        )
        table = annual_maxima(daily)
        assert table["year"].tolist() == [2001, 2002]
        assert table["txx_celsius"].tolist() == [30.0, 32.0]

    def test_extract_txx(self) -> None:
        """Daily data and grid metadata assemble into a dataset."""
        dates = pd.date_range("2001-01-01", "2001-12-31", freq="D")
        daily = pd.concat(
            [
                pd.DataFrame({"box_id": b, "date": dates, "tmax_celsius": 20.0 + k})
                for k, b in enumerate(["b0", "b1", "b2"])
            ]
        )
        data = extract_txx(daily, grid_table(3))
        assert data.txx[:, 0].tolist() == [20.0, 21.0, 22.0]

    def test_unparseable_date(self) -> None:
        """Bad dates name the offending row."""
        daily = pd.DataFrame({"box_id": ["b0"], "date": ["not a date"], "tmax_celsius": [20.0]})
        with pytest.raises(IngestionError, match="row 0"):
            annual_maxima(daily)


class TestIngest:
    """Validation and assembly of the input tables."""

    def test_assembles_matrix(self) -> None:
        """Rows follow the grid table and columns the calendar years."""
        data = ingest_dataset(txx_table(["b0", "b1", "b2"], [2000, 2001, 2002]), grid_table(3))
        assert data.txx.shape == (3, 3)
        assert data.years.tolist() == [2000, 2001, 2002]
        assert data.txx[1, 2] == pytest.approx(31.0 + 200.2)
        assert data.grid.spacing == pytest.approx(0.25)

    def test_gap_years_become_missing(self) -> None:
        """The year axis is contiguous; unreported years are NaN."""
        data = ingest_dataset(txx_table(["b0", "b1", "b2"], [2000, 2002]), grid_table(3))
        assert data.T == 3
        assert np.all(np.isnan(data.txx[:, 1]))
        assert data.year_index(2002) == 3

    def test_drops_empty_box(self) -> None:
        """A box without any value is dropped with a warning."""
        table = txx_table(["b0", "b1", "b2"], [2000, 2001])
        table.loc[table["box_id"] == "b1", "txx_celsius"] = np.nan
        with pytest.warns(DataWarning, match="dropping 1 box"):
            data = ingest_dataset(table, grid_table(3))
        assert data.grid.box_id.tolist() == ["b0", "b2"]

    def test_dropped_box_leaves_a_gap(self) -> None:
        """Boxes on either side of a dropped box are not neighbours."""
        table = txx_table(["b0", "b1", "b2"], [2000, 2001])
        table.loc[table["box_id"] == "b1", "txx_celsius"] = np.nan
        with pytest.warns(DataWarning):
            data = ingest_dataset(table, grid_table(3))
        assert data.grid.spacing == 0.25
        assert build_neighborhood(data.grid).pairs().shape == (0, 2)

    def test_duplicate_observation(self) -> None:
        """A repeated (box, year) pair is rejected."""
        table = txx_table(["b0"], [2000, 2000])
        with pytest.raises(IngestionError, match="duplicates"):
            ingest_dataset(table, grid_table(1))

    def test_unknown_box(self) -> None:
        """An observation for a box absent from the grid is rejected."""
        with pytest.raises(IngestionError, match="absent from the grid"):
            ingest_dataset(txx_table(["b0", "zz"], [2000]), grid_table(1))

    def test_missing_columns(self) -> None:
        """Both tables need their full column set."""
        with pytest.raises(IngestionError, match="missing columns"):
            ingest_dataset(txx_table(["b0"], [2000]).drop(columns="year"), grid_table(1))
        with pytest.raises(IngestionError, match="missing columns"):
            ingest_dataset(txx_table(["b0"], [2000]), grid_table(1).drop(columns="region"))

    def test_non_numeric_value(self) -> None:
        """Text in the value column is rejected."""
        table = txx_table(["b0"], [2000, 2001]).astype({"txx_celsius": object})
        table.loc[1, "txx_celsius"] = "hot"
        with pytest.raises(IngestionError, match="non-numeric"):
            ingest_dataset(table, grid_table(1))

    def test_missing_file(self, tmp_path) -> None:
        """A path that does not exist is reported."""
        with pytest.raises(FileNotFoundError):
            ingest_dataset(tmp_path / "nope.csv", grid_table(1))

    def test_reads_csv_paths(self, tmp_path) -> None:
        """Tables may be given as CSV paths."""
        txx_table(["b0", "b1"], [1990, 1991]).to_csv(tmp_path / "txx.csv", index=False)
        grid_table(2).to_csv(tmp_path / "grid.csv", index=False)
        data = ingest_dataset(tmp_path / "txx.csv", tmp_path / "grid.csv")
        assert data.n == 2
        assert data.n_obs == 4


class TestGriddedDataset:
    """Dataset views."""

    def test_observations_are_row_major(self, make_dataset) -> None:
        """Non-missing values are listed box by box, then year by year."""
        data = make_dataset(nx=2, ny=1, years=3)
        txx = data.txx.copy()
        txx[0, 1] = np.nan
        obs = data.with_txx(txx).observations()
        assert obs["box"].tolist() == [0, 0, 1, 1, 1]
        assert obs["t"].tolist() == [1, 3, 1, 2, 3]
        assert obs["year"].tolist() == [1950, 1952, 1950, 1951, 1952]

    def test_empty_box_rejected(self, make_lattice) -> None:
        """A box without data is an error unless explicitly allowed."""
        txx = np.full((1, 3), np.nan)
        with pytest.raises(IngestionError, match="no non-missing year"):
            GriddedDataset(grid=make_lattice(1, 1), years=np.arange(3), txx=txx)

    def test_masked_allows_empty(self, make_dataset) -> None:
        """Masking may empty a box."""
        data = make_dataset(nx=2, ny=1, years=3)
        mask = np.zeros((2, 3), dtype=bool)
        mask[0] = True
        masked = data.masked(mask)
        assert masked.n_obs == 3
        assert data.n_obs == 6

    def test_subset_region(self, make_lattice) -> None:
        """Region subsets keep only that region's boxes."""
        grid = make_lattice(2, 2, region=["a", "b", "a", "b"])
        data = GriddedDataset(grid=grid, years=np.arange(2), txx=np.arange(8.0).reshape(4, 2))
        assert data.regions() == ["a", "b"]
        sub = data.subset_region("b")
        assert sub.grid.box_id.tolist() == [1, 3]
        with pytest.raises(IngestionError, match="no boxes"):
            data.subset_region("c")

    def test_to_frames_round_trip(self, make_dataset) -> None:
        """The ingestion format written by to_frames reads back identically."""
        data = make_dataset(nx=3, ny=2, years=4)
        txx, grid = data.to_frames()
        again = ingest_dataset(txx, grid, spacing=1.0)
        np.testing.assert_array_equal(again.txx, data.txx)
        np.testing.assert_array_equal(again.years, data.years)
