"""Tests for fit serialization and result tables."""

import json

import numpy as np
import pandas as pd
import pytest

from smoothgev.errors import SpecError
from smoothgev.fit import FitOptions, fit_smooth, posterior_draws
from smoothgev.inference import return_levels
from smoothgev.model import MODELS, ParameterField
from smoothgev.utils.io import (
    TIMESTAMP_KEY,
    coefficient_table,
    field_from_dict,
    field_to_dict,
    fit_result_from_dict,
    fit_result_to_dict,
    load_fit,
    save_fit,
    write_table,
)


@pytest.fixture(scope="module")
def saved_fit(trend_data):
    data, _, cov = trend_data
    return data, fit_smooth(data, MODELS["mod4"], cov, opts=FitOptions(lambdas=50.0))


class TestFitJson:
    """Saving and reloading a fit."""

    def test_reload_preserves_inference(self, saved_fit, tmp_path) -> None:
        """A reloaded fit gives the same estimates and posterior draws."""
        data, fit = saved_fit
        path = save_fit(fit, tmp_path / "fit.json", data.grid.box_id, "R1")
        again = load_fit(path)
        assert again.spec == fit.spec
        np.testing.assert_array_equal(again.theta, fit.theta)
        np.testing.assert_array_equal(
            return_levels(again.field, again.frame, 40, 0.01), return_levels(fit.field, fit.frame, 40, 0.01)
        )
        np.testing.assert_allclose(again.precision.toarray(), fit.precision.toarray(), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(posterior_draws(again, 5, 1), posterior_draws(fit, 5, 1), rtol=1e-10, atol=1e-12)
        assert again.lambdas.values == fit.lambdas.values

    def test_document_contents(self, saved_fit) -> None:
        """The record is plain JSON with the model and region."""
        data, fit = saved_fit
        payload = json.loads(json.dumps(fit_result_to_dict(fit, data.grid.box_id, "R1")))
        assert payload["model"]["label"] == "Mod4"
        assert payload["region"] == "R1"
        assert payload["box_id"] == [str(b) for b in data.grid.box_id]
        assert TIMESTAMP_KEY in payload

    def test_deterministic_apart_from_timestamp(self, saved_fit) -> None:
        """Two serializations differ only in the creation time."""
        _, fit = saved_fit
        a, b = fit_result_to_dict(fit), fit_result_to_dict(fit)
        a.pop(TIMESTAMP_KEY)
        b.pop(TIMESTAMP_KEY)
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_version_check(self, saved_fit) -> None:
        """Unknown format versions are rejected."""
        _, fit = saved_fit
        payload = fit_result_to_dict(fit)
        payload["format_version"] = 99
        with pytest.raises(SpecError, match="format version"):
            fit_result_from_dict(payload)

    def test_missing_file(self, tmp_path) -> None:
        """Loading a missing fit is a file error."""
        with pytest.raises(FileNotFoundError):
            load_fit(tmp_path / "absent.json")

    def test_homogeneous_trend_field(self) -> None:
        """A scalar location trend survives the round trip as a scalar."""
        field = ParameterField(mu0=[1.0, 2.0], sigma0=[0.0, 0.1], xi=[-0.1, -0.2], mu1=2.5, beta=-4.0)
        again = field_from_dict(json.loads(json.dumps(field_to_dict(field))))
        assert again.mu1 == 2.5
        assert again.sigma1 is None
        assert again.beta == -4.0


class TestTables:
    """CSV outputs."""

    def test_coefficient_table(self, saved_fit) -> None:
        """One row per box with standard errors for every field."""
        data, fit = saved_fit
        table = coefficient_table(fit, data.grid.box_id)
        assert len(table) == data.n
        for name in ("mu0", "mu1", "sigma0", "sigma1", "xi"):
            assert (table[f"se_{name}"] > 0).all()
        assert (table["beta"] == fit.field.beta).all()

    def test_full_precision(self, tmp_path) -> None:
        """Floats are written with enough digits to read back exactly."""
        frame = pd.DataFrame({"x": [np.pi, 1.0 / 3.0, 1e-17]})
        path = write_table(frame, tmp_path / "nested" / "x.csv")
        again = pd.read_csv(path, float_precision="round_trip")
        np.testing.assert_array_equal(again["x"].to_numpy(), frame["x"].to_numpy())
