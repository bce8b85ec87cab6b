"""Tests for the damped Newton maximizer."""

import numpy as np
import pytest

from smoothgev.errors import FitError
from smoothgev.logger import FitLogger
from smoothgev.optim import ascent_direction, newton_maximize


def quadratic(center, curvature):
    center = np.asarray(center, dtype=float)
    curvature = np.asarray(curvature, dtype=float)

    def objective(x, derivatives):
        d = x - center
        value = -0.5 * d @ curvature @ d
        if not derivatives:
            return value, None, None
        return value, -curvature @ d, -curvature

    return objective


class TestNewton:
    """Maximization of smooth concave objectives."""

    def test_quadratic_in_one_step(self) -> None:
        """A concave quadratic is solved by a single full step."""
        result = newton_maximize(quadratic([1.0, -2.0], [[2.0, 0.5], [0.5, 1.0]]), np.zeros(2))
        assert result.converged
        assert result.iterations == 1
        np.testing.assert_allclose(result.x, [1.0, -2.0], atol=1e-12)

    def test_already_optimal(self) -> None:
        """Starting at the maximum takes no iterations."""
        result = newton_maximize(quadratic([0.0], [[1.0]]), np.zeros(1))
        assert result.converged
        assert result.iterations == 0

    def test_non_quadratic_objective(self) -> None:
        """A smooth concave objective converges from a distant start."""

        def objective(x, derivatives):
            value = float(-np.cosh(x[0] - 1.0) - 0.25 * x[0] ** 4)
            if not derivatives:
                return value, None, None
            grad = np.array([-np.sinh(x[0] - 1.0) - x[0] ** 3])
            hess = np.array([[-np.cosh(x[0] - 1.0) - 3 * x[0] ** 2]])
            return value, grad, hess

        result = newton_maximize(objective, np.array([-3.0]))
        assert result.converged
        assert abs(result.gradient[0]) < 1e-7

    def test_support_boundary_is_backtracked(self) -> None:
        """Trial points with value -inf are rejected."""

        def objective(x, derivatives):
            if x[0] <= 0:
                return -np.inf, None, None
            value = float(np.log(x[0]) - x[0])
            if not derivatives:
                return value, None, None
            return value, np.array([1.0 / x[0] - 1.0]), np.array([[-1.0 / x[0] ** 2]])

        result = newton_maximize(objective, np.array([3.0]))
        assert result.converged
        assert result.x[0] == pytest.approx(1.0, abs=1e-7)

    def test_values_never_decrease(self) -> None:
        """Accepted iterates improve the objective monotonically."""
        seen = []
        base = quadratic([2.0, 2.0], [[3.0, 1.0], [1.0, 2.0]])

        def objective(x, derivatives):
            out = base(x, derivatives)
            if derivatives:
                seen.append(out[0])
            return out

        newton_maximize(objective, np.array([-5.0, 7.0]))
        assert all(b >= a for a, b in zip(seen, seen[1:]))

    def test_infeasible_start(self) -> None:
        """A start outside the support is a fit error."""
        with pytest.raises(FitError, match="outside the model support"):
            newton_maximize(lambda x, d: (-np.inf, None, None), np.zeros(1))

    def test_iteration_budget(self) -> None:
        """Running out of iterations is reported without raising."""

        def objective(x, derivatives):
            value = float(-np.sum(np.exp(x) - x))
            if not derivatives:
                return value, None, None
            return value, 1.0 - np.exp(x), np.diag(-np.exp(x))

        result = newton_maximize(objective, np.array([8.0]), max_iter=2)
        assert not result.converged
        assert "no convergence" in result.message

    def test_projection_is_applied(self) -> None:
        """Projected coordinates stay within their bounds."""
        result = newton_maximize(
            quadratic([-3.0], [[1.0]]),
            np.array([0.5]),
            project=lambda x: np.maximum(x, -0.999),
        )
        assert result.x[0] >= -0.999

    def test_logger_records_iterations(self) -> None:
        """Each accepted iteration is logged."""
        logger = FitLogger(enabled=False)
        result = newton_maximize(quadratic([1.0], [[1.0]]), np.zeros(1), logger=logger, stage="test")
        assert len(logger.records) == result.iterations


class TestAscentDirection:
    """Newton direction with Levenberg damping."""

    def test_concave_hessian_gives_newton_step(self) -> None:
        """No damping is needed when -H is positive definite."""
        direction, tau = ascent_direction(-np.diag([2.0, 4.0]), np.array([2.0, 4.0]))
        assert tau == 0.0
        np.testing.assert_allclose(direction, [1.0, 1.0])

    def test_indefinite_hessian_is_damped(self) -> None:
        """A convex direction is damped until the step ascends."""
        g = np.array([1.0, 1.0])
        direction, tau = ascent_direction(np.diag([-1.0, 2.0]), g)
        assert tau > 0
        assert g @ direction > 0
