"""Flow-integration tests against closed-form and matrix-exponential oracles."""

import math

import numpy as np
import pytest
from scipy.linalg import expm

from nhtrap import flow, models
from nhtrap.errors import ChartExit, InvalidHorizon
from nhtrap.kerr import KerrParams

TOY = models.toy_barrier_model()


class TestToyClosedForm:
    # p = xi^2 - x^2: along (x, xi) = (c e^{2t}, c e^{2t}) the flow is exact

    def test_diagonal_orbit(self):
        res = flow.integrate_flow(TOY, np.asarray([1.0, 1.0]), 1.0, tol=1e-12)
        assert np.allclose(res.end_state, math.e**2, rtol=1e-9)
        assert res.drift["energy"] < 1e-10

    def test_jacobian_hyperbolic_rotation(self):
        for t in (0.3, 1.0, 2.0):
            J = flow.tangent_flow(TOY, np.asarray([0.2, 0.5]), t, tol=1e-12)
            expected = np.asarray(
                [
                    [math.cosh(2 * t), math.sinh(2 * t)],
                    [math.sinh(2 * t), math.cosh(2 * t)],
                ]
            )
            assert np.max(np.abs(J - expected)) < 1e-8 * math.cosh(2 * t)

    def test_negative_time(self):
        res = flow.integrate_flow(TOY, np.asarray([1.0, 1.0]), -0.5, tol=1e-12)
        assert np.allclose(res.end_state, math.exp(-1.0), rtol=1e-9)


class TestStructure:
    @staticmethod
    def omega(d):
        O = np.zeros((2 * d, 2 * d))
        O[:d, d:] = np.eye(d)
        O[d:, :d] = -np.eye(d)
        return O

    def test_symplectic_jacobian(self):
        m = models.reduced_kerr_model(KerrParams(1.0, 0.3), 1.5)
        J = flow.tangent_flow(m, np.asarray([3.1, 0.05]), 0.3, tol=1e-12)
        O = self.omega(1)
        assert np.max(np.abs(J.T @ O @ J - O)) < 1e-8
        assert np.linalg.det(J) == pytest.approx(1.0, abs=1e-8)

    def test_time_reversibility(self):
        m = models.reduced_kerr_model(KerrParams(), 2.0)
        y0 = np.asarray([3.05, 0.02])
        tol = 1e-11
        fwd = flow.integrate_flow(m, y0, 0.4, tol=tol)
        back = flow.integrate_flow(m, fwd.end_state, -0.4, tol=tol)
        assert np.max(np.abs(back.end_state - y0)) < 1e-8

    def test_cocycle_property(self):
        m = models.reduced_kerr_model(KerrParams(), 0.5)
        y0 = np.asarray([3.02, -0.01])
        t1, t2 = 0.25, 0.2
        r1 = flow.integrate_flow(m, y0, t1, tol=1e-12)
        J2 = flow.tangent_flow(m, r1.end_state, t2, tol=1e-12)
        J12 = flow.tangent_flow(m, y0, t1 + t2, tol=1e-12)
        assert np.max(np.abs(J2 @ r1.jacobian - J12)) < 1e-5 * np.max(
            np.abs(J12)
        )

    def test_small_time_matches_matrix_exponential(self):
        m = models.reduced_kerr_model(KerrParams(), 0.0)
        y0 = np.asarray([3.0, 0.0])  # exact saddle: variational flow is linear
        A = m.variational_matrix(y0)
        for t in (0.01, 0.1, 1.0):
            J = flow.tangent_flow(m, y0, t, tol=1e-12)
            assert np.max(np.abs(J - expm(t * A))) < 1e-6 * np.max(
                np.abs(expm(t * A))
            )


class TestChartExitAndValidation:
    def test_toy_chart_exit(self):
        with pytest.raises(ChartExit) as exc:
            flow.integrate_flow(TOY, np.asarray([1.0, 1.0]), 10.0, tol=1e-10)
        # x(t) = e^{2t} reaches the 1e6 cap at t = 3 ln 10
        assert exc.value.exit_time == pytest.approx(3.0 * math.log(10.0), abs=1e-5)
        assert exc.value.partial is not None
        assert exc.value.partial.end_state[0] == pytest.approx(1e6, rel=1e-6)

    def test_kerr_escape_exits_chart(self):
        m = models.full_kerr_model(KerrParams())
        start = np.asarray([4.0, np.pi / 2, 0.0, 0.5, 0.0, 1.0])
        with pytest.raises(ChartExit) as exc:
            flow.integrate_flow(m, start, 50.0, tol=1e-10)
        assert 0.0 < exc.value.exit_time < 50.0

    def test_tolerance_window(self):
        with pytest.raises(InvalidHorizon):
            flow.integrate_flow(TOY, np.asarray([0.1, 0.1]), 1.0, tol=1e-3)
        with pytest.raises(InvalidHorizon):
            flow.integrate_flow(TOY, np.asarray([0.1, 0.1]), 1.0, tol=1e-14)

    def test_bad_horizon(self):
        with pytest.raises(InvalidHorizon):
            flow.finite_time_exponents(TOY, np.asarray([0.1, 0.1]), -1.0)


class TestExponents:
    def test_toy_rate(self):
        series = flow.finite_time_exponents(
            TOY, np.asarray([0.0, 0.0]), 5.0, samples=25
        )
        slope, resid = flow.growth_slope(series)
        assert slope == pytest.approx(2.0, abs=1e-6)
        assert resid < 1e-6

    def test_static_saddle_rate(self):
        # linearized radial flow at the trapped sphere: rate 6*sqrt(3)
        m = models.reduced_kerr_model(KerrParams(), 0.0)
        series = flow.finite_time_exponents(
            m, np.asarray([3.0, 0.0]), 4.0, samples=20
        )
        slope, _ = flow.growth_slope(series)
        assert slope == pytest.approx(6.0 * math.sqrt(3.0), abs=1e-4)

    def test_frame_restriction(self):
        frame = np.asarray([[1.0], [0.0]])
        series = flow.finite_time_exponents(
            TOY, np.asarray([0.0, 0.0]), 3.0, samples=10, frame=frame
        )
        assert all(len(lv) == 1 for _, lv in series)

    def test_loglog_slope_of_linear_growth(self):
        series = [(t, np.asarray([math.log(3.0 * t)])) for t in
                  np.linspace(1.0, 20.0, 40)]
        slope = flow.loglog_slope(series, 2.0, 20.0)
        assert slope == pytest.approx(1.0, abs=1e-10)
