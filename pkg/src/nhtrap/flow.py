"""Hamiltonian flow integration with joint variational transport.

The integrator advances the state together with the full Jacobian dphi^t
(an extra d^2 components), so symplecticity and conserved-quantity drift
are measurable on every run.  Tolerances feed an adaptive RK853 pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ChartExit, InvalidHorizon, StepFailure
from .models import HamiltonianModel

TOL_MIN, TOL_MAX = 1e-13, 1e-6
DRIFT_SAMPLES = 33


@dataclass
class FlowResult:
    """Endpoint data of one integrated orbit segment."""

    end_state: np.ndarray
    jacobian: np.ndarray | None
    drift: dict[str, float]
    steps: int
    time: float


def _check_tol(tol: float) -> None:
    if not (TOL_MIN <= tol <= TOL_MAX):
        raise InvalidHorizon(
            f"tolerance {tol} outside [{TOL_MIN}, {TOL_MAX}]"
        )


def step_tolerance(tol: float, time: float) -> float:
    """Per-step tolerance delivering `tol` end to end over `time`.

    Local truncation errors accumulate roughly linearly in the step count,
    so long horizons need proportionally tighter stepping; 1e-14 is the
    float64 floor below which tightening buys nothing.
    """
    return min(tol, max(tol / (2.0 * max(1.0, abs(time))), 1e-14))


def _joint_rhs(model: HamiltonianModel, with_jacobian: bool):
    d = model.dimension

    def rhs(t, z):
        y = z[:d]
        dy = model.hamilton_rhs(y)
        if not with_jacobian:
            return dy
        V = z[d:].reshape(d, d)
        A = model.variational_matrix(y)
        return np.concatenate([dy, (A @ V).ravel()])

    return rhs


def _drift(model: HamiltonianModel, start: np.ndarray, sol, d: int,
           t_end: float) -> dict[str, float]:
    ref = {k: f(start) for k, f in model.conserved_list.items()}
    ts = np.linspace(0.0, t_end, DRIFT_SAMPLES)
    worst = {k: 0.0 for k in ref}
    for t in ts:
        y = sol(t)[:d]
        for k, f in model.conserved_list.items():
            worst[k] = max(worst[k], abs(f(y) - ref[k]))
    return worst


def integrate_flow(
    model: HamiltonianModel,
    start: np.ndarray,
    time: float,
    tol: float = 1e-10,
    with_jacobian: bool = True,
) -> FlowResult:
    """Flow `start` for `time` (may be negative), transporting the Jacobian.

    Raises ChartExit (with exit time and the partial result attached) when
    the orbit hits the model's chart margin, StepFailure when the adaptive
    integrator gives up.
    """
    _check_tol(tol)
    start = np.asarray(start, dtype=float)
    d = model.dimension
    z0 = start
    if with_jacobian:
        z0 = np.concatenate([start, np.eye(d).ravel()])

    events = []
    if model.chart_margin is not None:
        def exit_event(t, z):
            return model.chart_margin(z[:d])

        exit_event.terminal = True
        exit_event.direction = -1
        events.append(exit_event)

    rtol = step_tolerance(tol, time)
    sol = solve_ivp(
        _joint_rhs(model, with_jacobian),
        (0.0, time),
        z0,
        method="DOP853",
        rtol=rtol,
        atol=rtol * 1e-2,
        events=events or None,
        dense_output=True,
    )
    if sol.status == -1:
        raise StepFailure(f"integrator failed at t={sol.t[-1]}: {sol.message}")

    reached = float(sol.t[-1])
    end = sol.y[:d, -1].copy()
    jac = sol.y[d:, -1].reshape(d, d).copy() if with_jacobian else None
    result = FlowResult(
        end_state=end,
        jacobian=jac,
        drift=_drift(model, start, sol.sol, d, reached),
        steps=int(sol.nfev),
        time=reached,
    )
    if sol.status == 1:  # chart event fired
        raise ChartExit(
            f"orbit left the chart at t={reached}", exit_time=reached,
            partial=result,
        )
    return result


def tangent_flow(
    model: HamiltonianModel, start: np.ndarray, time: float, tol: float = 1e-10
) -> np.ndarray:
    """Jacobian dphi^time along the orbit through `start`."""
    return integrate_flow(model, start, time, tol, with_jacobian=True).jacobian


def finite_time_exponents(
    model: HamiltonianModel,
    start: np.ndarray,
    horizon: float,
    samples: int = 40,
    frame: np.ndarray | None = None,
    tol: float = 1e-12,
):
    """Log singular values of dphi^t (optionally restricted to a frame).

    Returns a list of (t, log-singular-value array) at `samples` times.
    Growth rates come from `growth_slope` on the largest exponent.
    """
    if horizon <= 0:
        raise InvalidHorizon(f"horizon must be positive, got {horizon}")
    _check_tol(tol)
    start = np.asarray(start, dtype=float)
    d = model.dimension
    z0 = np.concatenate([start, np.eye(d).ravel()])
    ts = np.linspace(0.0, horizon, samples + 1)[1:]

    sol = solve_ivp(
        _joint_rhs(model, True),
        (0.0, horizon),
        z0,
        method="DOP853",
        rtol=tol,
        atol=tol * 1e-2,
        t_eval=ts,
        dense_output=False,
    )
    if sol.status != 0:
        raise StepFailure(f"exponent run failed: {sol.message}")

    out = []
    for i, t in enumerate(sol.t):
        V = sol.y[d:, i].reshape(d, d)
        if frame is not None:
            V = V @ frame
        sv = np.linalg.svd(V, compute_uv=False)
        out.append((float(t), np.log(sv)))
    return out


def growth_slope(series, tail: float = 0.5):
    """Least-squares slope of the top log-singular-value over the tail window.

    Returns (slope, rms residual of the fit).
    """
    ts = np.asarray([t for t, _ in series])
    tops = np.asarray([lv[0] for _, lv in series])
    cut = ts >= ts[-1] * (1.0 - tail)
    t_fit, y_fit = ts[cut], tops[cut]
    A = np.vstack([t_fit, np.ones_like(t_fit)]).T
    coef, *_ = np.linalg.lstsq(A, y_fit, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y_fit) ** 2)))
    return float(coef[0]), resid


def loglog_slope(series, t_min: float, t_max: float):
    """Slope of log(top singular value) against log t on [t_min, t_max]."""
    ts = np.asarray([t for t, _ in series])
    tops = np.asarray([lv[0] for _, lv in series])
    cut = (ts >= t_min) & (ts <= t_max) & (tops > -np.inf)
    t_fit = np.log(ts[cut])
    y_fit = tops[cut]
    A = np.vstack([t_fit, np.ones_like(t_fit)]).T
    coef, *_ = np.linalg.lstsq(A, y_fit, rcond=None)
    return float(coef[0])
