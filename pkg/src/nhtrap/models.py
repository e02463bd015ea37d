"""Hamiltonian model instances shared by the flow, certification, and spectral code.

A model packages a smooth symbol on R^{2n} (positions first, momenta second)
with analytic gradient/Hessian and the conserved quantities the integrator
monitors.  Charts are encoded as a margin function: positive inside,
nonpositive at exit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from . import kerr
from .errors import DomainError
from .kerr import KerrParams, PhaseState

CHART_CAP_TOY = 1e6
CHART_CAP_KERR_R = 200.0


@dataclass
class HamiltonianModel:
    """Symbol + derivatives + conserved set, on a 2- or 6-dimensional phase space."""

    dimension: int
    evaluate: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    conserved_list: dict[str, Callable[[np.ndarray], float]] = field(
        default_factory=dict
    )
    chart_margin: Callable[[np.ndarray], float] | None = None
    name: str = "model"

    def hamilton_rhs(self, y: np.ndarray) -> np.ndarray:
        """Symplectic gradient: x' = dp/dxi, xi' = -dp/dx."""
        g = self.gradient(y)
        d = self.dimension // 2
        return np.concatenate([g[d:], -g[:d]])

    def variational_matrix(self, y: np.ndarray) -> np.ndarray:
        """Jacobian of the Hamilton field: J @ Hess(p)."""
        H = self.hessian(y)
        d = self.dimension // 2
        return np.vstack([H[d:, :], -H[:d, :]])


class BumpPattern:
    """Deterministic sum of smooth compactly-supported bumps on the (x, xi) plane.

    Centers, widths, and signed amplitudes are drawn once from the seed and
    frozen; sup|pattern| is normalized to 1 on its support.  Values and the
    first two derivative tensors are analytic (the classic exp(1 - 1/(1-u^2))
    profile), so perturbed symbols keep exact gradients/Hessians.
    """

    def __init__(self, seed: int, center: tuple[float, float], span: float,
                 n_bumps: int = 3):
        rng = np.random.default_rng(seed)
        self.centers = center + span * rng.uniform(-0.7, 0.7, size=(n_bumps, 2))
        self.widths = span * rng.uniform(0.5, 0.9, size=(n_bumps, 2))
        amps = rng.uniform(0.5, 1.0, size=n_bumps) * rng.choice(
            [-1.0, 1.0], size=n_bumps
        )
        # normalize: sup over a probe grid of the raw sum
        self.amps = amps
        xs = np.linspace(center[0] - 2 * span, center[0] + 2 * span, 201)
        ys = np.linspace(center[1] - 2 * span, center[1] + 2 * span, 201)
        grid = np.abs(self.value(xs[:, None], ys[None, :]))
        peak = float(np.max(grid))
        if peak > 0:
            # polish the grid argmax so sup|pattern| = 1 holds off-grid too
            i, j = np.unravel_index(np.argmax(grid), grid.shape)
            res = minimize(
                lambda z: -abs(float(self.value(z[0], z[1]))),
                np.asarray([xs[i], ys[j]]),
                method="Nelder-Mead",
                options={"xatol": 1e-12, "fatol": 1e-14},
            )
            peak = max(peak, -float(res.fun))
            self.amps = amps / peak

    @staticmethod
    def _profile(u):
        """exp(1 - 1/(1-u^2)) on |u|<1, 0 outside; returns (b, b', b'')."""
        u = np.asarray(u, dtype=float)
        inside = np.abs(u) < 1.0
        safe = np.where(inside, u, 0.0)
        q = 1.0 - safe * safe
        b = np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)
        db = b * (-2.0 * safe / q**2)
        d2b = b * (
            (2.0 * safe / q**2) ** 2 - 2.0 / q**2 - 8.0 * safe * safe / q**3
        )
        return b, np.where(inside, db, 0.0), np.where(inside, d2b, 0.0)

    def value(self, x, y):
        total = 0.0
        for (cx, cy), (wx, wy), a in zip(self.centers, self.widths, self.amps):
            bx, _, _ = self._profile((x - cx) / wx)
            by, _, _ = self._profile((y - cy) / wy)
            total = total + a * bx * by
        return total

    def gradient(self, x, y):
        gx = 0.0
        gy = 0.0
        for (cx, cy), (wx, wy), a in zip(self.centers, self.widths, self.amps):
            bx, dbx, _ = self._profile((x - cx) / wx)
            by, dby, _ = self._profile((y - cy) / wy)
            gx = gx + a * dbx * by / wx
            gy = gy + a * bx * dby / wy
        return gx, gy

    def hessian(self, x, y):
        hxx = hxy = hyy = 0.0
        for (cx, cy), (wx, wy), a in zip(self.centers, self.widths, self.amps):
            bx, dbx, d2bx = self._profile((x - cx) / wx)
            by, dby, d2by = self._profile((y - cy) / wy)
            hxx = hxx + a * d2bx * by / wx**2
            hxy = hxy + a * dbx * dby / (wx * wy)
            hyy = hyy + a * bx * d2by / wy**2
        return hxx, hxy, hyy


def toy_barrier_model() -> HamiltonianModel:
    """p = xi^2 - x^2: the 1D hyperbolic barrier normal form."""

    def evaluate(y):
        return y[1] ** 2 - y[0] ** 2

    def gradient(y):
        return np.asarray([-2.0 * y[0], 2.0 * y[1]])

    def hessian(y):
        return np.asarray([[-2.0, 0.0], [0.0, 2.0]])

    def margin(y):
        return CHART_CAP_TOY - max(abs(y[0]), abs(y[1]))

    return HamiltonianModel(
        dimension=2,
        evaluate=evaluate,
        gradient=gradient,
        hessian=hessian,
        conserved_list={"energy": evaluate},
        chart_margin=margin,
        name="toy_barrier",
    )


def radial_potential(params: KerrParams, beta: float, r):
    """v_beta(r) = 2 a beta - (a^2 beta^2 + 4 M a r beta + (r^2+a^2)^2)/Delta."""
    m, a = params.mass, params.spin
    dl = kerr.delta(params, r)
    num = a**2 * beta**2 + 4.0 * m * a * r * beta + (r**2 + a**2) ** 2
    return 2.0 * a * beta - num / dl


def radial_potential_derivs(params: KerrParams, beta: float, r):
    """(v, v', v'', v''') of the radial potential, all analytic."""
    m, a = params.mass, params.spin
    dl = kerr.delta(params, r)
    dl1 = 2.0 * (r - m)
    dl2 = 2.0
    num = a**2 * beta**2 + 4.0 * m * a * r * beta + (r**2 + a**2) ** 2
    num1 = 4.0 * m * a * beta + 4.0 * r * (r**2 + a**2)
    num2 = 12.0 * r**2 + 4.0 * a**2
    num3 = 24.0 * r
    f = num / dl
    f1 = num1 / dl - num * dl1 / dl**2
    f2 = (
        num2 / dl
        - 2.0 * num1 * dl1 / dl**2
        - num * dl2 / dl**2
        + 2.0 * num * dl1**2 / dl**3
    )
    f3 = (
        num3 / dl
        - 3.0 * num2 * dl1 / dl**2
        - 3.0 * num1 * dl2 / dl**2
        + 6.0 * num1 * dl1**2 / dl**3
        + 6.0 * num * dl1 * dl2 / dl**3
        - 6.0 * num * dl1**3 / dl**4
    )
    return 2.0 * a * beta - f, -f1, -f2, -f3


def reduced_kerr_model(
    params: KerrParams,
    beta: float,
    bump: BumpPattern | None = None,
    epsilon: float = 0.0,
) -> HamiltonianModel:
    """Autonomous (r, xi) subsystem at fixed beta: p = Delta*xi^2 + v_beta(r).

    The full flow's (r, xi) block closes on itself, and the reduced conserved
    quantity (carter - p of the full system) equals -p here.  An optional
    bump perturbation epsilon*dp(r, xi) models symbol perturbations.
    """
    rp = kerr.horizon_radius(params)

    def evaluate(y):
        r, xi = y[0], y[1]
        val = kerr.delta(params, r) * xi**2 + radial_potential(params, beta, r)
        if bump is not None and epsilon != 0.0:
            val = val + epsilon * bump.value(r, xi)
        return val

    def gradient(y):
        r, xi = y[0], y[1]
        dl = kerr.delta(params, r)
        dl1 = 2.0 * (r - params.mass)
        _, v1, _, _ = radial_potential_derivs(params, beta, r)
        gr = dl1 * xi**2 + v1
        gxi = 2.0 * dl * xi
        if bump is not None and epsilon != 0.0:
            bx, bxi = bump.gradient(r, xi)
            gr = gr + epsilon * bx
            gxi = gxi + epsilon * bxi
        return np.asarray([gr, gxi])

    def hessian(y):
        r, xi = y[0], y[1]
        dl = kerr.delta(params, r)
        dl1 = 2.0 * (r - params.mass)
        _, _, v2, _ = radial_potential_derivs(params, beta, r)
        H = np.asarray(
            [[2.0 * xi**2 + v2, 2.0 * dl1 * xi], [2.0 * dl1 * xi, 2.0 * dl]]
        )
        if bump is not None and epsilon != 0.0:
            hxx, hxy, hyy = bump.hessian(r, xi)
            H = H + epsilon * np.asarray([[hxx, hxy], [hxy, hyy]])
        return H

    def margin(y):
        return min(y[0] - (rp + kerr.DEFAULT_R_MARGIN), CHART_CAP_KERR_R - y[0])

    return HamiltonianModel(
        dimension=2,
        evaluate=evaluate,
        gradient=gradient,
        hessian=hessian,
        conserved_list={"energy": evaluate},
        chart_margin=margin,
        name=f"reduced_kerr(beta={beta:g})",
    )


def full_kerr_model(
    params: KerrParams,
    theta_margin: float = kerr.DEFAULT_THETA_MARGIN,
    r_margin: float = kerr.DEFAULT_R_MARGIN,
    r_cap: float = CHART_CAP_KERR_R,
) -> HamiltonianModel:
    """Six-dimensional exterior model carrying (p, beta, carter)."""
    rp = kerr.horizon_radius(params)

    def evaluate(y):
        return float(kerr.symbol_p(PhaseState.from_array(y), params))

    def gradient(y):
        g = kerr._grad_p(params, y[0], y[1], y[3], y[4], y[5])
        return np.asarray(g, dtype=float)

    def hessian(y):
        return kerr.hessian_p(PhaseState.from_array(y), params)

    def carter(y):
        s = np.sin(y[1])
        return float(y[4] ** 2 + (params.spin * s - y[5] / s) ** 2)

    def margin(y):
        return min(
            y[0] - (rp + r_margin),
            r_cap - y[0],
            y[1] - theta_margin,
            np.pi - theta_margin - y[1],
        )

    return HamiltonianModel(
        dimension=6,
        evaluate=evaluate,
        gradient=gradient,
        hessian=hessian,
        conserved_list={
            "p": evaluate,
            "beta": lambda y: float(y[5]),
            "carter": carter,
        },
        chart_margin=margin,
        name=f"full_kerr(M={params.mass:g},a={params.spin:g})",
    )


def radial_effective_model(mass: float = 1.0, k_ang: float = 27.0) -> HamiltonianModel:
    """Conformally flattened radial model p = (Delta^2/r^4) xi^2 + k_ang Delta/r^4 - 1.

    This is the symbol the spectral module discretizes for the nonrotating
    hole; its saddle exponent matches (Delta/r^4)|_{3M} times the photon-shell
    exponent of the unflattened flow.
    """
    params = KerrParams(mass=mass, spin=0.0)

    def pieces(r):
        dl = kerr.delta(params, r)
        dl1 = 2.0 * (r - mass)
        mw = dl**2 / r**4
        mw1 = 2.0 * dl * dl1 / r**4 - 4.0 * dl**2 / r**5
        mw2 = (
            2.0 * dl1**2 / r**4
            + 4.0 * dl / r**4
            - 16.0 * dl * dl1 / r**5
            + 20.0 * dl**2 / r**6
        )
        v = k_ang * dl / r**4 - 1.0
        v1 = k_ang * (dl1 / r**4 - 4.0 * dl / r**5)
        v2 = k_ang * (2.0 / r**4 - 8.0 * dl1 / r**5 + 20.0 * dl / r**6)
        return mw, mw1, mw2, v, v1, v2

    def evaluate(y):
        mw, _, _, v, _, _ = pieces(y[0])
        return mw * y[1] ** 2 + v

    def gradient(y):
        mw, mw1, _, _, v1, _ = pieces(y[0])
        return np.asarray([mw1 * y[1] ** 2 + v1, 2.0 * mw * y[1]])

    def hessian(y):
        mw, mw1, mw2, _, _, v2 = pieces(y[0])
        return np.asarray(
            [[mw2 * y[1] ** 2 + v2, 2.0 * mw1 * y[1]], [2.0 * mw1 * y[1], 2.0 * mw]]
        )

    rp = 2.0 * mass

    def margin(y):
        return min(y[0] - rp * (1.0 + 1e-9), CHART_CAP_KERR_R - y[0])

    return HamiltonianModel(
        dimension=2,
        evaluate=evaluate,
        gradient=gradient,
        hessian=hessian,
        conserved_list={"energy": evaluate},
        chart_margin=margin,
        name=f"radial_effective(M={mass:g},k={k_ang:g})",
    )


def perturbed_reduced_model(
    params: KerrParams, beta: float, epsilon: float, seed: int
) -> HamiltonianModel:
    """Reduced model plus a seeded bump pattern of sup-size epsilon."""
    if abs(epsilon) > 0.05:
        raise DomainError(f"perturbation size {epsilon} exceeds the 0.05 regime")
    center = (3.0 * params.mass, 0.0)
    bump = BumpPattern(seed, center, span=0.6 * params.mass)
    return reduced_kerr_model(params, beta, bump=bump, epsilon=epsilon)
