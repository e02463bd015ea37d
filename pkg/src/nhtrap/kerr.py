"""Rotating-black-hole phase space: exterior chart, rescaled flow symbol, conserved set.

Geometric units G = c = 1 throughout; `mass` and `spin` are the usual (M, a)
with 0 <= a < M.  Phase coordinates are (r, theta, phi, xi, alpha, beta)
with (xi, alpha, beta) the momenta conjugate to (r, theta, phi).

The flow symbol is

    p = Delta*xi^2 + alpha^2 + (1/sin^2(theta) - a^2/Delta)*beta^2
        - (4*M*a*r/Delta)*beta - ((r^2+a^2)^2/Delta - a^2*sin^2(theta)),

the null-geodesic symbol rescaled by r^2 + a^2*cos^2(theta) and with the
time momentum frozen at -1.  Poisson bracket convention:

    {f, g} = sum_i  df/dxi_i * dg/dx_i - df/dx_i * dg/dxi_i,

so the Hamilton field is H_p = {p, .} and x' = dp/dxi, xi' = -dp/dx.

All functions broadcast over numpy arrays in the state slots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

# Exterior-chart safety margins (theta measured from the axis).
DEFAULT_THETA_MARGIN = 0.05
DEFAULT_R_MARGIN = 1e-6


@dataclass(frozen=True)
class KerrParams:
    """Black-hole parameters, validated subextremal: 0 <= spin < mass."""

    mass: float = 1.0
    spin: float = 0.0

    def __post_init__(self):
        if not (self.mass > 0.0):
            raise DomainError(f"mass must be positive, got {self.mass}")
        if not (0.0 <= self.spin < self.mass):
            raise DomainError(
                f"spin must satisfy 0 <= a < M, got a={self.spin}, M={self.mass}"
            )


@dataclass(frozen=True)
class PhaseState:
    """Point of the exterior phase-space chart.

    Fields may be floats or broadcastable numpy arrays.
    """

    r: float
    theta: float
    phi: float
    xi: float
    alpha: float
    beta: float

    def as_array(self) -> np.ndarray:
        return np.asarray(
            [self.r, self.theta, self.phi, self.xi, self.alpha, self.beta],
            dtype=float,
        )

    @staticmethod
    def from_array(y) -> "PhaseState":
        y = np.asarray(y, dtype=float)
        return PhaseState(y[0], y[1], y[2], y[3], y[4], y[5])


@dataclass(frozen=True)
class ConservedTriple:
    """Values of the three commuting conserved quantities (p, beta, carter)."""

    p: float
    beta: float
    carter: float


def horizon_radius(params: KerrParams) -> float:
    """Outer-horizon radius M + sqrt(M^2 - a^2)."""
    return params.mass + np.sqrt(params.mass**2 - params.spin**2)


def delta(params: KerrParams, r):
    """Horizon function Delta = r^2 - 2*M*r + a^2; vanishes at r+."""
    return r * r - 2.0 * params.mass * r + params.spin**2


def validate_state(
    state: PhaseState,
    params: KerrParams,
    theta_margin: float = DEFAULT_THETA_MARGIN,
    r_margin: float = DEFAULT_R_MARGIN,
) -> None:
    """Raise DomainError unless the state sits strictly inside the chart."""
    rp = horizon_radius(params)
    r = np.asarray(state.r, dtype=float)
    th = np.asarray(state.theta, dtype=float)
    if np.any(r <= rp + r_margin):
        raise DomainError(f"r must exceed r+ + margin = {rp + r_margin}")
    if np.any(th < theta_margin) or np.any(th > np.pi - theta_margin):
        raise DomainError("theta outside the axis-free band")


def _require_exterior(params: KerrParams, r) -> None:
    rp = horizon_radius(params)
    if np.any(np.asarray(r, dtype=float) <= rp):
        raise DomainError(f"r <= r+ = {rp}: outside the exterior chart")


def symbol_p(state: PhaseState, params: KerrParams):
    """Rescaled flow symbol p at a state (array-friendly)."""
    _require_exterior(params, state.r)
    return _p_values(
        params, state.r, state.theta, state.xi, state.alpha, state.beta
    )


def _p_values(params: KerrParams, r, theta, xi, alpha, beta):
    m, a = params.mass, params.spin
    dl = delta(params, r)
    s2 = np.sin(theta) ** 2
    return (
        dl * xi**2
        + alpha**2
        + (1.0 / s2 - a**2 / dl) * beta**2
        - (4.0 * m * a * r / dl) * beta
        - ((r**2 + a**2) ** 2 / dl - a**2 * s2)
    )


def _grad_p(params: KerrParams, r, theta, xi, alpha, beta):
    """Gradient of p in the order (r, theta, phi, xi, alpha, beta)."""
    m, a = params.mass, params.spin
    dl = delta(params, r)
    dl1 = 2.0 * (r - m)
    s = np.sin(theta)
    c = np.cos(theta)
    s2 = s * s
    csc2 = 1.0 / s2

    # radial pieces f = u/Delta handled by the quotient rule
    p_r = (
        dl1 * xi**2
        - beta**2 * (-(a**2) * dl1 / dl**2)
        - beta * (4.0 * m * a * (dl - r * dl1) / dl**2)
        - ((4.0 * r * (r**2 + a**2)) * dl - (r**2 + a**2) ** 2 * dl1) / dl**2
    )
    p_theta = -2.0 * beta**2 * c / (s2 * s) + 2.0 * a**2 * s * c
    p_xi = 2.0 * dl * xi
    p_alpha = 2.0 * alpha
    p_beta = 2.0 * beta * csc2 - 2.0 * a**2 * beta / dl - 4.0 * m * a * r / dl
    zero = np.zeros_like(p_r + p_theta)
    return p_r, p_theta, zero, p_xi, p_alpha, p_beta


def hamilton_field(state: PhaseState, params: KerrParams) -> np.ndarray:
    """Hamilton vector field of p, components ordered like the state.

    This is the full field H (twice the half-field that makes the radial
    block read xi*Delta*d_r + ... ); positions move by +dp/dmomentum,
    momenta by -dp/dposition.
    """
    _require_exterior(params, state.r)
    p_r, p_th, p_ph, p_xi, p_al, p_be = _grad_p(
        params, state.r, state.theta, state.xi, state.alpha, state.beta
    )
    return np.asarray([p_xi, p_al, p_be, -p_r, -p_th, -p_ph])


def hessian_p(state: PhaseState, params: KerrParams) -> np.ndarray:
    """6x6 Hessian of p at a (scalar) state, order (r, theta, phi, xi, alpha, beta)."""
    m, a = params.mass, params.spin
    r, theta = float(state.r), float(state.theta)
    xi, _alpha, beta = float(state.xi), float(state.alpha), float(state.beta)
    _require_exterior(params, r)

    dl = delta(params, r)
    dl1 = 2.0 * (r - m)
    dl2 = 2.0
    s = np.sin(theta)
    c = np.cos(theta)
    csc2 = 1.0 / (s * s)
    cot = c / s

    def quot2(u, u1, u2):
        """(u/Delta)' and (u/Delta)'' from u, u', u''."""
        f1 = u1 / dl - u * dl1 / dl**2
        f2 = (
            u2 / dl
            - 2.0 * u1 * dl1 / dl**2
            - u * dl2 / dl**2
            + 2.0 * u * dl1**2 / dl**3
        )
        return f1, f2

    # p = Delta xi^2 + alpha^2 + beta^2 csc^2 - beta^2 (a^2/Delta)
    #     - beta (4 M a r/Delta) - (r^2+a^2)^2/Delta + a^2 sin^2
    _, f1_2 = quot2(a**2, 0.0, 0.0)
    f2_1, f2_2 = quot2(4.0 * m * a * r, 4.0 * m * a, 0.0)
    u3 = (r**2 + a**2) ** 2
    u3_1 = 4.0 * r * (r**2 + a**2)
    u3_2 = 12.0 * r**2 + 4.0 * a**2
    _, f3_2 = quot2(u3, u3_1, u3_2)
    f1_1 = -(a**2) * dl1 / dl**2

    H = np.zeros((6, 6))
    H[0, 0] = dl2 * xi**2 - beta**2 * f1_2 - beta * f2_2 - f3_2
    H[0, 3] = H[3, 0] = 2.0 * dl1 * xi
    H[0, 5] = H[5, 0] = -2.0 * beta * f1_1 - f2_1
    H[1, 1] = 2.0 * beta**2 * (csc2**2 + 2.0 * cot**2 * csc2) + 2.0 * a**2 * (
        c * c - s * s
    )
    H[1, 5] = H[5, 1] = -4.0 * beta * cot * csc2
    H[3, 3] = 2.0 * dl
    H[4, 4] = 2.0
    H[5, 5] = 2.0 * csc2 - 2.0 * a**2 / dl
    return H


def grad_hess_raw(params: KerrParams, r: float, theta: float, xi: float,
                  alpha: float, beta: float):
    """Gradient and Hessian of p in one pass (scalar hot path).

    Shares Delta/trig intermediates between the two; no chart validation.
    """
    m, a = params.mass, params.spin
    a2 = a * a
    dl = r * r - 2.0 * m * r + a2
    dl1 = 2.0 * (r - m)
    inv = 1.0 / dl
    inv2 = inv * inv
    s = np.sin(theta)
    c = np.cos(theta)
    csc2 = 1.0 / (s * s)
    cot = c / s
    w = r * r + a2
    be2 = beta * beta

    # first derivatives of the Delta-quotient pieces
    f1_1 = -a2 * dl1 * inv2
    f2_1 = 4.0 * m * a * (dl - r * dl1) * inv2
    f3_1 = (4.0 * r * w * dl - w * w * dl1) * inv2

    g = np.empty(6)
    g[0] = dl1 * xi * xi - be2 * f1_1 - beta * f2_1 - f3_1
    g[1] = -2.0 * be2 * c * csc2 / s + 2.0 * a2 * s * c
    g[2] = 0.0
    g[3] = 2.0 * dl * xi
    g[4] = 2.0 * alpha
    g[5] = 2.0 * beta * csc2 - 2.0 * a2 * beta * inv - 4.0 * m * a * r * inv

    # second derivatives of the quotient pieces
    inv3 = inv2 * inv
    f1_2 = -a2 * (2.0 * inv2 - 2.0 * dl1 * dl1 * inv3)
    f2_2 = 4.0 * m * a * (-2.0 * dl1 * inv2) - 4.0 * m * a * r * (
        2.0 * inv2 - 2.0 * dl1 * dl1 * inv3
    )
    u3_1 = 4.0 * r * w
    u3_2 = 12.0 * r * r + 4.0 * a2
    f3_2 = (
        u3_2 * inv
        - 2.0 * u3_1 * dl1 * inv2
        - w * w * 2.0 * inv2
        + 2.0 * w * w * dl1 * dl1 * inv3
    )

    H = np.zeros((6, 6))
    H[0, 0] = 2.0 * xi * xi - be2 * f1_2 - beta * f2_2 - f3_2
    H[0, 3] = H[3, 0] = 2.0 * dl1 * xi
    H[0, 5] = H[5, 0] = -2.0 * beta * f1_1 - f2_1
    H[1, 1] = 2.0 * be2 * (csc2 * csc2 + 2.0 * cot * cot * csc2) + 2.0 * a2 * (
        c * c - s * s
    )
    H[1, 5] = H[5, 1] = -4.0 * beta * cot * csc2
    H[3, 3] = 2.0 * dl
    H[4, 4] = 2.0
    H[5, 5] = 2.0 * csc2 - 2.0 * a2 * inv
    return g, H


def conserved(state: PhaseState, params: KerrParams) -> ConservedTriple:
    """The commuting triple (p, beta, carter) at a state."""
    a = params.spin
    s = np.sin(state.theta)
    carter = state.alpha**2 + (a * s - state.beta / s) ** 2
    return ConservedTriple(
        p=symbol_p(state, params), beta=state.beta, carter=carter
    )


def symbol_q(state: PhaseState, params: KerrParams):
    """Principal symbol of the conjugating weight at a state.

    At a = 0 this reduces to 2*r^4/Delta.
    """
    _require_exterior(params, state.r)
    m, a = params.mass, params.spin
    r, theta, beta = state.r, state.theta, state.beta
    dl = delta(params, r)
    return (
        2.0 * ((r**2 + a**2) ** 2 / dl - a**2 * np.sin(theta) ** 2)
        + (4.0 * m * a * r / dl) * beta
    )


def q_lower_bound(params: KerrParams, r, beta):
    """Closed-form lower bound for sigma(Q) + p at xi = alpha = 0."""
    m, a = params.mass, params.spin
    dl = delta(params, r)
    return (r**4 + a**2 * r**2 + 2.0 * m * a**2 * r) / dl + beta**2 * (
        r**2 - 2.0 * m * r
    ) / dl


def q_positivity_margin(
    params: KerrParams,
    r_range: tuple[float, float],
    theta_range: tuple[float, float],
    beta_range: tuple[float, float],
    n: int = 25,
) -> float:
    """Minimum of sigma(Q) + p minus its closed-form floor over a grid.

    Evaluated at xi = alpha = 0, the worst case: both enter p as
    nonnegative squares.  A nonnegative return certifies the weight's
    positivity on the region.
    """
    _require_exterior(params, r_range[0])
    r = np.linspace(*r_range, n)[:, None, None]
    theta = np.linspace(*theta_range, n)[None, :, None]
    beta = np.linspace(*beta_range, n)[None, None, :]
    zero = np.zeros_like(r + theta + beta)
    state = PhaseState(r + zero, theta + zero, 0.0, 0.0, 0.0, beta + zero)
    total = symbol_q(state, params) + symbol_p(state, params)
    return float(np.min(total - q_lower_bound(params, state.r, state.beta)))


def ergosphere_indicator(state: PhaseState, params: KerrParams) -> bool:
    """True where the angular-momentum quadratic coefficient turns negative.

    The sign of 1/sin^2(theta) - a^2/Delta controls it; inside the
    ergoregion trapped-set arguments need the q-weight positivity above.
    """
    _require_exterior(params, state.r)
    value = 1.0 / np.sin(state.theta) ** 2 - params.spin**2 / delta(
        params, state.r
    )
    return bool(np.all(value < 0.0))
