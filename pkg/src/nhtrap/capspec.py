"""Complex-absorbing-potential spectra for one-dimensional barrier models.

Builds discretized operators A = P - i*diag(W) where P is the symmetric
finite-difference realization of (h D) m(x) (h D) + v(x) with Dirichlet
ends, W is a smooth absorber supported near the ends, and v has a
nondegenerate barrier top inside the absorber-free region.  Provides the
non-self-adjoint spectrum near the barrier energy, the spectral gap and
its h-sweeps, resolvent norms on and near the real axis, and semigroup
decay demos.

Three model kinds are built in: ``toy_sech2`` (v = sech^2 x - 1, flat
mass), ``schw_radial`` (v = k*Delta/r^4 - 1, m = Delta^2/r^4, the
conformally rescaled radial barrier outside a nonrotating horizon), and
``kerr_equatorial`` (same rescaling of the equatorial radial barrier at
the critical angular momentum of a rotating exterior).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.integrate as integrate
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .errors import (
    ConvergenceFailure,
    DomainError,
    NewtonDiverged,
    StepFailure,
    UnderResolved,
)

MODEL_KINDS = ("toy_sech2", "schw_radial", "kerr_equatorial")

DEFAULT_WINDOW = 0.3  # half-width of the real-part window around z = 0
FLOOR_FACTOR = -1.0  # reported-list floor, in units of h below the axis
DENSE_CAP = 4000  # largest matrix sent to the dense eigensolver
RESIDUAL_TOL = 1e-8
SHIFT_COUNT = 12  # shift-invert probes across the window above the cap
RESOLUTION_FACTOR = 3.0  # grid points per semiclassical radian
DISSIPATIVITY_TOL = 1e-9

# band profile: (inner, outer) ramp fractions of the domain length; only
# consulted when the problem is built with profile="band"
DEFAULT_RAMPS = {
    "toy_sech2": (0.30, 0.30),
    "schw_radial": (0.055, 0.25),
    "kerr_equatorial": (0.055, 0.25),
}

# depth profile: the ramp is a quintic smoothstep in barrier depth -v,
# switching on at D(h) = DEPTH_FLAT + DEPTH_SLOPE*h and saturating at
# DEPTH_SAT = (inner, outer); turn-on keyed to depth stays gentle exactly
# where emitted waves are still slow, at every h.  A narrow quintic seam
# of width SEAM_FRACTION*length extends each saturated margin so the
# profile stays grid-resolvable instead of jumping to 1 at the margin edge
DEPTH_FLAT = 0.015
DEPTH_SLOPE = 0.2
DEPTH_SAT = (0.25, 0.45)
SEAM_FRACTION = 0.015

# flat toy wells keep the banded ramps; barrier kinds need the depth-keyed
# turn-on or slow near-top waves reflect off the absorber as h shrinks
DEFAULT_PROFILES = {
    "toy_sech2": "band",
    "schw_radial": "depth",
    "kerr_equatorial": "depth",
}

# (inner, outer) saturated-absorber fractions; at least 10% of the domain
# must stay saturated at each end
MIN_MARGIN = 0.10
DEFAULT_MARGINS = {
    "toy_sech2": (0.10, 0.10),
    "schw_radial": (0.10, 0.10),
    "kerr_equatorial": (0.10, 0.10),
}

_DEFAULT_PARAMS = {
    "toy_sech2": {},
    "schw_radial": {"mass": 1.0, "k_ang": 27.0},
    "kerr_equatorial": {"mass": 1.0, "spin": 0.0, "branch": "prograde"},
}

_NEWTON_TOL = 1e-13
_NEWTON_MAX_ITER = 80
_CURV_STEP = 1e-3  # stencil step for numeric barrier curvature
_MAX_AUTO_POINTS = 60_000


@dataclass(frozen=True)
class CapProblem:
    """One sampled absorbing-barrier eigenvalue problem.

    Node samples live on the uniform interior grid of ``(x_min, x_max)``
    with Dirichlet walls at both ends; ``mass_mid`` is sampled at the
    n_points + 1 cell midpoints the flux stencils difference across.
    ``flat_lo``/``flat_hi`` bound the absorber-free region, and
    ``exponent`` is the barrier-top normal rate sqrt(2 m |v''|).
    """

    kind: str
    h: float
    x_min: float
    x_max: float
    n_points: int
    order: int
    x: np.ndarray
    potential: np.ndarray
    mass_weight: np.ndarray
    mass_mid: np.ndarray
    absorber: np.ndarray
    barrier_top: float
    mass_top: float
    potential_curvature: float
    exponent: float
    flat_lo: float
    flat_hi: float
    ramps: tuple
    margins: tuple
    profile: str
    params: dict

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points + 1)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def flat_region(self) -> tuple:
        return (self.flat_lo, self.flat_hi)


@dataclass(frozen=True)
class SpectrumReport:
    """Windowed spectrum of one absorbing-barrier problem.

    ``eigenvalues`` holds the floor-filtered list for reporting; ``gap``
    is computed from every window eigenvalue before the floor is applied,
    and ``nu`` = gap/h.  ``resolvent_axis`` pairs each probed real z with
    the discrete resolvent norm there.
    """

    kind: str
    h: float
    n_points: int
    window: float
    floor: float
    eigenvalues: np.ndarray
    residuals: np.ndarray
    gap: float
    nu: float
    resolvent_axis: tuple
    runtime_s: float


def _smoothstep5(t):
    """Quintic 0 -> 1 ramp with two flat derivatives at both ends."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 + t * (6.0 * t - 15.0))


def _absorber_profile(x, slowness, x_min, x_max, margins, ramps, scale):
    """Absorber W: saturated margins, quintic ramps, flat-zero middle.

    Band edges are fractions of the domain in x, but each ramp's interior
    shape follows the unit-speed coordinate ``slowness`` (cumulative
    integral of 1/sqrt(m)), so the turn-on stays adiabatic for waves that
    slow down where the mass weight degenerates.  Linear in x when m = 1.
    """
    length = x_max - x_min
    (margin_lo, margin_hi), (ramp_lo, ramp_hi) = margins, ramps
    lo_start = x_min + margin_lo * length  # ramp-down begins
    lo_end = lo_start + ramp_lo * length
    hi_end = x_max - margin_hi * length  # ramp-up ends
    hi_start = hi_end - ramp_hi * length
    s_of = lambda pos: float(np.interp(pos, x, slowness))
    w = np.zeros_like(x)
    if ramp_lo > 0.0:
        t = (slowness - s_of(lo_start)) / (s_of(lo_end) - s_of(lo_start))
        w = np.maximum(w, 1.0 - _smoothstep5(t))
    else:
        w = np.maximum(w, np.where(x <= lo_start, 1.0, 0.0))
    if ramp_hi > 0.0:
        t = (slowness - s_of(hi_start)) / (s_of(hi_end) - s_of(hi_start))
        w = np.maximum(w, _smoothstep5(t))
    else:
        w = np.maximum(w, np.where(x >= hi_end, 1.0, 0.0))
    return scale * w


def _depth_profile(
    x,
    potential,
    barrier_top,
    x_min,
    x_max,
    margins,
    flat_depth,
    saturation,
    seam,
    scale,
):
    """Absorber W keyed to barrier depth: quintic smoothstep of -v.

    The turn-on tracks how far the potential has fallen below the barrier
    top, so waves emitted near the top meet no absorber until they have
    accelerated; ``flat_depth`` must scale with h because the emitted
    wavelength does.  Saturation at ``saturation = (inner, outer)`` depth
    on each side of the top.  A quintic seam of width ``seam*length``
    carries the ramp the rest of the way to 1 at each margin edge, so the
    saturated margins continue without a grid-scale jump.
    """
    length = x_max - x_min
    margin_lo, margin_hi = margins
    sat_in, sat_out = saturation
    if flat_depth >= min(sat_in, sat_out):
        raise DomainError(
            f"flat depth {flat_depth:g} swallows the absorber saturation "
            f"{min(sat_in, sat_out):g}"
        )
    lo_edge = x_min + margin_lo * length
    hi_edge = x_max - margin_hi * length
    depth = np.maximum(-potential, 0.0)
    w = np.empty_like(x)
    inner = x < barrier_top
    w[inner] = _smoothstep5((depth[inner] - flat_depth) / (sat_in - flat_depth))
    w[~inner] = _smoothstep5((depth[~inner] - flat_depth) / (sat_out - flat_depth))
    if seam > 0.0:
        bw = seam * length
        w = w + np.maximum(
            _smoothstep5((lo_edge + bw - x) / bw),
            _smoothstep5((x - hi_edge + bw) / bw),
        )
        np.minimum(w, 1.0, out=w)
    w[x <= lo_edge] = 1.0
    w[x >= hi_edge] = 1.0
    return scale * w


def _horizon_radius(mass: float, spin: float) -> float:
    return mass + math.sqrt(mass * mass - spin * spin)


def _equatorial_critical(mass: float, spin: float, branch: str):
    """Radius and angular momentum of the circular equatorial null orbit.

    Solves V = V' = 0 for the radial function
    V(r, b) = (b - a)^2 - ((r^2 + a^2) - a b)^2 / Delta,
    seeded by the closed-form orbit radius, refined by a damped Newton
    step on (V, V') with a finite-difference Jacobian.
    """
    a = spin
    sign = 1.0 if branch == "prograde" else -1.0

    def val_and_slope(r: float, b: float):
        delta = r * r - 2.0 * mass * r + a * a
        u = (r * r + a * a) - a * b
        val = (b - a) ** 2 - u * u / delta
        slope = u * (2.0 * (r - mass) * u - 4.0 * r * delta) / delta**2
        return val, slope

    # closed-form seed; exact at a = 0 where the orbit sits at r = 3M
    r0 = 2.0 * mass * (1.0 + math.cos((2.0 / 3.0) * math.acos(-sign * a / mass)))
    delta0 = r0 * r0 - 2.0 * mass * r0 + a * a
    u0 = 2.0 * r0 * delta0 / (r0 - mass)
    b0 = a + sign * u0 / math.sqrt(delta0)

    y = np.array([r0, b0])
    for _ in range(_NEWTON_MAX_ITER):
        f = np.array(val_and_slope(y[0], y[1]))
        if np.hypot(f[0], f[1]) < _NEWTON_TOL * max(1.0, y[0] ** 2):
            return float(y[0]), float(y[1])
        jac = np.empty((2, 2))
        for j in range(2):
            step = 1e-7 * max(1.0, abs(y[j]))
            yp = y.copy()
            yp[j] += step
            ym = y.copy()
            ym[j] -= step
            fp = np.array(val_and_slope(yp[0], yp[1]))
            fm = np.array(val_and_slope(ym[0], ym[1]))
            jac[:, j] = (fp - fm) / (2.0 * step)
        try:
            dy = np.linalg.solve(jac, f)
        except np.linalg.LinAlgError as exc:
            raise NewtonDiverged(f"singular orbit jacobian at {y}") from exc
        if not np.all(np.isfinite(dy)):
            raise NewtonDiverged(f"orbit step lost finiteness at {y}")
        y = y - dy
    raise NewtonDiverged(
        f"circular-orbit solve stalled at r={y[0]:.6g}, b={y[1]:.6g}"
    )


def _stencil_curvature(func, x0: float, step: float = _CURV_STEP) -> float:
    """Second derivative by the 5-point central stencil."""
    f = [func(x0 + k * step) for k in (-2, -1, 0, 1, 2)]
    return (-f[0] + 16.0 * f[1] - 30.0 * f[2] + 16.0 * f[3] - f[4]) / (
        12.0 * step * step
    )


def _model_functions(kind: str, params: dict):
    """Closed-form (v, m, top, m_top, v_curv, default_domain) per kind."""
    if kind == "toy_sech2":

        def v_func(r):
            s = 1.0 / np.cosh(r)
            return s * s - 1.0

        def m_func(r):
            return np.ones_like(np.asarray(r, dtype=float))

        return v_func, m_func, 0.0, 1.0, -2.0, (-6.0, 6.0)

    if kind == "schw_radial":
        mass, k_ang = params["mass"], params["k_ang"]
        if mass <= 0.0:
            raise DomainError(f"mass must be positive, got {mass:g}")
        if k_ang <= 0.0:
            raise DomainError(f"k_ang must be positive, got {k_ang:g}")

        def v_func(r):
            r = np.asarray(r, dtype=float)
            return k_ang * (r - 2.0 * mass) / r**3 - 1.0

        def m_func(r):
            r = np.asarray(r, dtype=float)
            return (1.0 - 2.0 * mass / r) ** 2

        top = 3.0 * mass
        m_top = 1.0 / 9.0
        v_curv = -2.0 * k_ang / (81.0 * mass**4)
        domain = (2.1 * mass, 6.8 * mass)
        return v_func, m_func, top, m_top, v_curv, domain

    if kind == "kerr_equatorial":
        mass, spin, branch = params["mass"], params["spin"], params["branch"]
        if mass <= 0.0:
            raise DomainError(f"mass must be positive, got {mass:g}")
        if not 0.0 <= spin < mass:
            raise DomainError(f"spin must lie in [0, mass), got {spin:g}")
        if branch not in ("prograde", "retrograde"):
            raise DomainError(f"unknown orbit branch {branch!r}")
        r_star, b_star = _equatorial_critical(mass, spin, branch)
        a = spin

        def v_func(r):
            r = np.asarray(r, dtype=float)
            delta = r * r - 2.0 * mass * r + a * a
            u = (r * r + a * a) - a * b_star
            return ((b_star - a) ** 2 - u * u / delta) * delta / r**4

        def m_func(r):
            r = np.asarray(r, dtype=float)
            delta = r * r - 2.0 * mass * r + a * a
            return delta * delta / r**4

        m_top = float(m_func(r_star))
        v_curv = _stencil_curvature(lambda r: float(v_func(r)), r_star)
        r_h = _horizon_radius(mass, spin)
        span = r_star - r_h
        domain = (r_h + 0.10 * span, r_star + 3.8 * span)
        return v_func, m_func, r_star, m_top, v_curv, domain

    raise DomainError(f"unknown model kind {kind!r}")


def _merge_params(kind: str, params) -> dict:
    defaults = _DEFAULT_PARAMS.get(kind)
    if defaults is None:
        raise DomainError(f"unknown model kind {kind!r}")
    merged = dict(defaults)
    for key, value in dict(params or {}).items():
        if key not in defaults:
            raise DomainError(f"unknown parameter {key!r} for kind {kind!r}")
        merged[key] = value
    return merged


def required_points(
    length: float,
    h: float,
    xi_max: float,
    factor: float = RESOLUTION_FACTOR,
) -> int:
    """Wavelength rule: at least ``factor`` grid points per radian of the
    fastest window-energy oscillation (phase rate xi/h per unit length)."""
    return int(math.ceil(factor * length * max(1.0, xi_max) / h))


def build_model(
    kind: str,
    params=None,
    h: float = 0.05,
    grid=None,
    *,
    order: int = 4,
    profile: str | None = None,
    ramps=None,
    margins=None,
    resolution_factor: float = RESOLUTION_FACTOR,
    absorber_scale: float = 1.0,
) -> CapProblem:
    """Sample one absorbing-barrier problem onto a uniform Dirichlet grid.

    ``grid`` is an optional (x_min, x_max, n_points) override; when absent
    the kind's default domain is used and n_points is set by the
    wavelength rule.  An explicit n_points below that rule raises
    UnderResolved.  ``profile`` picks the absorber shape ("band" ramps in
    fixed domain fractions, "depth" keys the ramp to barrier depth -v);
    each kind has a tested default.  ``absorber_scale=0`` builds the
    absorber-free reference problem (self-adjoint, for calibration),
    skipping the saturated-margin check that would otherwise fail.
    """
    if not 0.0 < h < 0.5:
        raise DomainError(f"h must lie in (0, 0.5), got {h:g}")
    if order not in (2, 4):
        raise DomainError(f"stencil order must be 2 or 4, got {order}")
    if not 0.0 <= absorber_scale <= 1.0:
        raise DomainError(f"absorber scale must lie in [0, 1], got {absorber_scale:g}")
    merged = _merge_params(kind, params)
    v_func, m_func, top, m_top, v_curv, default_domain = _model_functions(
        kind, merged
    )
    if profile is None:
        profile = DEFAULT_PROFILES.get(kind, "band")
    if profile not in ("band", "depth"):
        raise DomainError(f"unknown absorber profile '{profile}'")
    if ramps is None:
        ramp_lo, ramp_hi = DEFAULT_RAMPS[kind]
    else:
        ramp_lo, ramp_hi = float(ramps[0]), float(ramps[1])
    if margins is None:
        margin_lo, margin_hi = DEFAULT_MARGINS[kind]
    else:
        margin_lo, margin_hi = float(margins[0]), float(margins[1])
    if min(ramp_lo, ramp_hi) < 0.0 or min(margin_lo, margin_hi) < MIN_MARGIN or (
        max(margin_lo + ramp_lo, margin_hi + ramp_hi) > 0.5
    ):
        raise DomainError(
            f"absorber fractions (margins ({margin_lo:g}, {margin_hi:g}), "
            f"ramps ({ramp_lo:g}, {ramp_hi:g})) out of range: margins must "
            f"cover at least {MIN_MARGIN:g} of the domain at each end"
        )

    if grid is None:
        x_min, x_max = default_domain
        n_points = None
    else:
        x_min, x_max, n_points = float(grid[0]), float(grid[1]), int(grid[2])
    if not x_min < x_max:
        raise DomainError(f"empty domain [{x_min:g}, {x_max:g}]")
    if kind in ("schw_radial", "kerr_equatorial"):
        r_h = _horizon_radius(
            merged["mass"], merged.get("spin", 0.0)
        )
        if x_min <= r_h:
            raise DomainError(
                f"inner wall {x_min:g} does not clear the horizon {r_h:g}"
            )
    length = x_max - x_min

    # fastest window-energy phase rate sets the grid rule; the saturated
    # margins are excluded since waves arrive there exponentially damped
    probe = np.linspace(x_min, x_max, 2001)[1:-1]
    v_probe = np.asarray(v_func(probe), dtype=float)
    m_probe = np.asarray(m_func(probe), dtype=float)
    if not np.all(np.isfinite(v_probe)) or not np.all(np.isfinite(m_probe)):
        raise DomainError("model functions lost finiteness on the domain")
    if np.min(m_probe) <= 0.0:
        raise DomainError("mass weight lost positivity on the domain")
    live = (probe >= x_min + margin_lo * length) & (
        probe <= x_max - margin_hi * length
    )
    xi_sq = (DEFAULT_WINDOW - v_probe[live]) / m_probe[live]
    xi_max = math.sqrt(max(np.max(xi_sq), 0.0))
    n_rule = required_points(length, h, xi_max, resolution_factor)
    if n_rule > _MAX_AUTO_POINTS:
        raise DomainError(
            f"wavelength rule wants {n_rule} points; narrow the domain"
        )
    if n_points is None:
        n_points = n_rule
    elif n_points < n_rule:
        raise UnderResolved(
            f"{n_points} points under-resolve the window wavelength; "
            f"need at least {n_rule} on [{x_min:g}, {x_max:g}] at h={h:g}"
        )
    if n_points < 8:
        raise DomainError(f"need at least 8 grid points, got {n_points}")

    dx = length / (n_points + 1)
    x = x_min + dx * np.arange(1, n_points + 1)
    x_mid = x_min + dx * (np.arange(n_points + 1) + 0.5)
    potential = np.asarray(v_func(x), dtype=float)
    mass_weight = np.asarray(m_func(x), dtype=float)
    mass_mid = np.asarray(m_func(x_mid), dtype=float)
    if profile == "band":
        # unit-speed coordinate of the m-weighted principal part; ramps
        # shaped in it stay adiabatic where waves slow down near a
        # degenerate wall
        s_probe = np.concatenate(
            ([0.0], integrate.cumulative_trapezoid(1.0 / np.sqrt(m_probe), probe))
        )
        slowness = np.interp(x, probe, s_probe)
        absorber = _absorber_profile(
            x,
            slowness,
            x_min,
            x_max,
            (margin_lo, margin_hi),
            (ramp_lo, ramp_hi),
            absorber_scale,
        )
        flat_lo = x_min + (margin_lo + ramp_lo) * length
        flat_hi = x_max - (margin_hi + ramp_hi) * length
    else:
        absorber = _depth_profile(
            x,
            potential,
            top,
            x_min,
            x_max,
            (margin_lo, margin_hi),
            DEPTH_FLAT + DEPTH_SLOPE * h,
            DEPTH_SAT,
            SEAM_FRACTION,
            absorber_scale,
        )
        zero = np.flatnonzero(absorber == 0.0)
        if zero.size == 0:
            raise DomainError("absorber leaves no absorber-free region")
        flat_lo = float(x[zero[0]])
        flat_hi = float(x[zero[-1]])
    if not flat_lo < flat_hi:
        raise DomainError("absorber ramps leave no absorber-free region")
    if not flat_lo <= top <= flat_hi:
        raise DomainError(
            f"barrier top {top:g} leaves the absorber-free region "
            f"({flat_lo:g}, {flat_hi:g})"
        )
    if absorber_scale > 0.0:
        margin_nodes = x <= x_min + margin_lo * length
        if not np.all(absorber[margin_nodes] == absorber_scale):
            raise DomainError("absorber fails to saturate on the inner margin")
        margin_nodes = x >= x_max - margin_hi * length
        if not np.all(absorber[margin_nodes] == absorber_scale):
            raise DomainError("absorber fails to saturate on the outer margin")
    if np.min(absorber) < 0.0 or np.max(absorber) > 1.0:
        raise DomainError("absorber left the [0, 1] range")

    return CapProblem(
        kind=kind,
        h=h,
        x_min=x_min,
        x_max=x_max,
        n_points=n_points,
        order=order,
        x=x,
        potential=potential,
        mass_weight=mass_weight,
        mass_mid=mass_mid,
        absorber=absorber,
        barrier_top=top,
        mass_top=m_top,
        potential_curvature=v_curv,
        exponent=math.sqrt(2.0 * m_top * max(-v_curv, 0.0)),
        flat_lo=flat_lo,
        flat_hi=flat_hi,
        ramps=(ramp_lo, ramp_hi) if profile == "band" else (0.0, 0.0),
        margins=(margin_lo, margin_hi),
        profile=profile,
        params=merged,
    )


def laplacian_reference(
    h: float = 0.1,
    length: float = math.pi,
    n_points: int = 200,
    order: int = 4,
) -> CapProblem:
    """Absorber-free flat problem (v = 0, m = 1) with known spectrum.

    The continuum eigenvalues are h^2 (j pi / length)^2; the order-2
    discretization has the exact discrete counterpart
    (4 h^2/dx^2) sin^2(j pi / (2 (n+1))).  Calibration only.
    """
    dx = length / (n_points + 1)
    x = dx * np.arange(1, n_points + 1)
    return CapProblem(
        kind="reference",
        h=h,
        x_min=0.0,
        x_max=length,
        n_points=n_points,
        order=order,
        x=x,
        potential=np.zeros(n_points),
        mass_weight=np.ones(n_points),
        mass_mid=np.ones(n_points + 1),
        absorber=np.zeros(n_points),
        barrier_top=0.5 * length,
        mass_top=1.0,
        potential_curvature=0.0,
        exponent=0.0,
        flat_lo=0.0,
        flat_hi=length,
        ramps=(0.0, 0.0),
        margins=(0.0, 0.0),
        profile="band",
        params={},
    )


def _derivative_matrix(n: int, dx: float, order: int) -> sp.csr_matrix:
    """Node-to-midpoint derivative over the extended grid with zero walls.

    Rows are the n+1 cell midpoints; columns the n interior nodes.  Wall
    samples are exact zeros, so their stencil columns are dropped.  The
    wide stencils close at the walls by odd reflection (the Dirichlet
    extension), which reproduces the interior stencil exactly for
    odd-extendable data and keeps the Gram form's transpose consistent.
    """
    rows, cols, vals = [], [], []

    def add_row(m: int, ext_idx, weights):
        for e, w in zip(ext_idx, weights):
            if e < 1:
                e, w = 2 * 0 - e, -w  # fold across the left wall (ext 0)
            elif e > n:
                e, w = 2 * (n + 1) - e, -w  # fold across the right wall
            if 1 <= e <= n:
                rows.append(m)
                cols.append(e - 1)
                vals.append(w / dx)

    if order == 2:
        for m in range(n + 1):
            add_row(m, (m, m + 1), (-1.0, 1.0))
    else:
        interior = np.array([1.0, -27.0, 27.0, -1.0]) / 24.0
        for m in range(n + 1):
            add_row(m, range(m - 1, m + 3), interior)
    coo = sp.coo_matrix((vals, (rows, cols)), shape=(n + 1, n), dtype=float)
    return coo.tocsr()


def _assemble(problem: CapProblem):
    """Real-symmetric part (sparse) and absorber diagonal of the operator."""
    n = problem.n_points
    deriv = _derivative_matrix(n, problem.dx, problem.order)
    weighted = deriv.multiply(problem.mass_mid[:, None]).tocsr()
    kinetic = (problem.h**2) * (deriv.T @ weighted)
    kinetic = 0.5 * (kinetic + kinetic.T)  # Gram form; kill roundoff skew
    a_real = (kinetic + sp.diags(problem.potential)).tocsr()
    return a_real, problem.absorber.copy()


def discretize(problem: CapProblem) -> np.ndarray:
    """Dense complex matrix A = P - i*diag(W), structurally dissipative."""
    if problem.n_points > 6000:
        raise DomainError(
            f"{problem.n_points} points is too large for a dense matrix; "
            "use discretize_sparse"
        )
    a_real, absorber = _assemble(problem)
    matrix = a_real.toarray().astype(complex)
    matrix[np.diag_indices_from(matrix)] -= 1j * absorber
    return matrix


def discretize_sparse(problem: CapProblem) -> sp.csc_matrix:
    """Sparse counterpart of :func:`discretize` (banded, csc)."""
    a_real, absorber = _assemble(problem)
    return (a_real.astype(complex) - 1j * sp.diags(absorber)).tocsc()


def _certify(matrix, zs: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Relative eigenpair residuals ||A v - z v|| / ||v||, vectorized."""
    if zs.size == 0:
        return np.zeros(0)
    residual = matrix @ vecs - vecs * zs[None, :]
    return np.linalg.norm(residual, axis=0) / np.linalg.norm(vecs, axis=0)


def _eig_dense(matrix: np.ndarray, window: float):
    zs, vecs = sla.eig(matrix)
    worst = float(np.max(zs.imag)) if zs.size else 0.0
    if worst > DISSIPATIVITY_TOL:
        raise ConvergenceFailure(
            f"eigenvalue with Im z = {worst:.3e} > 0 breaks dissipativity"
        )
    keep = np.abs(zs.real) < window
    zs = zs[keep]
    residuals = _certify(matrix, zs, vecs[:, keep])
    return zs, residuals


def _eig_shift_invert(matrix: sp.csc_matrix, window: float, k_per_shift: int):
    n = matrix.shape[0]
    k = min(k_per_shift, n - 2)
    shifts = np.linspace(-window, window, SHIFT_COUNT)
    # fixed start vector: keeps repeated solves bit-reproducible across
    # processes and thread schedules
    rng = np.random.default_rng(1234)
    v0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    found_z, found_v = [], []
    for shift in shifts:
        try:
            zs, vecs = spla.eigs(
                matrix, k=k, sigma=complex(shift), which="LM", v0=v0
            )
        except (spla.ArpackError, spla.ArpackNoConvergence, RuntimeError) as exc:
            raise ConvergenceFailure(
                f"shift-invert failed at shift {shift:g}: {exc}", shift=shift
            ) from exc
        found_z.append(zs)
        found_v.append(vecs)
    zs = np.concatenate(found_z)
    vecs = np.concatenate(found_v, axis=1)
    worst = float(np.max(zs.imag)) if zs.size else 0.0
    if worst > DISSIPATIVITY_TOL:
        raise ConvergenceFailure(
            f"eigenvalue with Im z = {worst:.3e} > 0 breaks dissipativity"
        )
    keep = np.abs(zs.real) < window
    zs, vecs = zs[keep], vecs[:, keep]
    # collapse duplicates found from neighboring shifts
    order = np.lexsort((zs.imag, zs.real))
    zs, vecs = zs[order], vecs[:, order]
    unique = np.ones(zs.size, dtype=bool)
    for i in range(1, zs.size):
        if abs(zs[i] - zs[i - 1]) < 1e-9 * max(1.0, abs(zs[i])):
            unique[i] = False
    zs, vecs = zs[unique], vecs[:, unique]
    return zs, _certify(matrix, zs, vecs)


def eigenvalues(
    matrix,
    window: float = DEFAULT_WINDOW,
    floor: float | None = None,
    *,
    method: str = "auto",
    k_per_shift: int = 60,
):
    """Certified eigenvalues with |Re z| < window (and Im z > floor if set).

    Dense solve up to the size cap, shift-invert probing above it; every
    returned eigenvalue carries a relative residual, and any residual at
    or above the certification tolerance raises ConvergenceFailure.
    Returns (values, residuals) sorted by descending imaginary part.
    """
    if method not in ("auto", "dense", "shift_invert"):
        raise DomainError(f"unknown eigensolve method {method!r}")
    n = matrix.shape[0]
    if matrix.shape[0] != matrix.shape[1]:
        raise DomainError(f"matrix is not square: {matrix.shape}")
    dense = method == "dense" or (method == "auto" and n <= DENSE_CAP)
    if dense:
        full = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
        zs, residuals = _eig_dense(full.astype(complex), window)
    else:
        sparse = matrix if sp.issparse(matrix) else sp.csc_matrix(matrix)
        zs, residuals = _eig_shift_invert(sparse.tocsc(), window, k_per_shift)
    if floor is not None:
        keep = zs.imag > floor
        zs, residuals = zs[keep], residuals[keep]
    if zs.size and np.max(residuals) >= RESIDUAL_TOL:
        i = int(np.argmax(residuals))
        raise ConvergenceFailure(
            f"eigenpair at z = {zs[i]:.6g} has residual {residuals[i]:.3e}"
        )
    order = np.lexsort((zs.real, -zs.imag))
    return zs[order], residuals[order]


def spectral_gap(
    problem: CapProblem,
    *,
    window: float = DEFAULT_WINDOW,
    floor_factor: float = FLOOR_FACTOR,
    axis_points=(0.0,),
    method: str = "auto",
) -> SpectrumReport:
    """Windowed spectrum report with gap, nu = gap/h, and axis norms.

    The gap is the distance from the axis to the closest window
    eigenvalue; the floor (floor_factor * h below the axis) only trims
    the reported eigenvalue list, never the gap computation.
    """
    start = time.perf_counter()
    n = problem.n_points
    if n <= DENSE_CAP and method != "shift_invert":
        matrix = discretize(problem)
    else:
        matrix = discretize_sparse(problem)
    zs, residuals = eigenvalues(matrix, window=window, floor=None, method=method)
    if zs.size == 0:
        raise ConvergenceFailure(
            f"no eigenvalues inside |Re z| < {window:g} at h={problem.h:g}"
        )
    gap = float(-np.max(zs.imag))
    floor = floor_factor * problem.h
    keep = zs.imag > floor
    axis = tuple(
        (float(z), resolvent_norm(problem, float(z))) for z in axis_points
    )
    return SpectrumReport(
        kind=problem.kind,
        h=problem.h,
        n_points=n,
        window=window,
        floor=floor,
        eigenvalues=zs[keep],
        residuals=residuals[keep],
        gap=gap,
        nu=gap / problem.h,
        resolvent_axis=axis,
        runtime_s=time.perf_counter() - start,
    )


def gap_sweep(
    kind: str,
    params=None,
    h_list=(0.1, 0.05, 0.025, 0.0125),
    *,
    order: int = 4,
    window: float = DEFAULT_WINDOW,
    floor_factor: float = FLOOR_FACTOR,
    resolution_factor: float = RESOLUTION_FACTOR,
    profile: str | None = None,
    ramps=None,
    margins=None,
    axis_points=(0.0,),
) -> dict:
    """Gap and nu across a strictly descending h list, one problem per h.

    Returns row dicts (h, gap, nu, norm_axis_z0, runtime_s, n_points)
    plus the sweep summary: the empirical rate floor min(nu), the
    relative nu spread of the two smallest h, and a pass flag requiring
    every gap positive and that spread at most 15%.
    """
    h_list = [float(h) for h in h_list]
    if len(h_list) < 1:
        raise DomainError("empty h list")
    if any(b >= a for a, b in zip(h_list, h_list[1:])):
        raise DomainError(f"h list must be strictly descending: {h_list}")
    rows = []
    reports = []
    for h in h_list:
        problem = build_model(
            kind,
            params,
            h,
            order=order,
            profile=profile,
            ramps=ramps,
            margins=margins,
            resolution_factor=resolution_factor,
        )
        report = spectral_gap(
            problem,
            window=window,
            floor_factor=floor_factor,
            axis_points=axis_points,
        )
        reports.append(report)
        norm_z0 = next(
            (norm for z, norm in report.resolvent_axis if z == 0.0),
            report.resolvent_axis[0][1] if report.resolvent_axis else float("nan"),
        )
        rows.append(
            {
                "h": h,
                "gap": report.gap,
                "nu": report.nu,
                "norm_axis_z0": norm_z0,
                "runtime_s": report.runtime_s,
                "n_points": report.n_points,
            }
        )
    nus = [row["nu"] for row in rows]
    consistency = None
    if len(nus) >= 2:
        consistency = abs(nus[-1] - nus[-2]) / abs(nus[-2])
    passed = all(row["gap"] > 0.0 for row in rows) and (
        consistency is None or consistency <= 0.15
    )
    return {
        "kind": kind,
        "order": order,
        "rows": rows,
        "reports": reports,
        "nu_floor": min(nus),
        "nu_consistency": consistency,
        "passed": passed,
    }


def resolvent_norm(
    problem: CapProblem,
    z: complex,
    *,
    tol: float = 1e-10,
    max_iter: int = 5000,
) -> float:
    """Discrete resolvent norm 1/sigma_min(A - z).

    Power iteration on (A - z)^{-H} (A - z)^{-1} through a sparse LU
    factorization; the estimate approaches the true norm from below, so
    an under-converged value can never overstate the norm.  An exactly
    singular shift reports +inf.
    """
    matrix = discretize_sparse(problem) - complex(z) * sp.identity(
        problem.n_points, dtype=complex, format="csc"
    )
    try:
        lu = spla.splu(matrix.tocsc())
    except RuntimeError:
        return float("inf")
    rng = np.random.default_rng(1234)
    vec = rng.standard_normal(problem.n_points) + 0.25
    vec = vec / np.linalg.norm(vec)
    sigma_sq = 0.0
    for _ in range(max_iter):
        forward = lu.solve(vec)
        back = lu.solve(forward, trans="H")
        new_sigma_sq = float(np.real(np.vdot(vec, back)))
        norm = np.linalg.norm(back)
        if norm == 0.0 or not math.isfinite(norm):
            return float("inf")
        vec = back / norm
        if abs(new_sigma_sq - sigma_sq) <= tol * abs(new_sigma_sq):
            sigma_sq = new_sigma_sq
            break
        sigma_sq = new_sigma_sq
    if sigma_sq <= 0.0:
        return float("inf")
    return math.sqrt(sigma_sq)


def saddle_generator(problem: CapProblem) -> np.ndarray:
    """Barrier-top linearization [[0, 2m], [-v'', 0]] of the flow field.

    Its positive eigenvalue sqrt(2 m |v''|) is the problem's normal
    expansion rate (the ``exponent`` field).
    """
    return np.array(
        [
            [0.0, 2.0 * problem.mass_top],
            [-problem.potential_curvature, 0.0],
        ]
    )


def gaussian_state(
    problem: CapProblem, center: float | None = None, width: float | None = None
) -> np.ndarray:
    """Unit-norm Gaussian node vector, by default at the barrier top with
    the barrier's natural width sqrt(h / exponent), narrowed when needed
    so the tails stay inside the absorber-free window."""
    if center is None:
        center = problem.barrier_top
    if width is None:
        if problem.exponent > 0.0:
            width = math.sqrt(problem.h / problem.exponent)
        else:
            width = 0.1 * problem.length
        # keep 4 sigma inside the flat window on both sides
        room = min(center - problem.flat_lo, problem.flat_hi - center)
        if room > 0.0:
            width = min(width, 0.25 * room)
    state = np.exp(-((problem.x - center) ** 2) / (2.0 * width * width))
    state = state.astype(complex)
    return state / np.linalg.norm(state)


def slowest_mode(problem: CapProblem, *, window: float = DEFAULT_WINDOW):
    """Window eigenpair closest to the axis, as (z, unit eigenvector)."""
    if problem.n_points > DENSE_CAP:
        raise DomainError("slowest-mode extraction needs a dense-size grid")
    matrix = discretize(problem)
    zs, vecs = sla.eig(matrix)
    keep = np.flatnonzero(np.abs(zs.real) < window)
    if keep.size == 0:
        raise ConvergenceFailure(f"no eigenvalues inside |Re z| < {window:g}")
    best = keep[np.argmax(zs.imag[keep])]
    vec = vecs[:, best]
    return complex(zs[best]), vec / np.linalg.norm(vec)


def evolve_norms(
    problem: CapProblem,
    initial: np.ndarray,
    times: np.ndarray,
    *,
    rtol: float = 1e-9,
    atol: float = 1e-12,
) -> np.ndarray:
    """Norm history of u' = -(i/h) A u from ``initial`` at the given times.

    Integrates the real/imaginary stacking with the banded sparse
    operator; adaptive high-order explicit stepping.
    """
    a_real, absorber = _assemble(problem)
    h = problem.h
    initial = np.asarray(initial, dtype=complex)
    if initial.shape != (problem.n_points,):
        raise DomainError(
            f"initial state has shape {initial.shape}, "
            f"expected ({problem.n_points},)"
        )

    def rhs(_t, y):
        re, im = np.split(y, 2)
        return np.concatenate(
            [
                (a_real @ im - absorber * re) / h,
                (-(a_real @ re) - absorber * im) / h,
            ]
        )

    times = np.asarray(times, dtype=float)
    y0 = np.concatenate([initial.real, initial.imag])
    sol = solve_ivp(
        rhs,
        (float(times[0]), float(times[-1])),
        y0,
        method="DOP853",
        t_eval=times,
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:
        raise StepFailure(f"semigroup integration failed: {sol.message}")
    re, im = np.split(sol.y, 2, axis=0)
    return np.sqrt(np.sum(re * re + im * im, axis=0))


def semigroup_decay(
    problem: CapProblem,
    initial: np.ndarray | None = None,
    t_final: float = 10.0,
    *,
    fit_start: float = 0.5,
    rtol: float = 1e-9,
    atol: float = 1e-12,
    support_tol: float | None = 1e-2,
) -> float:
    """Fitted exponential decay rate of the absorbed evolution.

    Evolves the state, then fits the slope of log||u|| on the trailing
    [fit_start * t_final, t_final] window.  Localized initial data must
    sit in the absorber-free region (relative mass outside below
    ``support_tol``); pass ``support_tol=None`` for states with genuine
    exterior tails such as computed eigenvectors.
    """
    if t_final <= 0.0:
        raise DomainError(f"final time must be positive, got {t_final:g}")
    if initial is None:
        initial = gaussian_state(problem)
    initial = np.asarray(initial, dtype=complex)
    total = np.linalg.norm(initial)
    if total == 0.0:
        raise DomainError("initial state is zero")
    if support_tol is not None:
        outside = (problem.x < problem.flat_lo) | (problem.x > problem.flat_hi)
        if np.linalg.norm(initial[outside]) > support_tol * total:
            raise DomainError(
                "initial state leaks into the absorber region beyond "
                f"{support_tol:g} relative mass"
            )
    times = np.linspace(0.0, t_final, 161)
    norms = evolve_norms(problem, initial, times, rtol=rtol, atol=atol)
    mask = (times >= fit_start * t_final) & (norms > 1e-280)
    if np.count_nonzero(mask) < 8:
        raise ConvergenceFailure(
            "decay fit window has too few usable samples; shorten t_final"
        )
    slope = float(np.polyfit(times[mask], np.log(norms[mask]), 1)[0])
    alpha = -slope
    if alpha < -1e-8:
        raise ConvergenceFailure(f"fitted rate {alpha:.3e} is negative")
    return max(alpha, 0.0)
