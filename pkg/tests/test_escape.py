"""Escape-function tests: defining pairs, cutoffs, commutator floor, order checks."""

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from nhtrap import escape as esc
from nhtrap.errors import (
    DomainError,
    GridTooCoarse,
    InvalidNesting,
    NewtonDiverged,
    NotHyperbolic,
    Unbounded,
)
from nhtrap.kerr import KerrParams
from nhtrap.models import (
    HamiltonianModel,
    reduced_kerr_model,
    toy_barrier_model,
)

ROOT3 = math.sqrt(3.0)


@pytest.fixture(scope="module")
def toy():
    return toy_barrier_model()


@pytest.fixture(scope="module")
def toy_pair(toy):
    return esc.build_defining_pair(toy)


@pytest.fixture(scope="module")
def kerr():
    return reduced_kerr_model(KerrParams(mass=1.0, spin=0.0), beta=0.0)


@pytest.fixture(scope="module")
def kerr_pair(kerr):
    return esc.build_defining_pair(kerr, saddle_guess=(3.0, 0.0))


def fd_gradient(f, y, h=1e-6):
    out = np.zeros(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        out[i] = (f(y + e) - f(y - e)) / (2.0 * h)
    return out


class TestBuildDefiningPair:
    def test_toy_exact(self, toy_pair):
        p = toy_pair
        assert np.allclose(p.saddle, [0.0, 0.0], atol=1e-14)
        assert p.mu == pytest.approx(2.0, abs=1e-14)
        assert p.kappa == pytest.approx(1.0, abs=1e-14)
        assert p.gamma_plus == pytest.approx(1.0, abs=1e-14)
        assert p.gamma_minus == pytest.approx(-1.0, abs=1e-14)
        assert p.quad_plus == 0.0
        assert p.quad_minus == 0.0
        assert p.c0 == pytest.approx(2.0, abs=1e-14)
        y = np.asarray([0.3, -0.4])
        assert p.phi_plus(y) == pytest.approx(-0.4 - 0.3, abs=1e-15)
        assert p.phi_minus(y) == pytest.approx(-0.4 + 0.3, abs=1e-15)

    def test_toy_rates_and_bracket_exact(self, toy_pair):
        pts = [
            np.asarray(q)
            for q in [(0.0, 0.0), (0.3, -0.2), (-0.45, 0.45), (0.2, 0.2001)]
        ]
        for q in pts:
            assert toy_pair.c2_plus(q) == 2.0
            assert toy_pair.c2_minus(q) == 2.0
            assert toy_pair.bracket(q) == 2.0

    def test_kerr_frozen_values(self, kerr_pair):
        p = kerr_pair
        assert p.saddle[0] == pytest.approx(3.0, abs=1e-12)
        assert p.saddle[1] == pytest.approx(0.0, abs=1e-12)
        assert p.mu == pytest.approx(6.0 * ROOT3, abs=1e-10)
        assert p.kappa == pytest.approx(ROOT3, abs=1e-12)
        assert p.gamma_plus == pytest.approx(ROOT3, abs=1e-12)
        assert p.gamma_minus == pytest.approx(-ROOT3, abs=1e-12)
        assert p.quad_plus == pytest.approx(-3.849001511564, abs=1e-9)
        assert p.quad_minus == pytest.approx(3.849001511564, abs=1e-9)
        assert p.c0 == pytest.approx(2.0 * ROOT3, abs=1e-12)
        assert p.bracket(p.saddle) == pytest.approx(2.0 * ROOT3, abs=1e-12)

    def test_phi_gradients_match_stencils(self, toy_pair, kerr_pair):
        rng = np.random.default_rng(7)
        for pair in (toy_pair, kerr_pair):
            for _ in range(6):
                y = pair.saddle + rng.uniform(-0.2, 0.2, 2)
                for val, grad in (
                    (pair.phi_plus, pair.grad_phi_plus),
                    (pair.phi_minus, pair.grad_phi_minus),
                ):
                    fd = fd_gradient(val, y)
                    assert np.max(np.abs(grad(y) - fd)) < 2e-9

    def test_rate_relation_residual_quadratic(self, kerr_pair):
        def max_resid(radius):
            worst = 0.0
            for rho in esc.saddle_grid(kerr_pair, radius, 41):
                rp = kerr_pair.hp_phi_plus(rho) + kerr_pair.c2_plus(
                    rho
                ) * kerr_pair.phi_plus(rho)
                rm = kerr_pair.hp_phi_minus(rho) - kerr_pair.c2_minus(
                    rho
                ) * kerr_pair.phi_minus(rho)
                worst = max(worst, abs(rp), abs(rm))
            return worst

        wide = max_resid(0.1)
        assert wide < 0.05
        # halving the disc radius should shrink the worst residual ~4x
        assert max_resid(0.05) < 0.35 * wide

    def test_toy_rate_relation_exact(self, toy_pair):
        for rho in esc.saddle_grid(toy_pair, 0.1, 21):
            assert toy_pair.hp_phi_plus(rho) == pytest.approx(
                -2.0 * toy_pair.phi_plus(rho), abs=1e-15
            )

    def test_chart_agreement_and_mismatch(self, kerr):
        class Chart:
            trapped_radius = 3.0
            normal_exponent = 6.0 * ROOT3

        pair = esc.build_defining_pair(kerr, chart=Chart())
        assert pair.mu == pytest.approx(6.0 * ROOT3, abs=1e-10)
        Chart.normal_exponent = 5.0
        with pytest.raises(NotHyperbolic):
            esc.build_defining_pair(kerr, chart=Chart())

    def test_not_hyperbolic_at_a_minimum(self):
        bowl = HamiltonianModel(
            dimension=2,
            evaluate=lambda y: y[1] ** 2 + y[0] ** 2,
            gradient=lambda y: np.asarray([2.0 * y[0], 2.0 * y[1]]),
            hessian=lambda y: np.asarray([[2.0, 0.0], [0.0, 2.0]]),
            name="bowl",
        )
        with pytest.raises(NotHyperbolic):
            esc.build_defining_pair(bowl)

    def test_newton_diverges_without_critical_point(self):
        slope = HamiltonianModel(
            dimension=2,
            evaluate=lambda y: y[1] ** 2 + y[0],
            gradient=lambda y: np.asarray([1.0, 2.0 * y[1]]),
            hessian=lambda y: np.asarray([[0.0, 0.0], [0.0, 2.0]]),
            name="slope",
        )
        with pytest.raises(NewtonDiverged):
            esc.build_defining_pair(slope)

    def test_antisymmetry_under_swap(self, kerr_pair):
        rng = np.random.default_rng(3)
        sw = kerr_pair.swapped()
        for _ in range(8):
            y = kerr_pair.saddle + rng.uniform(-0.3, 0.3, 2)
            assert sw.bracket(y) == -kerr_pair.bracket(y)

    def test_rescaling_preserves_products(self, kerr_pair):
        doubled = kerr_pair.rescaled(2.0)
        rng = np.random.default_rng(11)
        for _ in range(6):
            y = kerr_pair.saddle + rng.uniform(-0.2, 0.2, 2)
            assert doubled.phi_plus(y) == 2.0 * kerr_pair.phi_plus(y)
            prod = doubled.c_plus(y) * doubled.phi_plus(y)
            assert prod == pytest.approx(
                kerr_pair.c_plus(y) * kerr_pair.phi_plus(y), rel=1e-15
            )
        back = doubled.normalized()
        assert back.scale_plus == 1.0 and back.scale_minus == 1.0
        y = kerr_pair.saddle + np.asarray([0.05, -0.08])
        assert back.c_minus(y) * back.phi_minus(y) == pytest.approx(
            kerr_pair.c_minus(y) * kerr_pair.phi_minus(y), rel=1e-15
        )
        with pytest.raises(DomainError):
            kerr_pair.rescaled(0.0)


class TestManifoldsAndVerify:
    def test_toy_manifolds_are_exact_lines(self, toy_pair):
        for side in (+1, -1):
            pts = esc.manifold_samples(toy_pair, side)
            phi = toy_pair.phi_plus if side > 0 else toy_pair.phi_minus
            assert max(abs(phi(q)) for q in pts) < 1e-12

    def test_kerr_manifold_residuals(self, kerr_pair):
        for side in (+1, -1):
            pts = esc.manifold_samples(kerr_pair, side)
            phi = kerr_pair.phi_plus if side > 0 else kerr_pair.phi_minus
            assert max(abs(phi(q)) for q in pts) < 1e-8

    def test_too_many_points_requested(self, toy_pair):
        with pytest.raises(GridTooCoarse):
            esc.manifold_samples(toy_pair, +1, n_points=100_000)

    def test_verify_toy(self, toy, toy_pair):
        report = esc.verify_defG_relations(
            toy_pair, toy, esc.saddle_grid(toy_pair, 0.3, 31)
        )
        assert report["n_violations"] == 0
        assert report["min_bracket"] == pytest.approx(2.0, abs=1e-14)
        assert report["passed"]

    def test_verify_kerr_bracket_floor(self, kerr, kerr_pair):
        report = esc.verify_defG_relations(
            kerr_pair, kerr, esc.saddle_grid(kerr_pair, 0.05, 41)
        )
        assert report["n_violations"] == 0
        assert report["min_bracket"] >= 0.9 * 2.0 * ROOT3
        assert report["passed"]

    def test_verify_flags_sign_flip(self, toy, toy_pair):
        report = esc.verify_defG_relations(
            toy_pair.swapped(), toy, esc.saddle_grid(toy_pair, 0.3, 21)
        )
        assert not report["passed"]
        assert report["min_bracket"] < 0.0
        assert report["n_violations"] > 0

    def test_flow_monotonicity_of_phi_squares(self, kerr, kerr_pair):
        # forward flow drains phi+^2 and feeds phi-^2 wherever the rates
        # are positive; check the time derivative sign off the graphs
        rng = np.random.default_rng(19)
        checked = 0
        for _ in range(40):
            y = kerr_pair.saddle + rng.uniform(-0.15, 0.15, 2)
            fp = kerr_pair.phi_plus(y)
            fm = kerr_pair.phi_minus(y)
            if abs(fp) < 1e-3 or abs(fm) < 1e-3:
                continue
            assert 2.0 * fp * kerr_pair.hp_phi_plus(y) < 0.0
            assert 2.0 * fm * kerr_pair.hp_phi_minus(y) > 0.0
            checked += 1
        assert checked > 20

    def test_flow_monotonicity_integrated(self, toy, toy_pair):
        y0 = np.asarray([0.08, 0.2])
        sol = solve_ivp(
            lambda t, y: toy.hamilton_rhs(y),
            (0.0, 0.3),
            y0,
            method="DOP853",
            rtol=1e-11,
            atol=1e-13,
        )
        traj = sol.y.T
        fp2 = [toy_pair.phi_plus(q) ** 2 for q in traj]
        fm2 = [toy_pair.phi_minus(q) ** 2 for q in traj]
        assert fp2[-1] < fp2[0]
        assert fm2[-1] > fm2[0]


class TestCutoffsAndSpec:
    def test_cutoff_plateaus_and_monotone(self, kerr_pair):
        cut = esc.Cutoff(
            (float(kerr_pair.saddle[0]), 0.0), kerr_pair.kappa, 0.2, 0.5
        )
        inside = np.asarray([kerr_pair.saddle[0] + 0.05 / ROOT3, 0.05])
        outside = np.asarray([kerr_pair.saddle[0], 0.6])
        assert cut.value(inside) == 1.0
        assert cut.value(outside) == 0.0
        radii = np.linspace(0.2, 0.5, 30)
        vals = [
            cut.value(np.asarray([kerr_pair.saddle[0], r])) for r in radii
        ]
        assert all(a >= b - 1e-15 for a, b in zip(vals, vals[1:]))

    def test_cutoff_gradient_stencil(self, toy_pair):
        cut = esc.Cutoff((0.0, 0.0), 1.0, 0.2, 0.5)
        for y in (np.asarray([0.25, 0.1]), np.asarray([-0.3, 0.2])):
            fd = fd_gradient(cut.value, y)
            assert np.max(np.abs(cut.gradient(y) - fd)) < 1e-8

    def test_cutoff_bad_inputs(self):
        with pytest.raises(DomainError):
            esc.Cutoff((0.0, 0.0), 1.0, 0.5, 0.2)
        with pytest.raises(DomainError):
            esc.Cutoff((0.0, 0.0), 1.0, 0.2, 0.5, order=4)

    def test_spec_guards(self, toy_pair):
        chi = esc.Cutoff((0.0, 0.0), 1.0, 0.2, 0.5)
        chi1 = esc.Cutoff((0.0, 0.0), 1.0, 0.6, 0.9)
        esc.EscapeSpec(h=1e-2, htilde=0.25, chi=chi, chi1=chi1)
        with pytest.raises(DomainError):
            esc.EscapeSpec(h=0.5, htilde=0.25, chi=chi, chi1=chi1)
        with pytest.raises(DomainError):
            esc.EscapeSpec(h=0.0, htilde=0.25, chi=chi, chi1=chi1)
        # chi ramp must finish before the chi1 plateau ends
        tight = esc.Cutoff((0.0, 0.0), 1.0, 0.3, 0.7)
        with pytest.raises(InvalidNesting):
            esc.EscapeSpec(h=1e-2, htilde=0.25, chi=tight, chi1=chi1)


class TestG1:
    def test_toy_report(self, toy, toy_pair):
        g1, report = esc.build_G1(toy, toy_pair)
        assert report["passed"]
        assert report["g1_floor"] >= 1.0 - 1e-12
        assert report["floor_raw"] >= 0.5
        assert report["min_everywhere"] >= -1e-6
        assert report["max_abs_on_core"] <= 1e-10
        # beyond the ramp the pairing is bare: H_p(x xi) = 2(x^2 + xi^2)
        y = np.asarray([0.8, 0.7])
        assert g1.hp(y) == pytest.approx(
            g1.scale * 2.0 * (y[0] ** 2 + y[1] ** 2), rel=1e-12
        )

    def test_kerr_report(self, kerr, kerr_pair):
        _, report = esc.build_G1(kerr, kerr_pair)
        assert report["passed"]
        assert report["scale"] == 1.0
        assert report["g1_floor"] == pytest.approx(1.0934, abs=2e-3)

    def test_nesting_guard(self, toy, toy_pair):
        with pytest.raises(InvalidNesting):
            esc.build_G1(toy, toy_pair, r_inner=0.5, r_outer=0.2)

    def test_gradient_stencil(self, kerr, kerr_pair):
        g1, _ = esc.build_G1(kerr, kerr_pair)
        rng = np.random.default_rng(23)
        for _ in range(5):
            y = kerr_pair.saddle + rng.uniform(-0.6, 0.6, 2)
            fd = fd_gradient(g1, y)
            assert np.max(np.abs(g1.gradient(y) - fd)) < 1e-7


class TestEscapeFunction:
    def test_vanishes_at_saddle(self, toy_pair, kerr_pair):
        for pair in (toy_pair, kerr_pair):
            spec, _ = esc.make_escape_spec(pair, h=1e-2)
            G = esc.build_escape(spec, pair)
            assert abs(G(pair.saddle)) < 1e-14

    def test_toy_log_quotient_value(self, toy_pair):
        spec, _ = esc.make_escape_spec(toy_pair, h=1e-2)
        G = esc.build_escape(spec, toy_pair)
        # on the unstable graph at (0.1, 0.1): phi+ = 0, phi- = 0.2
        assert G(np.asarray([0.1, 0.1])) == pytest.approx(
            math.log(2.0), abs=1e-12
        )

    def test_log_of_h_bound(self, kerr_pair):
        for h in (1e-2, 1e-3):
            spec, _ = esc.make_escape_spec(kerr_pair, h=h)
            G = esc.build_escape(spec, kerr_pair)
            grid = esc.saddle_grid(kerr_pair, 1.0, 41)
            sup_g1 = max(
                abs(spec.chi1.value(q) * spec.G1(q)) for q in grid
            )
            bound = math.log(spec.htilde / h) + spec.C1 * math.log(
                1.0 / h
            ) * sup_g1
            assert max(abs(G(q)) for q in grid) <= bound + 1e-9

    def test_odd_under_swap_in_the_core(self, kerr_pair):
        spec, _ = esc.make_escape_spec(kerr_pair, h=1e-2)
        G = esc.build_escape(spec, kerr_pair)
        G_sw = esc.build_escape(spec, kerr_pair.swapped())
        for q in esc.saddle_grid(kerr_pair, 0.19, 15):
            assert G_sw(q) == pytest.approx(-G(q), abs=1e-13)

    def test_gradient_stencil(self, kerr_pair):
        spec, _ = esc.make_escape_spec(kerr_pair, h=1e-2)
        G = esc.build_escape(spec, kerr_pair)
        # probe the quotient core, the chi ramp, and the chi1 ramp
        for s, ang in ((0.1, 0.3), (0.35, 2.0), (0.75, 4.0)):
            y = kerr_pair.saddle + np.asarray(
                [s * math.cos(ang) / kerr_pair.kappa, s * math.sin(ang)]
            )
            fd = fd_gradient(G, y)
            scale = 1.0 + np.max(np.abs(fd))
            assert np.max(np.abs(G.gradient(y) - fd)) < 2e-7 * scale


class TestCommutatorBound:
    def test_saddle_value_toy(self, toy_pair):
        spec, _ = esc.make_escape_spec(toy_pair, h=1e-2)
        assert esc.saddle_commutator_value(toy_pair, spec) == pytest.approx(
            4.0, abs=1e-10
        )
        # the hatted route must collapse to the same product at the saddle
        assert esc.phi_tilde(toy_pair, spec, toy_pair.saddle) / spec.htilde \
            == pytest.approx(4.0, abs=1e-10)

    def test_saddle_value_kerr(self, kerr_pair):
        spec, _ = esc.make_escape_spec(kerr_pair, h=1e-2)
        assert esc.saddle_commutator_value(kerr_pair, spec) == pytest.approx(
            36.0, abs=1e-8
        )
        assert esc.phi_tilde(kerr_pair, spec, kerr_pair.saddle) / spec.htilde \
            == pytest.approx(36.0, abs=1e-10)

    def test_toy_floor_and_stability(self, toy, toy_pair):
        grid = esc.saddle_grid(toy_pair, 0.3, 41)
        vals = []
        for h in (1e-2, 1e-3, 1e-4):
            spec, _ = esc.make_escape_spec(toy_pair, h=h)
            vals.append(
                esc.commutator_lower_bound(spec, toy_pair, toy, grid)
            )
        assert vals[0] >= 1.0
        for v in vals:
            assert v == pytest.approx(4.0, abs=1e-9)

    def test_kerr_floor_and_stability(self, kerr, kerr_pair):
        grid = esc.saddle_grid(kerr_pair, 0.2, 41)
        vals = []
        for h in (1e-2, 1e-3, 1e-4):
            spec, _ = esc.make_escape_spec(kerr_pair, h=h)
            vals.append(
                esc.commutator_lower_bound(spec, kerr_pair, kerr, grid)
            )
        assert all(v > 0.0 for v in vals)
        mean = sum(vals) / len(vals)
        assert max(abs(v - mean) / mean for v in vals) < 0.10
        assert vals[0] == pytest.approx(31.973347189273, rel=1e-9)
        assert vals[2] == pytest.approx(36.0, abs=1e-9)

    def test_invariance_under_pair_rescaling(self, toy, toy_pair, kerr,
                                             kerr_pair):
        cases = [
            (toy, toy_pair, esc.saddle_grid(toy_pair, 0.3, 21)),
            (kerr, kerr_pair, esc.saddle_grid(kerr_pair, 0.2, 21)),
        ]
        for model, pair, grid in cases:
            spec, _ = esc.make_escape_spec(pair, h=1e-2)
            base = esc.commutator_lower_bound(spec, pair, model, grid)
            for s in (0.5, 2.0):
                scaled = esc.commutator_lower_bound(
                    spec, pair.rescaled(s), model, grid
                )
                assert scaled == pytest.approx(base, rel=1e-12)

    def test_grid_validation(self, toy, toy_pair):
        spec, _ = esc.make_escape_spec(toy_pair, h=1e-2)
        with pytest.raises(DomainError):
            esc.commutator_lower_bound(
                spec, toy_pair, toy, np.zeros((0, 2))
            )

    def test_saddle_grid_shape(self, kerr_pair):
        grid = esc.saddle_grid(kerr_pair, 0.2, 21)
        assert np.allclose(grid[0], kerr_pair.saddle)
        radii = [kerr_pair.adapted_radius(q) for q in grid]
        assert max(radii) <= 0.2 + 1e-12


class TestOrderFunction:
    def test_identically_zero_escape(self, toy_pair):
        spec, _ = esc.make_escape_spec(toy_pair, h=1e-3)
        rng = np.random.default_rng(0)
        pairs = esc.sample_disc_pairs(toy_pair, 0.2, 500, rng)
        C, N = esc.order_function_check(
            spec, toy_pair, pairs, escape=lambda rho: 0.0
        )
        assert (C, N) == (1.0, 0)

    def test_toy_quotient_only_growth(self, toy_pair):
        spec, _ = esc.make_escape_spec(toy_pair, h=1e-3, with_g1=False)
        rng = np.random.default_rng(0)
        pairs = esc.sample_disc_pairs(toy_pair, 0.2, 10_000, rng)
        _, N = esc.order_function_check(spec, toy_pair, pairs)
        assert N <= 2

    def test_sweeps_bounded_and_stable(self, toy_pair, kerr_pair):
        for pair in (toy_pair, kerr_pair):
            report = esc.order_function_sweep(
                pair, [1e-2, 1e-3, 1e-4], n_pairs=10_000, seed=0
            )
            assert report["passed"]
            assert report["N"] <= 4
            assert report["C_spread"] < 2.0
            for row in report["per_h"]:
                assert row["N"] <= 4

    def test_unbounded_flags_defects(self, toy_pair):
        spec, _ = esc.make_escape_spec(toy_pair, h=1e-3)
        rng = np.random.default_rng(0)
        pairs = esc.sample_disc_pairs(toy_pair, 0.2, 200, rng)
        with pytest.raises(Unbounded):
            esc.order_function_check(
                spec, toy_pair, pairs, escape=lambda rho: 1e6 * rho[0]
            )


class TestEscapeReport:
    def test_toy_report_contents(self, toy, toy_pair):
        spec, _ = esc.make_escape_spec(toy_pair, h=1e-2)
        report = esc.escape_report(toy, toy_pair, spec)
        for key in ("c1", "C", "N", "bracket_min", "g1_floor", "violations"):
            assert key in report
        assert report["c1"] == pytest.approx(4.0, abs=1e-9)
        assert report["violations"] == []
        assert report["saddle_value"] == pytest.approx(4.0, abs=1e-10)

    def test_kerr_report_contents(self, kerr, kerr_pair):
        spec, _ = esc.make_escape_spec(kerr_pair, h=1e-2)
        report = esc.escape_report(kerr, kerr_pair, spec)
        assert report["c1"] > 0.0
        assert report["bracket_min"] >= 0.9 * 2.0 * ROOT3
        assert report["violations"] == []
        assert report["N"] <= 4

    def test_report_without_g1(self, toy, toy_pair):
        spec, _ = esc.make_escape_spec(toy_pair, h=1e-2, with_g1=False)
        report = esc.escape_report(toy, toy_pair, spec)
        assert "g1_scale" not in report
        assert report["c1"] == pytest.approx(4.0, abs=1e-9)
