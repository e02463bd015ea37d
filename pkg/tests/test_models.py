"""Model-wrapper tests: closed forms, stencil oracles, perturbation bounds."""

import numpy as np
import pytest

from nhtrap import models
from nhtrap.errors import DomainError
from nhtrap.kerr import KerrParams


def fd_gradient(f, y, h=1e-6):
    out = np.zeros(len(y))
    for i in range(len(y)):
        e = np.zeros(len(y))
        e[i] = h
        out[i] = (f(y + e) - f(y - e)) / (2.0 * h)
    return out


def check_model_consistency(model, points, tol=2e-5):
    for y in points:
        g = model.gradient(y)
        fd = fd_gradient(model.evaluate, y)
        scale = 1.0 + np.max(np.abs(g))
        assert np.max(np.abs(g - fd)) < tol * scale
        H = model.hessian(y)
        assert np.max(np.abs(H - H.T)) < 1e-10 * (1.0 + np.max(np.abs(H)))
        h = 1e-6
        for i in range(len(y)):
            e = np.zeros(len(y))
            e[i] = h
            col = (model.gradient(y + e) - model.gradient(y - e)) / (2 * h)
            assert np.max(np.abs(col - H[:, i])) < tol * (
                1.0 + np.max(np.abs(H))
            )


class TestToyModel:
    def test_closed_forms(self):
        m = models.toy_barrier_model()
        y = np.asarray([1.5, -0.7])
        assert m.evaluate(y) == pytest.approx((-0.7) ** 2 - 1.5**2, abs=1e-14)
        assert np.allclose(m.gradient(y), [-3.0, -1.4], atol=1e-14)
        assert np.allclose(m.hessian(y), [[-2.0, 0.0], [0.0, 2.0]], atol=1e-14)
        assert np.allclose(m.hamilton_rhs(y), [-1.4, 3.0], atol=1e-14)


class TestRadialPotential:
    def test_static_frozen_values(self):
        p = KerrParams()
        v, v1, v2, v3 = models.radial_potential_derivs(p, 0.0, 3.0)
        assert v == pytest.approx(-27.0, abs=1e-12)
        assert v1 == pytest.approx(0.0, abs=1e-12)
        assert v2 == pytest.approx(-18.0, abs=1e-12)
        assert models.radial_potential(p, 0.0, 4.0) == pytest.approx(
            -32.0, abs=1e-12
        )

    def test_mass_scaling(self):
        p = KerrParams(mass=2.0)
        assert models.radial_potential(p, 0.0, 8.0) == pytest.approx(
            -32.0 * 4.0, abs=1e-10
        )
        v, v1, v2, _ = models.radial_potential_derivs(p, 0.0, 6.0)
        assert v == pytest.approx(-27.0 * 4.0, abs=1e-10)
        assert v1 == pytest.approx(0.0, abs=1e-11)

    def test_derivative_chain_stencils(self):
        rng = np.random.default_rng(5)
        for spin in (0.0, 0.4, 0.8):
            p = KerrParams(1.0, spin)
            rs = rng.uniform(2.4, 7.0, 12)
            betas = rng.uniform(-5.0, 5.0, 12)
            h = 1e-5
            for r, b in zip(rs, betas):
                v0, v1, v2, v3 = models.radial_potential_derivs(p, b, r)
                fd1 = (
                    models.radial_potential(p, b, r + h)
                    - models.radial_potential(p, b, r - h)
                ) / (2 * h)
                fd2 = (
                    models.radial_potential_derivs(p, b, r + h)[1]
                    - models.radial_potential_derivs(p, b, r - h)[1]
                ) / (2 * h)
                fd3 = (
                    models.radial_potential_derivs(p, b, r + h)[2]
                    - models.radial_potential_derivs(p, b, r - h)[2]
                ) / (2 * h)
                scale = 1.0 + abs(v1) + abs(v2) + abs(v3)
                assert abs(fd1 - v1) < 1e-5 * scale
                assert abs(fd2 - v2) < 1e-5 * scale
                assert abs(fd3 - v3) < 1e-4 * scale


class TestReducedModel:
    def test_consistency(self):
        rng = np.random.default_rng(17)
        for spin, beta in ((0.0, 0.0), (0.3, 2.0), (0.6, -3.0)):
            m = models.reduced_kerr_model(KerrParams(1.0, spin), beta)
            pts = np.column_stack(
                [rng.uniform(2.5, 6.0, 8), rng.uniform(-1.0, 1.0, 8)]
            )
            check_model_consistency(m, pts)

    def test_energy_conserved_matches_symbol(self):
        m = models.reduced_kerr_model(KerrParams(), 1.0)
        y = np.asarray([3.3, 0.2])
        assert "energy" in m.conserved_list
        assert m.conserved_list["energy"](y) == pytest.approx(
            m.evaluate(y), abs=1e-14
        )


class TestFullModel:
    def test_consistency(self):
        rng = np.random.default_rng(23)
        for spin in (0.0, 0.5):
            m = models.full_kerr_model(KerrParams(1.0, spin))
            pts = np.column_stack(
                [
                    rng.uniform(2.6, 6.0, 6),
                    rng.uniform(0.6, np.pi - 0.6, 6),
                    rng.uniform(0, 2 * np.pi, 6),
                    rng.uniform(-1, 1, 6),
                    rng.uniform(-3, 3, 6),
                    rng.uniform(-4, 4, 6),
                ]
            )
            check_model_consistency(m, pts)

    def test_chart_margin_sign(self):
        m = models.full_kerr_model(KerrParams())
        inside = np.asarray([3.0, np.pi / 2, 0.0, 0.0, 0.0, 0.0])
        outside = np.asarray([2.0, np.pi / 2, 0.0, 0.0, 0.0, 0.0])
        assert m.chart_margin(inside) > 0.0
        assert m.chart_margin(outside) <= 0.0

    def test_conserved_triple_registered(self):
        m = models.full_kerr_model(KerrParams(1.0, 0.2))
        assert set(m.conserved_list) == {"p", "beta", "carter"}


class TestRadialEffectiveModel:
    def test_barrier_top_values(self):
        m = models.radial_effective_model()
        y = np.asarray([3.0, 0.0])
        # v(3) = 0, m_w(3) = 1/9 for the k_ang = 27 normalization
        assert m.evaluate(y) == pytest.approx(0.0, abs=1e-13)
        g = m.gradient(y)
        assert g[0] == pytest.approx(0.0, abs=1e-13)

    def test_consistency(self):
        rng = np.random.default_rng(29)
        m = models.radial_effective_model()
        pts = np.column_stack(
            [rng.uniform(2.4, 6.0, 10), rng.uniform(-1.0, 1.0, 10)]
        )
        check_model_consistency(m, pts)


class TestBumpPattern:
    def test_support_and_normalization(self):
        b = models.BumpPattern(seed=4, center=(3.0, 0.0), span=0.6)
        # bump centers sit within 0.7*span of the center, widths below
        # 0.9*span, so the support ends inside the 1.6*span box
        assert b.value(3.0 + 1.2, 0.0) == 0.0
        assert b.value(3.0 - 1.2, 0.0) == 0.0
        assert b.value(3.0, 1.2) == 0.0
        xs = np.linspace(3.0 - 1.2, 3.0 + 1.2, 161)
        ys = np.linspace(-1.2, 1.2, 161)
        vals = np.abs(b.value(xs[:, None], ys[None, :]))
        assert float(np.max(vals)) <= 1.0 + 1e-12
        assert float(np.max(vals)) > 0.8  # sup-normalized

    def test_seed_determinism(self):
        b1 = models.BumpPattern(seed=12, center=(3.0, 0.0), span=0.6)
        b2 = models.BumpPattern(seed=12, center=(3.0, 0.0), span=0.6)
        b3 = models.BumpPattern(seed=13, center=(3.0, 0.0), span=0.6)
        assert b1.value(3.1, 0.05) == b2.value(3.1, 0.05)
        assert b1.value(3.1, 0.05) != b3.value(3.1, 0.05)

    def test_gradient_hessian_stencils(self):
        b = models.BumpPattern(seed=8, center=(3.0, 0.0), span=0.6)
        h = 1e-6
        for x, y in ((3.05, 0.02), (2.9, -0.1), (3.2, 0.15)):
            gx, gy = b.gradient(x, y)
            fx = (b.value(x + h, y) - b.value(x - h, y)) / (2 * h)
            fy = (b.value(x, y + h) - b.value(x, y - h)) / (2 * h)
            assert abs(gx - fx) < 2e-5 * (1 + abs(gx))
            assert abs(gy - fy) < 2e-5 * (1 + abs(gy))
            hxx, hxy, hyy = b.hessian(x, y)
            fxx = (b.gradient(x + h, y)[0] - b.gradient(x - h, y)[0]) / (2 * h)
            fxy = (b.gradient(x, y + h)[0] - b.gradient(x, y - h)[0]) / (2 * h)
            fyy = (b.gradient(x, y + h)[1] - b.gradient(x, y - h)[1]) / (2 * h)
            scale = 1 + abs(hxx) + abs(hyy)
            assert abs(hxx - fxx) < 5e-5 * scale
            assert abs(hxy - fxy) < 5e-5 * scale
            assert abs(hyy - fyy) < 5e-5 * scale


class TestPerturbedModel:
    def test_epsilon_bound(self):
        with pytest.raises(DomainError):
            models.perturbed_reduced_model(KerrParams(), 0.0, 0.06, seed=1)

    def test_reduces_to_base_at_zero(self):
        base = models.reduced_kerr_model(KerrParams(), 1.0)
        pert = models.perturbed_reduced_model(KerrParams(), 1.0, 0.0, seed=1)
        y = np.asarray([3.1, 0.1])
        assert pert.evaluate(y) == pytest.approx(base.evaluate(y), abs=1e-14)

    def test_perturbation_size(self):
        eps = 0.03
        base = models.reduced_kerr_model(KerrParams(), 1.0)
        pert = models.perturbed_reduced_model(KerrParams(), 1.0, eps, seed=2)
        ys = np.column_stack(
            [np.linspace(2.8, 3.2, 15), np.linspace(-0.2, 0.2, 15)]
        )
        diffs = [abs(pert.evaluate(y) - base.evaluate(y)) for y in ys]
        assert max(diffs) <= eps + 1e-12
        assert max(diffs) > 0.0
