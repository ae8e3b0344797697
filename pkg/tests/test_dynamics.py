from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chdsharp import grid as G
from chdsharp.diagnostics import energy_total
from chdsharp.dynamics import (InitialData, ModelSpec, Numerics, SimState, SourceSpec, Stepper,
                               Variant, ellipse_signed_distance, initial_state, mobility_bounds,
                               n_steps, run, splitmix64, uniform01, with_T)
from chdsharp.elliptic import LinSolveConfig
from chdsharp.errors import ConfigError, StepError
from chdsharp.grid import Faces, GridSpec

DIRECT = LinSolveConfig(method="direct")


class TestVariant:
    def test_constructors(self):
        assert Variant.darcy().kind == "darcy"
        assert Variant.brinkman(0.2).eta_for(0.5) == 0.2
        assert Variant.brinkman_scaled(2.0).eta_for(0.1) == pytest.approx(0.01)
        assert Variant.zero_velocity().eta_for(0.1) == 0.0
        assert Variant.brinkman(1.0).is_brinkman and not Variant.darcy().is_brinkman

    @pytest.mark.parametrize("args", [("stokes",), ("brinkman",), ("brinkman", -1.0),
                                      ("brinkman_scaled", None, 0.0)])
    def test_rejects(self, args):
        with pytest.raises(ConfigError):
            Variant(*args)


class TestModelSpec:
    @pytest.mark.parametrize("kw", [dict(eps=0.0), dict(eps=0.1, chi=-1.0),
                                    dict(eps=0.1, K=0.0), dict(eps=0.1, T_end=-1.0)])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            ModelSpec(**kw)

    def test_default_mobilities(self):
        m = ModelSpec(eps=0.1)
        np.testing.assert_array_equal(m.m(np.array([-3.0, 0.5])), [1.0, 1.0])
        assert mobility_bounds(None) == (1.0, 1.0)

    def test_mobility_bounds(self):
        lo, hi = mobility_bounds(lambda s: 1 + 0.5 * s ** 2)
        assert lo == pytest.approx(1.0) and hi == pytest.approx(3.0)
        assert math.isnan(mobility_bounds(lambda s: np.where(s > 0, np.inf, 1.0))[0])


class TestSources:
    def test_demeaned(self):
        g = GridSpec.rect(6, 4)
        X, Y = g.cell_centers()
        src = SourceSpec(U=lambda x, y, t: 1 + x, S=lambda x, y, t: 1 + x, H=lambda x, y, t: 2 + y)
        assert abs(src.U_field(X, Y).mean()) < 1e-15
        assert abs(src.H_field(X, Y, 0.0).mean()) < 1e-15
        assert src.S_field(X, Y, 0.0).mean() == pytest.approx(1.5)

    def test_scalar_broadcast(self):
        g = GridSpec.line(5)
        X, Y = g.cell_centers()
        s = SourceSpec(S=lambda x, y, t: 2.0 * t).S_field(X, Y, 0.5)
        assert s.shape == g.shape and np.all(s == 1.0)


class TestRandom:
    def test_splitmix_reference_vector(self):
        # published reference outputs for seed 0
        out = splitmix64(0, 3)
        assert [int(v) for v in out] == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4,
                                         0x06C45D188009454F]

    def test_uniform_range_and_determinism(self):
        u = uniform01(42, 10_000)
        assert u.min() >= 0.0 and u.max() < 1.0
        assert abs(u.mean() - 0.5) < 0.02
        np.testing.assert_array_equal(u, uniform01(42, 10_000))
        assert not np.array_equal(u, uniform01(43, 10_000))


class TestEllipseDistance:
    def brute(self, x, y, a, b, n=200_000):
        t = np.linspace(0, 2 * np.pi, n, endpoint=False)
        return np.hypot(x - a * np.cos(t), y - b * np.sin(t)).min()

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-0.6, 0.6), st.floats(-0.6, 0.6), st.floats(0.1, 0.4), st.floats(1.0, 2.5))
    def test_matches_brute_force(self, x, y, b, ratio):
        a = b * ratio
        d = float(ellipse_signed_distance(np.array(x), np.array(y), a, b))
        inside = (x / a) ** 2 + (y / b) ** 2 < 1
        assert abs(d) == pytest.approx(self.brute(x, y, a, b), abs=1e-6)
        assert (d > 0) == inside or abs(d) < 1e-9

    def test_circle_and_centre(self):
        assert float(ellipse_signed_distance(np.array(0.0), np.array(0.0), 0.3, 0.3)) == 0.3
        assert float(ellipse_signed_distance(np.array(0.0), np.array(0.0), 0.3, 0.2)) == \
            pytest.approx(0.2)

    def test_swapped_axes(self):
        d1 = ellipse_signed_distance(np.array(0.1), np.array(0.05), 0.3, 0.2)
        d2 = ellipse_signed_distance(np.array(0.05), np.array(0.1), 0.2, 0.3)
        assert float(d1) == pytest.approx(float(d2), abs=1e-12)


class TestInitialData:
    def test_strip_profile_1d(self):
        g = GridSpec.line(64)
        phi = InitialData("strip", match_mean=False).phi0(g, 0.05)
        X, _ = g.cell_centers()
        np.testing.assert_allclose(phi, np.tanh(3 * (X - 0.5) / (4 * 0.05)))

    @pytest.mark.parametrize("kind", ["strip", "circle", "random"])
    def test_mean_matching(self, kind):
        g = GridSpec.rect(24, 24)
        phi = InitialData(kind, u0=0.1).phi0(g, 0.05)
        assert phi.mean() == pytest.approx(0.1, abs=1e-12)
        assert np.abs(phi).max() < 1.0

    def test_ellipse_axes(self):
        g = GridSpec.rect(100, 100)
        phi = InitialData("circle", radius=0.2, aspect=1.5, match_mean=False).phi0(g, 0.02)
        X, Y = g.cell_centers()
        row = phi[50]
        xs = X[50][row > 0]
        assert xs.min() == pytest.approx(0.2, abs=0.011) and xs.max() == pytest.approx(0.8,
                                                                                     abs=0.011)

    def test_random_seeded(self):
        g = GridSpec.rect(8, 8)
        a = InitialData("random", seed=7).phi0(g, 0.1)
        np.testing.assert_array_equal(a, InitialData("random", seed=7).phi0(g, 0.1))

    def test_theta_from_sigma(self):
        g = GridSpec.line(16)
        init = InitialData("strip", sigma0=lambda x, y, phi: 0.2 * phi)
        phi, theta = init.build(g, ModelSpec(eps=0.1, chi=0.5))
        np.testing.assert_allclose(theta, 0.2 * phi - 0.5 * phi)

    @pytest.mark.parametrize("kw", [dict(kind="blob"), dict(u0=1.0), dict(aspect=0.5),
                                    dict(width=0.0)])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            InitialData(**kw)


class TestNumerics:
    @pytest.mark.parametrize("kw", [dict(dt=0.0), dict(dt=1e-3, S0=-1.0),
                                    dict(dt=1e-3, advection="weno"), dict(dt=1e-3, cfl=0.0)])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            Numerics(**kw)

    def test_n_steps(self):
        assert n_steps(0.0, 0.1) == 0
        assert n_steps(0.3, 0.1) == 3
        assert n_steps(1e-9, 0.1) == 1


def sources_2d(H=True):
    return SourceSpec(U=lambda x, y, t: 0.5 * np.cos(np.pi * x),
                      S=lambda x, y, t: np.cos(np.pi * y) * (1 + t),
                      H=(lambda x, y, t: 0.5 * np.cos(np.pi * x) * np.cos(np.pi * y)) if H
                      else None)


class TestStepper:
    def make(self, variant=Variant.darcy(), sources=None, chi=0.2, n=16, dt=1e-3, method="cg"):
        g = GridSpec.rect(n, n)
        model = ModelSpec(eps=0.1, chi=chi, variant=variant, sources=sources or SourceSpec())
        num = Numerics(dt=dt, linsolve=LinSolveConfig(rel_tol=1e-11, abs_tol=1e-14,
                                                      method=method))
        st_ = Stepper(g, model, num)
        return g, model, st_, st_.initial_state(InitialData("circle", u0=-0.2, radius=0.3))

    def test_mass_without_sources(self):
        g, _, st_, s = self.make()
        m0 = s.phi.mean()
        for _ in range(20):
            s = st_.step(s)
        assert abs(s.phi.mean() - m0) <= 1e-13

    def test_mass_balance_with_sources(self):
        g, model, st_, s = self.make(sources=sources_2d())
        m, sig = s.phi.mean(), s.sigma(model.chi).mean()
        for _ in range(20):
            m += 1e-3 * (st_.U * s.phi).mean()
            sig += 1e-3 * st_.S_at(s.t).mean()
            s = st_.step(s)
        assert abs(s.phi.mean() - m) <= 1e-13
        assert abs(s.sigma(model.chi).mean() - sig) <= 1e-12

    def test_state_carries_own_velocity(self):
        g, model, st_, s = self.make(sources=sources_2d())
        s1 = st_.step(s)
        v, p = st_.velocity(s1.phi, s1.mu, s1.theta, s1.t)
        np.testing.assert_allclose(s1.v.ravel(), v.ravel(), atol=1e-12)
        H = model.sources.H_field(*g.cell_centers(), s1.t)
        np.testing.assert_allclose(G.div_face_to_cc(g, s1.v), H, atol=1e-8)
        assert s1.v.wall_max() == 0.0

    def test_brinkman_is_solenoidal(self):
        g, _, st_, s = self.make(variant=Variant.brinkman(0.1), sources=sources_2d(H=False))
        s = st_.step(s)
        assert np.abs(G.div_face_to_cc(g, s.v)).max() < 1e-8

    def test_zero_velocity(self):
        _, _, st_, s = self.make(variant=Variant.zero_velocity())
        s = st_.step(s)
        assert s.v.max_abs() == 0.0 and np.all(s.p == 0)

    def test_backends_agree(self):
        a = self.make()[2:]
        b = self.make(method="direct")[2:]
        sa, sb = a[0].step(a[1]), b[0].step(b[1])
        np.testing.assert_allclose(sa.phi, sb.phi, atol=1e-9)
        np.testing.assert_allclose(sa.theta, sb.theta, atol=1e-9)

    def test_cfl_guard(self):
        g, _, st_, s = self.make()
        fast = SimState(s.phi, s.mu, s.theta, Faces.full(g, 1e4).zero_walls(), s.p)
        with pytest.raises(StepError, match="CFL"):
            st_.step(fast)

    def test_deterministic(self):
        _, _, a, sa = self.make(sources=sources_2d())
        _, _, b, sb = self.make(sources=sources_2d())
        for _ in range(3):
            sa, sb = a.step(sa), b.step(sb)
        assert sa.phi.tobytes() == sb.phi.tobytes()

    def test_zero_velocity_energy_decreases(self):
        g = GridSpec.line(64)
        model = ModelSpec(eps=0.05, variant=Variant.zero_velocity())
        st_ = Stepper(g, model, Numerics(dt=1e-4, linsolve=DIRECT))
        s = st_.initial_state(InitialData("strip", modulation=0.3, width=2.0))
        e = [energy_total(g, model, s.phi, s.theta)]
        for _ in range(50):
            s = st_.step(s)
            e.append(energy_total(g, model, s.phi, s.theta))
        assert np.all(np.diff(e) <= 1e-12 * abs(e[0]))


class TestRun:
    def test_zero_horizon(self):
        g = GridSpec.line(16)
        model = ModelSpec(eps=0.1)
        res = run(g, model, InitialData(), Numerics(dt=1e-3))
        assert res.steps == 0 and len(res.records) == 1 and res.state.t == 0.0

    def test_reaches_end_time(self):
        g = GridSpec.line(16)
        model = with_T(ModelSpec(eps=0.1), 0.01)
        calls = []
        res = run(g, model, InitialData(), Numerics(dt=1e-3), on_step=lambda a, b: calls.append(1))
        assert res.steps == 10 and len(calls) == 10
        assert res.state.t == pytest.approx(0.01)

    def test_initial_state_helper(self):
        g = GridSpec.line(8)
        s = initial_state(g, ModelSpec(eps=0.2), InitialData())
        assert s.step == 0 and s.all_finite()
