from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from chdsharp.errors import ConfigError
from chdsharp.potential import (DoubleWell, WTransform, discover_constants, property_suite,
                                psi_tilde)


@pytest.fixture(scope="module")
def well():
    return DoubleWell.quartic()


@pytest.fixture(scope="module")
def wt(well):
    return WTransform(well)


class TestDoubleWell:
    def test_minima(self, well):
        assert well.psi(1.0) == 0.0 and well.psi(-1.0) == 0.0
        assert well.dpsi(1.0) == 0.0 and well.dpsi(-1.0) == 0.0

    def test_center_value(self, well):
        assert well.psi(0.0) == pytest.approx(9.0 / 32.0, abs=1e-15)

    def test_normalization(self, well):
        assert abs(well.surface_tension() - 1.0) <= 1e-8

    def test_unnormalized_scale(self):
        assert DoubleWell.quartic(1.0).surface_tension() == pytest.approx(4 * math.sqrt(2) / 3,
                                                                         rel=1e-10)

    def test_derivatives_match_finite_differences(self, well):
        y = np.linspace(-3, 3, 61)
        h = 1e-6
        np.testing.assert_allclose(well.dpsi(y), (well.psi(y + h) - well.psi(y - h)) / (2 * h),
                                   rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(well.ddpsi(y), (well.dpsi(y + h) - well.dpsi(y - h)) / (2 * h),
                                   rtol=1e-6, atol=1e-8)

    def test_rejects_bad_scale(self):
        with pytest.raises(ConfigError):
            DoubleWell.quartic(0.0)


class TestPsiTilde:
    def test_equals_psi_on_unit_interval(self, well):
        y = np.linspace(-1, 1, 2001)
        np.testing.assert_array_equal(psi_tilde(well, y), well.psi(y))

    def test_zeros(self, well):
        assert psi_tilde(well, 1.0) == 0.0 and psi_tilde(well, -1.0) == 0.0

    def test_cap(self, well):
        assert psi_tilde(well, 10.0) == pytest.approx(101.0)
        assert well.psi(10.0) == pytest.approx(9.0 / 32.0 * 99.0 ** 2)


class TestWTransform:
    def test_endpoints(self, wt):
        assert wt.w_of(-1.0) == pytest.approx(0.0, abs=1e-14)
        assert wt.w_of(1.0) == pytest.approx(1.0, abs=1e-10)
        assert wt.w_of(0.0) == pytest.approx(0.5, abs=1e-10)

    def test_table_matches_quad(self, wt):
        ys = np.linspace(-6, 6, 97)
        ref = np.array([wt.w_of(y) for y in ys])
        np.testing.assert_allclose(wt.w_array(ys), ref, rtol=1e-11, atol=1e-11)

    def test_independent_oracle(self, well, wt):
        # direct quadrature of the capped integrand, split at the cap kinks
        kinks = sorted(k for k in wt.kinks if -1.0 < k < 4.0)
        pts = [-1.0] + kinks + [4.0]
        total = 0.0
        for a, b in zip(pts, pts[1:]):
            total += integrate.quad(lambda s: math.sqrt(2 * min(well.psi(s), 1 + s * s)), a, b,
                                    epsabs=1e-13)[0]
        assert wt(4.0) == pytest.approx(total, rel=1e-10)

    def test_inverse_points(self, wt):
        assert wt.w_inv(0.0) == pytest.approx(-1.0, abs=1e-5)
        assert wt.w_inv(1.0) == pytest.approx(1.0, abs=1e-5)
        assert wt(wt.w_inv(0.0)) == pytest.approx(0.0, abs=1e-11)

    def test_inverse_round_trip(self, wt):
        assert wt.w_inv(wt(0.3)) == pytest.approx(0.3, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-7.5, 7.5).filter(lambda y: abs(abs(y) - 1) > 1e-2))
    def test_round_trip_property(self, wt, y):
        assert wt.w_inv(wt(y)) == pytest.approx(y, abs=1e-9)

    def test_strictly_increasing(self, wt):
        y = np.linspace(-8, 8, 40001)
        w = wt.w_array(y)
        assert np.all(np.diff(w) > 0)

    def test_tail_beyond_table(self, wt):
        assert wt(20.0) > wt(8.0) > wt(2.0)


@pytest.fixture(scope="module")
def report():
    return discover_constants()


class TestConstants:
    def test_c0_near_analytic(self, report):
        assert report.C0 >= 32.0 / 9.0
        assert report.C0 == pytest.approx(32.0 / 9.0, rel=1e-5)

    def test_c1_positive(self, report):
        assert 0.15 < report.C1 < 0.1597

    def test_no_violations(self, report):
        assert report.ok
        assert report.c0_points >= 6000 and report.c1_pairs >= 10_000

    def test_growth_constants(self, report):
        assert report.q == 4.0
        assert report.k0 == pytest.approx(9.0 / 64.0, rel=1e-4)

    def test_deterministic(self, report):
        again = discover_constants()
        assert (again.C0, again.C1) == (report.C0, report.C1)


class TestPropertySuite:
    def test_default_passes(self):
        rows, rep = property_suite()
        assert all(r.passed for r in rows)
        assert rep is not None

    def test_broken_normalization(self):
        rows, _ = property_suite(DoubleWell.quartic(1.0), with_constants=False)
        by = {r.name: r for r in rows}
        assert not by["normalization"].passed
