import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mkdvlab.spectral import (
    AliasingError,
    GridField,
    NormSpec,
    SpectralField,
    Trajectory,
    conjugate,
    derivative,
    fl_norm,
    from_grid,
    integrate,
    lp_physical_norm,
    multiply,
    project_high,
    project_low,
    sobolev_norm,
    to_grid,
    xsb_norm,
)

coeff_arrays = st.integers(1, 6).flatmap(
    lambda N: st.lists(
        st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
        min_size=2 * N + 1,
        max_size=2 * N + 1,
    ).map(lambda pairs: np.array([a + 1j * b for a, b in pairs]))
)


def field_from(arr):
    return SpectralField((len(arr) - 1) // 2, arr)


class TestProjections:
    def test_low_keeps_band(self):
        u = SpectralField.from_modes(5, {1: 1.0, 5: 1.0})
        lo = project_low(u, 2)
        assert lo.max_freq == 2
        assert lo.coeff(1) == 1.0 and lo.coeff(5) == 0.0

    def test_low_is_identity_above_band(self, make_field):
        u = make_field(4)
        assert np.allclose(project_low(u, 9).coeffs, u.coeffs)

    def test_disjoint_support(self):
        u = SpectralField.from_modes(3, {3: 1.0})
        assert np.all(project_low(u, 2).coeffs == 0)

    def test_high_complement(self):
        u = SpectralField.from_modes(5, {1: 1.0, 5: 1.0})
        hi = project_high(u, 2)
        assert hi.coeff(5) == 1.0 and hi.coeff(1) == 0.0

    @given(coeff_arrays, st.integers(0, 8))
    def test_split_is_exact(self, arr, K):
        u = field_from(arr)
        lo = project_low(u, K, keep_container=True)
        hi = project_high(u, K)
        assert np.array_equal(lo.coeffs + hi.coeffs, u.coeffs)


class TestTransforms:
    def test_single_exponential(self):
        u = SpectralField.from_modes(1, {1: 1.0})
        g = to_grid(u, 8)
        assert np.allclose(g.samples, np.exp(1j * 2 * np.pi * np.arange(8) / 8))

    def test_round_trip(self, make_field):
        u = make_field(6)
        back = from_grid(to_grid(u, 4 * 6 + 1), 6)
        assert np.max(np.abs(back.coeffs - u.coeffs)) < 1e-13 * np.max(np.abs(u.coeffs))

    def test_aliasing_rejected(self):
        g = GridField(4, np.exp(3j * 2 * np.pi * np.arange(4) / 4))
        with pytest.raises(AliasingError):
            from_grid(g, 2)
        with pytest.raises(AliasingError):
            to_grid(SpectralField.from_modes(3, {3: 1.0}), 4)

    def test_multiply_exact(self, make_field):
        u, v = make_field(3), make_field(4)
        w = multiply(u, v)
        # spot-check one coefficient against the direct convolution
        n = 2
        acc = sum(u.coeff(k) * v.coeff(n - k) for k in range(-3, 4))
        assert abs(w.coeff(n) - acc) < 1e-12 * max(1.0, abs(acc))

    def test_conjugate(self, make_field):
        u = make_field(3)
        g = to_grid(u, 16).samples
        gc = to_grid(conjugate(u), 16).samples
        assert np.allclose(gc, np.conj(g))


class TestNorms:
    def test_fl_single_mode(self):
        u = SpectralField.from_modes(1, {1: 1.0})
        assert fl_norm(u, NormSpec(0.5, 4)) == pytest.approx(2 ** 0.25, rel=1e-12)

    def test_fl_zero(self):
        assert fl_norm(SpectralField.zero(3), NormSpec(1.0, 2)) == 0.0

    def test_fl_two_modes(self):
        u = SpectralField.from_modes(1, {0: 1.0, 1: 1.0})
        assert fl_norm(u, NormSpec(0.0, 2)) == pytest.approx(math.sqrt(2), rel=1e-12)

    def test_fl_infinity(self):
        u = SpectralField.from_modes(2, {0: 3.0, 2: 1.0})
        assert fl_norm(u, NormSpec(0.0, math.inf)) == 3.0

    @given(coeff_arrays, st.floats(-2, 2), st.floats(0, 2), st.floats(1, 8))
    def test_fl_monotone_in_s(self, arr, s, ds, p):
        u = field_from(arr)
        assert fl_norm(u, NormSpec(s, p)) <= fl_norm(u, NormSpec(s + ds, p)) + 1e-12

    @given(coeff_arrays, coeff_arrays, st.floats(1, 6))
    @settings(max_examples=60)
    def test_fl_triangle(self, a, b, p):
        n = min(len(a), len(b))
        u, v = field_from(a[:n]), field_from(b[:n])
        lhs = fl_norm(u + v, NormSpec(0.5, p))
        rhs = fl_norm(u, NormSpec(0.5, p)) + fl_norm(v, NormSpec(0.5, p))
        assert lhs <= rhs * (1 + 1e-12) + 1e-12

    def test_parseval(self, make_field):
        u = make_field(5)
        l2 = lp_physical_norm(u, 2, 2 * 5 + 1)
        assert l2.exact
        assert sobolev_norm(u, 0) ** 2 == pytest.approx(float(l2) ** 2, rel=1e-12)

    def test_l2_single_mode(self):
        u = SpectralField.from_modes(3, {2: 0.5 + 0.5j})
        assert sobolev_norm(u, 0) ** 2 == pytest.approx(2 * np.pi * 0.5, rel=1e-13)

    def test_l4_single_mode(self):
        c = 0.7 - 0.2j
        u = SpectralField.from_modes(3, {2: c})
        assert float(lp_physical_norm(u, 4)) ** 4 == pytest.approx(
            2 * np.pi * abs(c) ** 4, rel=1e-12
        )

    def test_l4_binomial(self):
        # |1+e^{ix}|^4 integrates to 6 * 2pi
        u = SpectralField.from_modes(1, {0: 1.0, 1: 1.0})
        assert float(lp_physical_norm(u, 4)) ** 4 == pytest.approx(12 * np.pi, rel=1e-12)

    def test_quadrature_threshold_stability(self, make_field):
        u = make_field(4)
        base = float(lp_physical_norm(u, 4, 4 * 4 + 1))
        for M in (2 * (4 * 4 + 1), 4 * (4 * 4 + 1)):
            assert float(lp_physical_norm(u, 4, M)) == pytest.approx(base, rel=1e-12)

    def test_inexact_flagged(self, make_field):
        u = make_field(4)
        assert not lp_physical_norm(u, 4, 9).exact

    def test_integral_is_zero_mode(self, make_field):
        u = make_field(3)
        assert integrate(u) == pytest.approx(2 * np.pi * u.coeff(0), rel=1e-14)


class TestDerivative:
    def test_first(self):
        u = SpectralField.from_modes(2, {2: 1.0})
        assert derivative(u).coeff(2) == pytest.approx(2j, rel=1e-14)

    def test_third(self):
        u = SpectralField.from_modes(2, {2: 1.0})
        assert derivative(u, 3).coeff(2) == pytest.approx((2j) ** 3, rel=1e-14)

    def test_composition(self, make_field):
        u = make_field(4)
        assert np.allclose(
            derivative(derivative(u, 1), 2).coeffs, derivative(u, 3).coeffs
        )


class TestSpaceTimeNorm:
    def _free_traj(self, n, T=64, dt=0.02):
        times = np.arange(T) * dt
        coeffs = np.zeros((T, 2 * abs(n) + 3), dtype=complex)
        coeffs[:, n + abs(n) + 1] = np.exp(1j * n ** 3 * times)
        return Trajectory(times, coeffs)

    def test_zero(self):
        times = np.arange(8) * 0.1
        traj = Trajectory(times, np.zeros((8, 5), dtype=complex))
        assert xsb_norm(traj, NormSpec(0.5, 4, b=0.5), (0.0, 0.7)) == 0.0

    def test_free_evolution_peak(self):
        n = 3
        traj = self._free_traj(n)
        tt = traj.times
        dt = tt[1] - tt[0]
        taper = 0.5 * (1 - np.cos(2 * np.pi * np.arange(len(tt)) / (len(tt) - 1)))
        f = np.fft.fft(traj.coeffs[:, n + 4] * taper)
        tau = 2 * np.pi * np.fft.fftfreq(len(tt), d=dt)
        peak = tau[np.argmax(np.abs(f))]
        spacing = tau[1] - tau[0]
        assert abs(peak - n ** 3) <= spacing

    def test_homogeneity(self, make_field):
        times = np.arange(16) * 0.05
        rng = np.random.default_rng(5)
        coeffs = rng.standard_normal((16, 7)) + 1j * rng.standard_normal((16, 7))
        traj = Trajectory(times, coeffs)
        scaled = Trajectory(times, 2.5 * coeffs)
        spec = NormSpec(0.5, 4, b=0.4, q=2)
        a = xsb_norm(traj, spec, (0.0, 0.75))
        b = xsb_norm(scaled, spec, (0.0, 0.75))
        assert b == pytest.approx(2.5 * a, rel=1e-12)

    def test_nonuniform_rejected(self):
        times = np.array([0.0, 0.1, 0.3])
        traj = Trajectory(times, np.zeros((3, 3), dtype=complex))
        with pytest.raises(ValueError):
            xsb_norm(traj, NormSpec(0.5, 4, b=0.5), (0.0, 0.3))
