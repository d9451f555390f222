import numpy as np
import pytest
from hypothesis import given, strategies as st

from mkdvlab import dynamics as dyn
from mkdvlab import energies as en
from mkdvlab.spectral import SpectralField, Trajectory, freqs

ints = st.integers(-50, 50)


class TestResonance:
    def test_examples(self):
        assert dyn.resonance(1, 2, 3) == 180
        assert dyn.resonance(4, -4, 7) == 0
        assert dyn.resonance(5, 7, -2) == 540 == 10 ** 3 - 125 - 343 + 8

    @given(ints, ints, ints)
    def test_factored_equals_cube_form(self, a, b, c):
        n = a + b + c
        assert dyn.resonance(a, b, c) == n ** 3 - a ** 3 - b ** 3 - c ** 3

    @given(ints, ints)
    def test_opposite_pair_resonant(self, n, m):
        assert dyn.resonance(n, -n, m) == 0


class TestRegions:
    def test_examples(self):
        assert dyn.classify_region(100, 3, 2) == "A"
        assert dyn.classify_region(2, 3, 100) == "D"
        assert dyn.classify_region(1, -1, 5) == "resonant"

    @given(ints, ints, ints)
    def test_single_label(self, a, b, c):
        lab = dyn.classify_region(a, b, c)
        assert lab in ("A", "B", "C", "D", "resonant")
        assert (lab == "resonant") == (dyn.resonance(a, b, c) == 0)

    def test_triple_type(self):
        t = dyn.FrequencyTriple.of(100, 3, 2)
        assert t.phi == dyn.resonance(100, 3, 2) and t.region == "A"


class TestNonlinearity:
    @pytest.mark.parametrize("sign", (1, -1))
    def test_single_mode_mkdv2(self, sign):
        c, m = 1.2 - 0.5j, 3
        u = SpectralField.from_modes(6, {m: c})
        cfg = dyn.FlowConfig(N=6, sign=sign, equation="mkdv2")
        out = dyn.nonlinearity(u, cfg)
        want = -6j * sign * m * abs(c) ** 2 * c
        assert out.coeff(m) == pytest.approx(want, rel=1e-12)
        mask = np.ones(13, dtype=bool)
        mask[m + 6] = False
        assert np.max(np.abs(out.coeffs[mask])) < 1e-12

    def test_zero(self):
        cfg = dyn.FlowConfig(N=4)
        assert np.all(dyn.nonlinearity(SpectralField.zero(4), cfg).coeffs == 0)

    @pytest.mark.parametrize("sign", (1, -1))
    @pytest.mark.parametrize("N", (5, 6))
    def test_grid_matches_direct(self, rng, sign, N):
        c = (rng.standard_normal(2 * N + 1) + 1j * rng.standard_normal(2 * N + 1)) * 0.7
        u = SpectralField(N, c)
        cfg = dyn.FlowConfig(N=N, sign=sign, equation="mkdv2")
        grid = dyn.nonlinearity(u, cfg)
        d = dyn.nonlinearity_direct(u, cfg)
        total = d.nr_ge + d.nr_le - d.diag + d.res
        recomb = 6 * sign * np.array([total.coeff(n) for n in range(-N, N + 1)])
        assert np.max(np.abs(recomb - grid.coeffs)) < 1e-12 * max(1.0, np.max(np.abs(grid.coeffs)))

    def test_direct_single_mode(self):
        c, m = 0.9 + 0.2j, 2
        u = SpectralField.from_modes(4, {m: c})
        d = dyn.nonlinearity_direct(u, dyn.FlowConfig(N=4))
        assert np.all(d.nr_ge.coeffs == 0) and np.all(d.nr_le.coeffs == 0)
        assert d.res.coeff(m) == pytest.approx(-1j * m * abs(c) ** 2 * c, rel=1e-13)

    def test_diagonal_double_count(self, make_field):
        # nr_ge + nr_le counts |n2| = |n3| twice; removing one copy gives the
        # full non-resonant sum, checked through the recombination identity
        u = make_field(4, scale=0.5)
        cfg = dyn.FlowConfig(N=4)
        d = dyn.nonlinearity_direct(u, cfg)
        assert np.max(np.abs(d.diag.coeffs)) > 0

    def test_cap(self, make_field):
        with pytest.raises(ValueError):
            dyn.nonlinearity_direct(SpectralField.zero(80), dyn.FlowConfig(N=80))

    def test_mass_momentum_corrections(self, make_field):
        # nr_ge + nr_le - diag + res equals FT(|u|^2 du - M du - i P u)
        from mkdvlab.spectral import conjugate, derivative, multiply

        u = make_field(4, scale=0.5)
        cfg = dyn.FlowConfig(N=4)
        d = dyn.nonlinearity_direct(u, cfg)
        total = d.nr_ge + d.nr_le - d.diag + d.res
        du = derivative(u)
        cubic = multiply(multiply(u, conjugate(u)), du)
        want = cubic - en.mass(u) * du - 1j * en.momentum(u) * u
        want = want.with_max_freq(total.max_freq)
        assert np.max(np.abs(total.coeffs - want.coeffs)) < 1e-12


class TestFlow:
    @pytest.mark.parametrize("equation", ("mkdv2", "mkdv"))
    @pytest.mark.parametrize("sign", (1, -1))
    def test_single_mode_closed_form(self, equation, sign):
        m, c = 3, 2.0 + 0.0j
        u0 = SpectralField.from_modes(8, {m: c})
        cfg = dyn.FlowConfig(N=8, sign=sign, equation=equation, tol=1e-9, t_final=0.3)
        traj = dyn.flow(u0, cfg)
        got = traj.coeffs[-1][traj.max_freq + m]
        want = dyn.single_mode_solution(m, c, sign, equation, 0.3)
        assert abs(got - want) / abs(want) < 1e-8

    def test_zero_data(self):
        cfg = dyn.FlowConfig(N=4, t_final=0.5)
        traj = dyn.flow(SpectralField.zero(4), cfg)
        assert np.all(traj.coeffs == 0)

    def test_e1_conserved(self, rng):
        N = 16
        c = (rng.standard_normal(2 * N + 1) + 1j * rng.standard_normal(2 * N + 1)) * 0.2
        cfg = dyn.FlowConfig(N=N, tol=1e-9, t_final=0.25)
        out = dyn.evolve_low_batch(c[None, :], cfg, [0.25])
        drift = abs(np.sum(np.abs(out[0, 0]) ** 2) - np.sum(np.abs(c) ** 2)) / np.sum(np.abs(c) ** 2)
        assert drift < 1e-8

    def test_group_property(self, rng):
        N = 8
        c = (rng.standard_normal(2 * N + 1) + 1j * rng.standard_normal(2 * N + 1)) * 0.3
        u0 = SpectralField(N, c)
        cfg = dyn.FlowConfig(N=N, tol=1e-9)
        one = dyn.flow(u0, cfg, output_times=[0.3]).states[-1]
        two = dyn.flow(one, cfg, output_times=[0.2]).states[-1]
        direct = dyn.flow(u0, cfg, output_times=[0.5]).states[-1]
        num = np.linalg.norm(two.coeffs - direct.coeffs)
        den = np.linalg.norm(direct.coeffs)
        assert num / den < 10 * cfg.tol * 100  # loose factor for error growth

    def test_tail_rides_free_flow(self):
        u0 = SpectralField.from_modes(6, {1: 0.5, 5: 1.0})
        cfg = dyn.FlowConfig(N=2, tol=1e-9)
        traj = dyn.flow(u0, cfg, output_times=[0.7])
        got = traj.coeffs[-1][traj.max_freq + 5]
        assert got == pytest.approx(np.exp(1j * 125 * 0.7), rel=1e-12)

    def test_backward_times(self):
        m, c = 2, 0.8 + 0.0j
        u0 = SpectralField.from_modes(4, {m: c})
        cfg = dyn.FlowConfig(N=4, tol=1e-10)
        traj = dyn.flow(u0, cfg, output_times=[-0.2, 0.2])
        want = dyn.single_mode_solution(m, c, 1, "mkdv2", -0.2)
        assert traj.coeffs[0][traj.max_freq + m] == pytest.approx(want, rel=1e-9)

    def test_step_underflow(self):
        # an impossible tolerance drives the controller into the floor
        rng = np.random.default_rng(1)
        c = rng.standard_normal(9) + 1j * rng.standard_normal(9)
        cfg = dyn.FlowConfig(N=4, tol=1e-17, t_final=0.1)
        with pytest.raises(dyn.StepUnderflowError):
            dyn.evolve_low_batch(c[None, :], cfg, [0.1])

    def test_fixed_step_matches_adaptive(self, rng):
        N = 8
        c = (rng.standard_normal(2 * N + 1) + 1j * rng.standard_normal(2 * N + 1)) * 0.3
        cfg = dyn.FlowConfig(N=N, tol=1e-10)
        ref = dyn.evolve_low_batch(c[None, :], cfg, [0.2])[0, 0]
        errs = []
        for steps in (400, 800):
            fixed = dyn.evolve_fixed_batch(c[None, :], cfg, 0.2 / steps, steps)[0]
            errs.append(np.linalg.norm(fixed - ref) / np.linalg.norm(ref))
        assert errs[0] < 1e-3 and errs[1] < errs[0] / 4  # at least cubic-looking decay


class TestGauge:
    @pytest.mark.parametrize("sign", (1, -1))
    def test_single_mode(self, sign):
        m, c = 2, 1.1 + 0.0j
        u0 = SpectralField.from_modes(6, {m: c})
        cfg = dyn.FlowConfig(N=6, sign=sign, equation="mkdv", tol=1e-10)
        times = np.linspace(0.0, 0.4, 5)[1:]
        traj = dyn.flow(u0, cfg, output_times=times)
        v = dyn.gauge_transform(traj, sign)
        for i, t in enumerate(v.times):
            want = dyn.single_mode_solution(m, c, sign, "mkdv2", t)
            assert v.coeffs[i][v.max_freq + m] == pytest.approx(want, rel=1e-8)

    def test_zero_field(self):
        traj = Trajectory(np.array([0.0, 1.0]), np.zeros((2, 5), dtype=complex))
        v = dyn.gauge_transform(traj, 1)
        assert np.all(v.coeffs == 0)

    def test_drifting_mass_rejected(self):
        coeffs = np.array([[0, 0, 1.0, 0, 0], [0, 0, 1.1, 0, 0]], dtype=complex)
        traj = Trajectory(np.array([0.0, 1.0]), coeffs)
        with pytest.raises(ValueError):
            dyn.gauge_transform(traj, 1)

    @pytest.mark.parametrize("sign", (1, -1))
    def test_residual_oracle(self, rng, sign):
        # the gauged mkdv trajectory satisfies the mkdv2 Galerkin system
        N = 8
        c = (rng.standard_normal(2 * N + 1) + 1j * rng.standard_normal(2 * N + 1)) * 0.25
        u0 = SpectralField(N, c)
        h = 1e-6
        probe = [0.25, 0.5]
        times = sorted({0.0, *probe, *(x + h for x in probe), *(x - h for x in probe)})
        cfg = dyn.FlowConfig(N=N, sign=sign, equation="mkdv", tol=1e-11)
        traj = dyn.flow(u0, cfg, output_times=times)
        v = dyn.gauge_transform(traj, sign)
        n3 = freqs(N).astype(float) ** 3
        cfg2 = dyn.FlowConfig(N=N, sign=sign, equation="mkdv2")
        for tc in probe:
            i = int(np.argmin(np.abs(v.times - tc)))
            ph = np.exp(-1j * n3 * v.times[i])
            php = np.exp(-1j * n3 * v.times[i + 1])
            phm = np.exp(-1j * n3 * v.times[i - 1])
            ydot = (php * v.coeffs[i + 1] - phm * v.coeffs[i - 1]) / (2 * h)
            rhs = dyn.nonlinearity(SpectralField(N, v.coeffs[i]), cfg2).coeffs
            resid = np.linalg.norm(ydot - ph * rhs) / np.linalg.norm(v.coeffs[i])
            assert resid < 1e-6
