"""Gaussian ensemble on the torus and the mass-cutoff quartic Gibbs weights.

Sampling convention: c_j = g_j / (sqrt(2pi) <j>) with independent complex
standard Gaussians g_j (E g = 0, E|g|^2 = 1, E g^2 = 0), so that the law of
the random field factorizes against Lebesgue measure on the low modes with
density exp(-||u||^2 - ||du||^2), which the invariance experiments rely on.

Streams are counter-based (Philox keyed by (master_seed, sample_index)) with
Box-Muller applied to the raw uniforms, so any sample can be regenerated in
isolation and worker layout cannot affect results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spectral import NormSpec, SpectralField, bracket, fl_norm, freqs
from .energies import quartic_integral


@dataclass(frozen=True)
class EnsembleSpec:
    """Description of one reproducible Gaussian ensemble."""

    N: int
    master_seed: int
    count: int
    sign: int = 1
    R: float = 4.0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count >= 1 required")
        if self.R <= 0:
            raise ValueError("R > 0 required")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")


@dataclass(frozen=True)
class SampleWeight:
    """Per-sample Gibbs weight and its ingredients."""

    e1: float
    l4_fourth: float
    chi: float
    weight: float


def bump_chi(x, R: float):
    """Smooth cutoff chi(x/R): 1 on |x| <= R, 0 on |x| >= 2R.

    The transition uses the standard exp(-1/s) partition of unity, so the
    value at |x| = 1.5R is exactly 1/2.
    """
    if R <= 0:
        raise ValueError("R > 0 required")
    t = np.abs(np.asarray(x, dtype=float)) / R

    def h(s):
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(-1.0 / s[pos])
        return out

    a = h(2.0 - t)
    b = h(t - 1.0)
    with np.errstate(invalid="ignore"):
        val = np.where(t <= 1.0, 1.0, np.where(t >= 2.0, 0.0, a / (a + b + (a + b == 0))))
    return val if val.ndim else float(val)


def _complex_gaussians(master_seed: int, index: int, count: int) -> np.ndarray:
    """Counter-based stream of standard complex Gaussians, E|g|^2 = 1."""
    bg = np.random.Philox(key=(np.uint64(master_seed & 0xFFFFFFFFFFFFFFFF), np.uint64(index)))
    u = np.random.Generator(bg).random((count, 2))
    r = np.sqrt(-np.log1p(-u[:, 0]))  # |g|^2 ~ Exp(1)
    return r * np.exp(2j * np.pi * u[:, 1])


def sample_coeffs(spec: EnsembleSpec, index: int) -> np.ndarray:
    """Raw coefficient row of sample `index`: g_j / (sqrt(2pi) <j>), |j| <= N."""
    if not 0 <= index < spec.count:
        raise IndexError(f"index {index} outside 0..{spec.count - 1}")
    g = _complex_gaussians(spec.master_seed, index, 2 * spec.N + 1)
    return g / (math.sqrt(2.0 * math.pi) * bracket(freqs(spec.N)))


def sample_field(spec: EnsembleSpec, index: int) -> SpectralField:
    """The random Fourier series sample, truncated to |j| <= N."""
    return SpectralField(spec.N, sample_coeffs(spec, index))


def sample_block(spec: EnsembleSpec, start: int, stop: int) -> np.ndarray:
    """Coefficient rows for sample indices [start, stop)."""
    return np.stack([sample_coeffs(spec, i) for i in range(start, stop)])


def density_weight(u: SpectralField, R: float, N: int, sign: int = 1) -> SampleWeight:
    """Cutoff-quartic Gibbs weight chi_R(E_1(Pi_N u)) exp(-+ int |Pi_N u|^4).

    The cutoff argument is E_1 with radius R throughout (the chi_{R^2}
    variant is not used; one convention is fixed and documented).
    """
    Nc = u.max_freq
    lo = min(N, Nc)
    low = u.coeffs[Nc - lo : Nc + lo + 1]
    e1 = float(2.0 * np.pi * np.sum(np.abs(low) ** 2))
    l4 = quartic_integral(SpectralField(lo, low))
    chi = float(bump_chi(e1, R))
    return SampleWeight(e1=e1, l4_fourth=l4, chi=chi, weight=chi * math.exp(-sign * l4))


def weights_block(coeffs: np.ndarray, R: float, sign: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized (e1, l4, weight) for rows of low-mode coefficients."""
    from scipy.fft import next_fast_len
    from .spectral import values_on_grid

    N = (coeffs.shape[-1] - 1) // 2
    e1 = 2.0 * np.pi * np.sum(np.abs(coeffs) ** 2, axis=-1)
    M = next_fast_len(4 * N + 1)
    vals = np.abs(values_on_grid(coeffs, M))
    l4 = (2.0 * np.pi / M) * np.sum(vals ** 4, axis=-1)
    w = bump_chi(e1, R) * np.exp(-sign * l4)
    return e1, l4, w


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    samples: int

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.stderr


def tail_probability(spec: EnsembleSpec, norm: NormSpec, lam: float, block: int = 4096) -> Estimate:
    """Monte Carlo P(||u||_{FL^{s,p}} > lambda) with binomial standard error."""
    hits = 0
    w = bracket(freqs(spec.N)) ** norm.s
    p = norm.p
    for start in range(0, spec.count, block):
        rows = sample_block(spec, start, min(start + block, spec.count))
        wa = w * np.abs(rows)
        if math.isinf(p):
            vals = np.max(wa, axis=-1)
        else:
            vals = np.sum(wa ** p, axis=-1) ** (1.0 / p)
        hits += int(np.sum(vals > lam))
    phat = hits / spec.count
    se = math.sqrt(max(phat * (1.0 - phat), 1.0 / spec.count) / spec.count)
    return Estimate(phat, se, spec.count)


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    stderr: float
    samples: int
    max_share: float  # largest single-sample contribution to the mean


def density_moment(spec: EnsembleSpec, q: float = 1.0, block: int = 4096) -> MomentEstimate:
    """E_mu[F_{R,N,+-}^q] with standard error and a heavy-tail share diagnostic."""
    if q < 1:
        raise ValueError("q >= 1 required")
    total = 0.0
    total2 = 0.0
    biggest = 0.0
    for start in range(0, spec.count, block):
        rows = sample_block(spec, start, min(start + block, spec.count))
        _, _, w = weights_block(rows, spec.R, spec.sign)
        wq = w ** q
        total += float(np.sum(wq))
        total2 += float(np.sum(wq ** 2))
        biggest = max(biggest, float(np.max(wq)))
    n = spec.count
    mean = total / n
    var = max(total2 / n - mean ** 2, 0.0)
    share = biggest / total if total > 0 else 0.0
    return MomentEstimate(mean, math.sqrt(var / n), n, share)


def weighted_expectation(spec: EnsembleSpec, functional, block: int = 4096) -> Estimate:
    """Self-normalized estimate of E_rho[f] = E_mu[w f]/E_mu[w].

    `functional` maps a coefficient block (B, 2N+1) to B values.  The standard
    error is the delta-method one for the ratio estimator.
    """
    sw = 0.0
    swf = 0.0
    ws = []
    fs = []
    for start in range(0, spec.count, block):
        rows = sample_block(spec, start, min(start + block, spec.count))
        _, _, w = weights_block(rows, spec.R, spec.sign)
        f = np.asarray(functional(rows), dtype=float)
        sw += float(np.sum(w))
        swf += float(np.sum(w * f))
        ws.append(w)
        fs.append(f)
    if sw <= 0:
        raise ValueError("all weights vanished; cutoff radius too small for the ensemble")
    ratio = swf / sw
    w = np.concatenate(ws)
    f = np.concatenate(fs)
    resid = (f - ratio) * w
    se = math.sqrt(np.sum(resid ** 2)) / sw
    return Estimate(ratio, se, spec.count)
