"""Fields on the torus T = R/2piZ: Fourier representation, transforms, norms.

Conventions (fixed once, everything downstream relies on them):
  u(x) = sum_{|n| <= N} c_n e^{inx},   integrals are over x in [0, 2pi),
  <n>  = sqrt(1 + n^2).
Fields are complex-valued; no Hermitian symmetry is imposed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import next_fast_len


class AliasingError(ValueError):
    """Grid too small for the requested band limit; aliasing would corrupt modes."""


def freqs(max_freq: int) -> np.ndarray:
    """Frequency labels n = -N..N matching the coefficient layout."""
    return np.arange(-max_freq, max_freq + 1)


def bracket(n) -> np.ndarray:
    """Japanese bracket <n> = sqrt(1 + n^2)."""
    n = np.asarray(n, dtype=float)
    return np.sqrt(1.0 + n * n)


@dataclass(frozen=True)
class SpectralField:
    """Band-limited complex field: coeffs[k] is the amplitude of e^{i(k-N)x}."""

    max_freq: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.ascontiguousarray(self.coeffs, dtype=np.complex128)
        if c.shape != (2 * self.max_freq + 1,):
            raise ValueError(
                f"need {2 * self.max_freq + 1} coefficients for max_freq="
                f"{self.max_freq}, got shape {c.shape}"
            )
        if not np.all(np.isfinite(c.view(np.float64))):
            raise ValueError("non-finite coefficient")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zero(cls, max_freq: int) -> "SpectralField":
        return cls(max_freq, np.zeros(2 * max_freq + 1, dtype=np.complex128))

    @classmethod
    def from_modes(cls, max_freq: int, modes: dict[int, complex]) -> "SpectralField":
        c = np.zeros(2 * max_freq + 1, dtype=np.complex128)
        for n, a in modes.items():
            if abs(n) > max_freq:
                raise ValueError(f"mode {n} outside |n| <= {max_freq}")
            c[n + max_freq] = a
        return cls(max_freq, c)

    def coeff(self, n: int) -> complex:
        if abs(n) > self.max_freq:
            return 0.0 + 0.0j
        return complex(self.coeffs[n + self.max_freq])

    def with_max_freq(self, max_freq: int) -> "SpectralField":
        """Re-container to a new band limit (pad with zeros or verify truncation)."""
        if max_freq == self.max_freq:
            return self
        c = np.zeros(2 * max_freq + 1, dtype=np.complex128)
        lo = min(max_freq, self.max_freq)
        c[max_freq - lo : max_freq + lo + 1] = self.coeffs[
            self.max_freq - lo : self.max_freq + lo + 1
        ]
        return SpectralField(max_freq, c)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        N = max(self.max_freq, other.max_freq)
        return SpectralField(
            N, self.with_max_freq(N).coeffs + other.with_max_freq(N).coeffs
        )

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        N = max(self.max_freq, other.max_freq)
        return SpectralField(
            N, self.with_max_freq(N).coeffs - other.with_max_freq(N).coeffs
        )

    def __mul__(self, scalar: complex) -> "SpectralField":
        return SpectralField(self.max_freq, self.coeffs * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True)
class GridField:
    """Samples at x_m = 2pi m / M, m = 0..M-1."""

    grid_size: int
    samples: np.ndarray

    def __post_init__(self):
        s = np.ascontiguousarray(self.samples, dtype=np.complex128)
        if s.shape != (self.grid_size,):
            raise ValueError(f"expected {self.grid_size} samples, got {s.shape}")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    @property
    def points(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.grid_size) / self.grid_size


@dataclass(frozen=True)
class NormSpec:
    """Indices of an FL^{s,p} norm, optionally extended by (b,q) for space-time use."""

    s: float
    p: float = 2.0
    b: float | None = None
    q: float | None = None

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p >= 1 required")
        if self.q is not None and self.q < 1:
            raise ValueError("q >= 1 required")


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped states of one flow; all states share a band limit."""

    times: np.ndarray
    coeffs: np.ndarray  # shape (len(times), 2*max_freq+1)
    max_freq: int = field(default=-1)

    def __post_init__(self):
        t = np.ascontiguousarray(self.times, dtype=float)
        c = np.ascontiguousarray(self.coeffs, dtype=np.complex128)
        if t.ndim != 1 or len(t) < 1:
            raise ValueError("need at least one time stamp")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        N = self.max_freq if self.max_freq >= 0 else (c.shape[1] - 1) // 2
        if c.shape != (len(t), 2 * N + 1):
            raise ValueError("coefficient array shape mismatch")
        t.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "max_freq", N)

    @property
    def states(self) -> list[SpectralField]:
        return [SpectralField(self.max_freq, row) for row in self.coeffs]

    def state(self, i: int) -> SpectralField:
        return SpectralField(self.max_freq, self.coeffs[i])

    def __len__(self) -> int:
        return len(self.times)


class QuadratureValue(float):
    """Float with an `exact` flag: whether the quadrature was alias-free."""

    exact: bool

    def __new__(cls, value: float, exact: bool = True):
        obj = super().__new__(cls, value)
        obj.exact = bool(exact)
        return obj


# ---------------------------------------------------------------------------
# projections


def project_low(u: SpectralField, K: int, keep_container: bool = False) -> SpectralField:
    """Dirichlet projection onto |n| <= K."""
    if K < 0:
        raise ValueError("K >= 0 required")
    lo = min(K, u.max_freq)
    out = np.zeros_like(u.coeffs)
    N = u.max_freq
    out[N - lo : N + lo + 1] = u.coeffs[N - lo : N + lo + 1]
    f = SpectralField(N, out)
    return f if keep_container else f.with_max_freq(lo)


def project_high(u: SpectralField, K: int) -> SpectralField:
    """Complementary projection onto |n| > K; container size is preserved."""
    return u - project_low(u, K, keep_container=True)


# ---------------------------------------------------------------------------
# transforms


def to_grid(u: SpectralField, M: int) -> GridField:
    """Evaluate u at the M uniform grid points (exact for M >= 2N+1)."""
    N = u.max_freq
    if M < 2 * N + 1:
        raise AliasingError(f"grid M={M} < 2N+1={2 * N + 1} cannot hold max_freq={N}")
    packed = np.zeros(M, dtype=np.complex128)
    n = freqs(N)
    packed[np.mod(n, M)] = u.coeffs
    return GridField(M, np.fft.ifft(packed) * M)


def from_grid(g: GridField, N: int) -> SpectralField:
    """Recover coefficients |n| <= N from samples (requires N <= (M-1)/2)."""
    M = g.grid_size
    if N > (M - 1) // 2:
        raise AliasingError(f"cannot resolve max_freq={N} from M={M} samples")
    hat = np.fft.fft(g.samples) / M
    return SpectralField(N, hat[np.mod(freqs(N), M)])


def values_on_grid(coeffs: np.ndarray, M: int) -> np.ndarray:
    """Batched to_grid on raw coefficient rows (..., 2N+1) -> (..., M)."""
    N = (coeffs.shape[-1] - 1) // 2
    if M < 2 * N + 1:
        raise AliasingError(f"grid M={M} < 2N+1={2 * N + 1}")
    packed = np.zeros(coeffs.shape[:-1] + (M,), dtype=np.complex128)
    packed[..., np.mod(freqs(N), M)] = coeffs
    return np.fft.ifft(packed, axis=-1) * M


def coeffs_from_grid(samples: np.ndarray, N: int) -> np.ndarray:
    """Batched from_grid on raw sample rows (..., M) -> (..., 2N+1)."""
    M = samples.shape[-1]
    if N > (M - 1) // 2:
        raise AliasingError(f"cannot resolve max_freq={N} from M={M} samples")
    hat = np.fft.fft(samples, axis=-1) / M
    return hat[..., np.mod(freqs(N), M)]


def conjugate(u: SpectralField) -> SpectralField:
    """Coefficients of the complex conjugate field: conj(c_{-n})."""
    return SpectralField(u.max_freq, np.conj(u.coeffs[::-1]))


def multiply(u: SpectralField, v: SpectralField) -> SpectralField:
    """Exact pointwise product; result band limit is the sum of the inputs'."""
    N = u.max_freq + v.max_freq
    M = next_fast_len(2 * N + 1)
    prod = to_grid(u, M).samples * to_grid(v, M).samples
    return from_grid(GridField(M, prod), N)


def integrate(u: SpectralField) -> complex:
    """Integral over the torus: 2pi times the zero mode."""
    return 2.0 * np.pi * u.coeff(0)


# ---------------------------------------------------------------------------
# norms


def fl_norm(u: SpectralField, spec: NormSpec) -> float:
    """Fourier-Lebesgue norm: || <n>^s c_n ||_{l^p}."""
    w = bracket(freqs(u.max_freq)) ** spec.s * np.abs(u.coeffs)
    if math.isinf(spec.p):
        return float(np.max(w)) if w.size else 0.0
    return float(np.sum(w ** spec.p) ** (1.0 / spec.p))


def sobolev_norm(u: SpectralField, s: float) -> float:
    """H^s norm (2pi sum <n>^{2s}|c_n|^2)^{1/2}, consistent with the L^2 integral."""
    w = bracket(freqs(u.max_freq)) ** (2.0 * s)
    return float(np.sqrt(2.0 * np.pi * np.sum(w * np.abs(u.coeffs) ** 2)))


def sobolev_multiplier(u: SpectralField, s: float) -> SpectralField:
    """<grad>^s u: multiply coefficients by <n>^s."""
    return SpectralField(u.max_freq, u.coeffs * bracket(freqs(u.max_freq)) ** s)


def default_quadrature_size(max_freq: int, degree: int) -> int:
    """Smallest efficient M integrating a degree-`degree` product of band-N fields exactly."""
    return next_fast_len(degree * max_freq + 1)


def lp_physical_norm(u: SpectralField, p: float, M: int | None = None) -> QuadratureValue:
    """L^p(T) norm by rectangle-rule quadrature ((2pi/M) sum |u(x_m)|^p)^{1/p}.

    Exact when p is an even integer and M >= pN+1; otherwise the returned
    value carries exact=False.
    """
    if p < 1:
        raise ValueError("p >= 1 required")
    N = u.max_freq
    p_even = float(p).is_integer() and int(p) % 2 == 0
    if M is None:
        M = next_fast_len(max(int(math.ceil(p)) * N + 1, 2 * N + 1))
    exact = p_even and M >= p * N + 1
    vals = np.abs(to_grid(u, M).samples)
    total = (2.0 * np.pi / M) * np.sum(vals ** p)
    return QuadratureValue(total ** (1.0 / p), exact=exact)


def derivative(u: SpectralField, order: int = 1) -> SpectralField:
    """Spatial derivative of the given order: c_n -> (in)^k c_n."""
    if order < 1:
        raise ValueError("order >= 1 required")
    return SpectralField(u.max_freq, u.coeffs * (1j * freqs(u.max_freq)) ** order)


def xsb_norm(traj: Trajectory, spec: NormSpec, window: tuple[float, float]) -> float:
    """Discrete stand-in for the X^{s,b}_{p,q} space-time norm on a finite window.

    A Hann taper is applied on the window, each spatial mode is transformed in
    time, the modulation weight <tau - n^3>^b is applied on the discrete
    frequencies, and L^q over tau then l^p over n are taken.  This is a
    diagnostic proxy (finite window, discrete modulation), not the continuum
    norm; assertions built on it should use loose tolerances.
    """
    if spec.b is None:
        raise ValueError("NormSpec.b required for a space-time norm")
    q = spec.q if spec.q is not None else 2.0
    t0, t1 = window
    dts = np.diff(traj.times)
    if dts.size == 0:
        raise ValueError("need at least two samples in time")
    dt = dts[0]
    if not np.allclose(dts, dt, rtol=1e-9, atol=1e-12):
        raise ValueError("trajectory must be sampled on a uniform time grid")
    mask = (traj.times >= t0 - 1e-12) & (traj.times <= t1 + 1e-12)
    if traj.times[mask].size < 2 or traj.times[0] > t0 + 1e-12 or traj.times[-1] < t1 - 1e-12:
        raise ValueError("trajectory does not cover the requested window")
    tt = traj.times[mask]
    c = traj.coeffs[mask]  # (T, 2N+1)
    T = len(tt)
    taper = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(T) / max(T - 1, 1)))
    f = np.fft.fft(c * taper[:, None], axis=0) * dt  # (T, 2N+1), kernel e^{-i tau t}
    tau = 2.0 * np.pi * np.fft.fftfreq(T, d=dt)
    n = freqs(traj.max_freq)
    weight = bracket(tau[:, None] - n[None, :] ** 3) ** spec.b
    dtau = 2.0 * np.pi / (T * dt)
    if math.isinf(q):
        per_mode = np.max(weight * np.abs(f), axis=0)
    else:
        per_mode = (np.sum((weight * np.abs(f)) ** q, axis=0) * dtau) ** (1.0 / q)
    w = bracket(n) ** spec.s * per_mode
    if math.isinf(spec.p):
        return float(np.max(w))
    return float(np.sum(w ** spec.p) ** (1.0 / spec.p))
