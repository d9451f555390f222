"""Six-index Gaussian pairing combinatorics for the truncation-drift sums.

The drift of E_3 along the truncated flow, evaluated on the Gaussian
ensemble, is a six-linear form in the Gaussians:

    E3'(u(omega)) = (6/pi^2) Im sum_{vec j in I_N} a(j) g_{j1} gbar_{j2}
                    g_{j3} gbar_{j4} g_{j5} gbar_{j6},

with a(j) = j3 / prod <j_i>, conjugation signature (+,-,+,-,+,-), and

    I_N = { |j_i| <= N, L(j) = 0, |P(j)| > N },
    L(j) = j1-j2+j3-j4+j5-j6,  P(j) = j1-j2+j3.

This module enumerates I_N and its pairing strata, evaluates the bounding
sums behind the O(1/N) decay, checks the exact cancellations, and computes
the L^2(d mu) norm of the drift both exactly (Wick/Isserlis enumeration,
small N) and by Monte Carlo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .energies import e3_drift_batch
from .measures import EnsembleSpec, bump_chi, sample_block

SIGNATURE = (1, -1, 1, -1, 1, -1)  # conjugation sign per slot
PLUS_SLOTS = (0, 2, 4)
MINUS_SLOTS = (1, 3, 5)
ENUM_CAP = 64
WICK_CAP = 3
SAME_TRIPLET_PAIRS = ((5, 6), (4, 5), (2, 3), (1, 2))  # 1-based slot pairs
DRIFT_FACTOR = 6.0 / math.pi ** 2  # physical-space drift per unit Im-sum


def l_total(j) -> int:
    return j[0] - j[1] + j[2] - j[3] + j[4] - j[5]


def p_partial(j) -> int:
    return j[0] - j[1] + j[2]


def coefficient(j) -> float:
    """a(j) = j3 / prod <j_i>."""
    den = 1.0
    for x in j:
        den *= math.sqrt(1.0 + x * x)
    return j[2] / den


@dataclass(frozen=True)
class IndexTuple:
    j: tuple[int, int, int, int, int, int]
    N: int

    @property
    def L(self) -> int:
        return l_total(self.j)

    @property
    def P(self) -> int:
        return p_partial(self.j)

    @property
    def a(self) -> float:
        return coefficient(self.j)


@dataclass(frozen=True)
class PairingClass:
    r: int
    pairs: tuple[tuple[int, int], ...]  # 1-based slot pairs, plus slot first


def classify_pairing(j) -> PairingClass:
    """Maximal pairing of equal values across opposite conjugation signs.

    Ties between equally sized matchings are broken by the lexicographically
    smallest pair list, so classification is deterministic.
    """
    vals = tuple(j)
    best: tuple[int, tuple] | None = None
    for k in (3, 2, 1, 0):
        for plus_sel in permutations(PLUS_SLOTS, k):
            for minus_sel in permutations(MINUS_SLOTS, k):
                if any(vals[p] != vals[m] for p, m in zip(plus_sel, minus_sel)):
                    continue
                pairs = tuple(sorted((p + 1, m + 1) for p, m in zip(plus_sel, minus_sel)))
                cand = (k, pairs)
                if best is None or cand[1] < best[1]:
                    best = cand
        if best is not None:
            return PairingClass(best[0], best[1])
    return PairingClass(0, ())


def _cross_equal(vals, slots) -> bool:
    """Any equal values at opposite-signature positions within `slots` (0-based)?"""
    plus = [vals[s] for s in slots if s in PLUS_SLOTS]
    minus = [vals[s] for s in slots if s in MINUS_SLOTS]
    return bool(set(plus) & set(minus))


def is_one_pairing(j, k: int, l: int) -> bool:
    """Literal membership in the 1-pairing stratum for slots (k, l), 1-based."""
    a, b = k - 1, l - 1
    if SIGNATURE[a] == SIGNATURE[b] or j[a] != j[b]:
        return False
    rest = [s for s in range(6) if s not in (a, b)]
    return not _cross_equal(j, rest)


def in_index_set(j, N: int) -> bool:
    return all(abs(x) <= N for x in j) and l_total(j) == 0 and abs(p_partial(j)) > N


def enumerate_IN(N: int, subset: str = "all", pair: tuple[int, int] | None = None):
    """Lazily yield the members of I_N (or a stratum) with j6 eliminated via L = 0.

    subset: 'all' | 'I0' | 'pair' | 'tilde' | 'hat'; the pair strata need the
    1-based slot pair.  Exhaustive enumeration is capped at N <= ENUM_CAP.
    """
    if N > ENUM_CAP:
        raise ValueError(f"exhaustive enumeration capped at N <= {ENUM_CAP}")
    if subset not in ("all", "I0", "pair", "tilde", "hat"):
        raise ValueError(f"unknown subset {subset!r}")
    if subset in ("pair", "tilde", "hat") and pair is None:
        raise ValueError("pair subsets need the slot pair")
    rng = range(-N, N + 1)
    for j1 in rng:
        for j2 in rng:
            for j3 in rng:
                p = j1 - j2 + j3
                if abs(p) <= N:
                    continue
                for j4 in rng:
                    for j5 in rng:
                        j6 = p - j4 + j5
                        if abs(j6) > N:
                            continue
                        j = (j1, j2, j3, j4, j5, j6)
                        if subset == "all":
                            yield IndexTuple(j, N)
                        elif subset == "I0":
                            if classify_pairing(j).r == 0:
                                yield IndexTuple(j, N)
                        else:
                            if not is_one_pairing(j, *pair):
                                continue
                            tilde = len(set(j)) == 5
                            if subset == "pair" or (subset == "tilde") == tilde:
                                yield IndexTuple(j, N)


def count_same_triplet(N: int, pair: tuple[int, int]) -> int:
    """Members of I_N with the two same-triplet slots equal (vectorized count).

    The paired value v cancels from L, so for each of the four cases three
    indices stay free, one is forced by L = 0, and v ranges freely; the count
    is a superset of the literal 1-pairing stratum, so zero certifies the
    stratum empty without using the analytic collapse argument.
    """
    if pair not in SAME_TRIPLET_PAIRS:
        raise ValueError(f"{pair} is not a same-triplet slot pair")
    rng = np.arange(-N, N + 1)
    a = rng[:, None, None]
    b = rng[None, :, None]
    c = rng[None, None, :]
    if pair in ((5, 6), (4, 5)):
        # free (j1,j2,j3); L = 0 forces j4 = P (pair 5,6) or j6 = P (pair 4,5)
        p = a - b + c
        forced = p
    else:
        # pair (2,3): free (j1,j4,j5), P = j1, j6 = j1 - j4 + j5
        # pair (1,2): free (j3,j4,j5), P = j3, j6 = j3 - j4 + j5
        p = np.broadcast_to(a, (len(rng),) * 3)
        forced = a - b + c
    ok = (np.abs(p) > N) & (np.abs(forced) <= N)
    return (2 * N + 1) * int(np.count_nonzero(ok))


# ---------------------------------------------------------------------------
# bounding sums for the decay lemmas


def _bracket_inv_sq(N: int) -> tuple[float, float, float]:
    """S = sum_{|j|<=N} <j>^-2, T over the outer third, U = S - T."""
    j = np.arange(-N, N + 1)
    w = 1.0 / (1.0 + j.astype(float) ** 2)
    S = float(np.sum(w))
    cut = math.ceil(N / 3)
    T = float(np.sum(w[np.abs(j) >= cut]))
    return S, T, S - T


def lemma_sum(lemma: str, N: int) -> float:
    """Value of the displayed bounding sum for one decay lemma at truncation N.

    L53: 0-pairing sum  sum' prod <j_i>^-2 over five free indices with the
         outer-third constraint max(|j4|,|j5|,|j6|) >= N/3.
    L55_14 / L55_25: cross-triplet 1-pairing sums
         sum_outer ( sum_j <j>^-2 / (<a><b><c>) )^2 with the constraint on
         (paired value, two outer indices).
    L58: hat-stratum sum, constraint over all four indices.
    Llog: sum_{|j|<=N} 1/(<j><N-j>), the log(N)/N kernel.
    """
    if N < 1 or N > 512:
        raise ValueError("N must be in 1..512")
    if lemma == "Llog":
        j = np.arange(-N, N + 1).astype(float)
        return float(np.sum(1.0 / (np.sqrt(1 + j ** 2) * np.sqrt(1 + (N - j) ** 2))))
    S, T, U = _bracket_inv_sq(N)
    if lemma == "L53":
        return S * S * (S ** 3 - U ** 3)
    if lemma in ("L55_14", "L55_25"):
        return S * ((S * S - U * U) * S * S + U * U * T * T)
    if lemma == "L58":
        return (S ** 3 - U ** 3) * S * S + U ** 3 * T * T
    raise ValueError(f"unknown lemma {lemma!r}")


LEMMA_NAMES = ("L53", "L55_14", "L55_25", "L58", "Llog")
ONE_OVER_N_LEMMAS = ("L53", "L55_14", "L55_25", "L58")


# ---------------------------------------------------------------------------
# exact cancellation of the five-distinct-value strata


def _tilde_arrays(N: int, which: str):
    """Vectorized tilde stratum for the (3,4) or (3,6) pairing.

    Returns the six index columns of every member tuple.
    """
    rng = np.arange(-N, N + 1)
    J, A, B, C = np.meshgrid(rng, rng, rng, rng, indexing="ij")
    j = J.ravel()
    a = A.ravel()
    b = B.ravel()
    c = C.ravel()
    if which == "34":
        # tuple (j1,j2,j,j,j5,j6): free (j, j1=a, j2=b, j5=c), j6 = a-b+c
        j6 = a - b + c
        cols = (a, b, j, j, c, j6)
    elif which == "36":
        # tuple (j1,j2,j,j4,j5,j): free (j, j1=a, j2=b, j4=c), j5 = b+c-a
        j5 = b + c - a
        cols = (a, b, j, c, j5, j)
    else:
        raise ValueError(which)
    ok = np.ones(len(j), dtype=bool)
    for col in cols:
        ok &= np.abs(col) <= N
    p = cols[0] - cols[1] + cols[2]
    ok &= np.abs(p) > N
    others = [cols[0], cols[1], cols[4], cols[5]] if which == "34" else [cols[0], cols[1], cols[3], cols[4]]
    for i in range(4):
        ok &= others[i] != j
        for k in range(i + 1, 4):
            ok &= others[i] != others[k]
    return tuple(col[ok] for col in cols)


def tilde_cancellation(N: int, gaussians: np.ndarray) -> tuple[float, float]:
    """|sum a(j) Im g-product| over both tilde strata, with its natural scale.

    Each member appears together with its mirror partner, whose Gaussian
    product is the conjugate, so the total vanishes identically; the second
    return value sums |a(j) g-product| for a relative comparison.
    """
    if N > 16:
        raise ValueError("tilde enumeration capped at N <= 16")
    if gaussians.shape != (2 * N + 1,):
        raise ValueError("need one Gaussian per frequency |j| <= N")
    total = 0.0
    scale = 0.0
    for which in ("34", "36"):
        cols = _tilde_arrays(N, which)
        if len(cols[0]) == 0:
            continue
        br = lambda v: np.sqrt(1.0 + v.astype(float) ** 2)
        den = br(cols[0]) * br(cols[1]) * br(cols[2]) * br(cols[3]) * br(cols[4]) * br(cols[5])
        aj = cols[2] / den
        g = gaussians[cols[0] + N]
        for idx, s in zip(cols[1:], SIGNATURE[1:]):
            gi = gaussians[idx + N]
            g = g * (np.conj(gi) if s < 0 else gi)
        total += float(np.sum(aj * g.imag))
        scale += float(np.sum(np.abs(aj * g)))
    return abs(total), scale


# ---------------------------------------------------------------------------
# exact Wick evaluation of || E3' ||_{L^2(d mu)}


def _tuple_counts(tuples: np.ndarray, N: int):
    """Per-tuple occupation counts n_plus, n_minus over the 2N+1 values."""
    m = len(tuples)
    npl = np.zeros((m, 2 * N + 1), dtype=np.int8)
    nmi = np.zeros((m, 2 * N + 1), dtype=np.int8)
    rows = np.arange(m)
    for s in PLUS_SLOTS:
        np.add.at(npl, (rows, tuples[:, s] + N), 1)
    for s in MINUS_SLOTS:
        np.add.at(nmi, (rows, tuples[:, s] + N), 1)
    return npl, nmi


def _matchings_recursive(unconj: tuple, conj: tuple) -> int:
    """Number of value-preserving perfect matchings, by recursion on slots."""
    if not unconj:
        return 1
    first, rest = unconj[0], unconj[1:]
    total = 0
    for i, c in enumerate(conj):
        if c == first:
            total += _matchings_recursive(rest, conj[:i] + conj[i + 1 :])
    return total


def _matchings_permutation(unconj: tuple, conj: tuple) -> int:
    """Same count by brute force over all slot permutations."""
    return sum(
        all(u == c for u, c in zip(unconj, perm)) for perm in permutations(conj)
    )


def _pair_moment(j, k, conjugate_second: bool, engine) -> int:
    """E[g_j * (g_k or conj g_k)] as a matching count between factor lists."""
    if conjugate_second:
        unconj = tuple(j[s] for s in PLUS_SLOTS) + tuple(k[s] for s in MINUS_SLOTS)
        conj = tuple(j[s] for s in MINUS_SLOTS) + tuple(k[s] for s in PLUS_SLOTS)
    else:
        unconj = tuple(j[s] for s in PLUS_SLOTS) + tuple(k[s] for s in PLUS_SLOTS)
        conj = tuple(j[s] for s in MINUS_SLOTS) + tuple(k[s] for s in MINUS_SLOTS)
    return engine(unconj, conj)


def im_sum_l2_exact(N: int, engine: str = "recursive") -> float:
    """E[(Im S)^2] for S = sum_{I_N} a(j) g_(vec j), by full Wick enumeration.

    E[(Im S)^2] = (E|S|^2 - Re E[S^2]) / 2; both expectations are sums of
    matching counts over pairs of tuples, pruned by the net occupation
    profile (pairs with different profiles have zero expectation).
    """
    if N > WICK_CAP:
        raise ValueError(f"exact Wick evaluation capped at N <= {WICK_CAP}")
    eng = _matchings_recursive if engine == "recursive" else _matchings_permutation
    members = [t.j for t in enumerate_IN(N, "all")]
    if not members:
        return 0.0
    tuples = np.array(members, dtype=np.int64)
    avals = np.array([coefficient(j) for j in members])
    npl, nmi = _tuple_counts(tuples, N)
    net = (npl - nmi).astype(np.int16)
    keys = [tuple(row) for row in net]
    groups: dict[tuple, list[int]] = {}
    for i, key in enumerate(keys):
        groups.setdefault(key, []).append(i)
    e_ss = 0.0  # E|S|^2
    e_s2 = 0.0  # E[S^2]
    for key, idx in groups.items():
        for i in idx:
            ji = members[i]
            for t in idx:
                e_ss += avals[i] * avals[t] * _pair_moment(ji, members[t], True, eng)
        negkey = tuple(-x for x in key)
        partner = groups.get(negkey)
        if partner:
            for i in idx:
                ji = members[i]
                for t in partner:
                    e_s2 += avals[i] * avals[t] * _pair_moment(ji, members[t], False, eng)
    return (e_ss - e_s2) / 2.0


def e3star_l2_exact(N: int, engine: str = "recursive") -> float:
    """Exact ||E3 drift||_{L^2(d mu)} at truncation N (no cutoff factor)."""
    return DRIFT_FACTOR * math.sqrt(max(im_sum_l2_exact(N, engine), 0.0))


def im_sum_direct(N: int, gaussians: np.ndarray) -> complex:
    """S = sum_{I_N} a(j) g_(vec j) for one draw (direct enumeration)."""
    total = 0.0 + 0.0j
    for t in enumerate_IN(N, "all"):
        g = 1.0 + 0.0j
        for x, s in zip(t.j, SIGNATURE):
            gi = gaussians[x + N]
            g *= np.conj(gi) if s < 0 else gi
        total += t.a * g
    return total


# ---------------------------------------------------------------------------
# Monte Carlo estimate of the weighted L^2 norm of the drift


def e3star_l2_mc(
    N: int,
    R: float,
    samples: int,
    chi_on: bool = True,
    master_seed: int = 0,
    block: int = 4096,
):
    """Root-mean-square of chi^{1/2} E3' over the ensemble, with jackknife error."""
    if samples < 1000:
        raise ValueError("need at least 10^3 samples")
    spec = EnsembleSpec(N=N, master_seed=master_seed, count=samples, sign=1, R=R)
    x = np.empty(samples)
    for start in range(0, samples, block):
        stop = min(start + block, samples)
        rows = sample_block(spec, start, stop)
        d = e3_drift_batch(rows, N)
        if chi_on:
            e1 = 2.0 * np.pi * np.sum(np.abs(rows) ** 2, axis=-1)
            x[start:stop] = bump_chi(e1, R) * d * d
        else:
            x[start:stop] = d * d
    n = samples
    mean = float(np.mean(x))
    est = math.sqrt(max(mean, 0.0))
    loo = np.sqrt(np.maximum((n * mean - x) / (n - 1), 0.0))
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    return est, se
