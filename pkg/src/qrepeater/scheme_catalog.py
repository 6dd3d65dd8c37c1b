"""Closed-form waiting-time and dephasing PGFs, scheme descriptions and fixtures.

Every function taking ``p`` accepts ``None`` for the bivariate (q, t) form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from math import comb
from typing import Sequence

import numpy as np
from scipy import stats

from . import perm_engine as pe
from .pgf_core import Poly, SymbolicPGF, _frac, symbolic_equal

FIXTURE_VERSION = "v1"

THREE_SEGMENT_VARIANTS = (
    "seq_a", "seq_b", "seq_c", "start_a", "start_b",
    "end_a", "end_b", "over_a", "over_b", "parallel_optimal",
)
SWAPPING = ("optimal", "doubling", "iterative", "mixed31", "mixed44", "mixed2222", "mixed242")
_SWAP_POLICY = {"optimal": "optimal_greedy"}


def _pq(p):
    """(p, q) as exact scalars, or as polynomials in q when p is None."""
    if p is None:
        q = Poly.q()
        return 1 - q, q
    pv = _frac(p)
    if not 0 < pv <= 1:
        raise ValueError("p must lie in (0, 1]")
    return pv, 1 - pv


T = Poly.t()


# ---------------------------------------------------------------------------
# scheme description

@dataclass(frozen=True)
class GlobalCutoff:
    """Discard once the accumulated storage time would exceed m."""

    m: int

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("cutoff must be a positive integer")


@dataclass(frozen=True)
class VectorCutoff:
    """Per-stage storage limits m_1..m_{n-1} for sequential distribution."""

    ms: tuple[int, ...]

    def __post_init__(self):
        if not self.ms or any(m < 1 for m in self.ms):
            raise ValueError("each cutoff must be a positive integer")


@dataclass(frozen=True)
class SchemeSpec:
    n: int
    distribution: str = "parallel"  # parallel | sequential | a three-segment variant
    swapping: str = "optimal"
    cutoff: GlobalCutoff | VectorCutoff | None = None
    measurement: str = "non"  # non | imm

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.measurement not in ("non", "imm"):
            raise ValueError("measurement must be 'non' or 'imm'")
        dist = self.distribution
        if dist in THREE_SEGMENT_VARIANTS:
            if self.n != 3:
                raise ValueError("three-segment variants need n=3")
            if self.cutoff is not None:
                raise ValueError("three-segment variants take no cutoff")
        elif dist == "sequential":
            if self.measurement == "imm":
                raise ValueError("immediate measurement is modelled for three-segment variants only")
        elif dist == "parallel":
            if self.swapping not in SWAPPING:
                raise ValueError(f"unknown swapping policy {self.swapping!r}")
            pe.get_policy(self.policy_name).check_arity(self.n)
            if isinstance(self.cutoff, VectorCutoff):
                raise ValueError("vector cutoffs apply to sequential distribution only")
            if isinstance(self.cutoff, GlobalCutoff) and self.n != 2:
                raise ValueError("parallel cutoffs are modelled for two segments only")
            if self.measurement == "imm":
                raise ValueError("use the parallel_optimal three-segment variant for immediate measurement")
        else:
            raise ValueError(f"unknown distribution {dist!r}")
        if isinstance(self.cutoff, VectorCutoff) and len(self.cutoff.ms) != self.n - 1:
            raise ValueError("vector cutoff needs n-1 entries")
        if isinstance(self.cutoff, GlobalCutoff) and dist == "sequential" and self.cutoff.m < self.n - 1:
            raise ValueError("global cutoff m must be at least n-1")

    @property
    def policy_name(self) -> str:
        if self.distribution == "sequential":
            return "sequential"
        return _SWAP_POLICY.get(self.swapping, self.swapping)

    @property
    def dephasing_unit(self) -> float:
        """Storage steps per unit of D: three-segment variants count single qubits."""
        return 0.5 if self.distribution in THREE_SEGMENT_VARIANTS else 1.0

    def label(self) -> str:
        parts = [f"n{self.n}", self.distribution]
        if self.distribution == "parallel":
            parts.append(self.swapping)
        if self.distribution in THREE_SEGMENT_VARIANTS:
            parts.append(self.measurement)
        if isinstance(self.cutoff, GlobalCutoff):
            parts.append(f"m{self.cutoff.m}")
        elif isinstance(self.cutoff, VectorCutoff):
            parts.append("m" + "-".join(map(str, self.cutoff.ms)))
        return "_".join(parts)


# ---------------------------------------------------------------------------
# elementary and sequential PGFs

def geometric_pgf(p) -> SymbolicPGF:
    pv, qv = _pq(p)
    return SymbolicPGF(pv * T, 1 - qv * T)


def truncated_geometric_pgf(p, m: int) -> SymbolicPGF:
    """Attempts until success conditioned on success within m attempts."""
    if m < 1:
        raise ValueError("m must be positive")
    pv, qv = _pq(p)
    num = sum(((qv * T) ** j for j in range(m)), Poly()) * pv * T
    return SymbolicPGF(num, 1 - qv**m)


def sequential_pgfs(n: int, p):
    """(K, D) for fully sequential distribution without cutoff."""
    if n < 1:
        raise ValueError("n must be positive")
    g = geometric_pgf(p)
    return g**n, g ** (n - 1)


def sequential_global_cutoff_pgfs(n: int, p, m: int):
    """(K, D) when the accumulated storage time of segments 2..n is capped at m."""
    if n < 2:
        raise ValueError("a cutoff needs at least two segments")
    if m < n - 1:
        raise ValueError("m < n-1: success is impossible")
    pv, qv = _pq(p)
    head = sum((comb(j + n - 2, n - 2) * (qv * T) ** j for j in range(m - n + 2)), Poly())
    fail = sum((comb(m, i) * pv**i * qv ** (m - i) for i in range(n - 1)), Poly())
    k_pgf = SymbolicPGF(pv**n * T**n * head, 1 - qv * T - pv * fail * T ** (m + 1))
    norm = sum((comb(m, i + n - 1) * pv**i * qv ** (m - n + 1 - i) for i in range(m - n + 2)), Poly())
    d_pgf = SymbolicPGF(T ** (n - 1) * head, norm)
    return k_pgf, d_pgf


def sequential_vector_cutoff_pgfs(n: int, p, ms: Sequence[int]):
    """(K, D) for per-stage cutoffs with a restart of the whole prefix."""
    ms = tuple(ms)
    if len(ms) != n - 1:
        raise ValueError("need n-1 cutoffs")
    VectorCutoff(ms)
    pv, qv = _pq(p)
    k_pgf = geometric_pgf(p)
    d_pgf = SymbolicPGF(1)
    for m in ms:
        trunc = truncated_geometric_pgf(p, m)
        keep = 1 - qv**m
        inner = k_pgf * SymbolicPGF(T**m)
        restart = keep * inner / (1 - qv**m * inner)
        k_pgf = trunc * restart / SymbolicPGF(T**m)
        d_pgf = d_pgf * trunc
    return k_pgf, d_pgf


# ---------------------------------------------------------------------------
# float evaluation of the global cutoff for large m

class CutoffRenewal:
    """Float PGFs of the sequential global cutoff, usable for any m.

    One round: the first segment takes a geometric number of steps, then the
    remaining n-1 successes must arrive within m attempts, else the round costs
    m further steps and restarts.  The truncated sums are negative-binomial
    CDFs: sum_{j<=m} P(S=j) t^j = g(t)^(n-1) P(S' <= m), with S' built from
    success probability 1-qt.
    """

    def __init__(self, n: int, p: float, m: int):
        if m < n - 1 or n < 2:
            raise ValueError("need n >= 2 and m >= n-1")
        self.n, self.p, self.m = n, float(p), m
        self.success = self._within(n - 1, self.p)

    def _within(self, r: int, p: float) -> float:
        """P(r successes of probability p arrive within m attempts)."""
        return float(stats.binom.sf(r - 1, self.m, p))

    def _geo(self, t: float):
        q = 1 - self.p
        return self.p * t / (1 - q * t)

    def _head(self, t: float) -> float:
        return self._geo(t) ** (self.n - 1) * self._within(self.n - 1, 1 - (1 - self.p) * t)

    def k_evaluate(self, t: float) -> float:
        g = self._geo(t)
        return g * self._head(t) / (1 - g * (1 - self.success) * t**self.m)

    def d_evaluate(self, t: float) -> float:
        return self._head(t) / self.success

    def _head_mean(self) -> float:
        # E[S; S <= m] = (r/p) P(S_{r+1} <= m+1)
        r = self.n - 1
        return r / self.p * float(stats.binom.sf(r, self.m + 1, self.p))

    def k_mean(self) -> float:
        in_round = self._head_mean() + (1 - self.success) * self.m
        return (1 / self.p + in_round) / self.success

    def d_mean(self) -> float:
        return self._head_mean() / self.success


# ---------------------------------------------------------------------------
# parallel distribution

def parallel_K_pgf(n: int, p) -> SymbolicPGF:
    """PGF of max(N_1..N_n); both printed forms are built and checked equal."""
    if n < 1:
        raise ValueError("n must be positive")
    pv, qv = _pq(p)
    first = SymbolicPGF(0)
    second = SymbolicPGF(0)
    for i in range(1, n + 1):
        c = comb(n, i)
        first = first + SymbolicPGF((-1) ** (i + 1) * c * (1 - qv**i) * T, 1 - qv**i * T)
        second = second + SymbolicPGF((-1) ** i * c, 1 - qv**i * T)
    second = 1 + (1 - T) * second
    if not symbolic_equal(first, second):
        raise AssertionError("the two forms of the maximum PGF disagree")
    return first


_ALTERNATING_MAX_N = 32


def _alternating_rates(n: int, p: float):
    """Signed weights and geometric rates with max(N_1..N_n) = sum_i w_i Geo(r_i)."""
    lq = math.log1p(-p) if p < 1 else -math.inf
    i = np.arange(1, n + 1)
    w = np.array([(-1) ** (k + 1) * comb(n, k) for k in range(1, n + 1)], dtype=float)
    return w, -np.expm1(i * lq)


def parallel_K_mean(n: int, p: float) -> float:
    """E[max of n geometrics]; alternating sum for small n, tail sum otherwise."""
    p = float(p)
    if p == 1:
        return 1.0
    if n <= _ALTERNATING_MAX_N:
        w, r = _alternating_rates(n, p)
        return float(np.sum(w / r))
    lq = math.log1p(-p)
    total, k = 0.0, 0
    while True:
        qk = math.exp(k * lq)
        term = -math.expm1(n * math.log1p(-qk)) if qk < 1 else 1.0
        total += term
        if term < 1e-17 * max(total, 1.0):
            return total
        k += 1


def parallel_K_mean_alternating(n: int, p) -> Fraction:
    pv, qv = _pq(p)
    return sum(Fraction((-1) ** (i + 1) * comb(n, i)) / (1 - qv**i) for i in range(1, n + 1))


def two_segment_cutoff_pgfs(p, m: int):
    """(K, D) for two parallel segments: the earlier pair may wait at most m steps."""
    if m < 0:
        raise ValueError("m must be non-negative")
    pv, qv = _pq(p)
    tail = 2 * (qv * T) ** (m + 1)
    k_pgf = SymbolicPGF(pv**2 * T * (1 + qv * T - tail),
                        (1 - qv * T) * (1 - qv**2 * T - 2 * pv * (qv * T) ** (m + 1)))
    d_pgf = SymbolicPGF(pv * (1 + qv * T - tail), (1 + qv - 2 * qv ** (m + 1)) * (1 - qv * T))
    return k_pgf, d_pgf


def two_segment_cutoff_from_engine(p, m: int):
    """Same pair assembled from engine partition sums of success and failure rounds."""
    diff = lambda ns, ops: ops.abs(ns[0] - ns[1])
    within = pe.partition_sum_for_rule(lambda ns, ops: ops.max(ns[0], ns[1]), 2,
                                       region=lambda ns, ops: m - diff(ns, ops))
    beyond = pe.partition_sum_for_rule(lambda ns, ops: ops.min(ns[0], ns[1]) + m, 2,
                                       region=lambda ns, ops: diff(ns, ops) - m - 1)
    s, f = within.to_pgf(p), beyond.to_pgf(p)
    k_pgf = s / (1 - f)
    d_pgf = pe.partition_sum_for_rule(diff, 2, region=lambda ns, ops: m - diff(ns, ops),
                                      normalize=True).to_pgf(p)
    return k_pgf, d_pgf


# ---------------------------------------------------------------------------
# three-segment variants: statistics as rules over (N1, N2, N3)

def _abs_diff(a, b, ops):
    return ops.abs(a - b)


def _start_a_imm(ns, ops):
    n1, n2, n3 = ns
    return ops.where(ops.le(n1, n2), n2 - n1 + n3, 2 * (n1 - n2) + n3)


def _end_b_imm(ns, ops):
    _, n2, n3 = ns
    return ops.where(ops.le(n2, n3), n3, 2 * n2 - n3)


def _over_a_imm(ns, ops):
    n1, n2, n3 = ns
    return ops.where(ops.lt(n2, n1), n1 - n2 + n3,
                     ops.where(ops.le(n2 - n1, n3), n3, 2 * (n2 - n1) - n3))


def _over_a_non(ns, ops):
    n1, n2, n3 = ns
    first_two = ops.where(ops.le(n2 - n1, n3), 2 * n3, 2 * (2 * (n2 - n1) - n3))
    second_first = ops.where(ops.le(n1 - n2, n3), 2 * n3, 2 * (n1 - n2))
    return ops.where(ops.lt(n2, n1), second_first, first_two)


def _over_b_imm(ns, ops):
    n1, n2, n3 = ns
    d = ops.abs(n1 - n3)
    return ops.where(ops.lt(d, n2), 2 * n2 - d, d)


def _doubled(rule):
    return lambda ns, ops: 2 * rule(ns, ops)


THREE_SEGMENT_D_RULES = {
    ("seq_a", "imm"): lambda ns, ops: ns[1] + ns[2],
    ("seq_a", "non"): lambda ns, ops: 2 * (ns[1] + ns[2]),
    ("seq_b", "imm"): lambda ns, ops: 2 * ns[1] + ns[2],
    ("seq_b", "non"): lambda ns, ops: 2 * (2 * ns[1] + ns[2]),
    ("seq_c", "imm"): lambda ns, ops: 2 * ns[0] + ns[2],
    ("seq_c", "non"): lambda ns, ops: 2 * (ns[0] + ns[2]),
    ("start_a", "imm"): _start_a_imm,
    ("start_a", "non"): lambda ns, ops: 2 * ops.abs(ns[0] - ns[1]) + 2 * ns[2],
    ("start_b", "imm"): lambda ns, ops: ops.abs(ns[0] - ns[2]) + 2 * ns[1],
    ("start_b", "non"): lambda ns, ops: 2 * ops.abs(ns[0] - ns[2]) + 4 * ns[1],
    ("end_a", "imm"): lambda ns, ops: ns[0] + ns[2],
    ("end_a", "non"): lambda ns, ops: 2 * ops.max(ns[0], ns[2]),
    ("end_b", "imm"): _end_b_imm,
    ("end_b", "non"): _doubled(_end_b_imm),
    ("over_a", "imm"): _over_a_imm,
    ("over_a", "non"): _over_a_non,
    ("over_b", "imm"): _over_b_imm,
    ("over_b", "non"): _doubled(_over_b_imm),
    ("parallel_optimal", "imm"): pe.optimal_immediate,
    ("parallel_optimal", "non"): _doubled(pe.optimal_greedy),
}


def _k_over(a, b, c, ops):
    return ops.min(a, b) + ops.max(ops.abs(a - b), c)


THREE_SEGMENT_K_RULES = {
    "seq_a": lambda ns, ops: ns[0] + ns[1] + ns[2],
    "seq_b": lambda ns, ops: ns[0] + ns[1] + ns[2],
    "seq_c": lambda ns, ops: ns[0] + ns[1] + ns[2],
    "start_a": lambda ns, ops: ops.max(ns[0], ns[1]) + ns[2],
    "start_b": lambda ns, ops: ops.max(ns[0], ns[2]) + ns[1],
    "end_a": lambda ns, ops: ns[1] + ops.max(ns[0], ns[2]),
    "end_b": lambda ns, ops: ns[0] + ops.max(ns[1], ns[2]),
    "over_a": lambda ns, ops: _k_over(ns[0], ns[1], ns[2], ops),
    "over_b": lambda ns, ops: _k_over(ns[0], ns[2], ns[1], ops),
    "parallel_optimal": lambda ns, ops: ops.max(ops.max(ns[0], ns[1]), ns[2]),
}


def three_segment_K_mean(variant: str, p) -> float:
    """Closed-form mean waiting time of a three-segment variant."""
    p = float(p)
    if variant.startswith("seq"):
        return 3 / p
    if variant.startswith(("start", "end")):
        return (5 - 3 * p) / ((2 - p) * p)
    if variant.startswith("over"):
        return (8 - 3 * p * (3 - p)) / (p * (2 - p) ** 2)
    if variant == "parallel_optimal":
        q = 1 - p
        return (1 + q * (4 + 3 * q * (1 + q))) / (1 + q - q**3 - q**4)
    raise ValueError(f"unknown three-segment variant {variant!r}")


@lru_cache(maxsize=None)
def three_segment_sum(variant: str, measurement: str, statistic: str = "D") -> pe.PartitionSum:
    rule = THREE_SEGMENT_D_RULES[(variant, measurement)] if statistic == "D" else THREE_SEGMENT_K_RULES[variant]
    return pe.partition_sum_for_rule(rule, 3)


# ---------------------------------------------------------------------------
# printed closed forms (transcriptions)

def _printed_forms() -> dict[str, SymbolicPGF]:
    q = Poly.q()
    t = T
    p = 1 - q
    forms: dict[str, SymbolicPGF] = {}
    forms["two_segment_D"] = p**2 / (1 - q**2) * (1 + q * t) / (1 - q * t)
    forms["two_segment_K"] = p**2 * t * (1 + q * t) / ((1 - q * t) * (1 - q**2 * t))
    for m in (1, 2, 3, 4):
        k, d = two_segment_cutoff_pgfs(None, m)
        forms[f"two_segment_cutoff_D_m{m}"] = d
        forms[f"two_segment_cutoff_K_m{m}"] = k

    forms["optimal_3"] = (p**3 / (1 - q**3)
                          * (1 + (q + 2 * q**2) * t - (2 * q**2 + q**3) * t**3 - q**4 * t**4)
                          / ((1 - q * t) * (1 - q**2 * t) * (1 - q * t**2)))

    pre4 = p**4 / (1 - q**4)
    num = (1 + (q**2 + 3 * q**3) * t + (3 * q + 3 * q**2 - q**5) * t**2 - (q**3 - q**5) * t**3
           + (q**3 - 3 * q**6 - 3 * q**7) * t**4 - (3 * q**5 + q**6) * t**5 - q**8 * t**6)
    den = (1 - q**2 * t) * (1 - q**3 * t) * (1 - q * t**2) * (1 - q**2 * t**2)
    forms["doubling_4"] = pre4 * num / den

    num = (1 + 3 * q**3 * t + (4 * q**2 - q**4 - 2 * q**5) * t**2
           + (q - q**2 - 3 * q**3 - 6 * q**4 + 2 * q**5 + q**6) * t**3
           + (-2 * q**2 - 5 * q**3 + q**4 + 2 * q**5 - q**6 - 3 * q**7) * t**4
           + (-2 * q**2 + 4 * q**4 - 4 * q**6 + 2 * q**8) * t**5
           + (3 * q**3 + q**4 - 2 * q**5 - q**6 + 5 * q**7 + 2 * q**8) * t**6
           + (-q**4 - 2 * q**5 + 6 * q**6 + 3 * q**7 + q**8 - q**9) * t**7
           + (2 * q**5 + q**6 - 4 * q**8) * t**8 - 3 * q**7 * t**9 - q**10 * t**10)
    den6 = ((1 - q * t) * (1 - q**2 * t) * (1 - q**3 * t) * (1 - q * t**2)
            * (1 - q**2 * t**2) * (1 - q * t**3))
    forms["iterative_4"] = pre4 * num / den6

    num = (1 + (q + 2 * q**2 + 3 * q**3) * t + (q + 2 * q**2 + q**4) * t**2
           - (3 * q**2 + 4 * q**3 + 4 * q**4) * t**3 - (4 * q**5 + 4 * q**6 + 3 * q**7) * t**4
           + (q**5 + 2 * q**7 + q**8) * t**5 + (3 * q**6 + 2 * q**7 + q**8) * t**6 + q**9 * t**7)
    den = (1 - q * t) * (1 - q**2 * t) * (1 - q**3 * t) * (1 - q * t**2) * (1 - q**2 * t**2)
    forms["optimal_4"] = pre4 * num / den

    num = (1 + (q**2 + 3 * q**3) * t + (q + 3 * q**2 - q**4 - q**5) * t**2
           + (-2 * q**2 - 4 * q**3 - 4 * q**4 + q**5 + q**6) * t**3
           + (-q**2 - 3 * q**3 - q**4 - 3 * q**6 - 3 * q**7) * t**4
           + (-2 * q**2 - q**3 + 2 * q**4 - 2 * q**6 + q**7 + 2 * q**8) * t**5
           + (3 * q**3 + 3 * q**4 + q**6 + 3 * q**7 + q**8) * t**6
           + (-q**4 - q**5 + 4 * q**6 + 4 * q**7 + 2 * q**8) * t**7
           + (q**5 + q**6 - 3 * q**8 - q**9) * t**8 - (3 * q**7 + q**8) * t**9 - q**10 * t**10)
    forms["mixed31_4"] = pre4 * num / den6

    # three segments, D counted per stored qubit
    g = p * t / (1 - q * t)
    forms["seq_a_imm"] = g**2
    forms["seq_b_imm"] = p**2 * t**3 / ((1 - q * t) * (1 - q * t**2))
    forms["seq_c_imm"] = p**2 * t**3 / ((1 - q * t) * (1 - q * t**2))
    forms["seq_a_non"] = forms["seq_a_imm"].stretch_t(2)
    forms["seq_b_non"] = forms["seq_b_imm"].stretch_t(2)
    forms["seq_c_non"] = forms["seq_a_imm"].stretch_t(2)
    forms["start_a_non"] = p**3 * t**2 * (1 + q * t**2) / ((1 - q**2) * (1 - q * t**2) ** 2)
    forms["start_a_imm"] = p**3 * t * (1 - q**2 * t**3) / ((1 - q**2) * (1 - q * t) ** 2 * (1 - q * t**2))
    forms["start_b_imm"] = p**3 * t**2 * (1 + q * t) / ((1 - q**2) * (1 - q * t) * (1 - q * t**2))
    forms["start_b_non"] = forms["start_b_imm"].stretch_t(2)
    forms["end_a_imm"] = g**2
    forms["end_a_non"] = p**2 * t**2 * (1 + q * t**2) / ((1 - q * t**2) * (1 - q**2 * t**2))
    forms["end_b_imm"] = p**2 * t * (1 - q**2 * t**3) / ((1 - q * t) * (1 - q**2 * t) * (1 - q * t**2))
    forms["end_b_non"] = forms["end_b_imm"].stretch_t(2)
    forms["over_a_imm"] = (p**3 * t * (1 + q - 2 * q**2 * t - q * t**2 + q**4 * t**4)
                           / ((1 - q**2) * (1 - q * t) ** 2 * (1 - q**2 * t) * (1 - q * t**2)))
    forms["over_a_non"] = (p**3 * t**2 * (1 + 2 * q - q * (1 + q) * t**4 - q**3 * t**6)
                           / ((1 - q**2) * (1 - q * t**2) * (1 - q**2 * t**2) * (1 - q * t**4)))
    forms["over_b_imm"] = (p**3 * t * (t + q * (2 - t**2 * (1 + q + q**2 * t)))
                           / ((1 - q**2) * (1 - q * t) * (1 - q**2 * t) * (1 - q * t**2)))
    forms["over_b_non"] = forms["over_b_imm"].stretch_t(2)
    forms["parallel_optimal_non"] = (p**3 / (1 - q**3)
                                     * (1 + q * (1 + 2 * q) * t**2 - q**2 * (2 + q) * t**6 - q**4 * t**8)
                                     / ((1 - q * t**2) * (1 - q**2 * t**2) * (1 - q * t**4)))
    forms["parallel_optimal_imm"] = (p**3 / (1 - q**3)
                                     * (1 + q**2 * t - 2 * q**3 * t**2 - 2 * q**2 * t**3 + q**3 * t**4 + q**5 * t**5)
                                     / ((1 - q * t) ** 2 * (1 - q**2 * t) * (1 - q * t**2)))
    return forms


# how each fixture is re-derived by the engine: (rule, n, region or None)
def _engine_recipe(name: str):
    if name == "two_segment_D":
        return ("policy", "optimal_greedy", 2, None)
    if name.startswith("two_segment_cutoff_"):
        stat, m = name[len("two_segment_cutoff_"):].split("_m")
        return ("cutoff2", stat, int(m))
    if name == "two_segment_K":
        return ("rule", lambda ns, ops: ops.max(ns[0], ns[1]), 2)
    policy = {"optimal_3": ("optimal_global", 3), "doubling_4": ("doubling", 4),
              "iterative_4": ("iterative", 4), "optimal_4": ("optimal_global", 4),
              "mixed31_4": ("mixed31", 4)}
    if name in policy:
        return ("policy",) + policy[name] + (None,)
    variant, meas = name.rsplit("_", 1)
    return ("rule", THREE_SEGMENT_D_RULES[(variant, meas)], 3)


def engine_pgf(name: str, p=None) -> SymbolicPGF:
    """Re-derive a fixture with the permutation engine."""
    recipe = _engine_recipe(name)
    if recipe[0] == "policy":
        return pe.pgf_from_policy(recipe[1], recipe[2], p)
    if recipe[0] == "cutoff2":
        k, d = two_segment_cutoff_from_engine(p, recipe[2])
        return d if recipe[1] == "D" else k
    return pe.partition_sum_for_rule(recipe[1], recipe[2]).to_pgf(p)


def fixture_names() -> list[str]:
    return sorted(_printed_forms())


def write_fixtures(directory) -> list[str]:
    """Serialize every printed closed form (bivariate) into ``directory``."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, pgf in sorted(_printed_forms().items()):
        (directory / f"{name}.pgf").write_text(pgf.to_text() + "\n")
        written.append(name)
    return written


@lru_cache(maxsize=None)
def load_fixture(name: str) -> SymbolicPGF:
    """Bivariate fixture from the package data; checks G(1) = 1 identically in q."""
    path = resources.files(__package__) / "fixtures" / FIXTURE_VERSION / f"{name}.pgf"
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise KeyError(f"no printed closed form for {name!r}; use the permutation engine") from None
    pgf = SymbolicPGF.from_text(text)
    if pgf.num.subs_t(1) != pgf.den.subs_t(1):
        raise ValueError(f"fixture {name} is not normalised")
    return pgf


def fixture_pgf(scheme: SchemeSpec | str, p=None) -> SymbolicPGF:
    """Printed closed-form dephasing PGF of a scheme (bivariate when p is None)."""
    name = scheme if isinstance(scheme, str) else fixture_name(scheme)
    pgf = load_fixture(name)
    return pgf if p is None else pgf.at_p(p)


def fixture_name(scheme: SchemeSpec) -> str:
    if scheme.distribution in THREE_SEGMENT_VARIANTS:
        return f"{scheme.distribution}_{scheme.measurement}"
    if scheme.distribution == "parallel":
        if isinstance(scheme.cutoff, GlobalCutoff):
            return f"two_segment_cutoff_D_m{scheme.cutoff.m}"
        if scheme.n == 2:
            return "two_segment_D"
        name = f"{scheme.swapping}_{scheme.n}"
        if name in _printed_forms():
            return name
    raise KeyError(f"no printed closed form for {scheme.label()}")


# ---------------------------------------------------------------------------
# numeric statistics for any scheme

class FloatStats:
    """Float view (evaluate, mean, exp_moment) over an exact or summed PGF."""

    def __init__(self, evaluate, mean, variance=None):
        self._evaluate, self._mean, self._variance = evaluate, mean, variance

    @classmethod
    def of_pgf(cls, pgf: SymbolicPGF) -> FloatStats:
        return cls(pgf.evaluate, pgf.mean, pgf.variance)

    @classmethod
    def of_sum(cls, ps: pe.PartitionSum, p: float) -> FloatStats:
        return cls(lambda t: ps.evaluate(p, t), lambda: ps.mean(p), lambda: ps.variance(p))

    @classmethod
    def of_function(cls, fn) -> FloatStats:
        """Wrap an analytic float PGF; moments by complex-step differentiation at t=1."""
        h = 1e-20

        def d1():
            return fn(complex(1, h)).imag / h

        def var():
            # second derivative from the complex step of the first derivative
            d2 = (fn(complex(1 + 1e-6, h)).imag - fn(complex(1 - 1e-6, h)).imag) / (2e-6 * h)
            m = d1()
            return d2 + m - m * m

        return cls(lambda t: fn(t).real if isinstance(fn(t), complex) else fn(t), d1, var)

    def evaluate(self, t: float) -> float:
        return float(self._evaluate(t))

    def mean(self) -> float:
        return float(self._mean())

    def variance(self) -> float:
        if self._variance is None:
            raise NotImplementedError("variance not available for this representation")
        return float(self._variance())

    def exp_moment(self, alpha: float, k: int = 1) -> float:
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        return self.evaluate(math.exp(-k * alpha))


def _geometric_fn(p: float):
    q = 1 - p
    return lambda t: p * t / (1 - q * t)


def _two_segment_cutoff_fns(p: float, m: int):
    q = 1 - p

    def k(t):
        tail = 2 * (q * t) ** (m + 1)
        return p * p * t * (1 + q * t - tail) / ((1 - q * t) * (1 - q * q * t - p * tail))

    def d(t):
        return p * (1 + q * t - 2 * (q * t) ** (m + 1)) / ((1 + q - 2 * q ** (m + 1)) * (1 - q * t))

    return k, d


def parallel_K_stats(n: int, p: float) -> FloatStats:
    """Float statistics of max(N_1..N_n), usable from tiny p up to n in the thousands."""
    p = float(p)
    if n <= _ALTERNATING_MAX_N:
        w, r = _alternating_rates(n, p)

        pf = Fraction(p)

        def evaluate(t):
            # exact rationals: the alternating terms cancel badly when p << 1 - t
            tf, total = Fraction(t), Fraction(0)
            for i in range(1, n + 1):
                qi = (1 - pf) ** i
                total += (-1) ** (i + 1) * comb(n, i) * (1 - qi) * tf / (1 - qi * tf)
            return float(total)

        def variance():
            m = float(np.sum(w / r))
            return float(np.sum(w * (2 - r) / r**2)) - m * m

        return FloatStats(evaluate, lambda: parallel_K_mean(n, p), variance)

    lq = math.log1p(-p) if p < 1 else -math.inf

    def cdf(k):
        return math.exp(n * math.log1p(-math.exp(k * lq))) if k > 0 else 0.0

    def walk(weight):
        total, k, prev = 0.0, 1, 0.0
        while True:
            cur = cdf(k)
            total += weight(k) * (cur - prev)
            if 1 - cur < 1e-17:
                return total
            prev, k = cur, k + 1

    def variance():
        m = parallel_K_mean(n, p)
        return walk(lambda k: k * k) - m * m

    return FloatStats(lambda t: walk(lambda k: t**k), lambda: parallel_K_mean(n, p), variance)


_EXACT_CUTOFF_LIMIT = 400


def scheme_statistics(scheme: SchemeSpec, p: float, workers: int = 1) -> tuple[FloatStats, FloatStats]:
    """(K, D) statistics of a scheme at success probability p.

    Raises NotImplementedError for parallel schemes beyond the enumerable range
    (n > 8 without a closed form); callers may fall back to Monte Carlo.
    """
    n, cut = scheme.n, scheme.cutoff
    if scheme.distribution == "sequential":
        if n == 1:
            return FloatStats.of_function(_geometric_fn(p)), FloatStats(lambda t: 1.0, lambda: 0.0, lambda: 0.0)
        if cut is None:
            g = _geometric_fn(p)
            q = 1 - p
            return (FloatStats(lambda t: g(t) ** n, lambda: n / p, lambda: n * q / p**2),
                    FloatStats(lambda t: g(t) ** (n - 1), lambda: (n - 1) / p, lambda: (n - 1) * q / p**2))
        if isinstance(cut, VectorCutoff):
            k, d = sequential_vector_cutoff_pgfs(n, p, cut.ms)
        elif cut.m > _EXACT_CUTOFF_LIMIT:
            model = CutoffRenewal(n, p, cut.m)
            return (FloatStats(model.k_evaluate, model.k_mean),
                    FloatStats(model.d_evaluate, model.d_mean))
        else:
            k, d = sequential_global_cutoff_pgfs(n, p, cut.m)
        return FloatStats.of_pgf(k), FloatStats.of_pgf(d)

    if scheme.distribution in THREE_SEGMENT_VARIANTS:
        k = three_segment_sum(scheme.distribution, "non", "K")
        d = three_segment_sum(scheme.distribution, scheme.measurement, "D")
        return FloatStats.of_sum(k, p), FloatStats.of_sum(d, p)

    if isinstance(cut, GlobalCutoff):
        k, d = _two_segment_cutoff_fns(float(p), cut.m)
        return FloatStats.of_function(k), FloatStats.of_function(d)
    if n > 8:
        raise NotImplementedError(f"no exact dephasing statistics for parallel n={n}; use Monte Carlo")
    d_sum = pe.partition_sum(scheme.policy_name, n, workers=workers)
    return parallel_K_stats(n, p), FloatStats.of_sum(d_sum, p)


def catalog() -> list[SchemeSpec]:
    """Every scheme with exact statistics, one representative per cutoff family."""
    out = [SchemeSpec(n, "sequential") for n in (1, 2, 3, 4, 8)]
    out += [SchemeSpec(3, "sequential", cutoff=GlobalCutoff(4)),
            SchemeSpec(3, "sequential", cutoff=VectorCutoff((2, 3)))]
    out += [SchemeSpec(n) for n in range(2, 9)]
    out += [SchemeSpec(2, cutoff=GlobalCutoff(m)) for m in (1, 2, 3, 4)]
    out += [SchemeSpec(4, swapping=s) for s in ("doubling", "iterative", "mixed31")]
    out += [SchemeSpec(8, swapping=s) for s in ("doubling", "iterative", "mixed44", "mixed2222", "mixed242")]
    out += [SchemeSpec(3, v, measurement=m) for v in THREE_SEGMENT_VARIANTS for m in ("non", "imm")]
    return out


def exact_pgfs(scheme: SchemeSpec, p) -> tuple[SymbolicPGF, SymbolicPGF]:
    """(K, D) as exact PGFs at rational p, for distribution-level checks."""
    n, cut = scheme.n, scheme.cutoff
    if scheme.distribution == "sequential":
        if cut is None:
            k, d = sequential_pgfs(n, p)
            return k, (d if n > 1 else SymbolicPGF(1))
        if isinstance(cut, VectorCutoff):
            return sequential_vector_cutoff_pgfs(n, p, cut.ms)
        return sequential_global_cutoff_pgfs(n, p, cut.m)
    if scheme.distribution in THREE_SEGMENT_VARIANTS:
        return (three_segment_sum(scheme.distribution, "non", "K").to_pgf(p),
                three_segment_sum(scheme.distribution, scheme.measurement, "D").to_pgf(p))
    if isinstance(cut, GlobalCutoff):
        return two_segment_cutoff_pgfs(p, cut.m)
    return parallel_K_pgf(n, p), pe.pgf_from_policy(scheme.policy_name, n, p)
