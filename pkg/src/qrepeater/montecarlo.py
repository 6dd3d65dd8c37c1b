"""Trajectory-level simulation of repeater schemes, independent of the exact engine.

Every scheme is played out in time: segments start according to the
distribution schedule, finished neighbours are merged by the swapping policy,
and each stored pair accrues dephasing for every step it waits.  Nothing here
calls the engine's piecewise-linear rules.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np
from scipy.special import comb

from .scheme_catalog import THREE_SEGMENT_VARIANTS, GlobalCutoff, SchemeSpec

BLOCK = 1 << 16


@dataclass(frozen=True)
class SimConfig:
    """Trajectories are generated in fixed blocks keyed by (seed, block index),
    so the shard count only changes who computes a block, never its content."""

    seed: int = 0
    samples: int = 100_000
    max_attempts: int = 10**13
    shards: int = 1

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.shards < 1:
            raise ValueError("shards must be positive")


class TrajectoryOutcome(NamedTuple):
    K: int
    D: int
    restarts: int


@dataclass
class TrajectoryBatch:
    K: np.ndarray
    D: np.ndarray
    restarts: np.ndarray

    def __len__(self):
        return len(self.K)

    def outcomes(self) -> Iterator[TrajectoryOutcome]:
        for k, d, r in zip(self.K, self.D, self.restarts):
            yield TrajectoryOutcome(int(k), int(d), int(r))


class MaxAttemptsExceeded(RuntimeError):
    pass


def _rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))


def geometric(rng: np.random.Generator, p: float, size) -> np.ndarray:
    """Attempts up to and including the first success: ceil(ln U / ln q)."""
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    if p == 1:
        return np.ones(size, dtype=np.int64)
    u = 1.0 - rng.random(size)  # (0, 1]
    k = np.ceil(np.log(u) / math.log1p(-p))
    return np.maximum(k, 1).astype(np.int64)


# ---------------------------------------------------------------------------
# swapping in time

def _swap_asap_walk(ready: np.ndarray, w: int = 1, wl: int = 0, wr: int = 0):
    """Swap-asap over adjacent blocks with the given ready times (rows = trajectories).

    Finished neighbours are joined at once, so at any moment the stored pairs
    are the maximal runs of finished blocks.  A stored pair weighs w, less wl
    if it contains the first block and wr if it contains the last.  Returns the
    time everything is joined and the accumulated weighted storage.
    """
    rows, n = ready.shape
    if n == 1:
        return ready[:, 0].copy(), np.zeros(rows, dtype=np.int64)
    order = np.argsort(ready, axis=1, kind="stable")
    times = np.take_along_axis(ready, order, axis=1)
    done = np.zeros((rows, n + 2), dtype=np.int64)  # padded: column i+1 is block i
    runs = np.zeros(rows, dtype=np.int64)
    total = np.zeros(rows, dtype=np.int64)
    idx = np.arange(rows)
    for j in range(n - 1):
        i = order[:, j] + 1
        runs += 1 - done[idx, i - 1] - done[idx, i + 1]
        done[idx, i] = 1
        stored = w * runs - wl * done[:, 1] - wr * done[:, n]
        total += stored * (times[:, j + 1] - times[:, j])
    return times[:, -1], total


def _tree_walk(tree, finish: np.ndarray):
    """Nested swap-asap: each node merges its children as soon as neighbours are ready."""
    if isinstance(tree, int):
        return finish[:, tree], np.zeros(len(finish), dtype=np.int64)
    parts = [_tree_walk(child, finish) for child in tree]
    ready = np.stack([r for r, _ in parts], axis=1)
    inner = sum(d for _, d in parts)
    top, d = _swap_asap_walk(ready)
    return top, inner + d


def _pairs(seq):
    seq = list(seq)
    if len(seq) == 1:
        return seq[0]
    half = len(seq) // 2
    return (_pairs(seq[:half]), _pairs(seq[half:]))


def swap_tree(swapping: str, n: int):
    """Merge structure of a swapping policy; a tuple node merges its children swap-asap."""
    segs = list(range(n))
    if swapping == "optimal":
        return tuple(segs)
    if swapping == "doubling":
        return _pairs(segs) if n > 1 else 0
    if swapping == "iterative":
        tree = 0
        for i in segs[1:]:
            tree = (tree, i)
        return tree
    fixed = {
        "mixed31": ((0, 1, 2), 3),
        "mixed44": ((0, 1, 2, 3), (4, 5, 6, 7)),
        "mixed2222": ((0, 1), (2, 3), (4, 5), (6, 7)),
        "mixed242": ((0, 1), (2, 3, 4, 5), (6, 7)),
    }
    return fixed[swapping]


# ---------------------------------------------------------------------------
# three-segment schedules: finish times from attempt counts (columns = left, middle, right)

def _three_segment_finish(variant: str, N: np.ndarray) -> np.ndarray:
    n1, n2, n3 = N[:, 0], N[:, 1], N[:, 2]
    if variant == "seq_a":  # left, middle, right
        f1 = n1
        f2 = f1 + n2
        return np.stack([f1, f2, f2 + n3], axis=1)
    if variant == "seq_b":  # left, right, middle
        f1 = n1
        f3 = f1 + n3
        return np.stack([f1, f3 + n2, f3], axis=1)
    if variant == "seq_c":  # middle, left, right
        f2 = n2
        f1 = f2 + n1
        return np.stack([f1, f2, f1 + n3], axis=1)
    if variant == "start_a":  # left and middle together, then right
        return np.stack([n1, n2, np.maximum(n1, n2) + n3], axis=1)
    if variant == "start_b":  # both outer, then middle
        return np.stack([n1, np.maximum(n1, n3) + n2, n3], axis=1)
    if variant == "end_a":  # middle, then both outer
        return np.stack([n2 + n1, n2, n2 + n3], axis=1)
    if variant == "end_b":  # left, then middle and right
        return np.stack([n1, n1 + n2, n1 + n3], axis=1)
    if variant == "over_a":  # left and middle; right starts when either is done
        return np.stack([n1, n2, np.minimum(n1, n2) + n3], axis=1)
    if variant == "over_b":  # both outer; middle starts when either is done
        return np.stack([n1, np.minimum(n1, n3) + n2, n3], axis=1)
    if variant == "parallel_optimal":
        return N.copy()
    raise ValueError(f"unknown three-segment variant {variant!r}")


# ---------------------------------------------------------------------------
# one block of trajectories

def _check(K: np.ndarray, limit: int):
    if K.size and K.max() > limit:
        raise MaxAttemptsExceeded(f"a trajectory needed more than {limit} steps; p is too small")


def _block(scheme: SchemeSpec, p: float, rng: np.random.Generator, size: int, limit: int) -> TrajectoryBatch:
    n, cut = scheme.n, scheme.cutoff
    zeros = np.zeros(size, dtype=np.int64)

    if scheme.distribution in THREE_SEGMENT_VARIANTS:
        N = geometric(rng, p, (size, 3))
        finish = _three_segment_finish(scheme.distribution, N)
        if scheme.measurement == "imm":
            K, D = _swap_asap_walk(finish, 2, 1, 1)
        else:
            K, D = _swap_asap_walk(finish, 2)
        return TrajectoryBatch(K, D, zeros)

    if scheme.distribution == "sequential":
        if cut is None:
            N = geometric(rng, p, (size, n))
            K = np.cumsum(N, axis=1)
            D = K[:, -1] - K[:, 0]
            _check(K[:, -1], limit)
            return TrajectoryBatch(K[:, -1].copy(), D, zeros)
        if isinstance(cut, GlobalCutoff):
            return _sequential_global_cutoff(n, p, cut.m, rng, size, limit)
        return _sequential_vector_cutoff(n, p, cut.ms, rng, size, limit)

    if isinstance(cut, GlobalCutoff):
        return _two_segment_cutoff(p, cut.m, rng, size, limit)
    N = geometric(rng, p, (size, n))
    _check(N.max(axis=1), limit)
    K, D = _tree_walk(swap_tree(scheme.swapping, n), N)
    return TrajectoryBatch(np.asarray(K, dtype=np.int64), np.asarray(D, dtype=np.int64), zeros)


def _truncated_sum_pmf(k: int, p: float, m: int) -> np.ndarray:
    """P(sum of k geometrics = s) for s = 0..m."""
    s = np.arange(m + 1)
    if k == 0:
        return (s == 0).astype(float)
    out = np.zeros(m + 1)
    ok = s >= k
    out[ok] = comb(s[ok] - 1, k - 1) * p**k * (1 - p) ** (s[ok] - k)
    return out


def _conditional(pmf: np.ndarray) -> np.ndarray:
    total = pmf.sum()
    return pmf / total if total > 0 else pmf


def _sum_of_geometrics(rng, p: float, counts: np.ndarray) -> np.ndarray:
    """Sum of counts[i] independent geometrics, one total per entry."""
    counts = np.asarray(counts, dtype=np.int64)
    if p == 1:
        return counts.copy()
    extra = rng.negative_binomial(np.maximum(counts, 1), p)
    return counts + np.where(counts > 0, extra, 0)


def _failures_before_success(rng, s: float, size: int) -> np.ndarray:
    if s >= 1:
        return np.zeros(size, dtype=np.int64)
    if s <= 0:
        raise MaxAttemptsExceeded("the cutoff can never be met")
    return rng.geometric(s, size) - 1


def _sequential_global_cutoff(n, p, m, rng, size, limit):
    """Rounds: first segment, then n-1 more within m storage steps, else discard and restart.

    Failed rounds are drawn in aggregate: their number is geometric, the first
    segments of all rounds form one negative binomial, and a failed round adds
    m steps.  The successful round's storage follows the truncated sum law.
    """
    pmf = _truncated_sum_pmf(n - 1, p, m)
    s = float(pmf.sum())
    R = _failures_before_success(rng, s, size)
    D = rng.choice(m + 1, size=size, p=_conditional(pmf)).astype(np.int64)
    K = _sum_of_geometrics(rng, p, R + 1) + R * m + D
    _check(K, limit)
    return TrajectoryBatch(K, D, R)


def _sequential_vector_cutoff(n, p, ms, rng, size, limit):
    """Stage k may store the prefix for at most ms[k-1] steps; failure restarts from segment 1.

    A cycle starts with segment 1 and either passes every stage or fails at one
    of them.  Failed cycles are aggregated: the stage where each fails is
    multinomial, and a stage passed c times adds a multinomial sample of c tries
    from its truncated law.
    """
    ms = [int(v) for v in ms]
    within = [_truncated_sum_pmf(1, p, c) for c in ms]
    passes = np.array([float(w.sum()) for w in within])
    reach = np.concatenate([[1.0], np.cumprod(passes)])
    s = float(reach[-1])
    R = _failures_before_success(rng, s, size)
    K = _sum_of_geometrics(rng, p, R + 1)
    D = np.zeros(size, dtype=np.int64)
    if R.any() and len(ms):
        fail_at = reach[:-1] * (1 - passes)
        fail_at = fail_at / fail_at.sum()
        fails = rng.multinomial(R, fail_at)  # rows: failures per stage
        K += fails @ np.asarray(ms, dtype=np.int64)
        passed = np.cumsum(fails[:, ::-1], axis=1)[:, ::-1] - fails  # failed later, so passed here
        for j, c in enumerate(ms):
            counts = rng.multinomial(passed[:, j], _conditional(within[j]))
            K += counts @ np.arange(c + 1)
    for j, c in enumerate(ms):
        tries = rng.choice(c + 1, size=size, p=_conditional(within[j])).astype(np.int64)
        K += tries
        D += tries
    _check(K, limit)
    return TrajectoryBatch(K, D, R)


def _two_segment_cutoff(p, m, rng, size, limit):
    """The first pair may wait m steps for its partner, else both links start afresh."""
    K = np.zeros(size, dtype=np.int64)
    D = np.zeros(size, dtype=np.int64)
    R = np.zeros(size, dtype=np.int64)
    todo = np.arange(size)
    while todo.size:
        N = geometric(rng, p, (todo.size, 2))
        gap = np.abs(N[:, 0] - N[:, 1])
        ok = gap <= m
        K[todo] += np.where(ok, N.max(axis=1), N.min(axis=1) + m)
        D[todo[ok]] = gap[ok]
        R[todo[~ok]] += 1
        todo = todo[~ok]
        _check(K, limit)
    return TrajectoryBatch(K, D, R)


# ---------------------------------------------------------------------------
# public interface

def _block_sizes(samples: int) -> list[int]:
    full, rest = divmod(samples, BLOCK)
    return [BLOCK] * full + ([rest] if rest else [])


def _run_block(args) -> TrajectoryBatch:
    scheme, p, seed, b, size, limit = args
    return _block(scheme, p, _rng(seed, b), size, limit)


def _batches(scheme: SchemeSpec, p: float, config: SimConfig) -> Iterator[TrajectoryBatch]:
    jobs = [(scheme, float(p), config.seed, b, size, config.max_attempts)
            for b, size in enumerate(_block_sizes(config.samples))]
    if config.shards == 1 or len(jobs) == 1:
        for job in jobs:
            yield _run_block(job)
        return
    with ProcessPoolExecutor(max_workers=config.shards) as pool:
        yield from pool.map(_run_block, jobs)


def simulate(scheme: SchemeSpec, p: float, config: SimConfig = SimConfig()) -> Iterator[TrajectoryBatch]:
    """Stream batches of trajectories in a fixed order."""
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    yield from _batches(scheme, p, config)


class _Moments:
    """Chan-style merge of (count, mean, M2), applied in block order."""

    def __init__(self):
        self.n, self.mean, self.m2 = 0, 0.0, 0.0

    def add(self, x: np.ndarray):
        nb = len(x)
        if not nb:
            return
        mb = float(np.mean(x))
        m2b = float(np.sum((x - mb) ** 2))
        delta = mb - self.mean
        total = self.n + nb
        self.mean += delta * nb / total
        self.m2 += m2b + delta * delta * self.n * nb / total
        self.n = total

    @property
    def se(self) -> float:
        if self.n < 2:
            return math.nan
        return math.sqrt(self.m2 / (self.n - 1) / self.n)


@dataclass(frozen=True)
class Estimate:
    samples: int
    mean_K: float
    mean_D: float
    mean_exp: float
    se_K: float
    se_D: float
    se_exp: float
    mean_restarts: float


def estimate(scheme: SchemeSpec, p: float, alpha: float, config: SimConfig = SimConfig()) -> Estimate:
    """Means and standard errors of K, D and exp(-alpha D)."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    mk, md, me, mr = _Moments(), _Moments(), _Moments(), _Moments()
    for batch in simulate(scheme, p, config):
        mk.add(batch.K.astype(float))
        md.add(batch.D.astype(float))
        me.add(np.exp(-alpha * batch.D))
        mr.add(batch.restarts.astype(float))
    return Estimate(mk.n, mk.mean, md.mean, me.mean, mk.se, md.se, me.se, mr.mean)


def empirical_pmf(scheme: SchemeSpec, p: float, config: SimConfig = SimConfig(),
                  max_k: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Normalised counts of K and D at 0..max_k; the last entry holds everything beyond."""
    ck = np.zeros(max_k + 2)
    cd = np.zeros(max_k + 2)
    total = 0
    for batch in simulate(scheme, p, config):
        ck += np.bincount(np.minimum(batch.K, max_k + 1), minlength=max_k + 2)
        cd += np.bincount(np.minimum(batch.D, max_k + 1), minlength=max_k + 2)
        total += len(batch)
    return ck / total, cd / total


def dump_csv(path, est: Estimate, scheme: SchemeSpec, p: float, alpha: float, config: SimConfig) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scheme", "p", "alpha", "seed", "samples", "mean_K", "se_K", "mean_D", "se_D",
                    "mean_exp", "se_exp", "mean_restarts"])
        w.writerow([scheme.label(), p, alpha, config.seed, est.samples, est.mean_K, est.se_K,
                    est.mean_D, est.se_D, est.mean_exp, est.se_exp, est.mean_restarts])


def chi_square_pvalue(observed: np.ndarray, expected: np.ndarray, samples: int, min_count: float = 5.0) -> float:
    """Goodness of fit of normalised counts; adjacent bins are pooled until each expects min_count."""
    from scipy import stats

    if len(observed) != len(expected):
        raise ValueError("observed and expected need the same bins")
    obs, exp = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(np.asarray(observed) * samples, np.asarray(expected) * samples):
        o_acc += o
        e_acc += e
        if e_acc >= min_count:
            obs.append(o_acc)
            exp.append(e_acc)
            o_acc = e_acc = 0.0
    if obs:
        obs[-1] += o_acc
        exp[-1] += e_acc
    if len(obs) < 2:
        return 1.0
    obs, exp = np.array(obs), np.array(exp)
    exp *= obs.sum() / exp.sum()
    return float(stats.chisquare(obs, exp).pvalue)


def exact_pmfs(scheme: SchemeSpec, p, max_k: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Exact probabilities laid out like ``empirical_pmf`` (overflow in the last entry)."""
    from fractions import Fraction

    from .scheme_catalog import exact_pgfs

    out = []
    for pgf in exact_pgfs(scheme, Fraction(p).limit_denominator(10**12) if not isinstance(p, Fraction) else p):
        coeffs = np.array([float(c) for c in pgf.series(max_k)])
        out.append(np.append(coeffs, max(0.0, 1 - coeffs.sum())))
    return out[0], out[1]
