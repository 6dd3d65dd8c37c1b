"""Physical parameters, secret key fractions and key rates, bounds and thresholds."""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import optimize, special, stats

from . import quantum_state as qs
from .scheme_catalog import SchemeSpec, scheme_statistics

L_ATT = 22.0  # km
N_REFRACTION = 1.44
C_VACUUM = 299792.458  # km/s
C_FIBER = C_VACUUM / N_REFRACTION

# one-way error thresholds, rounded; minimal_mu uses the exact roots below
Q_BB84 = 0.110
Q_SIX_STATE = 0.126

GHZ = 1e9


class TimeModel(str, Enum):
    SIGNALLING = "signalling"  # tau = L0 / c_f
    CLOCK = "clock"  # tau = tau_clock (node receives photons)
    COMBINED = "combined"  # tau = tau_clock + L0 / c_f


@dataclass(frozen=True)
class RepeaterParams:
    n: int = 2
    L0: float = 100.0
    p_link: float = 1.0
    tau_coh: float = 10.0
    tau_clock: float = 1e-6
    mu: float = 1.0
    mu0: float = 1.0
    F0: float = 1.0
    M: int = 1
    dephasing_multiplicity: int = 1
    time_model: TimeModel = TimeModel.SIGNALLING

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if not self.L0 > 0:
            raise ValueError("L0 must be positive")
        for name in ("p_link", "mu", "mu0", "F0"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.tau_coh <= 0 or self.tau_clock < 0:
            raise ValueError("times must be positive")
        if self.M < 1 or int(self.M) != self.M:
            raise ValueError("M must be a positive integer")
        if self.dephasing_multiplicity not in (1, 2):
            raise ValueError("dephasing multiplicity must be 1 or 2")
        object.__setattr__(self, "time_model", TimeModel(self.time_model))

    @classmethod
    def for_distance(cls, L: float, n: int, **kw) -> RepeaterParams:
        return cls(n=n, L0=L / n, **kw)

    @property
    def L(self) -> float:
        return self.n * self.L0

    @property
    def tau(self) -> float:
        """Elementary time unit in seconds."""
        if self.time_model is TimeModel.SIGNALLING:
            return self.L0 / C_FIBER
        if self.time_model is TimeModel.CLOCK:
            return self.tau_clock
        return self.tau_clock + self.L0 / C_FIBER

    def replace(self, **kw) -> RepeaterParams:
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class RateResult:
    p: float
    alpha: float
    mean_K: float
    mean_D: float
    exp_dephasing: float
    raw_rate: float
    e_z: float
    e_x_avg: float
    skf: float
    skr_per_use: float
    skr_per_second: float


def success_probability(params: RepeaterParams, multiplexed: bool = True) -> float:
    p = params.p_link * math.exp(-params.L0 / L_ATT)
    if multiplexed and params.M > 1:
        p = -math.expm1(params.M * math.log1p(-p)) if p < 1 else 1.0
    return p


def inverse_eff_coherence(params: RepeaterParams) -> float:
    return params.tau / params.tau_coh


# ---------------------------------------------------------------------------
# key fractions

def binary_entropy(x: float) -> float:
    if not 0 <= x <= 1:
        raise ValueError("argument must lie in [0, 1]")
    return float((special.entr(x) + special.entr(1 - x)) / math.log(2))


def secret_key_fraction_bb84(e_z: float, e_x_avg: float) -> float:
    for e in (e_z, e_x_avg):
        if not 0 <= e <= 0.5 + 1e-12:
            raise ValueError("error rates must lie in [0, 1/2]")
    return max(0.0, 1 - binary_entropy(min(e_x_avg, 0.5)) - binary_entropy(min(e_z, 0.5)))


def secret_key_fraction_six_state(bell_weights: Sequence[float]) -> float:
    w = np.asarray(bell_weights, dtype=float)
    if w.shape != (4,) or (w < -1e-12).any() or abs(w.sum() - 1) > 1e-9:
        raise ValueError("need four non-negative weights summing to 1")
    return max(0.0, 1 - float(stats.entropy(np.clip(w, 0, None), base=2)))


def _skf(protocol: str, qp: qs.FinalStateParams) -> tuple[float, float, float]:
    e_z, e_x = qs.qbers(qp)
    if protocol == "bb84":
        r = secret_key_fraction_bb84(e_z, e_x)
    elif protocol == "six_state":
        r = secret_key_fraction_six_state([float(w) for w in qs.final_state(qp).bell_weights()])
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    return e_z, e_x, r


# ---------------------------------------------------------------------------
# rates

def scheme_alpha(scheme: SchemeSpec, params: RepeaterParams) -> float:
    """Dephasing rate per unit of the scheme's D."""
    return inverse_eff_coherence(params) * params.dephasing_multiplicity * scheme.dephasing_unit


def secret_key_rate(scheme: SchemeSpec, params: RepeaterParams, protocol: str = "bb84",
                    mc_config=None, workers: int = 1) -> RateResult:
    """Key rate of a scheme; falls back to Monte Carlo when given a config.

    With multiplexing the rates are per channel use, i.e. divided by M.
    """
    if scheme.n != params.n:
        raise ValueError("scheme and parameters disagree on n")
    p = success_probability(params)
    alpha = scheme_alpha(scheme, params)
    try:
        k_stats, d_stats = scheme_statistics(scheme, p, workers=workers)
        mean_K, mean_D = k_stats.mean(), d_stats.mean()
        exp_d = d_stats.exp_moment(alpha)
    except NotImplementedError:
        if mc_config is None:
            raise
        from .montecarlo import estimate

        est = estimate(scheme, p, alpha, mc_config)
        mean_K, mean_D, exp_d = est.mean_K, est.mean_D, est.mean_exp
    exp_d = min(max(exp_d, 0.0), 1.0)
    qp = qs.FinalStateParams(params.n, params.F0, params.mu0, params.mu, exp_d)
    e_z, e_x, r = _skf(protocol, qp)
    raw = 1 / (mean_K * params.M)
    skr = r * raw
    return RateResult(p, alpha, mean_K, mean_D, exp_d, raw, e_z, e_x, r, skr, skr / params.tau)


def plob(L: float) -> float:
    """Repeaterless key capacity in bits per channel use."""
    if L < 0:
        raise ValueError("L must be non-negative")
    if L == 0:
        return math.inf
    return -math.log1p(-math.exp(-L / L_ATT)) / math.log(2)


def plob_qr(L0: float) -> float:
    """The same bound for a single repeater segment of length L0."""
    return plob(L0)


def plob_per_second(L: float, clock: float = GHZ) -> float:
    return plob(L) * clock


# ---------------------------------------------------------------------------
# thresholds

@lru_cache(maxsize=None)
def error_threshold(protocol: str = "bb84") -> float:
    """QBER at which the key fraction of a depolarised state reaches zero."""
    if protocol == "bb84":
        fn = lambda e: 1 - 2 * binary_entropy(e)
    elif protocol == "six_state":
        fn = lambda e: 1 - float(stats.entropy([1 - 1.5 * e, e / 2, e / 2, e / 2], base=2))
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    return float(optimize.brentq(fn, 0.05, 0.2, xtol=1e-15))


def minimal_mu(n: int, protocol: str = "bb84", mode: str = "mu0_eq_mu") -> float:
    """Smallest mu with mu_n >= 1 - 2Q in the absence of dephasing."""
    Q = error_threshold(protocol)
    power = {"mu0_eq_1": n - 1, "mu0_eq_mu": 2 * n - 1}[mode]
    if power == 0:
        return 0.0
    return (1 - 2 * Q) ** (1 / power)


def threshold_mu_vs_plob(scheme: SchemeSpec, L: float, params: RepeaterParams, k: float = 1.0,
                         protocol: str = "bb84", tol: float = 1e-4) -> float | None:
    """Smallest mu = mu0 whose key rate reaches k times the PLOB bound at total length L.

    Returns None when even mu = 1 falls short.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    base = params.replace(n=scheme.n, L0=L / scheme.n)
    target = k * plob(L)

    def gap(mu):
        return secret_key_rate(scheme, base.replace(mu=mu, mu0=mu), protocol).skr_per_use - target

    lo = minimal_mu(scheme.n, protocol, "mu0_eq_mu")
    if gap(1.0) <= 0:
        return None
    hi = 1.0
    if gap(lo) > 0:
        return lo
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if gap(mid) > 0:
            hi = mid
        else:
            lo = mid
    return hi


def fidelity_from_mu(mu: float) -> float:
    return (3 * mu + 1) / 4


# ---------------------------------------------------------------------------
# multiplexing

@dataclass(frozen=True)
class MultiplexedLink:
    M: int
    p: float
    p_eff: float
    alpha: float


def multiplex(params: RepeaterParams) -> MultiplexedLink:
    return MultiplexedLink(params.M, success_probability(params, multiplexed=False),
                           success_probability(params), inverse_eff_coherence(params))


def _log_p_eff(L0: float, M: int, p_link: float) -> float:
    p = p_link * math.exp(-L0 / L_ATT)
    return math.log(-math.expm1(M * math.log1p(-p))) if p < 1 else 0.0


def multiplex_midpoint(M: int, p_link: float = 1.0, step: float = 0.01) -> float:
    """L0 minimising the second derivative of ln p_eff: centre of the crossover regime.

    For M = 2 the curvature is most negative at L0 -> 0 and the grid edge is returned.
    """
    if M < 2:
        raise ValueError("the crossover needs M >= 2")

    def curvature(L0):
        f = lambda x: _log_p_eff(x, M, p_link)
        return (f(L0 + step) - 2 * f(L0) + f(L0 - step)) / step**2

    grid = np.arange(step, L_ATT * (math.log(M) + 10), 0.5)
    values = [curvature(x) for x in grid]
    i = int(np.argmin(values))
    if i == 0 or i == len(grid) - 1:
        return float(grid[i])
    res = optimize.minimize_scalar(curvature, bracket=(grid[i - 1], grid[i], grid[i + 1]), method="golden",
                                   options={"xtol": 1e-6})
    return float(res.x)


# ---------------------------------------------------------------------------
# where the key fraction collapses

def drop_point_exp_dephasing(params: RepeaterParams) -> float | None:
    """First-order estimate of the E[exp(-alpha D)] at which the BB84 fraction vanishes."""
    mu_n = params.mu ** (params.n - 1) * params.mu0**params.n
    h = binary_entropy((1 - mu_n) / 2)
    if h == 0:
        return None
    return math.sqrt(2 * math.log(2) * h) / (mu_n * (2 * params.F0 - 1) ** params.n)


def _bisect_length(f: Callable[[float], float], lo: float, hi: float, tol: float) -> float | None:
    flo, fhi = f(lo), f(hi)
    if flo <= 0 or fhi > 0:
        return None
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def skf_zero_distance(scheme: SchemeSpec, params: RepeaterParams, L_max: float = 5000.0,
                      tol: float = 0.01) -> float | None:
    """Total length at which the BB84 fraction reaches zero (bisection in L)."""
    def r(L):
        return secret_key_rate(scheme, params.replace(L0=L / scheme.n)).skf
    return _bisect_length(r, 1e-3, L_max, tol)


def drop_distance_estimate(scheme: SchemeSpec, params: RepeaterParams, L_max: float = 5000.0,
                           tol: float = 0.01) -> float | None:
    """Total length where the dephasing average falls to the first-order drop value."""
    need = drop_point_exp_dephasing(params)
    if need is None or need >= 1:
        return None

    def excess(L):
        return secret_key_rate(scheme, params.replace(L0=L / scheme.n)).exp_dephasing - need
    return _bisect_length(excess, 1e-3, L_max, tol)


# ---------------------------------------------------------------------------
# sweeps

def sweep(fn: Callable, items: Iterable, workers: int = 1) -> list:
    """Map fn over items, optionally in processes; results keep input order."""
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
