"""Optical encodings: per-segment success probability and the Pauli error they induce."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import optimize

from . import rates
from .rates import RateResult, RepeaterParams
from .scheme_catalog import SchemeSpec, scheme_statistics

DETECTORS = ("pnrd", "onoff")


class PauliChannelTuple(NamedTuple):
    p_I: float
    p_X: float
    p_Y: float
    p_Z: float

    def check(self, tol: float = 1e-12) -> PauliChannelTuple:
        if min(self) < -tol or abs(sum(self) - 1) > tol:
            raise ValueError("Pauli probabilities must be non-negative and sum to 1")
        return self


IDENTITY = PauliChannelTuple(1, 0, 0, 0)

# Klein group product table on indices (I, X, Y, Z) = (0, 1, 2, 3): a*b = a xor b
# with X=1, Z=3 so that Y=X*Z=2.


def compose(a: Sequence, b: Sequence) -> PauliChannelTuple:
    out = [0] * 4
    for i in range(4):
        for j in range(4):
            out[i ^ j] += a[i] * b[j]
    return PauliChannelTuple(*out)


def compose_power(ch: Sequence, n: int) -> PauliChannelTuple:
    out = IDENTITY
    for _ in range(n):
        out = compose(out, ch)
    return out


def dephasing_channel(coherence) -> PauliChannelTuple:
    """Z flips shrinking the Psi+/Psi- coherence by the given factor."""
    return PauliChannelTuple((1 + coherence) / 2, 0, 0, (1 - coherence) / 2)


def depolarizing_channel(mu) -> PauliChannelTuple:
    noise = (1 - mu) / 4
    return PauliChannelTuple(mu + noise, noise, noise, noise)


def _excitation_loss(gamma, eta, detector: str):
    if detector == "pnrd":
        return gamma**2 * (1 - eta)
    if detector == "onoff":
        return gamma**2 * (1 - Fraction(3, 4) * eta if isinstance(eta, Fraction) else 1 - 0.75 * eta)
    raise ValueError(f"unknown detector {detector!r}")


def _check(gamma, eta):
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not 0 <= eta <= 1:
        raise ValueError("eta must lie in [0, 1]")


def cabrillo_success(gamma, eta, detector: str = "pnrd"):
    """Heralding probability of single-photon interference in one segment."""
    _check(gamma, eta)
    return 2 * gamma**2 * eta * (1 + _excitation_loss(gamma, eta, detector)) / (1 + gamma**2) ** 2


def cabrillo_channel(gamma, eta, detector: str = "pnrd") -> PauliChannelTuple:
    """Pauli channel on the memories caused by two-excitation terms plus loss."""
    _check(gamma, eta)
    x = _excitation_loss(gamma, eta, detector)
    norm = 1 + x
    return PauliChannelTuple(1 / norm, x / 2 / norm, x / 2 / norm, 0 * x)


def half_segment_transmission(params: RepeaterParams) -> float:
    """Interference happens mid-segment, so loss runs over L0/2 only."""
    return params.p_link * math.exp(-params.L0 / (2 * rates.L_ATT))


def final_channel(n: int, params: RepeaterParams, segment: Sequence, exp_dephasing: float) -> PauliChannelTuple:
    """All Pauli noise on the end-to-end pair relative to Psi+."""
    mu_n = params.mu ** (n - 1) * params.mu0**n
    coh = (2 * params.F0 - 1) ** n * exp_dephasing
    ch = compose_power(segment, n)
    ch = compose(ch, dephasing_channel(coh))
    return compose(ch, depolarizing_channel(mu_n))


def pauli_qbers(ch: Sequence) -> tuple[float, float]:
    """(e_x, e_z) of Psi+ after the channel."""
    return ch[2] + ch[3], ch[1] + ch[2]


def cabrillo_qbers(n: int, params: RepeaterParams, gamma: float, detector: str = "pnrd",
                   exp_dephasing: float = 1.0) -> tuple[float, float]:
    """(e_x, e_z) of an n-segment chain of Cabrillo links."""
    eta = half_segment_transmission(params)
    x = _excitation_loss(gamma, eta, detector)
    mu_n = params.mu ** (n - 1) * params.mu0**n
    e_x = (1 - mu_n * (2 * params.F0 - 1) ** n * exp_dephasing / (1 + x) ** n) / 2
    e_z = (1 - mu_n * ((1 - x) / (1 + x)) ** n) / 2
    return e_x, e_z


# ---------------------------------------------------------------------------
# protocols

@dataclass(frozen=True)
class TwinFieldHook:
    """Caller-supplied link model: params -> success probability and Pauli channel."""

    success: Callable[[RepeaterParams], float]
    channel: Callable[[RepeaterParams], PauliChannelTuple]


@dataclass(frozen=True)
class ProtocolSpec:
    variant: str  # dual_rail | cabrillo | hook
    gamma: float | None = None  # cabrillo excitation amplitude; None optimises it
    detector: str = "onoff"
    hook: TwinFieldHook | None = None

    def __post_init__(self):
        if self.variant not in ("dual_rail", "cabrillo", "hook"):
            raise ValueError(f"unknown protocol {self.variant!r}")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.detector not in DETECTORS:
            raise ValueError(f"unknown detector {self.detector!r}")
        if self.variant == "hook" and self.hook is None:
            raise ValueError("hook protocol needs a TwinFieldHook")

    @property
    def label(self) -> str:
        if self.variant == "cabrillo":
            return f"cabrillo_{self.detector}"
        return self.variant


def _segment_rate(n: int, p: float, params: RepeaterParams, segment: Sequence, key: str) -> RateResult:
    scheme = SchemeSpec(n)
    alpha = rates.scheme_alpha(scheme, params)
    k_stats, d_stats = scheme_statistics(scheme, p)
    exp_d = min(max(d_stats.exp_moment(alpha), 0.0), 1.0) if n > 1 else 1.0
    ch = final_channel(n, params, segment, exp_d)
    e_x, e_z = pauli_qbers(ch)
    if key == "bb84":
        r = rates.secret_key_fraction_bb84(e_z, e_x)
    else:
        r = rates.secret_key_fraction_six_state(ch)
    raw = 1 / (k_stats.mean() * params.M)
    return RateResult(p, alpha, k_stats.mean(), d_stats.mean(), exp_d, raw, e_z, e_x, r, r * raw,
                      r * raw / params.tau)


def dual_rail_params(params: RepeaterParams) -> RepeaterParams:
    """Two-photon interference squares the single-photon link efficiency."""
    return params.replace(p_link=params.p_link**2)


def protocol_rate(spec: ProtocolSpec, params: RepeaterParams, key: str = "bb84") -> RateResult:
    """Key rate with ``params.p_link`` read as the single-photon (TF-type) link efficiency."""
    n = params.n
    if spec.variant == "dual_rail":
        dr = dual_rail_params(params)
        return _segment_rate(n, rates.success_probability(dr), dr, IDENTITY, key)
    if spec.variant == "hook":
        return _segment_rate(n, spec.hook.success(params), params, spec.hook.channel(params).check(), key)
    gamma = spec.gamma
    if gamma is None:
        gamma = optimize_gamma(n, params, spec.detector, key)
        if gamma is None:
            gamma = 1e-4
    eta = half_segment_transmission(params)
    return _segment_rate(n, cabrillo_success(gamma, eta, spec.detector), params,
                         cabrillo_channel(gamma, eta, spec.detector), key)


def optimize_gamma(n: int, params: RepeaterParams, detector: str = "onoff", key: str = "bb84",
                   lo: float = 1e-4, hi: float = 1.0, rtol: float = 1e-3) -> float | None:
    """Excitation amplitude maximising the Cabrillo key rate; None if it is zero throughout."""
    def skr(g):
        return protocol_rate(ProtocolSpec("cabrillo", g, detector), params, key).skr_per_use

    grid = np.geomspace(lo, hi, 41)
    values = [skr(g) for g in grid]
    i = int(np.argmax(values))
    if values[i] <= 0:
        return None
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(lambda lg: -skr(math.exp(lg)), bounds=(math.log(a), math.log(b)),
                                   method="bounded", options={"xatol": rtol})
    best = math.exp(res.x)
    return best if skr(best) >= values[i] else float(grid[i])


def per_second_comparison(protocols: Sequence[ProtocolSpec], ns: Sequence[int], L_grid: Sequence[float],
                          params: RepeaterParams, key: str = "bb84") -> list[dict]:
    """Secret bits per second over a distance grid; n=1 rows give the PLOB bound at a GHz clock."""
    rows = []
    for L in L_grid:
        rows.append({"L": L, "protocol": "plob", "n": 1, "skr_per_second": rates.plob_per_second(L)})
        for spec in protocols:
            for n in ns:
                if n == 1:
                    continue
                res = protocol_rate(spec, params.replace(n=n, L0=L / n), key)
                rows.append({"L": L, "protocol": spec.label, "n": n, "skr_per_second": res.skr_per_second})
    return rows
