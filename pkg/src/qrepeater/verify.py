"""Reference numbers and the checks behind ``qrepeater verify``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterator

from scipy.optimize import brentq

from . import perm_engine as pe
from . import protocols, rates, scheme_catalog, tables
from .pgf_core import symbolic_equal
from .rates import RepeaterParams
from .scheme_catalog import CutoffRenewal, SchemeSpec, scheme_statistics

# minimal mu: n -> (mu0=1 BB84, mu0=mu BB84, mu0=1 six-state, mu0=mu six-state)
MINIMAL_MU = {2: (0.780, 0.920, 0.748, 0.908), 4: (0.920, 0.965, 0.908, 0.959),
              8: (0.965, 0.984, 0.959, 0.981)}

# (table, row, n) -> (value, relative tolerance)
TABLE_CELLS = {
    ("III", "E[K]", 4): (35497, 0.01), ("III", "E[K]", 8): (754, 0.01),
    ("III", "E[D]", 4): (26623, 0.01), ("III", "E[D]", 8): (659, 0.01),
    ("III", "E[exp(-alpha_1 D)]", 8): (0.0729, 0.01),
    ("III", "E[exp(-alpha_2 D)]", 4): (0.1573, 0.01), ("III", "E[exp(-alpha_2 D)]", 8): (0.9689, 0.01),
    ("III", "r_1(mu=1)", 8): (0.0038, 0.02), ("III", "r_2(mu=1)", 4): (0.0179, 0.02),
    ("III", "r_2(mu=1)", 8): (0.8843, 0.02), ("III", "r_2(mu=0.99)", 8): (0.2203, 0.02),
    ("III", "S_2(mu=1)", 8): (0.0012, 0.02), ("III", "S_2(mu=0.99)", 8): (0.0003, 0.02),
    ("IV", "E[K]", 4): (18487, 0.01), ("IV", "E[K]", 8): (255, 0.01),
    ("IV", "E[D]", 4): (22923, 0.01), ("IV", "E[D]", 8): (488, 0.01),
    ("IV", "E[exp(-alpha_1 D)]", 8): (0.1552, 0.01),
    ("IV", "E[exp(-alpha_2 D)]", 4): (0.2215, 0.01), ("IV", "E[exp(-alpha_2 D)]", 8): (0.9769, 0.01),
    ("IV", "r_1(mu=1)", 8): (0.0174, 0.02), ("IV", "r_2(mu=1)", 4): (0.0357, 0.02),
    ("IV", "r_2(mu=1)", 8): (0.9090, 0.02), ("IV", "r_2(mu=0.99)", 8): (0.2323, 0.02),
    ("IV", "S_2(mu=1)", 8): (0.0036, 0.02), ("IV", "S_2(mu=0.99)", 8): (0.0009, 0.02),
    ("V", "R/tau", 4): (0.0293, 0.10), ("V", "R/tau", 8): (2.8, 0.10),
    ("V", "S_1(mu=1)/tau", 8): (0.0106, 0.10), ("V", "S_2(mu=1)/tau", 4): (0.0005, 0.10),
    ("V", "S_2(mu=1)/tau", 8): (2.4, 0.10), ("V", "S_2(mu=0.99)/tau", 8): (0.6086, 0.10),
    ("VI", "R/tau", 4): (0.0563, 0.10), ("VI", "R/tau", 8): (8.2, 0.10),
    ("VI", "S_1(mu=1)/tau", 8): (0.1423, 0.10), ("VI", "S_2(mu=1)/tau", 4): (0.0020, 0.10),
    ("VI", "S_2(mu=1)/tau", 8): (7.4, 0.10), ("VI", "S_2(mu=0.99)/tau", 8): (1.9, 0.10),
}

# printed values rounded to few digits get an absolute slack of half a unit in the last place
_PRINTED_DIGITS = {0.0003: 0.00005, 0.0009: 0.00005, 0.0012: 0.00005, 0.0036: 0.00005,
                   0.0038: 0.00005, 0.0005: 0.00005, 0.0020: 0.00005}


@dataclass(frozen=True)
class Check:
    name: str
    ok: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}" + (f"  ({self.detail})" if self.detail else "")


def close(got: float, want: float, rel: float, abs_tol: float = 0.0) -> bool:
    return abs(got - want) <= max(rel * abs(want), abs_tol)


def _cell_check(name: str, got: float, want: float, rel: float) -> Check:
    ok = close(got, want, rel, _PRINTED_DIGITS.get(want, 0.0))
    return Check(name, ok, f"got {got:.6g}, want {want:g} +-{rel:.0%}")


# ---------------------------------------------------------------------------
# individual check groups

def check_minimal_mu() -> Iterator[Check]:
    modes = [("mu0_eq_1", "bb84"), ("mu0_eq_mu", "bb84"), ("mu0_eq_1", "six_state"), ("mu0_eq_mu", "six_state")]
    for n, row in MINIMAL_MU.items():
        for (mode, key), want in zip(modes, row):
            got = rates.minimal_mu(n, key, mode)
            yield Check(f"minimal mu n={n} {key} {mode}", round(got, 3) == want, f"got {got:.4f}")


def check_tables(which: tuple[str, ...], workers: int = 1) -> Iterator[Check]:
    for name in which:
        tab = tables.table(name, workers)
        for (t, row, n), (want, rel) in TABLE_CELLS.items():
            if t == name:
                yield _cell_check(f"table {t} {row} n={n}", tab.get(row, n).value, want, rel)


def check_optimal_small() -> Iterator[Check]:
    """The n=4 optimal column without building the n=8 partition sum."""
    params = RepeaterParams.for_distance(tables.TOTAL_L, 4)
    p = rates.success_probability(params)
    k, d = scheme_statistics(SchemeSpec(4), p)
    alpha2 = rates.inverse_eff_coherence(params)
    yield _cell_check("optimal n=4 E[K]", k.mean(), 18487, 0.01)
    yield _cell_check("optimal n=4 E[D]", d.mean(), 22923, 0.01)
    yield _cell_check("optimal n=4 E[exp(-alpha_2 D)]", d.exp_moment(alpha2), 0.2215, 0.01)


def check_cutoff_limit() -> Iterator[Check]:
    for n in (2, 4, 8):
        params = RepeaterParams.for_distance(tables.TOTAL_L, n)
        p = rates.success_probability(params)
        m = math.ceil(10 * n / p)
        cut = CutoffRenewal(n, p, m)
        k, d = scheme_statistics(SchemeSpec(n, "sequential"), p)
        worst = 0.0
        for tau_coh in tables.TAU_COH.values():
            t = math.exp(-rates.inverse_eff_coherence(params.replace(tau_coh=tau_coh)))
            worst = max(worst, abs(cut.k_evaluate(t) - k.evaluate(t)), abs(cut.d_evaluate(t) - d.evaluate(t)))
        yield Check(f"cutoff m=10n/p matches no cutoff, n={n}", worst < 1e-6, f"max diff {worst:.2e}")


def check_cutoff_exact() -> Iterator[Check]:
    for n, p, m in ((2, Fraction(3, 10), 5), (3, Fraction(1, 4), 9), (4, Fraction(1, 5), 12)):
        k, d = scheme_catalog.sequential_global_cutoff_pgfs(n, p, m)
        cut = CutoffRenewal(n, float(p), m)
        worst = max(abs(float(k.evaluate(t)) - cut.k_evaluate(t)) + abs(float(d.evaluate(t)) - cut.d_evaluate(t))
                    for t in (0.5, 0.9, 0.999))
        yield Check(f"float cutoff model equals exact PGF n={n} m={m}", worst < 1e-12, f"{worst:.1e}")


def check_fixtures(names=None) -> Iterator[Check]:
    for name in names or scheme_catalog.fixture_names():
        ok = symbolic_equal(scheme_catalog.load_fixture(name), scheme_catalog.engine_pgf(name))
        yield Check(f"fixture {name} re-derived exactly", ok)


def check_greedy_global(ns=range(2, 9), random_samples: int = 100_000) -> Iterator[Check]:
    for n in ns:
        bound = 8 if n <= 5 else 4
        ok, bad = pe.verify_greedy_equals_global(n, bound, random_samples)
        yield Check(f"greedy equals global n={n} (B={bound})", ok, "" if ok else f"counterexample {bad}")


def dual_rail_rate() -> float:
    params = RepeaterParams.for_distance(800, 8, p_link=0.9, tau_coh=10.0, mu=0.99, mu0=1.0, F0=0.99,
                                         dephasing_multiplicity=2, time_model="combined")
    return protocols.protocol_rate(protocols.ProtocolSpec("dual_rail"), params).skr_per_second


def check_dual_rail() -> Iterator[Check]:
    s = dual_rail_rate()
    yield Check("dual-rail n=8 at 800 km about 1 bit/s", 0.5 <= s <= 2.0, f"{s:.3f} bits/s")


RATIO_ALPHAS = tuple(0.05 * i for i in range(1, 101))  # (0, 5]


def check_policy_orderings(p: float = 0.01) -> Iterator[Check]:
    ratio = pe.exact_mean_ratio("doubling", "mixed31", 4, Fraction(p).limit_denominator(10**6))
    yield Check("E[D] doubling = E[D] 3+1 at n=4", ratio == 1, f"ratio {ratio}")
    rows = pe.ratio_diagnostics("mixed31", "doubling", 4, p, RATIO_ALPHAS)
    worst = min(r[2] for r in rows)
    yield Check("exp-moment ratio 3+1 / doubling > 1 on (0, 5]", worst > 1, f"min {worst:.6f}")
    names = ("doubling", "mixed2222", "mixed242", "mixed44", "optimal")
    d = {s: scheme_statistics(SchemeSpec(8, swapping=s), p)[1] for s in names}
    means = {s: v.mean() for s, v in d.items()}
    yield Check("n=8 doubling has the largest E[D]", max(means, key=means.get) == "doubling")
    alphas = (0.001, 0.01, 0.1, 1.0)
    smallest = all(min(names, key=lambda s: d[s].exp_moment(a)) == "doubling" for a in alphas)
    yield Check("n=8 doubling has the smallest exp-moment", smallest)
    # for alpha -> 0 the exp-moment follows -alpha E[D], so the pattern can only hold past a crossover
    gap = lambda a: d["mixed242"].exp_moment(a) - d["mixed2222"].exp_moment(a)
    pattern = means["mixed242"] > means["mixed2222"] and all(gap(a) > 0 for a in RATIO_ALPHAS)
    crossover = brentq(gap, 1e-5, RATIO_ALPHAS[0]) if gap(1e-5) < 0 < gap(RATIO_ALPHAS[0]) else math.nan
    yield Check("242 beats 2222 in exp-moment despite larger E[D]", pattern,
                f"E[D] {means['mixed242']:.3f} vs {means['mixed2222']:.3f}, holds for alpha > {crossover:.4f}")


# ---------------------------------------------------------------------------

LEVELS: dict[str, list[Callable[..., Iterator[Check]]]] = {
    "fast": [check_minimal_mu, lambda w: check_tables(("III",), w), check_optimal_small, check_cutoff_limit,
             check_cutoff_exact, check_dual_rail,
             lambda w: check_fixtures(["two_segment_D", "two_segment_K", "optimal_3", "seq_a_non", "start_a_imm"])],
    "full": [check_minimal_mu, lambda w: check_tables(("III", "IV", "V", "VI"), w), check_cutoff_limit,
             check_cutoff_exact, check_dual_rail, lambda w: check_fixtures(), lambda w: check_greedy_global(),
             check_policy_orderings],
}


def run(level: str = "fast", workers: int = 1, log: Callable[[str], None] | None = None) -> list[Check]:
    if level not in LEVELS:
        raise ValueError(f"unknown level {level!r}")
    results = []
    for group in LEVELS[level]:
        try:
            checks = list(group(workers)) if _takes_workers(group) else list(group())
        except Exception as exc:  # a crashing group is a failed check, not a crash of verify
            checks = [Check(getattr(group, "__name__", "check"), False, f"{type(exc).__name__}: {exc}")]
        for c in checks:
            if log:
                log(c.line())
            results.append(c)
    return results


def _takes_workers(fn) -> bool:
    return fn.__code__.co_argcount >= 1 and fn.__code__.co_varnames[0] == "w"
