"""Per-use and per-second overview tables for an 800 km link split into n segments."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import rates
from .rates import RepeaterParams
from .scheme_catalog import SchemeSpec, parallel_K_mean, scheme_statistics

TOTAL_L = 800.0
COLUMNS = (1, 2, 4, 8, 80, 800, 8000)
TAU_COH = {1: 0.1, 2: 10.0}  # the two coherence times, indexed like alpha_1, alpha_2
MUS = (1.0, 0.99)
EXACT_LIMIT = 8  # beyond this the optimal scheme's dephasing is bounded by the sequential one


@dataclass(frozen=True)
class Cell:
    value: float | None
    marker: str = ""  # "", "<" or ">"

    def render(self, digits: int = 10) -> str:
        if self.value is None:
            return ""
        return f"{self.marker}{self.value:.{digits}g}"


@dataclass
class Table:
    name: str
    rows: dict[str, dict[int, Cell]] = field(default_factory=dict)

    def put(self, row: str, n: int, value, marker: str = ""):
        self.rows.setdefault(row, {})[n] = Cell(None if value is None else float(value), marker)

    def get(self, row: str, n: int) -> Cell:
        return self.rows.get(row, {}).get(n, Cell(None))


def _params(n: int, tau_coh: float, mu: float, time_model="signalling") -> RepeaterParams:
    return RepeaterParams.for_distance(TOTAL_L, n, tau_coh=tau_coh, mu=mu, mu0=mu, time_model=time_model)


def _key_fraction(n: int, mu: float, exp_d: float) -> float:
    from . import quantum_state as qs

    e_z, e_x = qs.qbers(qs.FinalStateParams(n, 1.0, mu, mu, exp_d))
    return rates.secret_key_fraction_bb84(e_z, e_x)


def _column(distribution: str, n: int, workers: int):
    """Exact statistics of one column, or sequential bounds for large optimal chains."""
    p = rates.success_probability(_params(n, 1.0, 1.0))
    bounded = distribution == "parallel" and n > EXACT_LIMIT
    if bounded:
        _, d_stats = scheme_statistics(SchemeSpec(n, "sequential"), p)
        mean_K = parallel_K_mean(n, p)
    else:
        k_stats, d_stats = scheme_statistics(SchemeSpec(n, distribution), p, workers=workers)
        mean_K = k_stats.mean()
    return p, mean_K, d_stats, bounded


def per_use_table(distribution: str, workers: int = 1) -> Table:
    name = "III" if distribution == "sequential" else "IV"
    table = Table(name)
    for n in COLUMNS:
        L0 = TOTAL_L / n
        table.put("L0", n, L0)
        table.put("S_PLOB_QR", n, rates.plob_qr(L0))
        if n == 1:
            continue
        p, mean_K, d_stats, bounded = _column(distribution, n, workers)
        up, down = ("<", ">") if bounded else ("", "")
        table.put("E[K]", n, mean_K)
        table.put("R", n, 1 / mean_K)
        table.put("E[D]", n, d_stats.mean(), up)
        for i, tau_coh in TAU_COH.items():
            alpha = rates.inverse_eff_coherence(_params(n, tau_coh, 1.0))
            exp_d = d_stats.exp_moment(alpha)
            table.put(f"alpha_{i}", n, alpha)
            table.put(f"alpha_{i}*E[D]", n, alpha * d_stats.mean(), up)
            table.put(f"E[exp(-alpha_{i} D)]", n, exp_d, down)
            for mu in MUS:
                r = _key_fraction(n, mu, exp_d)
                # a fraction that vanishes even without dephasing is exactly zero
                mark = "" if _key_fraction(n, mu, 1.0) == 0 else down
                table.put(f"r_{i}(mu={mu:g})", n, r, mark)
                table.put(f"S_{i}(mu={mu:g})", n, r / mean_K, mark)
    return table


def per_second_table(distribution: str, workers: int = 1, time_model: str = "combined") -> Table:
    name = "V" if distribution == "sequential" else "VI"
    per_use = per_use_table(distribution, workers)
    table = Table(name)
    for n in COLUMNS:
        L0 = TOTAL_L / n
        table.put("L0", n, L0)
        # the capacity reference is quoted at a GHz source clock in every column
        table.put("S_PLOB_QR/tau", n, rates.plob_qr(L0) * rates.GHZ)
        if n == 1:
            continue
        tau = _params(n, 1.0, 1.0, time_model).tau
        table.put("R/tau", n, per_use.get("R", n).value / tau)
        for i in TAU_COH:
            for mu in MUS:
                cell = per_use.get(f"S_{i}(mu={mu:g})", n)
                table.put(f"S_{i}(mu={mu:g})/tau", n, cell.value / tau, cell.marker)
    return table


def table(which: str, workers: int = 1) -> Table:
    which = which.upper()
    if which == "III":
        return per_use_table("sequential", workers)
    if which == "IV":
        return per_use_table("parallel", workers)
    if which == "V":
        return per_second_table("sequential", workers)
    if which == "VI":
        return per_second_table("parallel", workers)
    raise ValueError(f"unknown table {which!r}; choose III, IV, V or VI")
