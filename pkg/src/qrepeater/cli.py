"""Command-line front end: rates, tables, contours, comparisons and simulations as CSV or JSON."""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, montecarlo, protocols, rates, scheme_catalog, tables
from .rates import RepeaterParams, TimeModel
from .scheme_catalog import THREE_SEGMENT_VARIANTS, SWAPPING, GlobalCutoff, SchemeSpec, VectorCutoff

DIGITS = 10

# flags read from --config files, with the type each value is parsed as
CONFIG_KEYS = {
    "n": int, "L0": float, "L": str, "p_link": float, "tau_coh": float, "tau_clock": float,
    "mu": float, "mu0": float, "F0": float, "M": int, "multiplicity": int, "time_model": str,
    "scheme": str, "measurement": str, "cutoff": int, "cutoff_vector": str, "protocol": str,
    "detector": str, "gamma": float, "key": str, "seed": int, "samples": int, "workers": int,
    "format": str, "k": str, "p": float, "alpha": str, "ns": str, "level": str,
}


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# formatting

def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.{DIGITS}g}"


def _json_value(value):
    if value is None or isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    value = float(value)
    if not math.isfinite(value):
        return fmt(value)
    return float(fmt(value))


def render(columns: Sequence[str], rows: Sequence[Sequence], meta: dict, out_format: str) -> str:
    if out_format == "json":
        doc = {
            "params": {k: _json_value(v) for k, v in sorted(meta.items())},
            "columns": list(columns),
            "rows": [[_json_value(v) for v in row] for row in rows],
        }
        return json.dumps(doc, indent=1) + "\n"
    lines = [f"# {k}={fmt(v)}" for k, v in sorted(meta.items())]
    lines.append(",".join(columns))
    lines += [",".join(fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def emit(args, columns, rows, meta) -> None:
    text = render(columns, rows, meta, args.format)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)


# ---------------------------------------------------------------------------
# argument handling

def parse_grid(spec: str | None) -> list[float]:
    """'a:b:step' (inclusive), a comma list, or '' for an empty grid."""
    if spec is None or not spec.strip():
        return []
    if ":" in spec:
        parts = [float(x) for x in spec.split(":")]
        if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
            raise CliError(f"bad range {spec!r}; expected start:stop:step")
        start, stop, step = parts
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(count)]
    try:
        return [float(x) for x in spec.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"bad grid {spec!r}") from None


def parse_ints(spec: str | None) -> list[int]:
    return [int(v) for v in parse_grid(spec)]


def read_config(path: str) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise CliError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key](value)
        except ValueError:
            raise CliError(f"{path}:{lineno}: bad value for {key}") from None
    return values


def _scheme(args, n: int | None = None) -> SchemeSpec:
    n = args.n if n is None else n
    cutoff = None
    if args.cutoff_vector:
        cutoff = VectorCutoff(tuple(parse_ints(args.cutoff_vector)))
    elif args.cutoff is not None:
        cutoff = GlobalCutoff(args.cutoff)
    name = args.scheme
    if name == "sequential" or name in THREE_SEGMENT_VARIANTS:
        return SchemeSpec(n, name, cutoff=cutoff, measurement=args.measurement)
    if name in SWAPPING:
        return SchemeSpec(n, "parallel", swapping=name, cutoff=cutoff)
    raise CliError(f"unknown scheme {name!r}")


def _params(args, **override) -> RepeaterParams:
    kw = dict(n=args.n, L0=args.L0, p_link=args.p_link, tau_coh=args.tau_coh, tau_clock=args.tau_clock,
              mu=args.mu, mu0=args.mu if args.mu0 is None else args.mu0, F0=args.F0, M=args.M,
              dephasing_multiplicity=args.multiplicity, time_model=args.time_model)
    kw.update(override)
    return RepeaterParams(**kw)


def _base_meta(args) -> dict:
    keys = ("n", "L0", "p_link", "tau_coh", "tau_clock", "mu", "F0", "M", "multiplicity", "time_model",
            "scheme", "measurement", "cutoff", "cutoff_vector", "key")
    meta = {k: getattr(args, k) for k in keys}
    meta["mu0"] = args.mu if args.mu0 is None else args.mu0
    meta["command"] = args.command
    meta["version"] = __version__
    return meta


def _mc_config(args) -> montecarlo.SimConfig:
    return montecarlo.SimConfig(seed=args.seed, samples=args.samples, shards=max(args.workers, 1))


def _plot(args, x, series: dict, xlabel: str, ylabel: str, logy: bool = True) -> None:
    if not args.plot:
        return
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise CliError("--plot needs matplotlib (pip install 'artifact[plot]')") from None
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, ys in series.items():
        xs, vals = zip(*[(a, b) for a, b in zip(x, ys) if b is not None and b > 0]) if logy else (x, ys)
        if xs:
            ax.plot(xs, vals, label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize="small")
    target = Path(args.out).with_suffix(".png") if args.out not in (None, "-") else Path(f"{args.command}.png")
    fig.savefig(target, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)


# ---------------------------------------------------------------------------
# commands

def _rate_row(task):
    args, L = task
    params = _params(args, L0=L / args.n)
    if args.protocol in ("dual_rail", "cabrillo"):
        spec = protocols.ProtocolSpec(args.protocol, args.gamma, args.detector)
        res = protocols.protocol_rate(spec, params, args.key)
    else:
        mc = _mc_config(args) if args.samples else None
        res = rates.secret_key_rate(_scheme(args), params, args.key, mc_config=mc)
    return [L, res.raw_rate, res.e_z, res.e_x_avg, res.skf, res.skr_per_use, res.skr_per_second, rates.plob(L)]


def cmd_rates(args) -> int:
    grid = parse_grid(args.L)
    if args.protocol not in ("dual_rail", "cabrillo"):
        _scheme(args)
    rows = rates.sweep(_rate_row, [(args, L) for L in grid], args.workers)
    columns = ["L", "raw", "e_z", "e_x", "r", "S_per_use", "S_per_second", "plob"]
    meta = _base_meta(args) | {"L": args.L, "protocol": args.protocol, "detector": args.detector,
                               "gamma": args.gamma}
    emit(args, columns, rows, meta)
    _plot(args, grid, {"S per use": [r[5] for r in rows], "PLOB": [r[7] for r in rows]},
          "L [km]", "secret bits per channel use")
    return 0


def cmd_tables(args) -> int:
    if args.which.upper() in ("V", "VI"):
        tab = tables.per_second_table("sequential" if args.which.upper() == "V" else "parallel",
                                      args.workers, args.time_model)
    else:
        tab = tables.table(args.which, args.workers)
    columns = ["quantity"] + [f"n={n}" for n in tables.COLUMNS]
    rows = [[name] + [tab.get(name, n).render(DIGITS) for n in tables.COLUMNS] for name in tab.rows]
    meta = {"command": "tables", "table": tab.name, "L": tables.TOTAL_L, "version": __version__,
            "time_model": args.time_model if tab.name in ("V", "VI") else "signalling"}
    emit(args, columns, rows, meta)
    return 0


def _contour_row(task):
    args, L, ks = task
    scheme = _scheme(args)
    params = _params(args)
    row = []
    for k in ks:
        mu = rates.threshold_mu_vs_plob(scheme, L, params, k, args.key)
        row.append([L, k, mu, None if mu is None else rates.fidelity_from_mu(mu)])
    return row


def cmd_contour(args) -> int:
    grid = parse_grid(args.L)
    ks = parse_grid(args.k)
    _scheme(args)
    blocks = rates.sweep(_contour_row, [(args, L, ks) for L in grid], args.workers)
    rows = [r for block in blocks for r in block]
    meta = _base_meta(args) | {"L": args.L, "k": args.k}
    emit(args, ["L", "k", "mu_star", "F_star"], rows, meta)
    _plot(args, grid, {f"k={k:g}": [r[3] for r in rows if r[1] == k] for k in ks},
          "L [km]", "minimal fidelity", logy=False)
    return 0


COMPARE_POLICIES = {4: ("optimal", "doubling", "iterative", "mixed31"),
                    8: ("optimal", "doubling", "iterative", "mixed44", "mixed2222", "mixed242")}


def _compare_policies(args) -> int:
    n = args.n
    if n not in COMPARE_POLICIES:
        raise CliError("policy comparison is available for n=4 and n=8")
    p = args.p if args.p is not None else rates.success_probability(_params(args))
    alphas = parse_grid(args.alpha)
    stats = {}
    for name in COMPARE_POLICIES[n]:
        _, d = scheme_catalog.scheme_statistics(SchemeSpec(n, swapping=name), p, args.workers)
        stats[name] = d
    rows = []
    for name, d in stats.items():
        base = [name, n, p, d.mean(), d.mean() / stats["optimal"].mean()]
        if not alphas:
            rows.append(base + [None, None, None])
        for a in alphas:
            e = d.exp_moment(a)
            rows.append(base + [a, e, e / stats["optimal"].exp_moment(a)])
    meta = _base_meta(args) | {"p": p, "alpha": args.alpha, "kind": "policies"}
    emit(args, ["policy", "n", "p", "mean_D", "mean_D_ratio", "alpha", "exp_moment", "exp_moment_ratio"],
         rows, meta)
    return 0


def _compare_protocols(args) -> int:
    grid = parse_grid(args.L)
    ns = parse_ints(args.ns)
    names = [s.strip() for s in (args.protocol or "dual_rail,cabrillo").split(",") if s.strip()]
    specs = []
    for name in names:
        if name not in ("dual_rail", "cabrillo"):
            raise CliError(f"unknown protocol {name!r}")
        specs.append(protocols.ProtocolSpec(name, args.gamma, args.detector))
    result = protocols.per_second_comparison(specs, ns, grid, _params(args), args.key)
    rows = [[r["L"], r["protocol"], r["n"], r["skr_per_second"]] for r in result]
    meta = _base_meta(args) | {"L": args.L, "ns": args.ns, "protocol": ",".join(names),
                               "detector": args.detector, "gamma": args.gamma, "kind": "protocols"}
    emit(args, ["L", "protocol", "n", "S_per_second"], rows, meta)
    series = {}
    for r in result:
        series.setdefault(f"{r['protocol']} n={r['n']}", []).append(r["skr_per_second"])
    _plot(args, grid, series, "L [km]", "secret bits per second")
    return 0


def cmd_compare(args) -> int:
    if args.kind == "policies":
        return _compare_policies(args)
    return _compare_protocols(args)


def cmd_multiplex(args) -> int:
    grid = parse_grid(args.L0 if isinstance(args.L0, str) else str(args.L0))
    rows = []
    for L0 in grid:
        link = rates.multiplex(_params(args, L0=L0))
        rows.append([L0, link.p, link.p_eff, link.p_eff / link.p, link.alpha])
    meta = _base_meta(args) | {"L0": args.L0}
    if args.M >= 2:
        meta["midpoint_L0"] = rates.multiplex_midpoint(args.M, args.p_link)
    emit(args, ["L0", "p", "p_eff", "gain", "alpha"], rows, meta)
    _plot(args, grid, {"p": [r[1] for r in rows], "p_eff": [r[2] for r in rows]}, "L0 [km]", "probability")
    return 0


def cmd_mc(args) -> int:
    scheme = _scheme(args)
    params = _params(args)
    p = args.p if args.p is not None else rates.success_probability(params)
    alpha = rates.scheme_alpha(scheme, params)
    cfg = _mc_config(args)
    meta = _base_meta(args) | {"p": p, "alpha": alpha, "seed": args.seed, "samples": args.samples}
    if args.pmf:
        pk, pd = montecarlo.empirical_pmf(scheme, p, cfg, args.pmf)
        rows = [[k if k <= args.pmf else f">{args.pmf}", pk[k], pd[k]] for k in range(args.pmf + 2)]
        emit(args, ["value", "pmf_K", "pmf_D"], rows, meta)
        return 0
    est = montecarlo.estimate(scheme, p, alpha, cfg)
    columns = ["samples", "mean_K", "se_K", "mean_D", "se_D", "mean_exp", "se_exp", "mean_restarts"]
    rows = [[est.samples, est.mean_K, est.se_K, est.mean_D, est.se_D, est.mean_exp, est.se_exp,
             est.mean_restarts]]
    emit(args, columns, rows, meta)
    return 0


def cmd_pgf_dump(args) -> int:
    if args.name is None:
        sys.stdout.write("\n".join(scheme_catalog.fixture_names()) + "\n")
        return 0
    try:
        pgf = scheme_catalog.load_fixture(args.name)
    except KeyError as exc:
        raise CliError(str(exc.args[0])) from None
    if args.engine:
        pgf = scheme_catalog.engine_pgf(args.name)
    if args.p is not None:
        at = pgf.at_p(args.p)
        meta = {"command": "pgf-dump", "name": args.name, "p": args.p, "version": __version__}
        rows = [[at.mean(), at.variance(), at.evaluate(math.exp(-a)) if a is not None else None]
                for a in (parse_grid(args.alpha) or [None])]
        emit(args, ["mean", "variance", "exp_moment"], rows, meta)
        return 0
    text = pgf.to_text() + "\n"
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return 0


def cmd_verify(args) -> int:
    from . import verify

    start = time.perf_counter()
    results = verify.run(args.level, workers=args.workers, log=print)
    failed = [r for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {time.perf_counter() - start:.1f} s")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# parser

def _common(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("physical parameters")
    g.add_argument("--n", type=int, default=2, help="number of segments")
    g.add_argument("--L0", default=100.0, help="segment length in km (multiplex: a grid)")
    g.add_argument("--L", default="", help="total-length grid: start:stop:step or a comma list")
    g.add_argument("--p-link", type=float, default=1.0, dest="p_link")
    g.add_argument("--tau-coh", type=float, default=10.0, dest="tau_coh", help="memory coherence time [s]")
    g.add_argument("--tau-clock", type=float, default=1e-6, dest="tau_clock", help="source clock period [s]")
    g.add_argument("--mu", type=float, default=1.0, help="swap depolarisation parameter")
    g.add_argument("--mu0", type=float, default=None, help="initial depolarisation (default: --mu)")
    g.add_argument("--F0", type=float, default=1.0)
    g.add_argument("--M", type=int, default=1, help="multiplexing channels")
    g.add_argument("--multiplicity", type=int, default=1, choices=(1, 2),
                   help="dephasing multiplicity (2 when both qubits of a pair dephase)")
    g.add_argument("--time-model", default="signalling", dest="time_model",
                   choices=[m.value for m in TimeModel])
    s = parser.add_argument_group("scheme")
    s.add_argument("--scheme", default="optimal",
                   help="sequential, a swapping policy or a three-segment variant")
    s.add_argument("--measurement", default="non", choices=("non", "imm"))
    s.add_argument("--cutoff", type=int, default=None, help="global cutoff m")
    s.add_argument("--cutoff-vector", default=None, dest="cutoff_vector", help="per-stage cutoffs, comma list")
    s.add_argument("--protocol", default=None, help="optical encoding: dual_rail or cabrillo")
    s.add_argument("--detector", default="onoff", choices=protocols.DETECTORS)
    s.add_argument("--gamma", type=float, default=None, help="Cabrillo amplitude (default: optimised)")
    s.add_argument("--key", default="bb84", choices=("bb84", "six_state"))
    r = parser.add_argument_group("run")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--samples", type=int, default=0, help="Monte Carlo samples (0: exact only)")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out", default=None, help="output file (default stdout)")
    r.add_argument("--format", default="csv", choices=("csv", "json"))
    r.add_argument("--config", default=None, help="flat key=value file; flags given here win")
    r.add_argument("--plot", action="store_true", help="also render a PNG next to --out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrepeater", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help)
        _common(sp)
        sp.set_defaults(func=fn)
        return sp

    add("rates", cmd_rates, "key rate versus total distance")
    sp = add("tables", cmd_tables, "regenerate an overview table")
    sp.add_argument("which", choices=("III", "IV", "V", "VI", "iii", "iv", "v", "vi"))
    sp.set_defaults(time_model="combined")
    sp = add("contour", cmd_contour, "minimal mu (and fidelity) to beat k times the PLOB bound")
    sp.add_argument("--k", default="1", help="multiples of the PLOB bound")
    sp = add("compare", cmd_compare, "swapping-policy or optical-protocol comparison")
    sp.add_argument("kind", choices=("policies", "protocols"))
    sp.add_argument("--p", type=float, default=None, help="success probability (default from params)")
    sp.add_argument("--alpha", default="0.01,0.1,1", help="alpha grid for exp-moment ratios")
    sp.add_argument("--ns", default="1,2,4,8", help="segment counts for the protocol comparison")
    add("multiplex", cmd_multiplex, "multiplexed success probability versus L0")
    sp = add("mc", cmd_mc, "Monte Carlo estimate of K, D and exp(-alpha D)")
    sp.add_argument("--p", type=float, default=None)
    sp.add_argument("--pmf", type=int, default=0, help="emit histograms up to this value instead")
    sp.set_defaults(samples=100_000)
    sp = add("verify", cmd_verify, "check regenerated values against reference numbers")
    sp.add_argument("--level", default="fast", choices=("fast", "full"))
    sp = add("pgf-dump", cmd_pgf_dump, "print a stored closed-form PGF")
    sp.add_argument("name", nargs="?", default=None)
    sp.add_argument("--p", type=float, default=None, help="evaluate at this p instead of printing")
    sp.add_argument("--alpha", default="", help="exp-moment points when --p is given")
    sp.add_argument("--engine", action="store_true", help="re-derive with the permutation engine")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    values = read_config(args.config)
    # defaults < config file < explicit flags: re-parse with the file values as defaults
    sub = parser._subparsers._group_actions[0].choices[args.command]
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config(parser, argv)
        if args.command != "multiplex":
            args.L0 = float(args.L0)
        return args.func(args)
    except (CliError, ValueError, KeyError, NotImplementedError) as exc:
        msg = exc.args[0] if exc.args else str(exc)
        print(f"qrepeater: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
