"""Command-line front end.

Every command writes CSV into the output directory (``--out``, else
``$MIRRORSIM_OUT``, else the working directory) and records its resolved
parameters in ``manifest.txt`` there.  Exit codes: 0 ok, 1 solver failure,
2 input syntax, 3 I/O.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

from . import __version__
from . import analyses as an
from .engine import NewtonConfig, SimulationError, dc_sweep, solve_op, sweep_values, transient
from .mcvariation import CALIBRATED, WAFER_DIES, MismatchSpec, wafer_run
from .netlist import Circuit, NetlistError, load_file, parse_number

log = logging.getLogger("mirrorsim")

EXIT_OK, EXIT_SOLVER, EXIT_SYNTAX, EXIT_IO = 0, 1, 2, 3
ENV_OUT = "MIRRORSIM_OUT"


class UsageError(ValueError):
    """Bad option value detected after argparse (reported as a syntax error)."""


def _number(text: str) -> float:
    try:
        return parse_number(text)
    except NetlistError as exc:
        raise argparse.ArgumentTypeError(exc.message) from None


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def _csv(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def _write_lines(path: Path, lines: list[str]) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _update_manifest(out: Path, command: str, params: dict, files: list[Path]) -> None:
    """Keep one ``[command]`` (or ``[command branch]``) section each, sorted, with no timestamps."""
    path = out / "manifest.txt"
    sections: dict[str, list[str]] = {}
    if path.exists():
        current = None
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                sections[current] = []
            elif current is not None and line:
                sections[current].append(line)
    body = [f"version={__version__}"]
    body += [f"{k}={_fmt(v)}" for k, v in sorted(params.items())]
    body += [f"output={f.name}" for f in files]
    sections[command] = body
    lines = []
    for name in sorted(sections):
        lines.append(f"[{name}]")
        lines.extend(sections[name])
        lines.append("")
    path.write_text("\n".join(lines), encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(ENV_OUT) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _branch_circuit(args) -> Circuit:
    if args.netlist:
        return load_file(args.netlist)
    return an.load_branch(args.branch)


def _config(args) -> NewtonConfig:
    return NewtonConfig(max_iter=args.max_iter)


def _grid(values, default):
    return tuple(values) if values else tuple(default)


# ---------------------------------------------------------------- commands

def cmd_check(args):
    circuit = load_file(args.netlist)
    counts: dict[str, int] = {}
    for e in circuit.elements:
        counts[type(e).__name__] = counts.get(type(e).__name__, 0) + 1
    print(f"{args.netlist}: {circuit.title or '(untitled)'}")
    print(f"  {len(circuit.nodes) - 1} nodes, " +
          ", ".join(f"{n} {k}" for k, n in sorted(counts.items())))
    for w in circuit.warnings:
        print(f"  warning: {w}")
    return None, {}, []


def cmd_op(args):
    circuit = load_file(args.netlist)
    op = solve_op(circuit, _config(args))
    out = _out_dir(args)
    rows = [(f"v({n})", v) for n, v in op.voltages.items() if n != "0"]
    rows += [(f"i({n})", float(i)) for n, i in op.currents.items()]
    path = _csv(out / "op.csv", ["signal", "value"], rows)
    for name, value in rows:
        print(f"{name:>16s} = {value: .6e}")
    return out, {"netlist": args.netlist, "homotopy": op.homotopy}, [path]


def cmd_dc_sweep(args):
    circuit = load_file(args.netlist)
    ops = dc_sweep(circuit, args.source, (args.start, args.stop, args.step), _config(args))
    values = sweep_values((args.start, args.stop, args.step))
    nodes = [n for n in circuit.nodes if n != "0"]
    names = [e.name for e in circuit.elements]
    header = [args.source.upper()] + [f"v({n})" for n in nodes] + [f"i({n})" for n in names]
    rows = []
    for v, op in zip(values, ops):
        if op is None:
            rows.append([float(v)] + [math.nan] * (len(header) - 1))
        else:
            rows.append([float(v)] + [op.voltages[n] for n in nodes]
                        + [float(op.currents[n]) for n in names])
    out = _out_dir(args)
    path = _csv(out / "dc_sweep.csv", header, rows)
    gaps = sum(op is None for op in ops)
    print(f"{len(ops)} points, {gaps} gaps -> {path}")
    params = {"netlist": args.netlist, "source": args.source, "start": args.start,
              "stop": args.stop, "step": args.step}
    return out, params, [path]


def cmd_tran(args):
    circuit = load_file(args.netlist)
    trace = transient(circuit, args.tstop, args.dt, args.method, _config(args))
    out = _out_dir(args)
    path = out / "tran.csv"
    trace.to_csv(path)
    print(f"{trace.time.size} samples, dt={trace.dt!r} -> {path}")
    params = {"netlist": args.netlist, "tstop": args.tstop, "dt": trace.dt, "method": args.method}
    return out, params, [path]


def cmd_dc_mirror(args):
    grid = _grid(args.iref, an.DC_IREF_GRID)
    vdd = args.vdd[0] if args.vdd else 5.0
    report = an.mirror_factor_dc(args.branch, grid, vdd, _branch_circuit(args), _config(args))
    out = _out_dir(args)
    path = _write_lines(out / f"dc_mirror_{args.branch}.csv", report.csv_lines())
    valid = report.valid_rows
    if valid:
        slope, r2 = an.origin_fit([r.iref for r in valid], [r.imirr for r in valid])
        print(f"{args.branch}: slope {slope:.4f}, R^2 {r2:.6f}, "
              f"mean deviation {report.mean_deviation_pct():.3f} %")
    params = {"branch": args.branch, "vdd": vdd, "iref": " ".join(map(repr, grid)),
              "netlist": args.netlist or an.get_branch(args.branch).netlist}
    return out, params, [path]


def cmd_supply_range(args):
    iref = args.iref[0] if args.iref else 400e-6
    table = an.supply_range(args.branch, iref, (args.vdd_start, args.vdd_stop, args.vdd_step),
                            _branch_circuit(args), _config(args))
    out = _out_dir(args)
    path = _write_lines(out / f"supply_range_{args.branch}.csv", table.csv_lines())
    print(f"{args.branch}: minimum supply {table.vmin!r} V for iref {iref!r} A")
    params = {"branch": args.branch, "iref": iref, "vdd_start": args.vdd_start,
              "vdd_stop": args.vdd_stop, "vdd_step": args.vdd_step, "vmin": table.vmin}
    return out, params, [path]


def cmd_tran_mirror(args):
    grid = _grid(args.iref, an.TRAN_IREF_GRID)
    vdds = _grid(args.vdd, (5.0, 4.0))
    rise = args.rise[0] if args.rise else 1e-6
    circuit = _branch_circuit(args)
    rows = []
    for vdd in vdds:
        report, _ = an.transient_mirror(args.branch, grid, vdd, rise, circuit, _config(args))
        for r in report.rows:
            rows.append((vdd, r.iref, r.imirr, r.factor, r.signed_deviation_pct))
        print(f"{args.branch} vdd={vdd:g}: factors " +
              " ".join(f"{r.factor:.4f}" for r in report.rows))
    out = _out_dir(args)
    path = _csv(out / f"tran_mirror_{args.branch}.csv",
                ["vdd", "iref", "imirr", "factor", "deviation_pct"], rows)
    params = {"branch": args.branch, "vdd": " ".join(map(repr, vdds)), "rise": rise,
              "iref": " ".join(map(repr, grid))}
    return out, params, [path]


def cmd_rise_family(args):
    rises = _grid(args.rise, an.CHOP_RISES)
    iref = args.iref[0] if args.iref else 400e-6
    vdd = args.vdd[0] if args.vdd else 5.0
    metrics = an.rise_time_family(args.branch, iref, rises, vdd, _branch_circuit(args), _config(args))
    rows = [(r, m.rise_10_90, m.rise_10_90 / r, m.amplitude, m.overshoot_pct, m.settle_time)
            for r, m in zip(rises, metrics)]
    for r, m in zip(rises, metrics):
        print(f"chop rise {r * 1e9:7.1f} ns -> output 10-90 % {m.rise_10_90 * 1e9:7.1f} ns")
    out = _out_dir(args)
    path = _csv(out / f"rise_family_{args.branch}.csv",
                ["chop_rise", "rise_10_90", "ratio", "amplitude", "overshoot_pct", "settle_time"],
                rows)
    params = {"branch": args.branch, "iref": iref, "vdd": vdd, "rise": " ".join(map(repr, rises))}
    return out, params, [path]


def cmd_buffer(args):
    irefs = _grid(args.iref, (100e-6, 100e-6))
    if len(irefs) == 1:
        irefs = (irefs[0], irefs[0])
    if len(irefs) != 2:
        raise UsageError("--iref takes one value or a SET/RESET pair")
    vdd = args.vdd[0] if args.vdd else 5.0
    rise = args.rise[0] if args.rise else 1e-6
    circuit = load_file(args.netlist) if args.netlist else None
    res = an.buffer_experiment(irefs[0], irefs[1], vdd, args.vtail, args.chop_delay, rise,
                               pad_cap=args.pad_cap, circuit=circuit, dt=args.dt,
                               config=_config(args))
    out = _out_dir(args)
    trace_path = out / "buffer_trace.csv"
    res.trace.to_csv(trace_path, ["v(bufout)", "v(d1)", "v(d2)", "i(M1)", "i(M2)"])
    summary = _csv(out / "buffer_summary.csv",
                   ["plateau_mean", "flat_fraction", "final_value", "decay_time"],
                   [(res.plateau_mean, res.flat_fraction, res.final_value, res.decay_time)])
    print(f"plateau {res.plateau_mean:.3f} V (flat {100 * res.flat_fraction:.0f} % of overlap), "
          f"final {res.final_value:.3f} V, decay {res.decay_time * 1e9:.1f} ns")
    params = dict(res.params)
    params["dt"] = res.trace.dt
    return out, params, [trace_path, summary]


def cmd_wafer_mc(args):
    spec = MismatchSpec(avt=args.avt, abeta=args.abeta, die_sigma_vth=args.die_sigma,
                        seed=args.seed)
    grid = _grid(args.iref, an.WAFER_IREF_GRID)
    vdd = args.vdd[0] if args.vdd else 5.0
    wmap = wafer_run(args.branch, spec, args.dies, args.circuits, grid, vdd,
                     _branch_circuit(args), args.jobs, _config(args))
    out = _out_dir(args)
    path = _write_lines(out / f"wafer_{args.branch}.csv", wmap.csv_lines())
    print(f"{args.branch}: {len(wmap.cells)} cells, median deviation {wmap.median():.3f} %, "
          f"{wmap.missing()} missing")
    params = {"branch": args.branch, "seed": args.seed, "avt": args.avt, "abeta": args.abeta,
              "die_sigma_vth": args.die_sigma, "dies": args.dies, "circuits": args.circuits,
              "vdd": vdd, "iref": " ".join(map(repr, grid))}
    return out, params, [path]


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output directory (default ${ENV_OUT} or .)")
    common.add_argument("--max-iter", type=int, default=100, help="Newton iterations per solve")
    common.add_argument("-v", "--verbose", action="store_true")

    branch = argparse.ArgumentParser(add_help=False)
    branch.add_argument("--branch", choices=sorted(an.BRANCHES), default="set")
    branch.add_argument("--netlist", help="replace the bundled branch netlist")
    branch.add_argument("--iref", type=_number, nargs="+", help="reference current(s), A")
    branch.add_argument("--vdd", type=_number, nargs="+", help="supply voltage(s), V")

    p = argparse.ArgumentParser(prog="mirrorsim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mirrorsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("check", parents=[common], help="parse and validate a netlist")
    s.add_argument("netlist")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("op", parents=[common], help="DC operating point")
    s.add_argument("--netlist", required=True)
    s.set_defaults(func=cmd_op)

    s = sub.add_parser("dc-sweep", parents=[common], help="sweep one independent source")
    s.add_argument("--netlist", required=True)
    s.add_argument("--source", required=True)
    s.add_argument("--start", type=_number, required=True)
    s.add_argument("--stop", type=_number, required=True)
    s.add_argument("--step", type=_number, required=True)
    s.set_defaults(func=cmd_dc_sweep)

    s = sub.add_parser("tran", parents=[common], help="fixed-step transient")
    s.add_argument("--netlist", required=True)
    s.add_argument("--tstop", type=_number, required=True)
    s.add_argument("--dt", type=_number)
    s.add_argument("--method", choices=("trapezoidal", "backward_euler"), default="trapezoidal")
    s.set_defaults(func=cmd_tran)

    s = sub.add_parser("dc-mirror", parents=[common, branch], help="DC mirror factor over iref")
    s.set_defaults(func=cmd_dc_mirror)

    s = sub.add_parser("supply-range", parents=[common, branch], help="output current vs supply")
    s.add_argument("--vdd-start", type=_number, default=0.0)
    s.add_argument("--vdd-stop", type=_number, default=5.0)
    s.add_argument("--vdd-step", type=_number, default=0.05)
    s.set_defaults(func=cmd_supply_range)

    s = sub.add_parser("tran-mirror", parents=[common, branch], help="pulse amplitude vs iref")
    s.add_argument("--rise", type=_number, nargs="+", help="chop rise time, s")
    s.set_defaults(func=cmd_tran_mirror)

    s = sub.add_parser("rise-family", parents=[common, branch], help="output edge vs chop edge")
    s.add_argument("--rise", type=_number, nargs="+", help="chop rise times, s")
    s.set_defaults(func=cmd_rise_family)

    s = sub.add_parser("buffer", parents=[common], help="RRAM branch read-out through the buffer")
    s.add_argument("--netlist", help="replace the bundled full-circuit netlist")
    s.add_argument("--iref", type=_number, nargs="+", help="SET [RESET] reference current, A")
    s.add_argument("--vdd", type=_number, nargs=1)
    s.add_argument("--vtail", type=_number, default=1.0)
    s.add_argument("--chop-delay", type=_number, default=1e-6)
    s.add_argument("--rise", type=_number, nargs=1)
    s.add_argument("--pad-cap", type=_number)
    s.add_argument("--dt", type=_number)
    s.set_defaults(func=cmd_buffer)

    s = sub.add_parser("wafer-mc", parents=[common, branch], help="wafer mismatch map")
    s.add_argument("--seed", type=int, default=CALIBRATED.seed)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--avt", type=_number, default=CALIBRATED.avt, help="V*m")
    s.add_argument("--abeta", type=_number, default=CALIBRATED.abeta, help="m")
    s.add_argument("--die-sigma", type=_number, default=CALIBRATED.die_sigma_vth, help="V")
    s.add_argument("--dies", type=int, default=WAFER_DIES)
    s.add_argument("--circuits", type=int, default=2)
    s.set_defaults(func=cmd_wafer_mc)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out, params, files = args.func(args)
        if out is not None:
            section = args.command
            if getattr(args, "branch", None):
                section += f" {args.branch}"
            _update_manifest(out, section, params, files)
    except NetlistError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SYNTAX
    except (UsageError, KeyError, ValueError) as exc:
        # ValueError from a solver means bad parameters, not a bad run
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SYNTAX
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SimulationError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
