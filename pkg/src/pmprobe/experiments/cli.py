"""Command-line entry point.

    pmprobe [--config PATH] [--out DIR] [--format csv|json] [--threads N]
            [--set KEY=VALUE ...] {ratio,qfim,tilde,wigner,det,compat,thermo,validate}

Exit status is 0 on success, 2 on invalid input (a JSON error object is
written to stderr) and 1 when ``validate`` finds a failing check.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .. import __version__
from ..errors import PmProbeError, ValidationError
from .config import ScenarioConfig, load_config
from .sweeps import (
    default_threads,
    run_closed_form_report,
    run_compat_check,
    run_det_sweep,
    run_qfim_vs_gamma,
    run_ratio_sweep,
    run_thermometry,
    run_tilde_lambda_vs_time,
    run_wigner_snapshots,
    wigner_grid_table,
)
from .validate import run_validation

COMMANDS = ("ratio", "qfim", "tilde", "wigner", "det", "compat", "thermo", "validate")

PLOT_SCRIPTS = {
    "ratio": ("t", "gamma", "ratio", "contour"),
    "qfim": ("gamma", None, "f_gg", "lines"),
    "tilde": ("t", None, "tilde_ll_rel", "lines"),
    "det": ("t", None, "det_f_rel", "lines"),
    "compat": ("t", None, "normalized", "lines"),
}


def _parse_set(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmprobe",
        description="Precision sweeps for joint estimation of PM correlation and scattering strength.",
    )
    parser.add_argument("--config", type=Path, help="key = value scenario file")
    parser.add_argument("--out", type=Path, default=Path("results"), help="output directory (default: results)")
    parser.add_argument("--format", choices=("csv", "json"), default="csv", dest="fmt")
    parser.add_argument("--mirror", action="store_true", help="write both CSV and JSON")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key; wins over --config")
    parser.add_argument("--plot-script", action="store_true", help="also write a matplotlib script")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"pmprobe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ratio", help="performance ratio over (gamma, t) per lambda")
    q = sub.add_parser("qfim", help="QFIM against gamma at fixed t, plus the closed-form report")
    q.add_argument("--t-fixed", type=float, default=None, help="time in seconds (default from config)")
    sub.add_parser("tilde", help="tilde bound on Lambda against t with gamma ranking")
    w = sub.add_parser("wigner", help="Wigner snapshot grids")
    w.add_argument("--times", type=str, default=None, help="comma-separated seconds")
    w.add_argument("--gammas", type=str, default=None, help="comma-separated gamma values")
    sub.add_parser("det", help="det F against t")
    sub.add_parser("compat", help="SLD weak-commutativity check")
    sub.add_parser("thermo", help="Lambda <-> temperature table")
    v = sub.add_parser("validate", help="run the invariant suite")
    v.add_argument("--quick", action="store_true", help="skip the slow propagator quadrature")
    return parser


def _plot_script(name: str, csv_name: str) -> str:
    x, y, z, kind = PLOT_SCRIPTS[name]
    lines = [
        "import csv",
        "import matplotlib.pyplot as plt",
        "import numpy as np",
        "",
        f"with open({csv_name!r}) as fh:",
        "    rows = [r for r in csv.reader(l for l in fh if not l.startswith('#'))]",
        "names = [h.split(':')[0] for h in rows[0]]",
        "cols = {n: np.array([r[i] for r in rows[1:]]) for i, n in enumerate(names)}",
        "num = lambda n: cols[n].astype(float)",
    ]
    if kind == "contour":
        lines += [
            "for lam in np.unique(num('lambda')):",
            "    sel = num('lambda') == lam",
            f"    xs, ys, zs = num({x!r})[sel], num({y!r})[sel], num({z!r})[sel]",
            "    nx = np.unique(xs).size",
            "    plt.figure()",
            f"    plt.contourf(xs.reshape(-1, nx), ys.reshape(-1, nx), zs.reshape(-1, nx), 30)",
            "    plt.xscale('log'); plt.colorbar(); plt.title(f'lambda = {lam:g}')",
        ]
    else:
        lines += [
            "keys = sorted({(l, g) for l, g in zip(num('lambda'), num('gamma'))}) if 't' in cols else sorted(set(num('lambda')))",
            "plt.figure()",
            "for key in keys:",
            "    if isinstance(key, tuple):",
            "        sel = (num('lambda') == key[0]) & (num('gamma') == key[1])",
            "    else:",
            "        sel = num('lambda') == key",
            f"    plt.plot(num({x!r})[sel], num({z!r})[sel], label=str(key))",
            f"plt.xlabel({x!r}); plt.ylabel({z!r}); plt.legend(fontsize=6)",
        ]
        if x == "t":
            lines.append("plt.xscale('log')")
    lines += ["plt.show()", ""]
    return "\n".join(lines)


def _emit(table, args, written: list[Path]):
    paths = table.write(args.out, args.fmt, args.mirror)
    written.extend(paths)
    if args.plot_script and table.name in PLOT_SCRIPTS:
        script = args.out / f"plot_{table.name}.py"
        script.write_text(_plot_script(table.name, f"{table.name}.csv"))
        written.append(script)


def _run(args, config: ScenarioConfig) -> int:
    threads = args.threads or default_threads()
    written: list[Path] = []
    summary = None
    cmd = args.command
    if cmd == "ratio":
        table = run_ratio_sweep(config, threads)
    elif cmd == "qfim":
        table = run_qfim_vs_gamma(config, args.t_fixed, threads)
        report = run_closed_form_report(config)
        args.out.mkdir(parents=True, exist_ok=True)
        path = args.out / "closed_form_report.json"
        path.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
        written.append(path)
    elif cmd == "tilde":
        table = run_tilde_lambda_vs_time(config, threads)
    elif cmd == "det":
        table = run_det_sweep(config, threads)
    elif cmd == "compat":
        table = run_compat_check(config, threads)
    elif cmd == "thermo":
        table = run_thermometry(config)
    elif cmd == "wigner":
        times = _floats_arg(args.times)
        gammas = _floats_arg(args.gammas)
        table, snaps = run_wigner_snapshots(config, times, gammas)
        for snap in snaps:
            written.extend(wigner_grid_table(snap, config.config_hash()).write(args.out, args.fmt, args.mirror))
    elif cmd == "validate":
        results = run_validation(config, threads, quick=args.quick)
        for r in results:
            print(r.line())
        args.out.mkdir(parents=True, exist_ok=True)
        path = args.out / "validate.json"
        payload = {"config_hash": config.config_hash(), "checks": [r.to_dict() for r in results],
                   "passed": all(r.passed for r in results)}
        path.write_text(json.dumps(payload, indent=1) + "\n")
        print(f"wrote {path}")
        if not payload["passed"]:
            failed = [r.name for r in results if not r.passed]
            print(json.dumps({"error": "ValidationFailed", "failed": failed}), file=sys.stderr)
            return 1
        return 0
    else:  # pragma: no cover - argparse restricts choices
        raise ValidationError(f"unknown command {cmd!r}")
    _emit(table, args, written)
    summary = table.summary
    for path in written:
        print(f"wrote {path}")
    if summary:
        print(json.dumps(summary, default=str, sort_keys=True))
    return 0


def _floats_arg(text):
    if text is None:
        return None
    try:
        return tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ValidationError(f"bad number list {text!r}") from None


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is not None and args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        config = load_config(args.config, _parse_set(args.set))
        return _run(args, config)
    except (PmProbeError, ValueError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(err), file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
