"""Command-line entry point ``monitored-fermions``.

Exit codes: 0 success, 1 failed oracle check, 2 configuration error,
3 too few completed trajectories, 4 fit failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .estimation import collapse_score, collapse_transform, fit_lcor_law, fss_fit
from .estimation.decay import exponential_from_arrays, select_window
from .estimation._base import mean_interval
from .exceptions import ConfigurationError, DomainError, FitError, InsufficientDataError, MonitoredFermionsError
from .runner import ExperimentConfig, read_csv, read_scan, run_experiment, sweep, write_csv

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_INSUFFICIENT, EXIT_FIT = 0, 1, 2, 3, 4
log = logging.getLogger("monitored_fermions")


def _parse_list(kind):
    def conv(text):
        try:
            vals = [kind(v) for v in text.replace(",", " ").split()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
        return vals if len(vals) != 1 else vals[0]

    return conv


def _bool(text):
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text}")


# config field -> argparse type; list-valued fields accept "a,b,c"
_FIELD_TYPES = {
    "protocol": str, "dimension": int, "L": _parse_list(int), "gamma": _parse_list(float),
    "n_trajectories": int, "min_trajectories": int, "t_max": float, "n_samples": int,
    "sample_times": lambda s: [float(v) for v in s.replace(",", " ").split()],
    "window": lambda s: [float(v) for v in s.replace(",", " ").split()],
    "dt": float, "rk4_substeps": int, "rate": str, "representation": str, "J": float,
    "master_seed": int, "output_dir": str, "workers": int, "checkpoint": _bool,
    "observables": json.loads,
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="YAML or JSON experiment file")
    g = p.add_argument_group("overrides (take precedence over the file)")
    for f in dataclasses.fields(ExperimentConfig):
        g.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=_FIELD_TYPES[f.name], default=None)


def _load_config(args) -> ExperimentConfig:
    base = {}
    if args.config:
        base = ExperimentConfig.from_file(args.config).to_dict()
    for f in dataclasses.fields(ExperimentConfig):
        v = getattr(args, f.name)
        if v is not None:
            base[f.name] = v
    return ExperimentConfig.from_dict(base)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    res = run_experiment(cfg)
    print(json.dumps(res.summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    res = sweep(cfg)
    print(f"{len(res.table)} rows written to {res.output_dir / 'scan.csv'}; {len(res.failed_cells)} cells failed")
    return EXIT_OK


def _lcor_for_run(run: Path, window, rescale: bool) -> dict:
    """Exponential fit of one run directory; per-trajectory distribution when available."""
    summary = json.loads((run / "summary.json").read_text())
    L = summary["extents"][0]
    _, prow = read_csv(run / "profile.csv")
    r = np.array([float(x["r"]) for x in prow])
    y = np.array([float(x["neg_C_mean"]) for x in prow])
    win = tuple(window) if window else select_window(r, y, L, rescale=rescale)
    fit = exponential_from_arrays(r, y, L, win, rescale)
    row = {"gamma": summary["gamma"], "L": L, "l_cor": fit["l_cor"], "lo": fit.confidence["l_cor"][0],
           "hi": fit.confidence["l_cor"][1], "window_lo": win[0], "window_hi": win[1],
           "residual_norm": fit.residual_norm, "n_traj": summary["n_traj"]}
    tp = run / "trajectory_profiles.csv"
    per = []
    if tp.exists() and summary["n_traj"] > 1:
        _, rows = read_csv(tp)
        by = {}
        for x in rows:
            by.setdefault(int(x["trajectory_id"]), []).append((float(x["r"]), float(x["neg_C"])))
        try:
            for tid in sorted(by):
                rr, yy = np.array(by[tid]).T
                per.append(exponential_from_arrays(rr, yy, L, win, rescale)["l_cor"])
        except MonitoredFermionsError:
            per = []
    if per and all(math.isfinite(v) for v in per):
        m, (lo, hi) = mean_interval(per)
        row.update(l_cor=m, lo=lo, hi=hi, variance=float(np.var(per, ddof=1) / len(per)), method="per-trajectory")
    else:
        half = (row["hi"] - row["lo"]) / (2 * 1.96)
        row.update(variance=half**2 if math.isfinite(half) else math.inf, method="pooled")
    return row


def cmd_fit_lcor(args) -> int:
    rows = [_lcor_for_run(Path(d), args.window, not args.no_rescale) for d in args.runs]
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["gamma", "L", "l_cor", "lo", "hi", "variance", "window_lo", "window_hi", "residual_norm", "n_traj", "method"]
    write_csv(out / "lcor.csv", cols, ([r[c] for c in cols] for r in rows))
    report = {"points": rows, "laws": {}}
    usable = [r for r in rows if math.isfinite(r["l_cor"]) and 0 < r["variance"] < math.inf]
    status = EXIT_OK
    if len({r["gamma"] for r in usable}) >= 4:
        pts = [(r["gamma"], r["l_cor"], r["variance"]) for r in usable]
        for law in args.laws:
            try:
                report["laws"][law] = fit_lcor_law(pts, law).to_dict()
            except FitError as exc:
                report["laws"][law] = {"error": str(exc), "best": exc.best.to_dict() if exc.best else None}
                status = EXIT_FIT
    elif args.laws:
        report["laws_skipped"] = "fewer than 4 distinct gamma values with finite l_cor"
    (out / "fit_report.json").write_text(json.dumps(report, indent=2, sort_keys=True, default=str) + "\n")
    print(json.dumps(report["laws"], indent=2, default=str))
    return status


def cmd_fss(args) -> int:
    data = read_scan(args.scan, args.observable)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    try:
        model, res = fss_fit(data, args.m, args.n, args.irrelevant, n_bootstrap=args.bootstrap,
                             random_state=args.seed)
    except FitError as exc:
        rep = {"error": str(exc), "best": exc.best.to_dict() if exc.best else None}
        (out / "fss_report.json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
        raise
    col = collapse_transform(data, model)
    write_csv(out / "collapse.csv", ["L", "gamma", "x", "y", "branch"], col.rows())
    rep = res.to_dict()
    rep["collapse_score"] = collapse_score(col)
    rep["collapse_informative"] = col.informative
    rep["chi2"], rep["dof"] = res.extra["chi2"], res.extra["dof"]
    (out / "fss_report.json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    print(json.dumps({k: rep[k] for k in ("parameters", "confidence")}, indent=2))
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    from .validation import oracle_report

    rep = oracle_report(L_pm=args.L, seeds=args.seeds, gamma_pm=args.gamma, t_max=args.t_max,
                        L_qsd=args.L_qsd, gamma_qsd=args.gamma_qsd, dt=args.dt, t_qsd=args.t_qsd)
    text = json.dumps(rep, indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    return EXIT_OK if rep["passed"] else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="monitored-fermions", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one (L, gamma) experiment")
    _add_config_flags(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="run a gamma x L grid and write scan.csv")
    _add_config_flags(s)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("fit-lcor", help="correlation lengths from run directories, then NLSM/BKT fits")
    s.add_argument("runs", nargs="+", help="run directories written by simulate/sweep")
    s.add_argument("--window", type=float, nargs=2, metavar=("R_MIN", "R_MAX"))
    s.add_argument("--no-rescale", action="store_true", help="fit in raw distance instead of chord distance")
    s.add_argument("--laws", nargs="*", default=["NLSM", "BKT"], choices=["NLSM", "BKT"])
    s.add_argument("--output", default="lcor")
    s.set_defaults(func=cmd_fit_lcor)

    s = sub.add_parser("fss", help="finite-size-scaling fit of a scan table")
    s.add_argument("scan", help="scan.csv written by sweep")
    s.add_argument("--observable", default="G_AB", choices=["G_AB", "I2", "S"])
    s.add_argument("--m", type=int, default=2)
    s.add_argument("--n", type=int, default=3)
    s.add_argument("--irrelevant", action="store_true")
    s.add_argument("--bootstrap", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", default="fss")
    s.set_defaults(func=cmd_fss)

    s = sub.add_parser("oracle-check", help="compare Gaussian simulators with the exact Fock-space reference")
    s.add_argument("--L", type=int, default=8)
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--t-max", type=float, default=20.0)
    s.add_argument("--L-qsd", dest="L_qsd", type=int, default=6)
    s.add_argument("--gamma-qsd", dest="gamma_qsd", type=float, default=0.5)
    s.add_argument("--dt", type=float, default=0.005)
    s.add_argument("--t-qsd", dest="t_qsd", type=float, default=2.0)
    s.add_argument("--output")
    s.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse reports usage errors with status 2, which doubles as the config-error code
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as exc:
        # inputs outside a routine's domain (single-L scan, empty fit window) are user errors
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InsufficientDataError as exc:
        print(f"insufficient data: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except FitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
