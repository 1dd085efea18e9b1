"""Command-line entry point: ``dkfsim {validate,run,compare,observability-report}``.

Exit codes: 0 success, 1 validation hard failure or bad input,
2 numerical failure during a run, 3 an acceptance check failed.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_scenario
from .filters import FILTER_NAMES
from .harness import ExperimentError, evaluate_checks, run_experiment, write_outputs
from .model import validate_assumptions
from .observability import check_uco, gramian, smallest_uco_window
from .topology import check_primitivity, is_strongly_connected

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_CHECKS = 0, 1, 2, 3


def validation_report(sc):
    rep = validate_assumptions(sc.model, sc.sensors, sc.window, horizon=sc.horizon)
    out = rep.to_dict()
    out["strongly_connected"] = is_strongly_connected(sc.topology)
    out["primitive"] = check_primitivity(sc.topology, max(sc.topology.N - 1, 1))
    k_range = range(0, max(sc.horizon - (sc.uco_window or 0), 0) + 1)
    if rep.hard_failures:
        out["uco"] = None
    elif sc.uco_window:
        obs = sc.observability
        u = check_uco(sc.model, sc.sensors, sc.uco_window, k_range,
                      obs.get("alpha"), obs.get("beta"))
        out["uco"] = {"window": sc.uco_window, "ok": u.ok, "worst_k": u.worst_k,
                      "alpha_min": u.alpha_min, "beta_max": u.beta_max}
    else:
        w = smallest_uco_window(sc.model, sc.sensors, range(0, max(sc.horizon - 24, 0) + 1))
        out["uco"] = {"window": w, "ok": w is not None}
    out["hard_failures"] = [f.name for f in rep.hard_failures]
    warnings = [f.name for f in rep.findings if not f.passed and f.name not in out["hard_failures"]]
    if not out["strongly_connected"]:
        warnings.append("strong_connectivity")
    if out["uco"] is not None and not out["uco"]["ok"]:
        warnings.append("uniform_complete_observability")
    out["warnings"] = warnings
    return out


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def cmd_validate(args):
    try:
        sc = load_scenario(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    rep = validation_report(sc)
    if args.json:
        print(json.dumps(_to_jsonable(rep), indent=2))
    else:
        for f in rep["findings"]:
            mark = "PASS" if f["passed"] else "FAIL"
            wit = f" (k={f['witness_k']})" if f["witness_k"] is not None and not f["passed"] else ""
            print(f"[{mark}] {f['name']}: {f['detail']}{wit}")
        print(f"[{'PASS' if rep['strongly_connected'] else 'FAIL'}] strong_connectivity")
        if rep["uco"] is not None:
            print(f"[{'PASS' if rep['uco']['ok'] else 'FAIL'}] uniform_complete_observability: "
                  f"window={rep['uco']['window']}")
        if rep["singular_steps"]:
            shown = ", ".join(map(str, rep["singular_steps"][:12]))
            print(f"note: A_k singular at k = {shown}{' ...' if len(rep['singular_steps']) > 12 else ''}")
    return EXIT_INVALID if rep["hard_failures"] else EXIT_OK


def cmd_run(args):
    try:
        sc = load_scenario(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.trials is not None:
        sc.trials = args.trials
    if args.seed is not None:
        sc.seed = args.seed
    if args.filters:
        names = [f.strip() for f in args.filters.split(",") if f.strip()]
        unknown = [f for f in names if f not in FILTER_NAMES]
        if unknown:
            print(f"error: unknown filters {unknown}", file=sys.stderr)
            return EXIT_INVALID
        sc.filters = tuple(names)
    rep = validation_report(sc)
    if rep["hard_failures"] and not args.force:
        print(f"error: validation failed: {rep['hard_failures']} (use --force to run anyway)",
              file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out or sc.output or f"runs/{sc.name}")
    try:
        res = run_experiment(sc)
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    checks = evaluate_checks(res)
    summary = write_outputs(res, out, checks, verbose_weights=args.verbose_weights,
                            dump_states=args.dump_states,
                            extra_summary={"validation": _to_jsonable(rep)})
    for name, c in checks.items():
        print(f"[{'PASS' if c['passed'] else 'FAIL'}] {name}: {c['detail']}")
    print(f"wrote {out}")
    return EXIT_OK if summary["passed"] else EXIT_CHECKS


def _read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def compare_runs(run_dirs, out_path):
    """Join ``mse.csv`` (and ``dominance.csv`` where present) across runs.

    Output columns: ``k``, one MSE column per ``run:filter``, the per-step
    minimum of ``min_eig(P_a - P_w)`` for runs that have it, and for every
    later run a ``gap:<run:filter>`` column: the first run's MSE for the same
    filter (or its first filter if absent) minus this one.
    """
    mse_cols, dom_cols, horizons = [], [], set()
    names = [Path(d).name for d in run_dirs]
    for idx, d in enumerate(map(Path, run_dirs)):
        path = d / "mse.csv"
        if not path.exists():
            raise FileNotFoundError(f"{path} not found")
        label = d.name if names.count(d.name) == 1 else f"{d.name}#{idx}"
        per_filter = {}
        for r in _read_csv(path):
            per_filter.setdefault(r["filter"], {})[int(r["k"])] = float(r["mse"])
        for name, series in per_filter.items():
            horizons.add(max(series))
            mse_cols.append((idx, name, f"{label}:{name}", series))
        dom = d / "dominance.csv"
        if dom.exists():
            series = {}
            for r in _read_csv(dom):
                k = int(r["k"])
                series[k] = min(series.get(k, np.inf), float(r["min_eig"]))
            dom_cols.append((f"{label}:dominance_min_eig", series))
    if len(horizons) != 1:
        raise ValueError(f"runs have different horizons: {sorted(horizons)}")
    K = horizons.pop()
    first = {name: series for idx, name, _, series in mse_cols if idx == 0}
    gaps = [(f"gap:{col}", first.get(name, mse_cols[0][3]), series)
            for idx, name, col, series in mse_cols if idx > 0]
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k"] + [c[2] for c in mse_cols] + [c for c, _ in dom_cols]
                   + [g[0] for g in gaps])
        for k in range(K + 1):
            w.writerow([k] + [f"{c[3][k]:.10g}" for c in mse_cols]
                       + [f"{s[k]:.10g}" for _, s in dom_cols]
                       + [f"{ref[k] - s[k]:.10g}" for _, ref, s in gaps])
    return out_path


def cmd_compare(args):
    try:
        path = compare_runs(args.run_dirs, args.out)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"wrote {path}")
    return EXIT_OK


def cmd_observability(args):
    try:
        sc = load_scenario(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    window = args.window or sc.uco_window or smallest_uco_window(
        sc.model, sc.sensors, range(0, max(sc.horizon - 24, 0) + 1))
    if window is None:
        print("error: no window up to 24 steps is observable", file=sys.stderr)
        return EXIT_INVALID
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["k", "window", "alpha_hat", "beta_hat", "cond"])
        for k in range(0, max(sc.horizon - window, 0) + 1):
            g = gramian(sc.model, sc.sensors, k, window)
            w.writerow([k, window, f"{g.alpha_hat:.10g}", f"{g.beta_hat:.10g}", f"{g.cond:.10g}"])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="dkfsim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a scenario's standing assumptions")
    v.add_argument("config")
    v.add_argument("--json", action="store_true", help="machine-readable report")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="run the Monte Carlo experiment")
    r.add_argument("config")
    r.add_argument("--trials", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--filters", help="comma-separated subset of " + ",".join(FILTER_NAMES))
    r.add_argument("--out", help="output directory")
    r.add_argument("--verbose-weights", action="store_true", help="write weights.csv")
    r.add_argument("--dump-states", action="store_true",
                   help="write per-step estimates of trial 0 per filter")
    r.add_argument("--force", action="store_true", help="run despite validation failures")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="join MSE tables of several runs")
    c.add_argument("run_dirs", nargs="+")
    c.add_argument("--out", default="comparison.csv")
    c.set_defaults(func=cmd_compare)

    o = sub.add_parser("observability-report", help="Gramian eigenvalues per window start")
    o.add_argument("config")
    o.add_argument("--window", type=int)
    o.add_argument("--out")
    o.set_defaults(func=cmd_observability)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
