"""Command-line front end: run, list, suite, plot.

Exit codes: 0 pass, 3 expectation miss, 1 numerical error, 2 configuration error.
"""

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from xml.sax.saxutils import escape, quoteattr

from . import runner
from .errors import ConfigError, ObleigError, SchemaMismatch
from .plot import KINDS, emit_plot

EXIT_PASS, EXIT_ERROR, EXIT_CONFIG, EXIT_MISS = 0, 1, 2, 3


def _out_dir(arg):
    return os.environ.get("OBLEIG_OUT") or arg or "obleig_out"


def _radii(text):
    return [float(t) for t in text.split(",") if t.strip()]


def execute(name, out_dir, overrides=None, write=True):
    """Run one scenario; returns (exit code, result dict)."""
    try:
        s = runner.load_scenario(name)
        s = runner.apply_overrides(s, **(overrides or {}))
    except ConfigError as exc:
        return EXIT_CONFIG, {"name": str(name), "status": "config_error", "error": type(exc).__name__,
                             "message": str(exc)}
    try:
        result, arts = runner.run_scenario(s)
    except ConfigError as exc:
        return EXIT_CONFIG, {"name": s["name"], "status": "config_error", "error": type(exc).__name__,
                             "message": str(exc)}
    except ObleigError as exc:
        result = {"name": s["name"], "task": s["task"], "status": "error", "error": type(exc).__name__,
                  "message": str(exc)}
        if write:
            runner.write_artifacts(out_dir, result, {})
        return EXIT_ERROR, result
    if write:
        runner.write_artifacts(out_dir, result, arts)
    return (EXIT_PASS if result["status"] == "pass" else EXIT_MISS), result


def _summary(result):
    lines = [f"{result['name']}: {result['status']}"]
    for e in result.get("expectations", []):
        mark = "ok  " if e["ok"] else "MISS"
        lines.append(f"  {mark} {e['key']} = {e.get('actual')!r} [{e['provenance']}]")
    if "message" in result:
        lines.append(f"  {result.get('error')}: {result['message']}")
    return "\n".join(lines)


def cmd_run(args):
    overrides = {"h": args.h, "dt": args.dt, "radii": _radii(args.radii) if args.radii else None,
                 "tol": args.tol}
    code, result = execute(args.scenario, _out_dir(args.out), overrides)
    if args.json:
        sys.stdout.write(runner.to_json(result))
    else:
        print(_summary(result))
    return code


def cmd_list(args):
    rows = []
    for name in runner.builtin_names():
        s = runner.load_scenario(name)
        if args.task and s["task"] != args.task:
            continue
        rows.append({"name": name, "task": s["task"], "anchor": s.get("anchor", "")})
    if args.json:
        print(json.dumps(rows, indent=2, sort_keys=True))
    else:
        width = max((len(r["name"]) for r in rows), default=4)
        for r in rows:
            print(f"{r['name']:<{width}}  {r['task']:<15} {r['anchor']}")
    return EXIT_PASS


def _suite_worker(job):
    name, out_dir = job
    t0 = time.perf_counter()
    code, result = execute(name, out_dir)
    budget = None
    try:
        budget = runner.load_scenario(name).get("budget_s")
    except ConfigError:
        pass
    return name, code, result, time.perf_counter() - t0, budget


def cmd_suite(args):
    names = args.scenarios or runner.builtin_names()
    out_dir = _out_dir(args.out)
    jobs = [(n, out_dir) for n in names]
    if args.workers and args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_suite_worker, jobs))
    else:
        results = [_suite_worker(j) for j in jobs]
    cases = []
    for name, code, result, elapsed, budget in results:
        over = budget is not None and elapsed > budget
        status = result["status"] + (" (over budget)" if over else "")
        print(f"{name:<28} {status:<28} {elapsed:8.1f}s")
        if code == EXIT_PASS and over:
            code = EXIT_MISS
        cases.append((name, code, result, elapsed, over))
    codes = {c[1] for c in cases}
    worst = next((c for c in (EXIT_ERROR, EXIT_CONFIG, EXIT_MISS) if c in codes), EXIT_PASS)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    (Path(out_dir) / "junit.xml").write_text(_junit(cases))
    return worst


def _junit(cases):
    fails = sum(1 for c in cases if c[1] == EXIT_MISS)
    errors = sum(1 for c in cases if c[1] in (EXIT_ERROR, EXIT_CONFIG))
    lines = ['<?xml version="1.0" encoding="utf-8"?>',
             f'<testsuite name="obleig" tests="{len(cases)}" failures="{fails}" errors="{errors}">']
    for name, code, result, elapsed, over in cases:
        lines.append(f'  <testcase classname="obleig.scenarios" name={quoteattr(name)} time="{elapsed:.3f}">')
        if code == EXIT_MISS:
            missed = [e["key"] for e in result.get("expectations", []) if not e["ok"]]
            msg = "over time budget" if over and not missed else "missed: " + ", ".join(missed)
            lines.append(f"    <failure message={quoteattr(msg)}/>")
        elif code in (EXIT_ERROR, EXIT_CONFIG):
            lines.append(f"    <error message={quoteattr(result.get('error', ''))}>"
                         f"{escape(result.get('message', ''))}</error>")
        lines.append("  </testcase>")
    lines.append("</testsuite>")
    return "\n".join(lines) + "\n"


def cmd_plot(args):
    out = args.out or str(Path(args.csv).with_suffix(".svg"))
    try:
        emit_plot(args.csv, args.kind, out, asymptote=args.asymptote)
    except SchemaMismatch as exc:
        print(f"SchemaMismatch: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"{exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(out)
    return EXIT_PASS


def build_parser():
    p = argparse.ArgumentParser(prog="obleig", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one scenario (built-in name or JSON path)")
    r.add_argument("scenario")
    r.add_argument("--out")
    r.add_argument("--h", type=float)
    r.add_argument("--dt", type=float)
    r.add_argument("--radii", help="comma separated radii")
    r.add_argument("--tol", type=float)
    r.add_argument("--json", action="store_true")
    r.set_defaults(func=cmd_run)
    ls = sub.add_parser("list", help="list built-in scenarios")
    ls.add_argument("--task", choices=runner.TASKS)
    ls.add_argument("--json", action="store_true")
    ls.set_defaults(func=cmd_list)
    su = sub.add_parser("suite", help="run several scenarios and write a JUnit report")
    su.add_argument("scenarios", nargs="*")
    su.add_argument("--out")
    su.add_argument("--workers", type=int, default=1)
    su.set_defaults(func=cmd_suite)
    pl = sub.add_parser("plot", help="render a CSV artifact to SVG")
    pl.add_argument("csv")
    pl.add_argument("--kind", required=True, choices=sorted(KINDS))
    pl.add_argument("--out")
    pl.add_argument("--asymptote", type=float)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
