"""Run every built-in scenario, write artifacts and SVG plots, print a summary.

    python3 scripts/run_all.py --out obleig_out --workers 4
"""

import argparse
import json
import sys
from pathlib import Path

from obleig.cli import main as cli

PLOTS = {"sweep.csv": "lambda_vs_r", "envelope.csv": "envelope_vs_t", "front.csv": "front_position"}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="obleig_out")
    p.add_argument("--workers", default="1")
    args = p.parse_args()
    code = cli(["suite", "--out", args.out, "--workers", args.workers])
    for csv_path in sorted(Path(args.out).rglob("*.csv")):
        kind = next((k for suffix, k in PLOTS.items() if csv_path.name.endswith(suffix)), None)
        if kind is None:
            continue
        extra = []
        if kind == "lambda_vs_r":
            res = json.loads((csv_path.parent / "result.json").read_text())
            est = res.get("lambdaB_estimate")
            if est is None and "variants" in res:
                est = res["variants"].get(csv_path.name.split("_")[0], {}).get("lambdaB_estimate")
            if est is not None:
                extra = ["--asymptote", repr(est)]
        cli(["plot", str(csv_path), "--kind", kind, *extra])
    return code


if __name__ == "__main__":
    sys.exit(main())
