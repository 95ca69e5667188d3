"""Sign of the strip eigenvalue for L = Laplacian + 1 with the Robin condition du/dnu + gamma u = 0.

The cross-section eigenvalue is alpha^2 - 1 with alpha tan(alpha) = gamma, so it
changes sign at gamma = tan 1. The script compares the truncated eigenvalue at
the largest radius with that value for a range of gamma.

    python3 scripts/robin_threshold.py --gammas 0.5,1,1.4,1.6,2 --r 10
"""

import argparse
import math

from scipy.optimize import brentq

from obleig.eigensolver import truncation_sweep
from obleig.operators import make_boundary, make_operator

STRIP = {"shape": "strip", "lo": -1.0, "hi": 1.0}


def cross_section(gamma):
    alpha = brentq(lambda a: a * math.tan(a) - gamma, 1e-12, math.pi / 2 - 1e-12)
    return alpha * alpha - 1


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--gammas", default="0.5,1,1.4,1.6,2")
    p.add_argument("--r", default="5,10,20")
    p.add_argument("--h", type=float, default=0.05)
    args = p.parse_args()
    radii = [float(r) for r in args.r.split(",")]
    print(f"tan 1 = {math.tan(1.0):.6f}")
    print(f"{'gamma':>6} {'estimate':>11} {'cross-sec':>11} {'sign':>5}")
    for g in (float(t) for t in args.gammas.split(",")):
        sw = truncation_sweep(STRIP, [0.0, 0.0], make_operator({"c": 1.0}, 2),
                              make_boundary({"kind": "robin", "gamma": g}, 2), radii, args.h)
        est = sw.lambdaB_estimate
        print(f"{g:6.2f} {est:11.6f} {cross_section(g):11.6f} {'+' if est >= 0 else '-':>5}")


if __name__ == "__main__":
    main()
