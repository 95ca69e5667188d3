"""Truncation sweep for L = Laplacian + 1 on the Dirichlet strip R x (-1, 1).

Prints lambda(0, r) against the separable value pi^2/4 + pi^2/(4 r^2) - 1 and
the extrapolated limit against pi^2/4 - 1.

    python3 scripts/strip_sweep.py --h 0.05 --radii 5,10,20,40
"""

import argparse
import math

from obleig.eigensolver import truncation_sweep
from obleig.operators import make_boundary, make_operator


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--h", type=float, default=0.05)
    p.add_argument("--radii", default="5,10,20")
    args = p.parse_args()
    radii = [float(r) for r in args.radii.split(",")]
    sw = truncation_sweep({"shape": "strip", "lo": -1.0, "hi": 1.0}, [0.0, 0.0],
                          make_operator({"c": 1.0}, 2), make_boundary({"kind": "dirichlet"}, 2), radii, args.h)
    print(f"{'r':>6} {'lambda':>12} {'separable':>12} {'rel err':>9}")
    for r, lam in zip(sw.radii, sw.lambdas):
        ref = math.pi ** 2 / 4 + math.pi ** 2 / (4 * r * r) - 1
        print(f"{r:6.1f} {lam:12.6f} {ref:12.6f} {abs(lam - ref) / ref:9.2e}")
    limit = math.pi ** 2 / 4 - 1
    print(f"estimate {sw.lambdaB_estimate:.6f}  limit {limit:.6f}  worst increase {sw.monotonicity_violation:.1e}")


if __name__ == "__main__":
    main()
