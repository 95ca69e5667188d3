"""Mean and least mean of the comb c(x) = 1 - 2 sum_n 1[2^n, 2^n + n] on the line.

    python3 scripts/comb_averages.py --h 0.25
"""

import argparse

import numpy as np

from obleig.bounds import combine, least_mean_of, mean_of

R1 = {"shape": "whole_space", "dimension": 1}
COMB = {"type": "prop_c_comb"}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--h", type=float, default=0.25)
    p.add_argument("--n-max", type=int, default=40)
    args = p.parse_args()
    mean = mean_of(R1, [0.0], COMB, list(np.geomspace(64, 4096, 13)), args.h)
    centers = [[0.0]] + [[2.0 ** n + n / 2] for n in range(2, args.n_max + 1)]
    least = least_mean_of(R1, centers, COMB, list(np.geomspace(2, 20, 7)), 0.1)
    print(f"{'r':>9} {'mean':>9}")
    for r, v in mean.mean_sequence:
        print(f"{r:9.1f} {v:9.5f}")
    print(f"{'r':>9} {'least':>9} {'argmin':>14}")
    for (r, v), c in zip(least.least_mean_sequence, least.argmin_centers):
        print(f"{r:9.3f} {v:9.5f} {c[0]:14.1f}")
    rep = combine(mean, least)
    print(f"mean estimate {rep.mean_estimate:.5f}  least mean estimate {rep.least_mean_estimate:.5f}")


if __name__ == "__main__":
    main()
