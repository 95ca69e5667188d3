"""Front speed of u_t = u'' + b u' + u(1 - u) on the line for a few drifts.

Without drift the speed is 2; a drift b shifts it to 2 - b.

    python3 scripts/kpp_speed.py --drifts 0,1,3 --T 40
"""

import argparse

from obleig.parabolic import bump, evolve, make_reaction, measure_front_speed, simulation_config

R1 = {"shape": "whole_space", "dimension": 1}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--drifts", default="0,1,3")
    p.add_argument("--T", type=float, default=40.0)
    p.add_argument("--h", type=float, default=0.1)
    p.add_argument("--dt", type=float, default=0.01)
    args = p.parse_args()
    f = make_reaction({"f": "s*(1-s)", "kpp": True, "saturation": 1.0})
    print(f"{'b':>5} {'speed':>9} {'2 - b':>7}")
    for b in (float(t) for t in args.drifts.split(",")):
        cfg = simulation_config(R1, [0.0], 5 * args.T + 20, args.h, args.dt, args.T, {"b": [b]}, {},
                                bump([0.0], 1.0, 1.0), snapshot_every=0.5)
        traj = evolve(cfg, f)
        speed = measure_front_speed(traj, 0.5, (args.T / 2, args.T))
        print(f"{b:5.1f} {speed:9.4f} {2 - b:7.2f}")


if __name__ == "__main__":
    main()
