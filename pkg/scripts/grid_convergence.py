"""Compare steady profiles at two resolutions over a (diameter, k_sg, length) scan.

The default scan reproduces the table behind the bundled k_sg choice:
outlet conversion and grid error pull in opposite directions.
"""
import argparse
import itertools

import numpy as np

from calciner import config as cfg
from calciner.solver import SolverConfig, integrate, steady_state

FIELDS = ("c_AB2", "c_A", "c_B", "c_air", "c_Q", "T_s", "T_g", "P")


def steady(n, overrides):
    sc = cfg.load_scenario(None, [f"geometry.n_cells={n}", *overrides])
    model = cfg.build_model(sc)
    opts = {**sc.solver_config().__dict__, "horizon": sc.output.steady_guess_time, "samples": 2}
    guess = integrate(model, cfg.initial_state(model, sc), SolverConfig(**opts)).z[-1]
    z, _ = steady_state(model, guess)
    ev = model.evaluate(0.0, z)
    return sc, ev


def profiles(ev):
    s = ev.state
    return dict(zip(FIELDS, [*s.c.T, s.T_s, s.T_g, s.P]))


def compare(n, overrides):
    sc, coarse = steady(n, overrides)
    _, fine = steady(2 * n, overrides)
    a, b = profiles(coarse), profiles(fine)
    # fine cells 2i and 2i+1 straddle the centre of coarse cell i
    errs = {k: float(np.max(np.abs(a[k] - 0.5 * (b[k][0::2] + b[k][1::2]))
                            / np.abs(0.5 * (b[k][0::2] + b[k][1::2])))) for k in FIELDS}
    T_s = coarse.state.T_s
    return dict(
        ratio=coarse.state.c[-1, 0] / sc.boundary.c_in[0],
        peak=int(np.argmax(coarse.rate)),
        dip=float(np.max(np.maximum.accumulate(T_s) - T_s)),
        errs=errs,
    )


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cells", type=int, default=20)
    ap.add_argument("--diameter", type=float, nargs="+", default=[0.2])
    ap.add_argument("--k-sg", type=float, nargs="+", default=[150.0, 180.0, 200.0, 250.0])
    ap.add_argument("--length", type=float, nargs="+", default=[30.0])
    args = ap.parse_args()

    print(f"{'d':>5} {'k_sg':>6} {'L':>5} {'out/in':>8} {'peak':>4} {'dip_K':>6} "
          f"{'worst':>6} {'field':>6}")
    for d, k, L in itertools.product(args.diameter, args.k_sg, args.length):
        ov = [f"geometry.diameter={d!r}", f"heat_transfer.k_sg={k!r}", f"geometry.length={L!r}"]
        res = compare(args.cells, ov)
        field = max(res["errs"], key=res["errs"].get)
        print(f"{d:5.2f} {k:6.0f} {L:5.0f} {res['ratio']:8.4f} {res['peak']:4d} {res['dip']:6.3f} "
              f"{res['errs'][field]:6.3f} {field:>6}")


if __name__ == "__main__":
    main()
