"""Boundary exponents of the upper and lower large-time envelopes of F(u).

Compares the fits in the distance coordinate, in phi1^(1/gamma), and with the
d^{2s} correction, across grid sizes.

    python3 scripts/envelope_exponents.py --n 255 511
"""

import argparse

from fracpme import Grid, NonlinearitySpec, OperatorSpec, TimeGrid, assemble, exponents, run_mild
from fracpme.estimates import calibrate_t_star
from fracpme.harness import envelope_exponents, make_datum


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[255, 511])
    ap.add_argument("--s", type=float, default=0.25)
    ap.add_argument("--T", type=float, default=100.0)
    ap.add_argument("--steps", type=int, default=200)
    args = ap.parse_args()
    F = NonlinearitySpec.power(2.0)
    for n in args.n:
        op = assemble(OperatorSpec("rfl", args.s, Grid(-1.0, 1.0, n)))
        es = exponents(F, op)
        tr = run_mild(op, F, make_datum(op, {"family": "bump"}), TimeGrid(args.T, args.steps))
        t_star = calibrate_t_star(tr, op, F, es).t_star
        print(f"n={n}  t*={t_star:.3g}  target={es.gamma * es.sigma1:.3f}")
        for coord, corr in (("d", None), ("d", 2 * args.s), ("phi", None), ("phi", 2 * args.s)):
            fits = envelope_exponents(tr, op, F, 1.1 * t_star, coordinate=coord, correction=corr)
            print(f"  coordinate={coord:3s} correction={str(corr):4s}  "
                  f"upper={fits['upper'].slope:.4f}  lower={fits['lower'].slope:.4f}")


if __name__ == "__main__":
    main()
