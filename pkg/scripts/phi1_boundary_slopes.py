"""Local boundary slopes of the principal eigenfunction of the restricted fractional Laplacian.

Prints d log phi1 / d log d at a ladder of distances and the default-window
fits with and without the d^{2s} correction term, for several grid sizes.

    python3 scripts/phi1_boundary_slopes.py --n 511 1023 2047 --s 0.25
"""

import argparse

import numpy as np

from fracpme import Grid, OperatorSpec, assemble
from fracpme.harness import boundary_exponent_fit


def local_slope(op, d0):
    d = op.grid.d
    left = op.x < 0.5 * (op.grid.a + op.grid.b)
    i = np.flatnonzero(left)[np.argmin(np.abs(d[left] - d0))]
    return (np.log(op.phi1[i + 1]) - np.log(op.phi1[i - 1])) / (np.log(d[i + 1]) - np.log(d[i - 1]))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[511, 1023])
    ap.add_argument("--s", type=float, default=0.25)
    args = ap.parse_args()
    dists = (0.2, 0.1, 0.05, 0.02, 0.01, 0.005)
    print("n      " + "  ".join(f"d={d:<6g}" for d in dists) + "  raw_fit  corrected  phi_coord")
    for n in args.n:
        op = assemble(OperatorSpec("rfl", args.s, Grid(-1.0, 1.0, n)))
        row = [local_slope(op, d) if d > 2 * op.h else float("nan") for d in dists]
        raw = boundary_exponent_fit(op.phi1, op).slope
        corr = boundary_exponent_fit(op.phi1, op, correction=2 * args.s).slope
        print(f"{n:<6d} " + "  ".join(f"{v:8.4f}" for v in row) + f"  {raw:7.4f}  {corr:9.4f}  (gamma={op.gamma})")


if __name__ == "__main__":
    main()
