"""Mass sweep for the L1_phi to L-infinity smoothing exponents.

Writes the local time slope of sup u against tau = t M^(m-1) for one datum and
the fitted (alpha, beta) over a chosen tau window.

    python3 scripts/smoothing_sweep.py --n 255 --out runs/smoothing
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from fracpme import Grid, NonlinearitySpec, OperatorSpec, assemble, exponents, weighted_l1
from fracpme.estimates import smoothing_audit
from fracpme.harness import make_datum, run_geometric


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=255)
    ap.add_argument("--s", type=float, default=0.25)
    ap.add_argument("--m", type=float, default=2.0)
    ap.add_argument("--half-width", type=float, default=0.05)
    ap.add_argument("--tau", type=float, nargs=2, default=[0.03, 5.0])
    ap.add_argument("--amplitudes", type=float, nargs="+", default=[1.0, 10.0, 100.0, 1000.0])
    ap.add_argument("--out", type=Path, default=Path("runs/smoothing"))
    args = ap.parse_args()

    op = assemble(OperatorSpec("rfl", args.s, Grid(-1.0, 1.0, args.n)))
    F = NonlinearitySpec.power(args.m)
    es = exponents(F, op)
    u0 = make_datum(op, {"family": "bump", "offset": 0.0, "half_width": args.half_width})
    taus = np.geomspace(1e-3, 1e4, 57)
    sweep = []
    for a in args.amplitudes:
        M = float(weighted_l1(a * u0, op))
        sweep.append(run_geometric(op, F, a * u0, np.concatenate([[0.0], taus / M ** (args.m - 1)])))

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "local_slopes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["amplitude", "tau", "local_beta"])
        for a, tr in zip(args.amplitudes, sweep):
            sup = tr.states.max(axis=1)[1:]
            slope = -np.diff(np.log(sup)) / np.diff(np.log(taus))
            for t, b in zip(np.sqrt(taus[1:] * taus[:-1]), slope):
                w.writerow([a, f"{t:.6g}", f"{b:.6f}"])
    rep = smoothing_audit(sweep, op, F, es, tuple(args.tau))
    (args.out / "smoothing.json").write_text(rep.to_json())
    f = rep.fitted
    print(f"alpha = {f['alpha']:.4f}  beta = {f['beta']:.4f}  target = ({f['target'][0]:.4f}, {f['target'][1]:.4f})"
          f"  verdict = {'pass' if rep.verdict else 'fail'}")


if __name__ == "__main__":
    main()
