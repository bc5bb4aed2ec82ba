"""Run the three canonical bundles and print the fitted-constant tables.

    python3 scripts/reproduce_tables.py --out runs/tables --n 128
"""

import argparse
from pathlib import Path

from fracpme.harness import run_tables


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/tables"))
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--jobs", type=int, default=4)
    args = ap.parse_args()
    for kind, path in run_tables(args.out, n=args.n, jobs=args.jobs).items():
        print(path.with_suffix(".txt").read_text())


if __name__ == "__main__":
    main()
