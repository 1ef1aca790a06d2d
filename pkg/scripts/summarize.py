#!/usr/bin/env python3
"""Print observed rates (one mesh per row) or max/min spreads (one nu per row) from a result CSV."""

import argparse
import csv

from hdivmhd.analysis import convergence_rates
from hdivmhd.experiments import CSV_COLUMNS

ERR = [c for c in CSV_COLUMNS if c.startswith("err_")]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("csv", help="CSV written by the hdivmhd command")
    args = parser.parse_args()
    with open(args.csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len({r["mesh_id"] for r in rows}) == 1:
        print("norm,max/min")
        for key in ERR:
            vals = [float(r[key]) for r in rows]
            print(f"{key},{max(vals) / min(vals):.4f}")
        return
    for scheme in dict.fromkeys(r["scheme"] for r in rows):
        sub = sorted((r for r in rows if r["scheme"] == scheme), key=lambda r: -float(r["h_max"]))
        table = convergence_rates([(float(r["h_max"]), {k: float(r[k]) for k in ERR}) for r in sub])
        print(f"# {scheme}")
        print("norm,least_squares," + ",".join(f"pair{i}" for i in range(len(sub) - 1)))
        for key in ERR:
            print(",".join([key, f"{table.least_squares[key]:.4f}"]
                           + [f"{v:.4f}" for v in table.pairwise[key]]))


if __name__ == "__main__":
    main()
