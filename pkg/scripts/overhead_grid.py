"""Cycle-count overhead of RPAM and IaPAM over a (p, q, D) grid."""

from __future__ import annotations

import argparse
from pathlib import Path

from macprune.overhead import breakeven_p, write_grid_csv
from macprune.strength import P_GRID


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/overhead.csv")
    ap.add_argument("--M", type=int, default=864, help="MACs in the first layer")
    ap.add_argument("--network-budget", type=float, default=None)
    args = ap.parse_args()
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    qs = tuple(round(0.1 * i, 1) for i in range(10))
    write_grid_csv(path, args.M, P_GRID + (1.0,), qs, (1, 2, 3), args.network_budget)
    for D in (1, 2, 3):
        print(f"D={D}: RPAM beats the baseline for p < {breakeven_p(D):.4f}")


if __name__ == "__main__":
    main()
