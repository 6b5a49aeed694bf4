"""Critical MAC index j* (basic and adaptive attacker) and the R(p, j) curves."""

from __future__ import annotations

import argparse
from pathlib import Path

from macprune.strength import P_GRID, j_star, write_j_star_csv, write_r_curve_csv


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/strength")
    ap.add_argument("--threshold", type=float, default=1000.0)
    ap.add_argument("--j-max", type=int, default=40)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_j_star_csv(out / "j_star.csv", P_GRID, args.threshold, ("basic", "adaptive"))
    for mode in ("basic", "adaptive"):
        write_r_curve_csv(out / f"r_curve_{mode}.csv", P_GRID, range(1, args.j_max + 1), mode)
    for p in P_GRID:
        print(f"p={p:.1f}  basic j*={j_star(p, args.threshold, 'basic'):5d}  "
              f"adaptive j*={j_star(p, args.threshold, 'adaptive'):5d}")


if __name__ == "__main__":
    main()
