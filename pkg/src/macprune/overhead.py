"""Expected cycle counts of the first-layer MAC loop on a Cortex-M4 class core.

Unprotected, each MAC iteration costs 6 cycles (index update 2, two loads 3,
MAC 1).  With RPAM every iteration adds a 1-cycle mask test; a taken branch
into the MAC body costs ``1 + D`` extra, plus 2 cycles for the shift/and that
walks the random-bit word.  IaPAM adds a 5-cycle critical-pixel table lookup
and a second conditional.  Values are expectations over Bernoulli masks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable


def _check_m(M: int) -> None:
    if int(M) != M or M < 1:
        raise ValueError(f"M must be a positive integer, got {M}")


def _check_d(D: int) -> None:
    if D not in (1, 2, 3):
        raise ValueError(f"pipeline depth D must be 1, 2 or 3, got {D}")


def _check_p(name: str, v: float) -> None:
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class CostModel:
    M: int
    D: int = 3
    p: float = 1.0
    q: float = 0.0

    def __post_init__(self):
        _check_m(self.M)
        _check_d(self.D)
        _check_p("p", self.p)
        _check_p("q", self.q)
        if self.q > self.p:
            raise ValueError(f"q={self.q} exceeds p={self.p}")

    def baseline(self) -> int:
        return baseline_cycles(self.M)

    def rpam(self) -> float:
        return rpam_cycles(self.M, self.p, self.D)

    def iapam(self) -> float:
        return iapam_cycles(self.M, self.p, self.q, self.D)


def baseline_cycles(M: int) -> int:
    _check_m(M)
    return 6 * M


def rpam_cycles(M: int, p: float, D: int) -> float:
    _check_m(M)
    _check_d(D)
    _check_p("p", p)
    return ((8 + D) * p + 1) * M


def iapam_cycles(M: int, p: float, q: float, D: int) -> float:
    _check_m(M)
    _check_d(D)
    _check_p("p", p)
    _check_p("q", q)
    if q > p:
        raise ValueError(f"q={q} exceeds p={p}")
    return ((8 + D) * p + 13 - 8 * q) * M


def breakeven_p(D: int) -> float:
    """RPAM beats the unprotected loop iff ``p`` is below this value."""
    _check_d(D)
    return 5 / (8 + D)


def relative_overhead(defended_first_layer: float, M: int, network_budget: float) -> float:
    """(defended - baseline) / baseline over a whole-network cycle budget.

    Only the first layer changes, so the defended total is the budget with the
    first-layer baseline swapped for ``defended_first_layer``.
    """
    base = baseline_cycles(M)
    if network_budget < base:
        raise ValueError("network budget must include the first-layer baseline")
    return (defended_first_layer - base) / network_budget


def write_grid_csv(
    path: Path | str,
    M: int,
    ps: Iterable[float],
    qs: Iterable[float],
    Ds: Iterable[int] = (1, 2, 3),
    network_budget: float | None = None,
) -> None:
    budget = float(network_budget) if network_budget is not None else float(baseline_cycles(M))
    qs = list(qs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([
            "p_activation_ratio", "q_critical_ratio", "D_pipeline_stages",
            "baseline_cycles", "rpam_cycles", "iapam_cycles",
            "rpam_overhead_percent", "iapam_overhead_percent",
        ])
        for D in Ds:
            for p in ps:
                for q in qs:
                    if q > p:
                        continue
                    r = rpam_cycles(M, p, D)
                    ia = iapam_cycles(M, p, q, D)
                    w.writerow([
                        f"{p:g}", f"{q:g}", D, baseline_cycles(M), f"{r:.6g}", f"{ia:.6g}",
                        f"{100 * relative_overhead(r, M, budget):.4f}",
                        f"{100 * relative_overhead(ia, M, budget):.4f}",
                    ])
