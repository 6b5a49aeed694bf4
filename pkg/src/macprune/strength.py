"""Mitigation strength of random MAC pruning.

With each MAC kept independently with probability ``p``, the leakage of the
``j``-th original MAC lands on time slot ``k`` (``1 <= k <= j``) whenever
exactly ``k - 1`` of the preceding ``j - 1`` MACs were kept.

* A single pruning sequence carries mass ``p**k * (1-p)**(j-k)``; the best one
  gives :func:`max_leak_proportion`, and the trace-count inflation against an
  attacker correlating that one sequence is :func:`theoretical_R`.
* All ``C(j-1, k-1)`` sequences sharing slot ``k`` together carry the binomial
  mass; its maximum over ``k`` bounds any attacker that could combine them
  (:func:`adaptive_leak_proportion`, :func:`adaptive_R`).

Large-``j`` evaluation goes through log-space so ``j`` in the thousands is fine.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .qinference import QuantizedFirstLayer
from .rng import STREAM_INPUTS, STREAM_SURROGATE, make_rng

DEFAULT_THRESHOLD = 1000.0
J_SCAN_CAP = 10**6
ORACLE_MAX_J = 20


def _check(p: float, j: int, *, allow_zero: bool = False) -> None:
    if not (0.0 < p <= 1.0 or (allow_zero and p == 0.0)):
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if int(j) != j or j < 1:
        raise ValueError(f"j must be a positive integer, got {j}")


def floor_pj(p: float, j: int) -> int:
    """``floor(p*j)`` that is not fooled by ``0.7*10 == 7.000000000000001``-style rounding."""
    x = p * j
    r = round(x)
    return int(r) if abs(x - r) < 1e-9 else int(math.floor(x))


@dataclass(frozen=True)
class StrengthQuery:
    p: float
    j: int
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        _check(self.p, self.j)


def max_leak_proportion(p: float, j: int) -> float:
    _check(p, j)
    return p * max(p, 1.0 - p) ** (j - 1)


def theoretical_R(p: float, j: int) -> float:
    _check(p, j)
    return math.exp(-2.0 * (math.log(p) + (j - 1) * math.log(max(p, 1.0 - p))))


def _log_binomial_mass(p: float, j: int, k: int) -> float:
    """log of C(j-1, k-1) p^k (1-p)^(j-k)."""
    lc = math.lgamma(j) - math.lgamma(k) - math.lgamma(j - k + 1)
    out = lc + k * math.log(p)
    if j > k:
        out += (j - k) * math.log1p(-p)
    return out


def adaptive_argmax(p: float, j: int) -> tuple[int, ...]:
    """Slot(s) maximising the aggregated mass; two slots when ``p*j`` is an integer."""
    _check(p, j)
    if p == 1.0:
        return (j,)
    k = floor_pj(p, j) + 1
    if abs(p * j - round(p * j)) < 1e-9 and 1 <= k - 1:
        return (k - 1, k)
    return (k,)


def _log_adaptive_leak(p: float, j: int) -> float:
    return _log_binomial_mass(p, j, floor_pj(p, j) + 1)


def adaptive_leak_proportion(p: float, j: int) -> float:
    _check(p, j)
    if p == 1.0:
        return 1.0
    return math.exp(_log_adaptive_leak(p, j))


def adaptive_R(p: float, j: int) -> float:
    _check(p, j)
    if p == 1.0:
        return 1.0
    return math.exp(-2.0 * _log_adaptive_leak(p, j))


def j_star(p: float, threshold: float = DEFAULT_THRESHOLD, mode: str = "basic") -> int:
    """Smallest MAC index whose mitigation strength reaches ``threshold``."""
    if threshold <= 1:
        raise ValueError("threshold must exceed 1")
    if mode == "basic":
        fn = theoretical_R
    elif mode == "adaptive":
        fn = adaptive_R
    else:
        raise ValueError(f"mode must be 'basic' or 'adaptive', got {mode!r}")
    _check(p, 1)
    for j in range(1, J_SCAN_CAP + 1):
        if fn(p, j) >= threshold:
            return j
    raise RuntimeError(f"R(p={p}, j) never reached {threshold} below j={J_SCAN_CAP}")


@dataclass(frozen=True)
class LeakProfile:
    """Per-slot leakage masses of the ``j``-th MAC, slots 1..j."""

    p: float
    j: int
    per_sequence: np.ndarray
    aggregated: np.ndarray

    @property
    def per_sequence_max(self) -> float:
        return float(self.per_sequence.max())

    @property
    def aggregated_max(self) -> float:
        return float(self.aggregated.max())

    def per_sequence_argmax(self, rtol: float = 1e-12) -> tuple[int, ...]:
        return _argmax_set(self.per_sequence, rtol)

    def aggregated_argmax(self, rtol: float = 1e-12) -> tuple[int, ...]:
        return _argmax_set(self.aggregated, rtol)


def _argmax_set(v: np.ndarray, rtol: float) -> tuple[int, ...]:
    top = v.max()
    return tuple(int(k) + 1 for k in np.flatnonzero(v >= top * (1 - rtol)))


def bruteforce_leak_oracle(p: float, j: int) -> LeakProfile:
    """Enumerate all keep/drop patterns of the ``j - 1`` preceding MACs.

    The ``j``-th MAC is taken as executed.  Each pattern's probability is the
    product of per-MAC Bernoulli terms; the slot is one plus the number of kept
    predecessors.  Independent of the closed forms above.
    """
    _check(p, j)
    if j > ORACLE_MAX_J:
        raise ValueError(f"enumeration limited to j <= {ORACLE_MAX_J}")
    per_seq = np.zeros(j)
    agg = np.zeros(j)
    for pattern in itertools.product((False, True), repeat=j - 1):
        mass = p
        for kept in pattern:
            mass *= p if kept else (1.0 - p)
        slot = sum(pattern)
        agg[slot] += mass
        per_seq[slot] = max(per_seq[slot], mass)
    return LeakProfile(p, j, per_seq, agg)


# --- partial recovery ------------------------------------------------------

def partial_recovery_similarity(layer, known_fraction: float, inputs, rng_seed: int) -> float:
    """Cosine similarity of true vs. partially-recovered first-layer outputs.

    ``layer`` is either one chain or a sequence of chains (one per output
    neuron).  The recovered model copies the first ``known_fraction`` of each
    chain's weights in MAC order and draws the rest uniformly from the signed
    8-bit range.  For a bank of neurons the cosine is taken per input over
    the neuron axis and averaged; for a single chain it is taken over the
    sample axis.
    """
    if not 0.0 <= known_fraction <= 1.0:
        raise ValueError("known_fraction must lie in [0, 1]")
    chains = [layer] if isinstance(layer, QuantizedFirstLayer) else list(layer)
    x = np.asarray(inputs, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("need a non-empty (n_samples, n_pixels) input set")
    rng = make_rng(rng_seed, STREAM_SURROGATE)
    true_out, sur_out = [], []
    for chain in chains:
        n_known = int(math.floor(known_fraction * chain.n_macs + 1e-9))
        w_sur = chain.weights.copy()
        w_sur[n_known:] = rng.integers(-128, 128, chain.n_macs - n_known)
        xm = chain.mac_inputs(x)
        true_out.append(xm @ chain.weights)
        sur_out.append(xm @ w_sur)
    a = np.stack(true_out, axis=1).astype(np.float64)
    b = np.stack(sur_out, axis=1).astype(np.float64)
    if a.shape[1] == 1:
        a, b = a.T, b.T
    dot = (a * b).sum(axis=1)
    norm = np.sqrt((a * a).sum(axis=1)) * np.sqrt((b * b).sum(axis=1))
    ok = norm > 0
    if not ok.any():
        raise ValueError("all output vectors are zero")
    return float(np.mean(dot[ok] / norm[ok]))


def random_layer_bank(n_neurons: int, n_macs: int, seed: int) -> list[QuantizedFirstLayer]:
    """Independent uniform-weight chains sharing the identity pixel binding."""
    rng = make_rng(seed, STREAM_SURROGATE, 1)
    return [QuantizedFirstLayer.from_weights(rng.integers(-128, 128, n_macs)) for _ in range(n_neurons)]


def random_inputs(n: int, n_pixels: int, seed: int) -> np.ndarray:
    return make_rng(seed, STREAM_INPUTS, 1).integers(0, 256, (n, n_pixels))


# --- table emitters -----------------------------------------------------------

P_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))


def j_star_rows(ps: Iterable[float] = P_GRID, threshold: float = DEFAULT_THRESHOLD, mode: str = "basic"):
    return [(p, j_star(p, threshold, mode)) for p in ps]


def write_j_star_csv(
    path: Path | str,
    ps: Iterable[float] = P_GRID,
    threshold: float = DEFAULT_THRESHOLD,
    modes: Sequence[str] = ("basic",),
) -> None:
    ps = list(ps)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p_activation_ratio"] + [f"j_star_mac_index_{m}_R_ge_{threshold:g}" for m in modes])
        cols = [[j for _, j in j_star_rows(ps, threshold, m)] for m in modes]
        for i, p in enumerate(ps):
            w.writerow([f"{p:g}"] + [col[i] for col in cols])


def write_r_curve_csv(path: Path | str, ps: Sequence[float], js: Sequence[int], mode: str = "basic") -> None:
    """p-grid x j-grid of R values, one row per p."""
    fn = theoretical_R if mode == "basic" else adaptive_R
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p_activation_ratio", "j_mac_index", f"R_{mode}_trace_ratio", f"log10_R_{mode}"])
        for p in ps:
            for j in js:
                r = fn(p, j)
                w.writerow([f"{p:g}", j, f"{r:.10g}", f"{math.log10(r):.6f}"])
