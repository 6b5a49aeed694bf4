"""Correlation attack on the cumulative-sum Hamming-weight leakage.

The attacker knows the MAC order and the inputs.  Weight ``j`` is attacked
once ``w_1 .. w_{j-1}`` are known: each candidate ``w`` predicts
``HW(s_{j-1} + i_j * w)`` per trace, and candidates are ranked by their
largest |Pearson correlation| over a window of time slots.  The first weight
alone is ambiguous (many weights give identical product HWs), so it is
confirmed jointly with the second.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .emsim import fit_leakage
from .qinference import ALL_WEIGHTS, aliasing_census, hamming_weight, wrap32


class UndefinedCorrelationError(ValueError):
    pass


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("pearson needs two equal-length vectors of length >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = xc @ xc
    syy = yc @ yc
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("zero variance")
    r = float((xc @ yc) / math.sqrt(sxx * syy))
    return max(-1.0, min(1.0, r))


class RunningCorrelation:
    """Pearson correlations of K hypothesis columns against W trace columns,
    accumulated chunk by chunk.  Undefined entries come back as nan."""

    def __init__(self, k: int, w: int):
        self.n = 0
        self.sh = np.zeros(k)
        self.shh = np.zeros(k)
        self.sl = np.zeros(w)
        self.sll = np.zeros(w)
        self.shl = np.zeros((k, w))

    def add(self, H: np.ndarray, L: np.ndarray) -> None:
        H = np.asarray(H, dtype=np.float64)
        L = np.asarray(L, dtype=np.float64)
        self.n += H.shape[0]
        self.sh += H.sum(0)
        self.shh += np.einsum("nk,nk->k", H, H)
        self.sl += L.sum(0)
        self.sll += np.einsum("nw,nw->w", L, L)
        self.shl += H.T @ L

    def corr(self) -> np.ndarray:
        n = self.n
        if n < 2:
            return np.full(self.shl.shape, np.nan)
        vh = self.shh - self.sh**2 / n
        vl = self.sll - self.sl**2 / n
        cov = self.shl - np.outer(self.sh, self.sl) / n
        # hypotheses are integer HWs; anything this small is an exact constant
        vh = np.where(vh > 1e-9 * n, vh, np.nan)
        vl = np.where(vl > 1e-12 * n, vl, np.nan)
        with np.errstate(invalid="ignore"):
            return np.clip(cov / np.sqrt(np.outer(vh, vl)), -1.0, 1.0)


@dataclass(frozen=True)
class Candidate:
    weight: int
    slot: int
    corr: float

    @property
    def score(self) -> float:
        return abs(self.corr)


@dataclass(frozen=True)
class CandidateSet:
    candidates: frozenset

    def __post_init__(self):
        if not all(-128 <= int(w) <= 127 for w in self.candidates):
            raise ValueError("candidates must be signed 8-bit weights")

    def __contains__(self, w) -> bool:
        return w in self.candidates

    def __len__(self) -> int:
        return len(self.candidates)


def _slots(window, position: int, T: int) -> np.ndarray:
    if window is None:
        idx = np.array([position - 1])
    elif isinstance(window, str):
        if window != "all":
            raise ValueError(f"unknown window {window!r}")
        idx = np.arange(T)
    elif isinstance(window, slice):
        idx = np.arange(T)[window]
    else:
        idx = np.asarray(list(window), dtype=np.int64)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= T:
        raise ValueError(f"window {window!r} not within trace length {T}")
    return idx


def _samples(traces) -> np.ndarray:
    return np.asarray(getattr(traces, "samples", traces), dtype=np.float64)


def _prefix_sums(mac_inputs: np.ndarray, prior: Sequence[int]) -> np.ndarray:
    if len(prior) == 0:
        return np.zeros(mac_inputs.shape[0], dtype=np.int64)
    x = mac_inputs[:, : len(prior)].astype(np.int64)
    return x @ np.asarray(prior, dtype=np.int64)


def _hypotheses(prefix: np.ndarray, inputs_j: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return hamming_weight(prefix[:, None] + inputs_j.astype(np.int64)[:, None] * weights[None, :])


def _correlate(prefix, inputs_j, weights, Lw, chunk: int = 8192) -> np.ndarray:
    rc = RunningCorrelation(weights.size, Lw.shape[1])
    for lo in range(0, Lw.shape[0], chunk):
        hi = lo + chunk
        rc.add(_hypotheses(prefix[lo:hi], inputs_j[lo:hi], weights), Lw[lo:hi])
    return rc.corr()


def _rank(C: np.ndarray, weights: np.ndarray, slots: np.ndarray) -> list[Candidate]:
    absC = np.abs(C)
    out = []
    for k, w in enumerate(weights.tolist()):
        row = absC[k]
        if np.isnan(row).all():
            continue
        best = int(np.nanargmax(row))
        out.append(Candidate(int(w), int(slots[best]), float(C[k, best])))
    out.sort(key=lambda c: -c.score)
    return out


def cpa_rank(
    traces,
    mac_inputs: np.ndarray,
    prior: Sequence[int],
    position: int,
    window=None,
    candidates: Iterable[int] | None = None,
) -> list[Candidate]:
    """Rank candidate values of weight ``position`` (1-based).

    ``mac_inputs`` holds each trace's inputs in MAC order.  ``window`` is
    ``None`` (the ``position``-th slot only), ``"all"``, a slice, or slot
    indices.  Candidates whose hypothesis is constant over the traces are
    dropped rather than scored 0.
    """
    L = _samples(traces)
    X = np.asarray(mac_inputs)
    if len(prior) != position - 1:
        raise ValueError(f"position {position} needs exactly {position - 1} resolved weights")
    slots = _slots(window, position, L.shape[1])
    weights = ALL_WEIGHTS if candidates is None else np.asarray(sorted(set(candidates)), dtype=np.int64)
    if L.shape[0] < 2:
        return []
    C = _correlate(_prefix_sums(X, prior), X[:, position - 1], weights, L[:, slots])
    return _rank(C, weights, slots)


@dataclass(frozen=True)
class DecisionRule:
    """How the sequential attack separates winners from noise.

    A candidate stays in the running if its |correlation| is within
    ``margin / sqrt(N)`` of the best.  Sample correlations fluctuate on that
    scale, while neighbouring weights can sit within a few percent of each
    other for structural reasons, so a relative margin would not work.  ``max_ambiguity`` bounds how many tied prefixes the
    sequential attack carries forward.  ``stable_steps`` is used by
    trace-count sweeps.
    """

    margin: float = 1.0
    stable_steps: int = 3
    position1_keep: int = 16
    max_ambiguity: int = 8


@dataclass(frozen=True)
class RecoveredWeight:
    position: int
    weight: int | None
    slot: int | None
    corr: float
    success: bool


@dataclass
class AttackResult:
    recovered: list[RecoveredWeight]
    traces_used: int
    position1_candidates: CandidateSet | None = None

    @property
    def success(self) -> list[bool]:
        return [r.success for r in self.recovered]

    def recovered_weights(self) -> list[int | None]:
        return [r.weight for r in self.recovered]

    def correct_prefix(self, truth: Sequence[int]) -> int:
        """Number of leading positions reported successful and actually right."""
        n = 0
        for r, t in zip(self.recovered, truth):
            if not (r.success and r.weight == int(t)):
                break
            n += 1
        return n

    def errors(self, truth: Sequence[int]) -> int:
        """Positions reported successful with a wrong weight."""
        return sum(1 for r, t in zip(self.recovered, truth) if r.success and r.weight != int(t))

    def write_csv(self, path: Path | str, truth: Sequence[int] | None = None, r_hat: Sequence[float] | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["j_mac_index", "recovered_weight", "truth_weight", "success", "peak_corr",
                        "best_slot", "N_traces", "R_hat_trace_ratio"])
            for i, r in enumerate(self.recovered):
                w.writerow([
                    r.position,
                    "" if r.weight is None else r.weight,
                    "" if truth is None else int(truth[i]),
                    int(r.success),
                    f"{r.corr:.6f}",
                    "" if r.slot is None else r.slot,
                    self.traces_used,
                    "" if r_hat is None else f"{r_hat[i]:.6g}",
                ])


def _failed(positions: Iterable[int]) -> list[RecoveredWeight]:
    return [RecoveredWeight(j, None, None, float("nan"), False) for j in positions]


def position1_candidates(ranked: Sequence[Candidate], keep: int, convention: str = "signed") -> CandidateSet:
    """Top-ranked first-weight guesses widened to their full aliasing classes.

    Zero is always included: its product is constant, so it can never be
    ranked at the first slot.
    """
    census = aliasing_census(convention)
    cands = {0}
    for c in ranked[:keep]:
        cands.update(census.class_of(c.weight))
    return CandidateSet(frozenset(cands))


def recover_sequential(
    traces,
    mac_inputs: np.ndarray,
    j_max: int,
    decision_rule: DecisionRule = DecisionRule(),
    window=None,
) -> AttackResult:
    """Recover ``w_1 .. w_{j_max}`` in order.

    The first position only narrows ``w_1`` to a candidate set.  From the
    second position on, every surviving prefix is extended by all 256 values
    of the next weight and the prefixes scoring within the decision margin of
    the best survive.  Several usually survive only for exact aliases, e.g.
    ``(2*w_1, 2*w_2)`` while the accumulator stays non-negative.  A position
    counts as recovered once all survivors agree on it.  The attack stops when
    more than ``decision_rule.max_ambiguity`` prefixes tie, which is what
    noise-dominated traces produce.
    """
    L = _samples(traces)
    X = np.asarray(mac_inputs)
    N = L.shape[0]
    if j_max < 1:
        raise ValueError("j_max must be >= 1")
    if X.ndim == 2 and j_max > X.shape[1]:
        raise ValueError(f"j_max={j_max} exceeds the {X.shape[1]} MACs available")
    if N < 2:
        return AttackResult(_failed(range(1, j_max + 1)), N)

    rank1 = cpa_rank(L, X, [], 1, window)
    cand1 = position1_candidates(rank1, decision_rule.position1_keep)
    by_w1 = {c.weight: c for c in rank1}
    if j_max == 1:
        # nothing to confirm against; report the best guess without claiming success
        top = rank1[0] if rank1 else None
        rec = RecoveredWeight(1, top.weight if top else None, top.slot if top else None,
                              top.corr if top else float("nan"), False)
        return AttackResult([rec], N, cand1)

    tol = decision_rule.margin / math.sqrt(N)
    beam: list[tuple[tuple[int, ...], list[Candidate]]] = [((w,), [by_w1.get(w, Candidate(w, 0, float("nan")))])
                                                           for w in sorted(cand1.candidates)]
    resolved = 0
    for j in range(2, j_max + 1):
        slots = _slots(window, j, L.shape[1])
        scored = []
        for seq, path in beam:
            C = _correlate(_prefix_sums(X, seq), X[:, j - 1], ALL_WEIGHTS, L[:, slots])
            for c in _rank(C, ALL_WEIGHTS, slots):
                scored.append((c.score, seq + (c.weight,), path + [c]))
        if not scored:
            break
        scored.sort(key=lambda t: -t[0])
        best = scored[0][0]
        survivors = [(seq, path) for score, seq, path in scored if score >= best - tol]
        if len(survivors) > decision_rule.max_ambiguity:
            break
        beam = survivors
        # leading positions on which every survivor agrees
        seqs = [seq for seq, _ in beam]
        agree = 0
        while agree < j and len({s[agree] for s in seqs}) == 1:
            agree += 1
        resolved = max(resolved, agree)

    seq, path = beam[0]
    recovered = []
    for j in range(1, j_max + 1):
        if j <= len(seq):
            c = path[j - 1]
            recovered.append(RecoveredWeight(j, seq[j - 1], c.slot, c.corr, j <= resolved))
        else:
            recovered += _failed([j])
    return AttackResult(recovered, N, cand1)


def min_traces_to_success(
    traces,
    mac_inputs: np.ndarray,
    prior: Sequence[int],
    position: int,
    truth: int,
    step: int,
    cap: int | None = None,
    window=None,
    stable_steps: int = 3,
) -> int | None:
    """Smallest trace count (multiple of ``step``) from which the true weight
    is strictly top-ranked for ``stable_steps`` consecutive checkpoints.

    The traces are consumed in order, so the answer refers to prefixes of the
    given set.  Returns ``None`` when the cap (default: all traces) is hit first.
    """
    if step < 1:
        raise ValueError("step must be >= 1")
    L = _samples(traces)
    X = np.asarray(mac_inputs)
    cap = L.shape[0] if cap is None else min(int(cap), L.shape[0])
    slots = _slots(window, position, L.shape[1])
    prefix = _prefix_sums(X, prior)
    t_idx = int(np.flatnonzero(ALL_WEIGHTS == truth)[0])
    rc = RunningCorrelation(ALL_WEIGHTS.size, slots.size)
    streak_start, streak = None, 0
    for n in range(step, cap + 1, step):
        lo = n - step
        H = _hypotheses(prefix[lo:n], X[lo:n, position - 1], ALL_WEIGHTS)
        rc.add(H, L[lo:n][:, slots])
        with np.errstate(invalid="ignore"):
            score = np.nanmax(np.abs(rc.corr()), axis=1, initial=-1.0)
        score = np.where(np.isnan(score), -1.0, score)
        others = np.delete(score, t_idx)
        if score[t_idx] > others.max():
            if streak == 0:
                streak_start = n
            streak += 1
            if streak >= stable_steps:
                return streak_start
        else:
            streak = 0
    return None


def strongest_corr_slot(v: np.ndarray, traces, window=None) -> int | None:
    """Slot where the hypothesis ``v`` correlates best (|r|); ``None`` if undefined everywhere."""
    L = _samples(traces)
    slots = np.arange(L.shape[1]) if window is None else _slots(window, 1, L.shape[1])
    rc = RunningCorrelation(1, slots.size)
    rc.add(np.asarray(v, dtype=np.float64)[:, None], L[:, slots])
    c = np.abs(rc.corr()[0])
    if np.isnan(c).all():
        return None
    return int(slots[np.nanargmax(c)])


def estimate_R_hat(
    baseline_traces,
    protected_traces,
    baseline_values: np.ndarray,
    protected_values: np.ndarray | None = None,
    baseline_slot: int | None = None,
    protected_slot: int | None = None,
    min_t: float = 4.0,
) -> float:
    """Empirical trace-count ratio ``eps^2 sigma'^2 / (eps'^2 sigma^2)``.

    Each condition is fitted at its strongest-correlation slot unless one is
    given.  If the protected slope is not distinguishable from zero (|t| below
    ``min_t``) the ratio is unmeasurable and ``inf`` is returned.
    """
    Lb = _samples(baseline_traces)
    Lp = _samples(protected_traces)
    vb = np.asarray(baseline_values, dtype=np.float64)
    vp = vb if protected_values is None else np.asarray(protected_values, dtype=np.float64)
    sb = strongest_corr_slot(vb, Lb) if baseline_slot is None else baseline_slot
    sp = strongest_corr_slot(vp, Lp) if protected_slot is None else protected_slot
    if sb is None:
        raise ValueError("baseline hypothesis is constant; cannot fit")
    eps, _, s2 = fit_leakage(vb, Lb[:, sb])
    if sp is None:
        return math.inf
    eps_p, _, s2_p = fit_leakage(vp, Lp[:, sp])
    if math.isnan(eps_p):
        return math.inf
    se = math.sqrt(s2_p / (vp.var() * vp.size)) if vp.var() > 0 else math.inf
    if se == math.inf or abs(eps_p) < min_t * se:
        return math.inf
    return (eps**2 * s2_p) / (eps_p**2 * s2)


def true_hypothesis(mac_inputs: np.ndarray, weights: Sequence[int], position: int) -> np.ndarray:
    """HW of the unpruned accumulator after MAC ``position`` (1-based)."""
    X = np.asarray(mac_inputs, dtype=np.int64)[:, :position]
    return hamming_weight(wrap32(X @ np.asarray(weights[:position], dtype=np.int64)))
