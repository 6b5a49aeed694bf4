"""Seed-pinned experiment pipelines shared by the CLI, scripts and tests.

Every function here takes one base seed and derives all other seeds from it
with ``derive_seed(base, EXPERIMENT_KEY, ...)``, so the numbers are
reproducible without a global RNG.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dema import DecisionRule, estimate_R_hat, min_traces_to_success, recover_sequential, true_hypothesis
from .emsim import LeakageParams, simulate_traces
from .pam import RpamConfig
from .qinference import QuantizedFirstLayer
from .rng import derive_seed
from .strength import theoretical_R

_STRENGTH, _ATTACK, _INFLATION, _IAPAM = 11, 12, 13, 14


# --- empirical mitigation strength -------------------------------------------

@dataclass(frozen=True)
class StrengthPoint:
    p: float
    j: int
    R_theory: float
    R_hat_mean: float
    R_hat_reps: tuple[float, ...]

    @property
    def log10_error(self) -> float:
        """|log10(mean R_hat) - log10 R|."""
        return _log_err(self.R_hat_mean, self.R_theory)

    @property
    def mean_log10_error(self) -> float:
        """Mean over repetitions of |log10 R_hat - log10 R|."""
        return float(np.mean([_log_err(r, self.R_theory) for r in self.R_hat_reps]))


def _log_err(r_hat: float, r: float) -> float:
    if not math.isfinite(r_hat) or r_hat <= 0:
        return math.inf
    return abs(math.log10(r_hat) - math.log10(r))


def empirical_strength(
    layer: QuantizedFirstLayer,
    ps: Sequence[float] = (0.5, 0.7),
    js: Sequence[int] = (2, 3, 4, 5, 6),
    n_traces: int = 100_000,
    reps: int = 20,
    params: LeakageParams = LeakageParams(),
    seed: int = 0,
) -> list[StrengthPoint]:
    """Average ``estimate_R_hat`` over ``reps`` fresh baseline/protected pairs.

    The hypothesis in both conditions is the attacker's model: HW of the
    unpruned accumulator ``s_j``.
    """
    w = layer.weights
    acc: dict[tuple[float, int], list[float]] = {(p, j): [] for p in ps for j in js}
    for r in range(reps):
        base = simulate_traces(layer, n_traces, params, derive_seed(seed, _STRENGTH, r, 0))
        Xb = layer.mac_inputs(base.pixels)
        for k, p in enumerate(ps):
            prot = simulate_traces(layer, n_traces, params, derive_seed(seed, _STRENGTH, r, 1 + k), RpamConfig(p))
            Xp = layer.mac_inputs(prot.pixels)
            for j in js:
                vb = true_hypothesis(Xb, w, j)
                vp = true_hypothesis(Xp, w, j)
                acc[p, j].append(estimate_R_hat(base.samples, prot.samples, vb, vp, baseline_slot=j - 1))
    return [
        StrengthPoint(p, j, theoretical_R(p, j), float(np.mean(acc[p, j])), tuple(acc[p, j]))
        for p in ps
        for j in js
    ]


# --- end-to-end attack ------------------------------------------------------------

@dataclass(frozen=True)
class AttackRun:
    seed: int
    correct_prefix: int
    errors: int
    recovered: tuple


def attack_runs(
    n_runs: int = 20,
    n_traces: int = 2000,
    n_macs: int = 8,
    j_max: int = 8,
    defense: RpamConfig | None = None,
    params: LeakageParams = LeakageParams(),
    seed: int = 0,
    rule: DecisionRule = DecisionRule(),
) -> list[AttackRun]:
    """One layer and one trace set per run; layer seed is ``seed + run``."""
    out = []
    tag = 0 if defense is None else 1
    for r in range(n_runs):
        layer = QuantizedFirstLayer.random(n_macs, seed + r)
        ts = simulate_traces(layer, n_traces, params, derive_seed(seed, _ATTACK, r, tag), defense)
        res = recover_sequential(ts.samples, layer.mac_inputs(ts.pixels), j_max, rule)
        out.append(AttackRun(seed + r, res.correct_prefix(layer.weights), res.errors(layer.weights),
                             tuple(res.recovered_weights())))
    return out


# --- trace inflation --------------------------------------------------------------

@dataclass(frozen=True)
class InflationRow:
    seed: int
    n_unprotected: int | None
    n_noisier: int | None
    n_protected: int | None

    @staticmethod
    def _ratio(a, b) -> float:
        if b is None:
            return math.nan
        return math.inf if a is None else a / b

    @property
    def protection_ratio(self) -> float:
        return self._ratio(self.n_protected, self.n_unprotected)

    @property
    def noise_ratio(self) -> float:
        return self._ratio(self.n_noisier, self.n_unprotected)


def trace_inflation(
    n_layers: int = 20,
    p: float = 0.5,
    position: int = 3,
    params: LeakageParams = LeakageParams(),
    n_macs: int = 8,
    unprotected_budget: int = 8000,
    protected_budget: int = 100_000,
    unprotected_step: int = 2,
    protected_step: int = 20,
    seed: int = 0,
) -> list[InflationRow]:
    """Minimum traces to rank the true weight at ``position`` first.

    Three conditions per layer: unprotected, unprotected with doubled noise,
    and RPAM(``p``).  Earlier weights are given.  ``None`` means the budget ran
    out (a right-censored observation).
    """
    noisier = LeakageParams(params.epsilon, params.c, 2 * params.sigma)
    rows = []
    for r in range(n_layers):
        layer = QuantizedFirstLayer.random(n_macs, seed + r)
        w = layer.weights
        prior, truth = w[: position - 1], int(w[position - 1])

        def run(n, prm, defense, step, tag):
            ts = simulate_traces(layer, n, prm, derive_seed(seed, _INFLATION, r, tag), defense)
            return min_traces_to_success(ts.samples, layer.mac_inputs(ts.pixels), prior, position, truth, step)

        rows.append(InflationRow(
            seed + r,
            run(unprotected_budget, params, None, unprotected_step, 0),
            run(unprotected_budget, noisier, None, unprotected_step, 1),
            run(protected_budget, params, RpamConfig(p), protected_step, 2),
        ))
    return rows


def censored_median(values: Sequence[float]) -> float:
    """Median where censored observations are ``inf``; nan entries are dropped."""
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=np.float64)
    if v.size == 0:
        return math.nan
    return float(np.median(v))


# --- IaPAM versus RPAM accuracy ----------------------------------------------------

@dataclass(frozen=True)
class UtilityRow:
    seed: int
    acc_clean: float
    acc_rpam: float
    acc_iapam: float
    soft_ratio: float

    @property
    def drop_rpam(self) -> float:
        return (self.acc_clean - self.acc_rpam) / self.acc_clean

    @property
    def drop_iapam(self) -> float:
        return (self.acc_clean - self.acc_iapam) / self.acc_clean


def iapam_vs_rpam(
    seeds: Sequence[int] = tuple(range(10)),
    p: float = 0.7,
    q: float = 0.4,
    alpha: float = 1.0,
    epochs: int = 20,
    iterations: int = 3,
    lr: float = 0.1,
    mode: str = "hard",
) -> list[UtilityRow]:
    """Per seed: train, fine-tune under drop rate ``p``, learn a map, compare."""
    from .iapam import defended_accuracy, finetune_dropout, load_digits_dataset, train_classifier, train_map

    ds = load_digits_dataset(0)
    rows = []
    for s in seeds:
        model = finetune_dropout(train_classifier(ds, seed=s), ds, p, seed=s)
        tm, _ = train_map(model, ds, q, alpha, epochs, iterations, s, lr=lr, mode=mode)
        es = derive_seed(s, _IAPAM)
        rows.append(UtilityRow(
            s,
            model.accuracy(ds.x_test, ds.y_test),
            defended_accuracy(model, ds.x_test, ds.y_test, RpamConfig(p), es),
            defended_accuracy(model, ds.x_test, ds.y_test, tm.iapam_config(p), es),
            tm.final_soft_ratio,
        ))
    return rows
