"""Importance-aware pixel activation map (IaPAM) training on a toy classifier.

The map is a grid of logits ``m``.  The forward pass multiplies the input by
``1[sigmoid(m) > 0.5]`` (hard) or ``sigmoid(m)`` (soft); gradients always flow
through ``sigmoid`` (straight-through estimator).  The loss is cross-entropy
plus ``alpha * |mean(sigmoid(m)) - q|``.  Each outer iteration restarts ``m``
from zero, trains it with the classifier frozen, and adds ``sigmoid(m)`` to
the importance scores; the top ``q`` fraction of scores becomes the critical
set.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .pam import IapamConfig, RpamConfig, critical_count, sample_iapam_batch, sample_rpam_batch
from .rng import STREAM_MASKS, STREAM_TRAIN, make_rng


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def _softmax_ce(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    ce = -float(logp[np.arange(n), y].mean())
    g = np.exp(logp)
    g[np.arange(n), y] -= 1.0
    return ce, g / n


# --- data ----------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    dims: tuple[int, ...]

    @property
    def n_pixels(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_classes(self) -> int:
        return int(max(self.y_train.max(), self.y_test.max())) + 1


def load_digits_dataset(seed: int = 0, test_fraction: float = 0.2) -> Dataset:
    """scikit-learn's bundled 8x8 digits, scaled to [0, 1], stratified split."""
    from sklearn.datasets import load_digits
    from sklearn.model_selection import train_test_split

    d = load_digits()
    x = d.data.astype(np.float64) / 16.0
    xtr, xte, ytr, yte = train_test_split(x, d.target, test_size=test_fraction, random_state=seed, stratify=d.target)
    return Dataset(xtr, ytr.astype(np.int64), xte, yte.astype(np.int64), (8, 8))


# --- classifier -------------------------------------------------------------

@dataclass
class ToyClassifier:
    """One-hidden-layer ReLU MLP."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, n_in: int, hidden: int, n_classes: int, seed: int) -> "ToyClassifier":
        rng = make_rng(seed, STREAM_TRAIN, 0)
        return cls(
            rng.normal(0, math.sqrt(2.0 / n_in), (n_in, hidden)),
            np.zeros(hidden),
            rng.normal(0, math.sqrt(1.0 / hidden), (hidden, n_classes)),
            np.zeros(n_classes),
        )

    def params(self) -> tuple[np.ndarray, ...]:
        return (self.W1, self.b1, self.W2, self.b2)

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.maximum(x @ self.W1 + self.b1, 0.0)
        return h @ self.W2 + self.b2

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x).argmax(axis=1)

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        return float((self.predict(x) == y).mean())

    def _backward(self, x, y):
        pre = x @ self.W1 + self.b1
        h = np.maximum(pre, 0.0)
        ce, g_logits = _softmax_ce(h @ self.W2 + self.b2, y)
        g_h = (g_logits @ self.W2.T) * (pre > 0)
        return ce, g_logits, h, g_h

    def loss_and_input_grad(self, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        ce, _, _, g_h = self._backward(x, y)
        return ce, g_h @ self.W1.T

    def loss_and_param_grads(self, x, y):
        ce, g_logits, h, g_h = self._backward(x, y)
        return ce, (x.T @ g_h, g_h.sum(0), h.T @ g_logits, g_logits.sum(0))


def fit_classifier(
    model: ToyClassifier,
    ds: Dataset,
    epochs: int,
    lr: float = 3e-3,
    batch_size: int = 64,
    drop_p: float | None = None,
    seed: int = 0,
) -> ToyClassifier:
    """Adam on mini-batches, returning a trained copy of ``model``.

    With ``drop_p`` set, every training sample gets a fresh Bernoulli(drop_p)
    keep mask each time it is drawn.
    """
    out = ToyClassifier(*(p.copy() for p in model.params()))
    rng = make_rng(seed, STREAM_TRAIN, 1 if drop_p is None else 2)
    params = list(out.params())
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    b1, b2, t = 0.9, 0.999, 0
    n = ds.x_train.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            x = ds.x_train[idx]
            if drop_p is not None:
                x = x * (rng.random(x.shape) < drop_p)
            _, grads = out.loss_and_param_grads(x, ds.y_train[idx])
            t += 1
            for k, (p, g) in enumerate(zip(params, grads)):
                m1[k] = b1 * m1[k] + (1 - b1) * g
                m2[k] = b2 * m2[k] + (1 - b2) * g * g
                p -= lr * (m1[k] / (1 - b1**t)) / (np.sqrt(m2[k] / (1 - b2**t)) + 1e-8)
    return out


def train_classifier(ds: Dataset, hidden: int = 64, epochs: int = 60, seed: int = 0) -> ToyClassifier:
    model = ToyClassifier.init(ds.n_pixels, hidden, ds.n_classes, seed)
    return fit_classifier(model, ds, epochs, seed=seed)


def finetune_dropout(model: ToyClassifier, ds: Dataset, p: float, epochs: int = 20, seed: int = 0) -> ToyClassifier:
    """Continue training on randomly deactivated inputs (keep rate ``p``)."""
    return fit_classifier(model, ds, epochs, lr=1e-3, drop_p=p, seed=seed)


# --- map training -------------------------------------------------------------

def iapam_loss(ce_loss: float, soft_active_ratio: float, q: float, alpha: float) -> float:
    return ce_loss + alpha * abs(soft_active_ratio - q)


def ste_grad(upstream_grad, m):
    """Gradient w.r.t. ``m`` through the binarised map, using sigmoid'(m)."""
    s = sigmoid(m)
    return np.asarray(upstream_grad, dtype=np.float64) * s * (1.0 - s)


def map_values(m: np.ndarray, mode: str = "hard") -> np.ndarray:
    s = sigmoid(m)
    if mode == "hard":
        return (s > 0.5).astype(np.float64)
    if mode == "soft":
        return s
    raise ValueError(f"mode must be 'hard' or 'soft', got {mode!r}")


def masked_forward(model: ToyClassifier, m: np.ndarray, batch: np.ndarray, mode: str = "hard"):
    """Logits of the masked batch and the soft active ratio mean(sigmoid(m))."""
    m = np.asarray(m, dtype=np.float64)
    x = np.asarray(batch, dtype=np.float64)
    if x.shape[-1] != m.size:
        raise ValueError(f"map has {m.size} pixels but inputs have {x.shape[-1]}")
    logits = model.forward(x * map_values(m.ravel(), mode))
    return logits, float(sigmoid(m).mean())


def map_loss_and_grad(model, m, x, y, q, alpha, mode="hard"):
    """``(loss, dloss/dm, soft_ratio)`` for one batch.

    In soft mode this is the exact gradient of the soft-surrogate loss.
    """
    mf = np.asarray(m, dtype=np.float64).ravel()
    s = sigmoid(mf)
    mask = map_values(mf, mode)
    ce, g_x = model.loss_and_input_grad(x * mask, y)
    g_mask = (g_x * x).sum(axis=0)
    ratio = float(s.mean())
    g_ratio = alpha * np.sign(ratio - q) / mf.size
    grad = ste_grad(g_mask + g_ratio, mf)
    return iapam_loss(ce, ratio, q, alpha), grad.reshape(np.shape(m)), ratio


@dataclass(frozen=True)
class ImportanceScores:
    S: np.ndarray

    def __post_init__(self):
        if (np.asarray(self.S) < 0).any():
            raise ValueError("importance scores must be non-negative")


@dataclass(frozen=True)
class TrainedMap:
    critical: np.ndarray          # bool grid
    q: float
    final_soft_ratio: float
    history: tuple = field(default=(), repr=False)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.critical.shape)

    def iapam_config(self, p: float) -> IapamConfig:
        return IapamConfig(p, self.q, self.critical)

    def write_csv(self, path: Path | str) -> None:
        from .pam import write_mask_csv

        write_mask_csv(path, self.critical, "critical_pixel_flag (1 = always active)")

    def write_history_csv(self, path: Path | str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "epoch", "soft_active_ratio", "hard_active_ratio", "loss_iapam_nats"])
            for row in self.history:
                w.writerow([row[0], row[1], f"{row[2]:.6f}", f"{row[3]:.6f}", f"{row[4]:.6f}"])


def binarize_scores(S: np.ndarray, q: float) -> np.ndarray:
    """Top ``floor(q*N)`` scores; ties go to the lowest flattened index."""
    flat = np.asarray(S, dtype=np.float64).ravel()
    k = critical_count(q, flat.size)
    order = np.argsort(-flat, kind="stable")
    out = np.zeros(flat.size, dtype=bool)
    out[order[:k]] = True
    return out.reshape(np.shape(S))


def train_map(
    model: ToyClassifier,
    dataset: Dataset,
    q: float,
    alpha: float = 1.0,
    epochs: int = 20,
    iterations: int = 3,
    rng_seed: int = 0,
    lr: float = 0.1,
    batch_size: int = 64,
    mode: str = "hard",
) -> tuple[TrainedMap, ImportanceScores]:
    """Learn the critical-pixel map by plain mini-batch gradient descent on ``m``."""
    if dataset.x_train.shape[0] == 0:
        raise ValueError("empty dataset")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    if iterations < 1 or epochs < 0:
        raise ValueError("need iterations >= 1 and epochs >= 0")
    N = dataset.n_pixels
    S = np.zeros(N)
    history = []
    ratio = 0.5
    x_all, y_all = dataset.x_train, dataset.y_train
    for it in range(iterations):
        rng = make_rng(rng_seed, STREAM_TRAIN, 100 + it)
        m = np.zeros(N)
        for ep in range(epochs):
            order = rng.permutation(x_all.shape[0])
            for lo in range(0, order.size, batch_size):
                idx = order[lo : lo + batch_size]
                loss, g, ratio = map_loss_and_grad(model, m, x_all[idx], y_all[idx], q, alpha, mode)
                m -= lr * g
            logits, ratio = masked_forward(model, m, x_all, mode)
            ce, _ = _softmax_ce(logits, y_all)
            history.append((it + 1, ep + 1, ratio, float((sigmoid(m) > 0.5).mean()), iapam_loss(ce, ratio, q, alpha)))
        ratio = float(sigmoid(m).mean())
        S += sigmoid(m)
    critical = binarize_scores(S.reshape(dataset.dims), q)
    return TrainedMap(critical, q, ratio, tuple(history)), ImportanceScores(S.reshape(dataset.dims))


# --- evaluation -----------------------------------------------------------------

def accuracy_under_masks(model: ToyClassifier, x: np.ndarray, y: np.ndarray, masks: np.ndarray) -> float:
    return model.accuracy(x * masks, y)


def defended_accuracy(model: ToyClassifier, x, y, defense: RpamConfig | IapamConfig, seed: int) -> float:
    """Accuracy with a fresh mask per test inference."""
    rng = make_rng(seed, STREAM_MASKS, 7)
    n, P = x.shape
    if isinstance(defense, RpamConfig):
        masks = sample_rpam_batch(P, defense, n, rng)
    else:
        masks = sample_iapam_batch(defense, n, rng)
    return accuracy_under_masks(model, x, y, masks)


def relative_drop(acc_org: float, acc_pam: float) -> float:
    return (acc_org - acc_pam) / acc_org


def robustness_sweep(model: ToyClassifier, dataset: Dataset, ratios: Sequence[float], seed: int = 0):
    """Rows ``(zeroization_ratio, accuracy)``; the unmasked baseline comes first as ratio ``None``."""
    rows = [(None, model.accuracy(dataset.x_test, dataset.y_test))]
    for r in ratios:
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"zeroization ratio {r} outside [0, 1]")
        acc = defended_accuracy(model, dataset.x_test, dataset.y_test, RpamConfig(1.0 - r), seed)
        rows.append((float(r), acc))
    return rows
