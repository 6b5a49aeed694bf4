"""Synthetic EM traces of (possibly pruned) MAC sequences.

Each executed MAC occupies one time slot and emits
``epsilon * HW(accumulator) + N(c, sigma^2)``.  Pruned MACs emit nothing, so
every later MAC moves one slot earlier; slots past the last executed MAC hold
noise only.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .pam import IapamConfig, RpamConfig, sample_iapam_batch, sample_rpam_batch
from .qinference import MacExecution, QuantizedFirstLayer, hamming_weight, run_macs_batch
from .rng import CHUNK_SIZE, RNG_ALGORITHM, STREAM_NOISE, STREAM_TRACES, make_rng

MAGIC = b"MACP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class LeakageParams:
    epsilon: float = 1.0
    c: float = 0.0
    sigma: float = 4.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class EmTrace:
    samples: np.ndarray
    meta: dict = field(default_factory=dict)


def synthesize_trace(execution: MacExecution, params: LeakageParams, T: int, rng_seed: int) -> EmTrace:
    n_exec = len(execution)
    if T < n_exec:
        raise ValueError(f"trace length {T} shorter than {n_exec} executed MACs")
    rng = make_rng(rng_seed, STREAM_NOISE)
    samples = rng.normal(params.c, params.sigma, T)
    samples[:n_exec] += params.epsilon * hamming_weight(execution.accumulators)
    meta = {"seed": int(rng_seed), "executed_count": n_exec, "executed": execution.executed.tolist()}
    return EmTrace(samples, meta)


@dataclass
class TraceSet:
    """A batch of traces with the attacker-visible inputs and ground truth."""

    samples: np.ndarray          # (N, T) float64
    pixels: np.ndarray           # (N, n_pixels) uint8, known to the attacker
    active: np.ndarray           # (N, n_pixels) bool, ground truth only
    meta: dict

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    def head(self, n: int) -> "TraceSet":
        return TraceSet(self.samples[:n], self.pixels[:n], self.active[:n], dict(self.meta, n_traces=min(n, len(self))))


def _defense_meta(defense) -> dict:
    if defense is None:
        return {"defense": "none", "p": 1.0, "q": 0.0}
    if isinstance(defense, RpamConfig):
        return {"defense": "rpam", "p": defense.p, "q": 0.0}
    return {"defense": "iapam", "p": defense.p, "q": defense.q}


def simulate_traces(
    layer: QuantizedFirstLayer,
    n_traces: int,
    params: LeakageParams = LeakageParams(),
    seed: int = 0,
    defense: RpamConfig | IapamConfig | None = None,
    T: int | None = None,
    samples_per_slot: int = 1,
) -> TraceSet:
    """Simulate ``n_traces`` inferences on uniform random inputs.

    Traces are produced in chunks of ``CHUNK_SIZE``; chunk ``c`` draws its
    inputs, masks and noise from child streams ``(seed, STREAM_TRACES, c, k)``
    with ``k = 0, 1, 2``, so any prefix of a larger run is bit-identical to a
    shorter run.
    With ``samples_per_slot > 1`` each slot spans that many samples and the
    leakage sits on the first of them.
    """
    if n_traces < 0:
        raise ValueError("n_traces must be non-negative")
    T = layer.n_macs if T is None else int(T)
    if T < layer.n_macs:
        raise ValueError(f"trace length {T} shorter than the {layer.n_macs}-MAC schedule")
    if samples_per_slot < 1:
        raise ValueError("samples_per_slot must be >= 1")
    P = layer.n_pixels
    width = T * samples_per_slot
    samples = np.empty((n_traces, width), dtype=np.float64)
    pixels = np.empty((n_traces, P), dtype=np.uint8)
    active = np.empty((n_traces, P), dtype=bool)
    for c, start in enumerate(range(0, n_traces, CHUNK_SIZE)):
        stop = min(start + CHUNK_SIZE, n_traces)
        n = stop - start
        px = make_rng(seed, STREAM_TRACES, c, 0).integers(0, 256, (n, P))
        mask_rng = make_rng(seed, STREAM_TRACES, c, 1)
        if defense is None:
            keep = np.ones((n, P), dtype=bool)
        elif isinstance(defense, RpamConfig):
            keep = sample_rpam_batch(P, defense, n, mask_rng)
        else:
            keep = sample_iapam_batch(defense, n, mask_rng)
        acc, _ = run_macs_batch(layer, px, keep)
        leak = np.zeros((n, T))
        executed = np.arange(layer.n_macs)[None, :] < keep[:, layer.pixel_binding].sum(1)[:, None]
        leak[:, : layer.n_macs] = np.where(executed, params.epsilon * hamming_weight(acc), 0.0)
        noise = make_rng(seed, STREAM_TRACES, c, 2).normal(params.c, params.sigma, (n, width))
        if samples_per_slot > 1:
            noise[:, ::samples_per_slot] += leak
        else:
            noise += leak
        samples[start:stop] = noise
        pixels[start:stop] = px
        active[start:stop] = keep
    meta = {
        "epsilon": params.epsilon,
        "c": params.c,
        "sigma": params.sigma,
        "seed": int(seed),
        "n_traces": int(n_traces),
        "trace_len": int(width),
        "samples_per_slot": int(samples_per_slot),
        "layer_hash": layer.digest(),
        "rng": RNG_ALGORITHM,
        "chunk_size": CHUNK_SIZE,
        **_defense_meta(defense),
    }
    return TraceSet(samples, pixels, active, meta)


# --- leakage fitting ---------------------------------------------------------

def fit_leakage(v: np.ndarray, l: np.ndarray) -> tuple[float, float, float]:
    """Least-squares ``l = eps*v + c``; returns ``(eps, c, residual variance)``.

    Returns ``eps = nan`` when ``v`` is constant.
    """
    v = np.asarray(v, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    vc = v - v.mean()
    var_v = float(vc @ vc)
    if var_v <= 1e-12 * max(1.0, v.size):
        return float("nan"), float(l.mean()), float(l.var())
    eps = float(vc @ (l - l.mean())) / var_v
    c = float(l.mean() - eps * v.mean())
    resid = l - (eps * v + c)
    return eps, c, float(resid.var())


@dataclass(frozen=True)
class SnrProfile:
    signal_var: np.ndarray
    noise_var: np.ndarray
    snr: np.ndarray           # nan where undefined

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.snr)


def snr_profile(traces: np.ndarray, hypothetical_values: np.ndarray) -> SnrProfile:
    """Per-slot fit of the linear leakage model.

    ``hypothetical_values`` is ``(N, T)`` aligned with ``traces`` or a single
    ``(N,)`` vector used for every slot.
    """
    L = np.asarray(getattr(traces, "samples", traces), dtype=np.float64)
    if L.ndim != 2:
        raise ValueError("traces must be (N, T)")
    N, T = L.shape
    if N < 100:
        raise ValueError(f"SNR profiling needs at least 100 traces, got {N}")
    V = np.asarray(hypothetical_values, dtype=np.float64)
    if V.ndim == 1:
        V = np.broadcast_to(V[:, None], (N, T))
    if V.shape != (N, T):
        raise ValueError(f"hypotheses shape {V.shape} != traces shape {L.shape}")
    sig = np.full(T, np.nan)
    noise = np.full(T, np.nan)
    for t in range(T):
        eps, _, rvar = fit_leakage(V[:, t], L[:, t])
        if np.isnan(eps):
            continue
        sig[t] = eps**2 * V[:, t].var()
        noise[t] = rvar
    with np.errstate(divide="ignore", invalid="ignore"):
        snr = np.where(noise > 0, sig / noise, np.nan)
    return SnrProfile(sig, noise, snr)


def strongest_point(profile: SnrProfile | np.ndarray, window: Iterable[int] | slice | None = None) -> int:
    """Slot with the largest |SNR| in ``window``; ties go to the lowest slot."""
    snr = np.asarray(getattr(profile, "snr", profile), dtype=np.float64)
    idx = np.arange(snr.size)
    if isinstance(window, slice):
        idx = idx[window]
    elif window is not None:
        idx = np.asarray(list(window), dtype=np.int64)
    if idx.size == 0:
        raise ValueError("empty window")
    vals = np.abs(snr[idx])
    if np.isnan(vals).all():
        raise ValueError("SNR undefined everywhere in the window")
    return int(idx[np.nanargmax(vals)])


# --- MACP trace file ---------------------------------------------------------

def write_traces(path: Path | str, samples: np.ndarray, meta: dict | None = None) -> Path:
    """Write the binary trace file plus a ``<path>.json`` metadata sidecar."""
    path = Path(path)
    arr = np.asarray(samples, dtype="<f4")
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 0)
    if arr.ndim != 2:
        raise ValueError("samples must be (n_traces, trace_len)")
    n, t = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, n, t))
        fh.write(np.ascontiguousarray(arr).tobytes())
    if meta is not None:
        sidecar(path).write_text(json.dumps(meta, sort_keys=True, indent=2, default=_jsonable) + "\n")
    return path


def read_traces(path: Path | str) -> tuple[np.ndarray, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n, t = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    body = raw[_HEADER.size :]
    if len(body) != 4 * n * t:
        raise ValueError(f"{path}: expected {4 * n * t} sample bytes, found {len(body)}")
    samples = np.frombuffer(body, dtype="<f4").reshape(n, t).copy()
    side = sidecar(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    return samples, meta


def sidecar(path: Path | str) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")
