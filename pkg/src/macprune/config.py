"""Experiment configuration: flat ``key=value`` text, unknown keys rejected."""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable

MODES = ("simulate", "attack", "strength", "train-iapam", "overhead", "robustness")
FORWARD_MODES = ("hard", "soft")

# keys that only say where files live; they do not enter the config hash
PATH_KEYS = ("out", "traces", "layer", "map")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "simulate"
    p: float = 1.0              # keep rate; 1 means no defense
    q: float = 0.0              # critical fraction; > 0 selects IaPAM
    alpha: float = 1.0
    sigma: float = 4.0
    epsilon: float = 1.0
    c: float = 0.0
    M: int = 8                  # MACs in the attacked neuron
    D: int = 3                  # pipeline stages flushed on a taken branch
    j_max: int = 8
    n_traces: int = 2000
    seed: int = 0
    threshold: float = 1000.0
    epochs: int = 20
    iterations: int = 3
    lr: float = 0.1
    forward: str = "hard"
    network_budget: float = 0.0  # whole-network cycles; 0 means first layer only
    out: str = "out"
    traces: str = ""
    layer: str = ""
    map: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond: bool, msg: str) -> None:
            if not cond:
                raise ConfigError(msg)

        need(self.mode in MODES, f"mode must be one of {', '.join(MODES)}; got {self.mode!r}")
        for k in ("p", "q", "alpha", "sigma", "epsilon", "c", "threshold", "lr", "network_budget"):
            need(math.isfinite(getattr(self, k)), f"{k} must be finite")
        need(0.0 < self.p <= 1.0, f"p must lie in (0, 1], got {self.p}")
        need(0.0 <= self.q < 1.0, f"q must lie in [0, 1), got {self.q}")
        need(self.q <= self.p, f"q={self.q} exceeds p={self.p}")
        need(self.alpha >= 0, "alpha must be >= 0")
        need(self.sigma > 0, "sigma must be > 0")
        need(self.M >= 1, "M must be >= 1")
        need(self.D in (1, 2, 3), f"D must be 1, 2 or 3, got {self.D}")
        need(1 <= self.j_max <= self.M, f"j_max must lie in [1, M={self.M}], got {self.j_max}")
        need(self.n_traces >= 0, "n_traces must be >= 0")
        need(self.seed >= 0, "seed must be >= 0")
        need(self.threshold > 0, "threshold must be > 0")
        need(self.epochs >= 0 and self.iterations >= 1, "need epochs >= 0 and iterations >= 1")
        need(self.lr > 0, "lr must be > 0")
        need(self.forward in FORWARD_MODES, f"forward must be hard or soft, got {self.forward!r}")
        need(self.network_budget >= 0, "network_budget must be >= 0")
        if self.mode == "train-iapam":
            need(0.0 < self.q, "train-iapam needs q > 0")
        if self.q > 0 and self.mode in ("simulate", "attack") and not self.traces:
            need(bool(self.map), "IaPAM (q > 0) needs a critical map: set map=<csv>")
        for k in ("traces", "layer", "map"):
            v = getattr(self, k)
            need(not v or Path(v).exists(), f"{k}: no such file {v!r}")

    def hash(self) -> str:
        """Short sha256 of the canonical text of every non-path key."""
        return hashlib.sha256(self.canonical(include_paths=False).encode()).hexdigest()[:16]

    def canonical(self, include_paths: bool = True) -> str:
        items = asdict(self)
        return "".join(f"{k}={_fmt(v)}\n" for k, v in items.items() if include_paths or k not in PATH_KEYS)

    def public_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k not in PATH_KEYS}


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_pairs(lines: Iterable[str], source: str = "<args>") -> dict:
    """``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out: dict = {}
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{n}: expected key=value, got {line!r}")
        if key not in _TYPES:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path: str | Path | None = None, overrides: Iterable[str] = (), **fixed) -> ExperimentConfig:
    """File values, then ``key=value`` overrides, then keyword values."""
    values: dict = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {p}: {e.strerror}") from None
        values.update(parse_pairs(text.splitlines(), str(p)))
    values.update(parse_pairs(overrides, "<args>"))
    values.update(fixed)
    return ExperimentConfig(**values)
