"""Pixel activation maps.

RPAM keeps each pixel with probability ``p``.  IaPAM always keeps a learned
critical set (a ``q`` fraction of pixels) and keeps the rest with probability
``(p - q) / (1 - q)`` so the expected kept fraction is still ``p``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import STREAM_MASKS, make_rng


class InvalidConfigError(ValueError):
    pass


def _check_prob(name: str, v: float) -> float:
    v = float(v)
    if not 0.0 <= v <= 1.0 or math.isnan(v):
        raise InvalidConfigError(f"{name} must lie in [0, 1], got {v}")
    return v


@dataclass(frozen=True)
class ActivationMask:
    active: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        a = np.asarray(self.active, dtype=bool).ravel()
        dims = tuple(int(d) for d in self.dims)
        if a.size != int(np.prod(dims)):
            raise InvalidConfigError(f"mask of {a.size} pixels does not match dims {dims}")
        a.flags.writeable = False
        object.__setattr__(self, "active", a)
        object.__setattr__(self, "dims", dims)

    @property
    def active_fraction(self) -> float:
        return float(self.active.mean()) if self.active.size else 0.0

    def grid(self) -> np.ndarray:
        return self.active.reshape(self.dims)


@dataclass(frozen=True)
class RpamConfig:
    p: float

    def __post_init__(self):
        object.__setattr__(self, "p", _check_prob("p", self.p))


@dataclass(frozen=True)
class IapamConfig:
    p: float
    q: float
    critical: np.ndarray
    dims: tuple[int, ...] | None = None

    def __post_init__(self):
        p = _check_prob("p", self.p)
        q = _check_prob("q", self.q)
        if q > p:
            raise InvalidConfigError(f"q={q} exceeds p={p}")
        crit = np.asarray(self.critical, dtype=bool)
        dims = tuple(self.dims) if self.dims is not None else crit.shape
        crit = crit.ravel()
        if crit.size != int(np.prod(dims)):
            raise InvalidConfigError(f"critical map of {crit.size} pixels does not match dims {dims}")
        n_crit = int(crit.sum())
        if abs(n_crit - q * crit.size) > 1.0:
            raise InvalidConfigError(
                f"critical map marks {n_crit} of {crit.size} pixels, expected about q*N={q * crit.size:g}"
            )
        crit.flags.writeable = False
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "critical", crit)
        object.__setattr__(self, "dims", tuple(int(d) for d in dims))


def effective_rate(cfg: IapamConfig | tuple[float, float]) -> float:
    """Activation probability for non-critical pixels."""
    if isinstance(cfg, IapamConfig):
        p, q = cfg.p, cfg.q
    else:
        p, q = (_check_prob(n, v) for n, v in zip("pq", cfg))
    if q > p:
        raise InvalidConfigError(f"q={q} exceeds p={p}")
    if p == 1.0:
        return 1.0
    return (p - q) / (1.0 - q)


def critical_count(q: float, n_pixels: int) -> int:
    """Size of the critical set; rounds down so the q fraction is never exceeded."""
    # the epsilon absorbs q*N landing a hair below an integer (0.7*10 -> 6.999...)
    return int(math.floor(q * n_pixels + 1e-9))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return make_rng(int(seed), STREAM_MASKS)


def sample_rpam(dims: Sequence[int], cfg: RpamConfig, rng_seed) -> ActivationMask:
    dims = tuple(int(d) for d in dims)
    u = _rng(rng_seed).random(int(np.prod(dims)))
    return ActivationMask(u < cfg.p, dims)


def sample_iapam(cfg: IapamConfig, rng_seed) -> ActivationMask:
    rate = effective_rate(cfg)
    u = _rng(rng_seed).random(cfg.critical.size)
    return ActivationMask(cfg.critical | (u < rate), cfg.dims)


def sample_rpam_batch(n_pixels: int, cfg: RpamConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """``(n, n_pixels)`` boolean masks, one per inference."""
    return rng.random((n, n_pixels)) < cfg.p


def sample_iapam_batch(cfg: IapamConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    rate = effective_rate(cfg)
    return cfg.critical[None, :] | (rng.random((n, cfg.critical.size)) < rate)


def inference_seed(base_seed: int, index: int) -> int:
    """Per-inference seed for concurrent mask generation."""
    from .rng import derive_seed

    return derive_seed(base_seed, STREAM_MASKS, index)


# --- CSV -------------------------------------------------------------------

def write_mask_csv(path: Path | str, grid, header: str | None = None) -> None:
    """0/1 grid, one row per image row; ``header`` becomes a leading ``#`` line."""
    grid = np.asarray(grid)
    if grid.ndim == 1:
        grid = grid[None, :]
    elif grid.ndim > 2:
        grid = grid.reshape(-1, grid.shape[-1])
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        csv.writer(fh, lineterminator="\n").writerows(grid.astype(np.uint8).tolist())


def read_mask_csv(path: Path | str) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[int(c) for c in row] for row in csv.reader(fh) if row and not row[0].startswith("#")]
    grid = np.asarray(rows, dtype=np.int64)
    if not np.isin(grid, (0, 1)).all():
        raise InvalidConfigError(f"{path}: mask cells must be 0 or 1")
    return grid.astype(bool)
