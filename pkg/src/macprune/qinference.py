"""Integer MAC execution of a quantized first-layer neuron.

A :class:`QuantizedFirstLayer` is one accumulator chain: an ordered list of
signed 8-bit weights, each bound to one input pixel.  Running it on an unsigned
8-bit input with an activation mask yields the sequence of 32-bit
accumulator states, which are the values an attacker models with the Hamming
weight.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

WEIGHT_MIN, WEIGHT_MAX = -128, 127
ALL_WEIGHTS = np.arange(WEIGHT_MIN, WEIGHT_MAX + 1, dtype=np.int64)
ALL_INPUTS = np.arange(256, dtype=np.int64)


class ShapeError(ValueError):
    """Raised when layer, input and mask dimensions disagree."""


def _dims_size(dims: Sequence[int]) -> int:
    return int(np.prod(dims))


@dataclass(frozen=True)
class QuantizedFirstLayer:
    weights: np.ndarray
    pixel_binding: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.int64).ravel()
        b = np.asarray(self.pixel_binding, dtype=np.int64).ravel()
        dims = tuple(int(d) for d in self.dims)
        if w.size < 1:
            raise ShapeError("a layer needs at least one MAC")
        if w.size != b.size:
            raise ShapeError(f"{w.size} weights but {b.size} pixel bindings")
        if w.min() < WEIGHT_MIN or w.max() > WEIGHT_MAX:
            raise ValueError("weights must be signed 8-bit")
        if b.min() < 0 or b.max() >= _dims_size(dims):
            raise ShapeError(f"pixel binding out of range for dims {dims}")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "pixel_binding", b)
        object.__setattr__(self, "dims", dims)

    @classmethod
    def from_weights(cls, weights, dims: Sequence[int] | None = None) -> "QuantizedFirstLayer":
        """Layer whose MAC ``j`` reads pixel ``j`` (row-major scan order)."""
        w = np.asarray(weights, dtype=np.int64).ravel()
        if dims is None:
            dims = (1, w.size)
        return cls(w, np.arange(w.size), tuple(dims))

    @classmethod
    def random(cls, n_macs: int, seed: int, dims: Sequence[int] | None = None) -> "QuantizedFirstLayer":
        """Uniform weights over the full signed 8-bit range."""
        from .rng import STREAM_LAYER, make_rng

        w = make_rng(seed, STREAM_LAYER).integers(WEIGHT_MIN, WEIGHT_MAX + 1, n_macs)
        return cls.from_weights(w, dims)

    @property
    def n_macs(self) -> int:
        return int(self.weights.size)

    @property
    def n_pixels(self) -> int:
        return _dims_size(self.dims)

    def mac_inputs(self, pixels: np.ndarray) -> np.ndarray:
        """Reorder pixel vectors (``(..., n_pixels)``) into MAC execution order."""
        pixels = np.asarray(pixels)
        if pixels.shape[-1] != self.n_pixels:
            raise ShapeError(f"expected {self.n_pixels} pixels, got {pixels.shape[-1]}")
        return pixels[..., self.pixel_binding]

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.asarray(self.dims, dtype="<i8").tobytes())
        h.update(self.weights.astype("<i8").tobytes())
        h.update(self.pixel_binding.astype("<i8").tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class InputVector:
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.int64).ravel()
        if px.size and (px.min() < 0 or px.max() > 255):
            raise ValueError("pixels must be unsigned 8-bit")
        object.__setattr__(self, "pixels", px)


@dataclass(frozen=True)
class MacExecution:
    executed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    accumulators: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int32))

    def __len__(self) -> int:
        return int(self.executed.size)


def wrap32(x) -> np.ndarray:
    """Reduce integers to signed 32-bit two's complement."""
    return (np.asarray(x, dtype=np.int64) & 0xFFFFFFFF).astype(np.uint32).view(np.int32)


def hamming_weight(v):
    """Popcount of the 32-bit two's-complement pattern of ``v`` (scalar or array)."""
    bits = np.bitwise_count(wrap32(v).view(np.uint32))
    if np.ndim(bits) == 0:
        return int(bits)
    return bits.astype(np.int64)


def run_macs(layer: QuantizedFirstLayer, inputs: InputVector, mask) -> MacExecution:
    """Execute the MACs whose pixel is active, in original order.

    ``mask`` may be an :class:`~macprune.pam.ActivationMask` or any boolean
    vector over pixels.
    """
    active = np.asarray(getattr(mask, "active", mask), dtype=bool).ravel()
    mask_dims = getattr(mask, "dims", None)
    if mask_dims is not None and tuple(mask_dims) != layer.dims:
        raise ShapeError(f"mask dims {tuple(mask_dims)} != layer dims {layer.dims}")
    if active.size != layer.n_pixels or inputs.pixels.size != layer.n_pixels:
        raise ShapeError("mask and input must cover every pixel of the layer")
    executed = np.flatnonzero(active[layer.pixel_binding])
    products = inputs.pixels[layer.pixel_binding[executed]] * layer.weights[executed]
    # int64 partial sums cannot overflow for realistic M; wrap once at the end.
    acc = wrap32(np.cumsum(products))
    return MacExecution(executed, acc)


def run_macs_batch(layer: QuantizedFirstLayer, pixels: np.ndarray, active: np.ndarray | None = None):
    """Vectorised :func:`run_macs` over ``N`` inferences.

    Returns ``(accumulators, counts)`` where ``accumulators`` is ``(N, M)``
    int32 with executed MACs packed to the left (unused tail entries are 0)
    and ``counts`` holds the executed-MAC count per inference.
    """
    x = layer.mac_inputs(np.asarray(pixels, dtype=np.int64))
    n, m = x.shape[0], layer.n_macs
    if active is None:
        keep = np.ones((n, m), dtype=bool)
    else:
        keep = np.asarray(active, dtype=bool)
        if keep.shape != (n, layer.n_pixels):
            raise ShapeError(f"mask batch shape {keep.shape} != {(n, layer.n_pixels)}")
        keep = keep[:, layer.pixel_binding]
    running = np.cumsum(np.where(keep, x * layer.weights, 0), axis=1)
    slot = np.cumsum(keep, axis=1) - 1
    out = np.zeros((n, m), dtype=np.int32)
    rows, cols = np.nonzero(keep)
    out[rows, slot[rows, cols]] = wrap32(running[rows, cols])
    return out, keep.sum(axis=1)


def cumulative_hypothesis(mac_inputs: np.ndarray, weights: Sequence[int]) -> np.ndarray:
    """Full (unpruned) accumulator after each MAC, ``(N, len(weights))`` int32."""
    w = np.asarray(weights, dtype=np.int64)
    x = np.asarray(mac_inputs, dtype=np.int64)[:, : w.size]
    return wrap32(np.cumsum(x * w, axis=1))


# --- aliasing census -------------------------------------------------------

@dataclass(frozen=True)
class AliasingCensus:
    aliased_count: int
    classes: tuple[tuple[int, ...], ...]
    convention: str

    def class_of(self, w: int) -> tuple[int, ...]:
        for c in self.classes:
            if w in c:
                return c
        raise KeyError(w)


CENSUS_CONVENTIONS = ("signed", "unsigned")


def product_signatures(convention: str = "signed") -> np.ndarray:
    """``(256, 256)`` table of HW(i*w), rows indexed by weight -128..127.

    ``signed`` sign-extends the weight and takes the 32-bit product;
    ``unsigned`` reinterprets the weight byte as 0..255 before multiplying.
    """
    if convention == "signed":
        w = ALL_WEIGHTS
    elif convention == "unsigned":
        w = ALL_WEIGHTS & 0xFF
    else:
        raise ValueError(f"unknown convention {convention!r}; use one of {CENSUS_CONVENTIONS}")
    return hamming_weight(np.outer(w, ALL_INPUTS))


def aliasing_census(convention: str = "signed") -> AliasingCensus:
    """Partition the 8-bit weights by their HW(i*w) signature over all inputs."""
    sig = product_signatures(convention)
    groups: dict[bytes, list[int]] = {}
    for w, row in zip(ALL_WEIGHTS.tolist(), sig):
        groups.setdefault(row.astype(np.uint8).tobytes(), []).append(w)
    classes = tuple(sorted((tuple(g) for g in groups.values()), key=lambda c: c[0]))
    aliased = sum(len(c) for c in classes if len(c) > 1)
    return AliasingCensus(aliased, classes, convention)


# --- CSV -------------------------------------------------------------------

def _read_int_grid(path: Path | str) -> list[list[int]]:
    with open(path, newline="") as fh:
        return [[int(cell) for cell in row] for row in csv.reader(fh) if row and not row[0].startswith("#")]


def load_layer_csv(path: Path | str, dims: Sequence[int] | None = None) -> QuantizedFirstLayer:
    """Weights in MAC order, read row-major; grid shape is taken as dims if not given."""
    rows = _read_int_grid(path)
    flat = [v for row in rows for v in row]
    if dims is None:
        dims = (len(rows), len(rows[0])) if rows else (0,)
    return QuantizedFirstLayer.from_weights(flat, dims)


def load_inputs_csv(path: Path | str) -> np.ndarray:
    """One input vector per row."""
    arr = np.asarray(_read_int_grid(path), dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ValueError("pixels must be unsigned 8-bit")
    return arr


def write_int_grid(path: Path | str, grid, header: str | None = None) -> None:
    grid = np.atleast_2d(np.asarray(grid, dtype=np.int64))
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        csv.writer(fh, lineterminator="\n").writerows(grid.tolist())
