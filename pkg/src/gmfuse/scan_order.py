"""Raster and zigzag serialization of H x W grids.

Grid rows advance along the vehicle's forward axis, so a raster scan walks
each lateral row in turn moving forward. Sequence position ``t`` holds the
flat grid cell ``perm[t]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .tensor import ShapeError, Tensor, take

PATTERNS = ("raster", "zigzag")


@dataclass(frozen=True)
class ScanOrder:
    pattern: str
    H: int
    W: int
    perm: np.ndarray = field(repr=False)
    inv: np.ndarray = field(repr=False)

    @property
    def length(self) -> int:
        return self.H * self.W

    def cells(self) -> list[tuple[int, int]]:
        return [(int(p) // self.W, int(p) % self.W) for p in self.perm]


def _check_dims(H: int, W: int) -> None:
    if H < 1 or W < 1:
        raise ValueError(f"grid dimensions must be >= 1, got {H}x{W}")


def _make(pattern: str, H: int, W: int, perm: np.ndarray) -> ScanOrder:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    perm.flags.writeable = False
    inv.flags.writeable = False
    return ScanOrder(pattern, H, W, perm, inv)


@lru_cache(maxsize=64)
def raster_order(H: int, W: int) -> ScanOrder:
    _check_dims(H, W)
    return _make("raster", H, W, np.arange(H * W, dtype=np.intp))


@lru_cache(maxsize=64)
def zigzag_order(H: int, W: int, start_left: bool = True) -> ScanOrder:
    """Serpentine order: row 0 runs left to right (or right to left if not ``start_left``)."""
    _check_dims(H, W)
    grid = np.arange(H * W, dtype=np.intp).reshape(H, W)
    flip = 1 if start_left else 0
    grid[flip::2] = grid[flip::2, ::-1]
    return _make("zigzag", H, W, grid.reshape(-1).copy())


def scan_order(pattern: str, H: int, W: int) -> ScanOrder:
    if pattern == "raster":
        return raster_order(H, W)
    if pattern == "zigzag":
        return zigzag_order(H, W)
    raise ValueError(f"unknown scan pattern {pattern!r}; expected one of {PATTERNS}")


def serialize(x: Tensor, order: ScanOrder) -> Tensor:
    """(H, W, C) grid to (L, C) sequence."""
    if x.shape[:2] != (order.H, order.W):
        raise ShapeError(f"grid shape {x.shape} does not match scan order {order.H}x{order.W}")
    flat = x.reshape(order.length, *x.shape[2:])
    return take(flat, order.perm, axis=0)


def deserialize(seq: Tensor, order: ScanOrder) -> Tensor:
    """(L, C) sequence back to (H, W, C)."""
    if seq.shape[0] != order.length:
        raise ShapeError(f"sequence length {seq.shape[0]} does not match scan order {order.H}x{order.W}")
    flat = take(seq, order.inv, axis=0)
    return flat.reshape(order.H, order.W, *seq.shape[1:])


def serialize_array(a: np.ndarray, order: ScanOrder) -> np.ndarray:
    """Permute a plain (H, W, ...) array, e.g. the polar distance field."""
    a = np.asarray(a)
    if a.shape[:2] != (order.H, order.W):
        raise ShapeError(f"array shape {a.shape} does not match scan order {order.H}x{order.W}")
    return a.reshape(order.length, *a.shape[2:])[order.perm]


def max_step(order: ScanOrder) -> int:
    """Largest Manhattan distance between consecutive sequence cells."""
    if order.length < 2:
        return 0
    u, v = np.divmod(order.perm, order.W)
    return int((np.abs(np.diff(u)) + np.abs(np.diff(v))).max())
