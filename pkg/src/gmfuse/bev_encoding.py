"""Ego-centric polar positional encoding for BEV grids.

Distance and bearing are each encoded with sine/cosine pairs over an
exponentially spaced frequency ladder and interleaved in groups of four
channels: ``[sin d, cos d, sin a, cos a]`` per frequency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .pillars import ConfigError, GridConfig
from .tensor import Tensor


@dataclass(frozen=True)
class PolarGrid:
    d: np.ndarray  # (H, W) meters
    theta: np.ndarray  # (H, W) radians in (-pi, pi]
    d_max: float


@dataclass(frozen=True)
class BevPosEncoding:
    enc: Tensor  # (H, W, C)
    polar: PolarGrid
    base_d: float = 10000.0
    base_theta: float = 10000.0

    @property
    def channels(self) -> int:
        return self.enc.shape[-1]


def default_ego(cfg: GridConfig) -> tuple[float, float]:
    """Rear-center of the grid: x at the lower edge, y at the lateral midpoint."""
    return cfg.x_min, 0.5 * (cfg.y_min + cfg.y_max)


def polar_from_grid(cfg: GridConfig, ego: tuple[float, float] | None = None) -> PolarGrid:
    ex, ey = default_ego(cfg) if ego is None else ego
    xc, yc = cfg.cell_centers()
    dx = (xc - ex)[:, None] + np.zeros((1, cfg.W))
    dy = (yc - ey)[None, :] + np.zeros((cfg.H, 1))
    d = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)
    theta = np.where(theta == -np.pi, np.pi, theta)
    return PolarGrid(d, theta, float(d.max()))


def wrap_angle(theta: np.ndarray) -> np.ndarray:
    """Map angles into (-pi, pi]."""
    theta = np.asarray(theta, dtype=np.float64)
    w = theta - 2 * np.pi * np.round(theta / (2 * np.pi))
    w = np.where(w <= -np.pi, w + 2 * np.pi, w)
    return np.where(w > np.pi, w - 2 * np.pi, w)


def encode(
    pg: PolarGrid,
    channels: int,
    base_d: float = 10000.0,
    base_theta: float | None = None,
    dtype=np.float64,
) -> BevPosEncoding:
    if channels <= 0 or channels % 4:
        raise ConfigError("channels", f"positional encoding needs a positive multiple of 4, got {channels}")
    base_theta = base_d if base_theta is None else base_theta
    k = np.arange(channels // 4)
    omega_d = base_d ** (-4.0 * k / channels)
    omega_t = base_theta ** (-4.0 * k / channels)
    # angle scale puts bearings on the same numeric range as distances
    s_theta = pg.d_max / math.pi if pg.d_max > 0 else 1.0
    dw = pg.d[..., None] * omega_d
    tw = wrap_angle(pg.theta)[..., None] * (omega_t * s_theta)
    enc = np.empty(pg.d.shape + (channels,))
    enc[..., 0::4] = np.sin(dw)
    enc[..., 1::4] = np.cos(dw)
    enc[..., 2::4] = np.sin(tw)
    enc[..., 3::4] = np.cos(tw)
    return BevPosEncoding(Tensor(enc, dtype=dtype), pg, base_d, base_theta)


def bev_encoding(cfg: GridConfig, channels: int, base: float = 10000.0, ego=None, dtype=np.float64) -> BevPosEncoding:
    return encode(polar_from_grid(cfg, ego), channels, base, dtype=dtype)
