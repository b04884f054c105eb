"""Point cloud to 14-channel pillar grid.

Channel layout per pillar::

    0-7   max over [x, y, z, r, ring, dx, dy, dz]
    8-9   reflectance mean and population variance
    10-13 linearity, planarity, sphericity, anisotropy

dx/dy are offsets from the pillar center and dz is the offset from the
pillar's mean height. Empty pillars are all zeros.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

CHANNELS = (
    "x_max", "y_max", "z_max", "r_max", "ring_max", "dx_max", "dy_max", "dz_max",
    "r_mean", "r_var",
    "linearity", "planarity", "sphericity", "anisotropy",
)
NUM_CHANNELS = len(CHANNELS)
DEGENERATE_EIGENVALUE = 1e-12
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 50


class ConfigError(ValueError):
    """Invalid configuration value; ``key`` names the offending setting."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class LidarPoint:
    x: float
    y: float
    z: float
    r: float
    ring: int

    def __post_init__(self):
        if not np.isfinite([self.x, self.y, self.z]).all():
            raise ValueError(f"point coordinates must be finite, got {(self.x, self.y, self.z)}")
        if not self.r >= 0:
            raise ValueError(f"reflectance must be >= 0, got {self.r}")
        if not 0 <= self.ring <= 255:
            raise ValueError(f"ring index must lie in [0, 255], got {self.ring}")


@dataclass(frozen=True)
class PointCloud:
    """Columnar point storage: ``xyz`` (n, 3), ``r`` (n,), ``ring`` (n,)."""

    xyz: np.ndarray
    r: np.ndarray
    ring: np.ndarray

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        r = np.asarray(self.r, dtype=np.float64).reshape(-1)
        ring = np.asarray(self.ring, dtype=np.int64).reshape(-1)
        if not (len(xyz) == len(r) == len(ring)):
            raise ValueError(f"column lengths differ: xyz {len(xyz)}, r {len(r)}, ring {len(ring)}")
        if not np.isfinite(xyz).all():
            raise ValueError("point coordinates must be finite")
        if not np.isfinite(r).all() or (r < 0).any():
            raise ValueError("reflectance must be finite and >= 0")
        if ((ring < 0) | (ring > 255)).any():
            raise ValueError("ring index must lie in [0, 255]")
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "ring", ring)

    def __len__(self) -> int:
        return len(self.r)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=np.int64))

    @classmethod
    def from_points(cls, points) -> "PointCloud":
        pts = list(points)
        if not pts:
            return cls.empty()
        return cls(
            np.array([[p.x, p.y, p.z] for p in pts]),
            np.array([p.r for p in pts]),
            np.array([p.ring for p in pts]),
        )

    def as_array(self) -> np.ndarray:
        """(n, 5) float64 array of [x, y, z, r, ring]."""
        return np.column_stack([self.xyz, self.r, self.ring.astype(np.float64)])

    def take(self, idx) -> "PointCloud":
        return PointCloud(self.xyz[idx], self.r[idx], self.ring[idx])


@dataclass(frozen=True)
class GridConfig:
    rho: float = 4.0
    x_min: float = 0.0
    x_max: float = 32.0
    y_min: float = -16.0
    y_max: float = 16.0

    def __post_init__(self):
        if not self.rho > 0:
            raise ConfigError("rho", f"must be > 0, got {self.rho}")
        if not self.x_min < self.x_max:
            raise ConfigError("x_max", f"must exceed x_min ({self.x_min}), got {self.x_max}")
        if not self.y_min < self.y_max:
            raise ConfigError("y_max", f"must exceed y_min ({self.y_min}), got {self.y_max}")
        for key, span in (("x_max", self.x_max - self.x_min), ("y_max", self.y_max - self.y_min)):
            cells = span * self.rho
            if abs(cells - round(cells)) > 1e-9:
                raise ConfigError(key, f"extent {span} m at rho {self.rho} gives {cells} cells, not an integer")

    @property
    def H(self) -> int:
        return int(round((self.x_max - self.x_min) * self.rho))

    @property
    def W(self) -> int:
        return int(round((self.y_max - self.y_min) * self.rho))

    @property
    def resolution(self) -> float:
        return 1.0 / self.rho

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Row centers along x and column centers along y, in meters."""
        xc = self.x_min + (np.arange(self.H) + 0.5) / self.rho
        yc = self.y_min + (np.arange(self.W) + 0.5) / self.rho
        return xc, yc


@dataclass(frozen=True)
class PillarAssignment:
    """CSR-style grouping of in-bounds points by pillar.

    ``order[starts[k]:starts[k+1]]`` are the indices of points in pillar
    ``cells[k]`` (flat index ``u * W + v``), in canonical order.
    """

    cells: np.ndarray
    starts: np.ndarray
    order: np.ndarray
    dropped: int
    H: int
    W: int

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.starts)

    def occupancy(self) -> np.ndarray:
        occ = np.zeros(self.H * self.W, dtype=np.int64)
        occ[self.cells] = self.counts
        return occ.reshape(self.H, self.W)

    def indices(self, u: int, v: int) -> np.ndarray:
        k = np.searchsorted(self.cells, u * self.W + v)
        if k < len(self.cells) and self.cells[k] == u * self.W + v:
            return self.order[self.starts[k]:self.starts[k + 1]]
        return np.zeros(0, dtype=np.intp)


def assign(points: PointCloud, cfg: GridConfig) -> PillarAssignment:
    """Bucket points into pillars using half-open [min, max) bounds per axis."""
    x, y = points.xyz[:, 0], points.xyz[:, 1]
    inside = (x >= cfg.x_min) & (x < cfg.x_max) & (y >= cfg.y_min) & (y < cfg.y_max)
    idx = np.flatnonzero(inside)
    u = np.minimum(np.floor((x[idx] - cfg.x_min) * cfg.rho).astype(np.int64), cfg.H - 1)
    v = np.minimum(np.floor((y[idx] - cfg.y_min) * cfg.rho).astype(np.int64), cfg.W - 1)
    flat = u * cfg.W + v
    # canonical within-pillar order makes every feature independent of input order
    p = points.xyz[idx]
    key = np.lexsort((p[:, 0], p[:, 1], p[:, 2], points.r[idx], points.ring[idx], flat))
    order = idx[key]
    flat = flat[key]
    cells, first = np.unique(flat, return_index=True)
    starts = np.append(first, len(flat)).astype(np.intp)
    return PillarAssignment(cells, starts, order, int(len(points) - len(idx)), cfg.H, cfg.W)


# --------------------------------------------------------------------------
# single-pillar reference ops


def pooled_features(pts: np.ndarray, center: tuple[float, float]) -> np.ndarray:
    """Max over [x, y, z, r, ring, dx, dy, dz] for an (m, 5) pillar."""
    pts = np.asarray(pts, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("pooled_features needs at least one point")
    xc, yc = center
    z_mean = pts[:, 2].sum() / len(pts)
    aug = np.column_stack([pts, pts[:, 0] - xc, pts[:, 1] - yc, pts[:, 2] - z_mean])
    return aug.max(axis=0)


def intensity_stats(r: np.ndarray) -> np.ndarray:
    """Reflectance mean and population (1/m) variance."""
    r = np.asarray(r, dtype=np.float64)
    mean = r.sum() / len(r)
    return np.array([mean, ((r - mean) ** 2).sum() / len(r)])


def jacobi_eigenvalues(a: np.ndarray) -> np.ndarray:
    """Eigenvalues of symmetric 3x3 matrices (batched, ``(..., 3, 3)``), descending.

    Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops
    below ``JACOBI_TOL * max(1, ||A||_F)``.
    """
    a = np.array(a, dtype=np.float64)
    batch = a.shape[:-2]
    a = a.reshape(-1, 3, 3)
    scale = np.maximum(1.0, np.sqrt((a * a).sum(axis=(1, 2))))
    for _ in range(JACOBI_MAX_SWEEPS):
        off = np.sqrt(2 * (a[:, 0, 1] ** 2 + a[:, 0, 2] ** 2 + a[:, 1, 2] ** 2))
        if (off < JACOBI_TOL * scale).all():
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            _rotate(a, p, q)
    w = np.diagonal(a, axis1=1, axis2=2)
    w = np.maximum(-np.sort(-w, axis=1), 0.0)
    return w.reshape(batch + (3,))


def _rotate(a: np.ndarray, p: int, q: int) -> None:
    r = 3 - p - q
    apq = a[:, p, q]
    active = apq != 0
    safe = np.where(active, apq, 1.0)
    with np.errstate(over="ignore"):
        theta = (a[:, q, q] - a[:, p, p]) / (2 * safe)
    big = np.abs(theta) > 1e150
    small = np.where(big, 1.0, theta)
    # for huge theta, t -> 1 / (2 theta) avoids squaring overflow
    t = np.where(big, 0.5 / np.where(big, theta, 1.0), np.sign(small) / (np.abs(small) + np.sqrt(small * small + 1.0)))
    t = np.where(theta == 0, 1.0, t)
    t = np.where(active, t, 0.0)
    c = 1.0 / np.sqrt(t * t + 1.0)
    s = t * c
    arp, arq = a[:, r, p].copy(), a[:, r, q].copy()
    a[:, p, p] -= t * apq
    a[:, q, q] += t * apq
    a[:, p, q] = a[:, q, p] = 0.0
    a[:, r, p] = a[:, p, r] = c * arp - s * arq
    a[:, r, q] = a[:, q, r] = s * arp + c * arq


def descriptors_from_eigenvalues(lam: np.ndarray) -> np.ndarray:
    """Linearity, planarity, sphericity, anisotropy from descending eigenvalues."""
    lam = np.asarray(lam, dtype=np.float64)
    l1, l2, l3 = lam[..., 0], lam[..., 1], lam[..., 2]
    ok = l1 > DEGENERATE_EIGENVALUE
    d = np.where(ok, l1, 1.0)
    out = np.stack([(l1 - l2) / d, (l2 - l3) / d, l3 / d, (l1 - l3) / d], axis=-1)
    return np.where(ok[..., None], out, 0.0)


def covariance(xyz: np.ndarray) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=np.float64)
    c = xyz - xyz.sum(axis=0) / len(xyz)
    return c.T @ c / len(xyz)


def shape_descriptors(xyz: np.ndarray) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=np.float64)
    if len(xyz) < 3:
        return np.zeros(4)
    return descriptors_from_eigenvalues(jacobi_eigenvalues(covariance(xyz)))


def pillar_features(pts: np.ndarray, center: tuple[float, float]) -> np.ndarray:
    """Full 14-vector for one pillar given its (m, 5) points."""
    pts = np.asarray(pts, dtype=np.float64)
    if len(pts) == 0:
        return np.zeros(NUM_CHANNELS)
    return np.concatenate([
        pooled_features(pts, center),
        intensity_stats(pts[:, 3]),
        shape_descriptors(pts[:, :3]),
    ])


# --------------------------------------------------------------------------
# batched path


@dataclass(frozen=True)
class PillarGrid:
    features: Tensor  # (H, W, 14)
    occupancy: np.ndarray  # (H, W) point counts
    config: GridConfig
    dropped: int = 0

    @property
    def occupied(self) -> int:
        return int((self.occupancy > 0).sum())


def _segment_features(pts: np.ndarray, counts: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Features for consecutive point segments; pts is (n, 5) grouped by pillar."""
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    m = counts.astype(np.float64)
    out = np.empty((len(counts), NUM_CHANNELS))
    mx = np.maximum.reduceat(pts, starts, axis=0)
    z_mean = np.add.reduceat(pts[:, 2], starts) / m
    out[:, 0:5] = mx
    out[:, 5] = mx[:, 0] - centers[:, 0]
    out[:, 6] = mx[:, 1] - centers[:, 1]
    out[:, 7] = mx[:, 2] - z_mean
    r = pts[:, 3]
    r_mean = np.add.reduceat(r, starts) / m
    dr = r - np.repeat(r_mean, counts)
    out[:, 8] = r_mean
    out[:, 9] = np.add.reduceat(dr * dr, starts) / m
    mean = np.add.reduceat(pts[:, :3], starts, axis=0) / m[:, None]
    c = pts[:, :3] - np.repeat(mean, counts, axis=0)
    prods = np.add.reduceat(c[:, :, None] * c[:, None, :], starts, axis=0) / m[:, None, None]
    desc = descriptors_from_eigenvalues(jacobi_eigenvalues(prods))
    desc[counts < 3] = 0.0
    out[:, 10:14] = desc
    return out


def pillarize(points: PointCloud, cfg: GridConfig, threads: int = 1) -> PillarGrid:
    """Compute the (H, W, 14) pillar grid; sharded over pillars when ``threads > 1``."""
    asg = assign(points, cfg)
    feats = np.zeros((cfg.H * cfg.W, NUM_CHANNELS))
    if len(asg.cells):
        pts = points.as_array()[asg.order]
        counts = asg.counts
        xc, yc = cfg.cell_centers()
        centers = np.column_stack([xc[asg.cells // cfg.W], yc[asg.cells % cfg.W]])
        n_shards = max(1, min(threads, len(counts)))
        bounds = np.linspace(0, len(counts), n_shards + 1).astype(int)

        def shard(k):
            lo, hi = bounds[k], bounds[k + 1]
            return _segment_features(pts[asg.starts[lo]:asg.starts[hi]], counts[lo:hi], centers[lo:hi])

        if n_shards == 1:
            parts = [shard(0)]
        else:
            with ThreadPoolExecutor(n_shards) as ex:
                parts = list(ex.map(shard, range(n_shards)))
        feats[asg.cells] = np.concatenate(parts)
    return PillarGrid(
        Tensor(feats.reshape(cfg.H, cfg.W, NUM_CHANNELS)), asg.occupancy(), cfg, asg.dropped
    )


def grid_from_extent(span_x: float = 32.0, span_y: float = 32.0, rho: float = 4.0, centered_x: bool = False) -> GridConfig:
    """Forward-facing (or ego-centered) grid covering the given spans."""
    x_min = -span_x / 2 if centered_x else 0.0
    return GridConfig(rho=rho, x_min=x_min, x_max=x_min + span_x, y_min=-span_y / 2, y_max=span_y / 2)


__all__ = [
    "CHANNELS", "ConfigError", "GridConfig", "LidarPoint", "PillarAssignment", "PillarGrid",
    "PointCloud", "assign", "covariance", "descriptors_from_eigenvalues", "grid_from_extent",
    "intensity_stats", "jacobi_eigenvalues", "pillar_features", "pillarize", "pooled_features",
    "shape_descriptors",
]
