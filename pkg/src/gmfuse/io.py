"""On-disk formats: point clouds, grid tensors and run configs.

Point cloud binary: little-endian 20-byte records ``f32 x, f32 y, f32 z,
f32 r, u32 ring``. CSV: header ``x,y,z,r,ring``.

Tensor file: three little-endian u32 dims (H, W, C) followed by H*W*C
little-endian f32 values in row-major order.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pillars import ConfigError, GridConfig, PointCloud

POINT_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("r", "<f4"), ("ring", "<u4")])
RECORD_BYTES = POINT_DTYPE.itemsize
TENSOR_HEADER = np.dtype("<u4")
CSV_HEADER = ["x", "y", "z", "r", "ring"]


class FormatError(ValueError):
    """Malformed input file; the message names the file and byte offset or line."""


# --------------------------------------------------------------------------
# point clouds


def read_point_cloud(path) -> PointCloud:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_point_cloud_csv(path)
    return read_point_cloud_bin(path)


def read_point_cloud_bin(path) -> PointCloud:
    raw = Path(path).read_bytes()
    extra = len(raw) % RECORD_BYTES
    if extra:
        offset = len(raw) - extra
        raise FormatError(f"{path}: trailing {extra} byte{'s' if extra > 1 else ''} at offset {offset}")
    rec = np.frombuffer(raw, dtype=POINT_DTYPE)
    xyz = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(np.float64)
    r = rec["r"].astype(np.float64)
    bad = ~np.isfinite(xyz).all(axis=1) | ~np.isfinite(r) | (r < 0) | (rec["ring"] > 255)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise FormatError(f"{path}: invalid point record {i} at offset {i * RECORD_BYTES}")
    return PointCloud(xyz, r, rec["ring"].astype(np.int64))


def read_point_cloud_csv(path) -> PointCloud:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise FormatError(f"{path}: line 1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise FormatError(f"{path}: line {lineno}: expected 5 fields, got {len(row)}")
            try:
                x, y, z, r = (float(v) for v in row[:4])
                ring = int(row[4])
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: unparseable field") from None
            if not all(math.isfinite(v) for v in (x, y, z, r)) or r < 0 or not 0 <= ring <= 255:
                raise FormatError(f"{path}: line {lineno}: value out of range")
            rows.append((x, y, z, r, ring))
    if not rows:
        return PointCloud.empty()
    arr = np.array(rows, dtype=np.float64)
    return PointCloud(arr[:, :3], arr[:, 3], arr[:, 4].astype(np.int64))


def write_point_cloud_bin(path, pc: PointCloud) -> None:
    rec = np.zeros(len(pc), dtype=POINT_DTYPE)
    rec["x"], rec["y"], rec["z"] = pc.xyz[:, 0], pc.xyz[:, 1], pc.xyz[:, 2]
    rec["r"] = pc.r
    rec["ring"] = pc.ring
    Path(path).write_bytes(rec.tobytes())


def write_point_cloud_csv(path, pc: PointCloud) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for (x, y, z), r, ring in zip(pc.xyz, pc.r, pc.ring):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(z)), repr(float(r)), int(ring)])


# --------------------------------------------------------------------------
# tensors


def write_tensor(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 3:
        raise ValueError(f"tensor files hold 3-d arrays, got shape {arr.shape}")
    header = np.array(arr.shape, dtype=TENSOR_HEADER).tobytes()
    Path(path).write_bytes(header + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: header truncated at offset {len(raw)}")
    dims = tuple(int(d) for d in np.frombuffer(raw[:12], dtype=TENSOR_HEADER))
    expected = 12 + 4 * int(np.prod(dims))
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for dims {dims}, got {len(raw)} (offset {min(len(raw), expected)})")
    return np.frombuffer(raw[12:], dtype="<f4").reshape(dims).astype(np.float64)


# --------------------------------------------------------------------------
# run config


@dataclass(frozen=True)
class RunConfig:
    rho: float = 4.0
    x_min: float = 0.0
    x_max: float = 32.0
    y_min: float = -16.0
    y_max: float = 16.0
    d_state: int = 16
    chunk_len: int = 64
    channels: int = 16
    pe_base: float = 10000.0
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        for key in ("d_state", "chunk_len", "channels", "threads"):
            if getattr(self, key) < 1:
                raise ConfigError(key, f"must be >= 1, got {getattr(self, key)}")
        if self.channels % 4:
            raise ConfigError("channels", f"must be a multiple of 4, got {self.channels}")
        if not self.pe_base > 1:
            raise ConfigError("pe_base", f"must be > 1, got {self.pe_base}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed", f"must be an unsigned 64-bit integer, got {self.seed}")
        self.grid()

    def grid(self) -> GridConfig:
        return GridConfig(self.rho, self.x_min, self.x_max, self.y_min, self.y_max)

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    def with_overrides(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **{k: v for k, v in kw.items() if v is not None})


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    fields = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"{source}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ConfigError(key, f"{source}: unknown key")
        conv = int if fields[key] == "int" else float
        try:
            values[key] = conv(value)
        except ValueError:
            raise ConfigError(key, f"{source}: cannot parse {value!r} as {conv.__name__}") from None
    return RunConfig(**values)


def load_run_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_run_config(Path(path).read_text(), str(path))


def write_summary(path, items: dict, config: RunConfig) -> None:
    """Sidecar text file: summary key: value lines, then the resolved config."""
    lines = [f"{k}: {v}\n" for k, v in items.items()]
    Path(path).write_text("".join(lines) + "[config]\n" + config.to_text())
