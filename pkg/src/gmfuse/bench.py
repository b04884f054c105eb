"""BEV-SSM block vs. self-attention complexity benchmark."""

from __future__ import annotations

import csv
import math
import statistics
import time
import tracemalloc
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bev_block import block_forward, init_block
from .bev_encoding import bev_encoding
from .flops import attention_flops, block_flops
from .pillars import GridConfig
from .tensor import Tensor

DEFAULT_SWEEP = (1024, 4096, 16384, 65536)
MECHANISMS = ("bev-ssm", "self-attention")
REPEATS = 5
MIN_SAMPLE_SECONDS = 0.02


@dataclass(frozen=True)
class BenchRecord:
    N: int
    mechanism: str
    wall_ms: float
    flops: int
    leading_flops: int
    peak_bytes: int


def grid_shape(N: int) -> tuple[int, int]:
    if N < 16 or N & (N - 1):
        raise ValueError(f"N must be a power of two >= 16, got {N}")
    k = N.bit_length() - 1
    H = 2 ** ((k + 1) // 2)
    return H, N // H


def validate_sweep(sweep) -> list[int]:
    sweep = [int(n) for n in sweep]
    for n in sweep:
        if n < 1024 or n > 65536 or n & (n - 1):
            raise ValueError(f"sweep value {n} is not a power of two in [1024, 65536]")
    if sweep != sorted(set(sweep)):
        raise ValueError("sweep must be strictly increasing")
    return sweep


# --------------------------------------------------------------------------
# attention baseline


def init_attention(rng: np.random.Generator, C: int, dtype=np.float32) -> dict[str, np.ndarray]:
    return {k: (rng.standard_normal((C, C)) / math.sqrt(C)).astype(dtype) for k in ("wq", "wk", "wv", "wo")}


def self_attention(x: np.ndarray, params: dict, block_rows: int = 512, block_cols: int = 2048) -> np.ndarray:
    """Single-head softmax self-attention, tiled with an online softmax.

    The full N x N score matrix is never held at once, but every score is
    still computed.
    """
    N, C = x.shape
    dtype = x.dtype
    q = x @ params["wq"]
    k_t = np.ascontiguousarray((x @ params["wk"]).T)
    v = x @ params["wv"]
    scale = dtype.type(1.0 / math.sqrt(C))
    out = np.empty_like(q)
    for r in range(0, N, block_rows):
        qs = q[r:r + block_rows] * scale
        m = np.full((len(qs), 1), -np.inf, dtype=dtype)
        denom = np.zeros((len(qs), 1), dtype=dtype)
        acc = np.zeros((len(qs), C), dtype=dtype)
        for c in range(0, N, block_cols):
            s = qs @ k_t[:, c:c + block_cols]
            m_new = np.maximum(m, s.max(axis=1, keepdims=True))
            np.subtract(s, m_new, out=s)
            np.exp(s, out=s)
            corr = np.exp(m - m_new)
            denom = denom * corr + s.sum(axis=1, keepdims=True)
            acc = acc * corr + s @ v[c:c + block_cols]
            m = m_new
        out[r:r + block_rows] = acc / denom
    return out @ params["wo"]


def attention_reference(x: np.ndarray, params: dict) -> np.ndarray:
    """Untiled attention for small N."""
    q, k, v = x @ params["wq"], x @ params["wk"], x @ params["wv"]
    s = q @ k.T / math.sqrt(x.shape[1])
    s = np.exp(s - s.max(axis=1, keepdims=True))
    return (s / s.sum(axis=1, keepdims=True)) @ v @ params["wo"]


# --------------------------------------------------------------------------
# timing


def _traced(fn) -> tuple[float, int]:
    tracemalloc.start()
    try:
        start = time.perf_counter()
        fn()
        elapsed = time.perf_counter() - start
        return elapsed, tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()


def time_call(fn, repeats: int = REPEATS, min_sample: float = MIN_SAMPLE_SECONDS, long_call: float = 1.0):
    """Median seconds per call and peak traced bytes.

    The first call runs under tracemalloc to record peak allocation. Calls
    shorter than ``min_sample`` are batched so each sample spans at least that
    long. When a single call already takes ``long_call`` seconds or more, the
    first call is kept as one of the ``repeats`` samples.
    """
    once, peak = _traced(fn)
    inner = 1 if once >= min_sample else math.ceil(min_sample / max(once, 1e-9))
    samples = [once] if once >= long_call else []
    while len(samples) < repeats:
        start = time.perf_counter()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter() - start) / inner)
    return statistics.median(samples), peak


def loglog_slope(ns, times) -> float:
    return float(np.polyfit(np.log(ns), np.log(times), 1)[0])


def run_bench(
    sweep=DEFAULT_SWEEP,
    channels: int = 16,
    d_state: int = 16,
    chunk: int = 64,
    seed: int = 0,
    threads: int = 1,
    pe_base: float = 10000.0,
    repeats: int = REPEATS,
    log=None,
) -> tuple[list[BenchRecord], dict[str, float]]:
    """Time both mechanisms on identical (N, C) float32 inputs for each N."""
    sweep = validate_sweep(sweep)
    rng = np.random.default_rng(seed)
    attn = init_attention(rng, channels)
    records = []
    for N in sweep:
        H, W = grid_shape(N)
        cfg = GridConfig(rho=1.0, x_min=0.0, x_max=float(H), y_min=-W / 2, y_max=W / 2)
        pe = bev_encoding(cfg, channels, pe_base, dtype=np.float32)
        params = init_block(np.random.default_rng(seed + 1), channels, pe.polar.d_max, d_state, chunk, dtype=np.float32)
        x_np = rng.standard_normal((N, channels)).astype(np.float32)
        x = Tensor(x_np.reshape(H, W, channels))

        def run_block():
            return block_forward(x, pe, params, threads=threads)

        def run_attention():
            return self_attention(x_np, attn)

        for mech, fn, fc in (
            ("bev-ssm", run_block, block_flops(H, W, channels, d_state, chunk)),
            ("self-attention", run_attention, attention_flops(N, channels)),
        ):
            t, mem = time_call(fn, repeats)
            rec = BenchRecord(N, mech, t * 1e3, fc.total, fc.leading, mem)
            records.append(rec)
            if log:
                log(f"N={N:6d} {mech:15s} {rec.wall_ms:10.2f} ms  flops={rec.flops}")
    slopes = {
        m: loglog_slope([r.N for r in records if r.mechanism == m], [r.wall_ms for r in records if r.mechanism == m])
        for m in MECHANISMS
    }
    return records, slopes


def write_bench_csv(path, records, slopes, config_text: str = "") -> None:
    with open(Path(path), "w", newline="") as fh:
        for line in config_text.splitlines():
            fh.write(f"# {line}\n")
        for m, s in slopes.items():
            fh.write(f"# slope[{m}]={s:.4f}\n")
        w = csv.writer(fh)
        w.writerow(["N", "mechanism", "wall_ms", "flops", "leading_flops", "peak_bytes"])
        for r in records:
            w.writerow([r.N, r.mechanism, f"{r.wall_ms:.4f}", r.flops, r.leading_flops, r.peak_bytes])


__all__ = [
    "BenchRecord", "attention_reference", "grid_shape", "init_attention", "loglog_slope",
    "run_bench", "self_attention", "time_call", "validate_sweep", "write_bench_csv",
]
