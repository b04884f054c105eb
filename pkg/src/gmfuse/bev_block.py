"""BEV-SSM block: gated positional encoding, depthwise-separable conv,
four parallel branches and a learned softmax fusion of those branches.

Branches: identity, raster scan + AwareSSM, zigzag scan + AwareSSM and a
two-level average-pool pyramid. The multi-scale contents and the residual
around the whole block are our own choices; the residual can be disabled.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .aware_ssm import DEFAULT_CHUNK, DEFAULT_D_STATE, AwareSSMParams, aware_ssm_forward, init_aware_ssm
from .bev_encoding import BevPosEncoding
from .scan_order import deserialize, scan_order, serialize, serialize_array
from .tensor import (
    ShapeError,
    Tensor,
    active_tape,
    broadcast_to,
    pad,
    relu,
    sigmoid,
    softmax,
)

BRANCHES = ("identity", "raster", "zigzag", "multiscale")


@dataclass(frozen=True)
class FusionMLP:
    w1: Tensor  # (C, hidden)
    b1: Tensor
    w2: Tensor  # (hidden, 4)
    b2: Tensor


@dataclass(frozen=True)
class BlockParams:
    gate: Tensor  # (C,) logits
    dw_kernel: Tensor  # (C, 3, 3)
    dw_bias: Tensor
    pw_kernel: Tensor  # (C, C)
    pw_bias: Tensor
    fusion: FusionMLP
    msf_logits: Tensor  # (3, C) per-channel scale mixing
    ssm_raster: AwareSSMParams
    ssm_zigzag: AwareSSMParams
    residual: bool = True

    @property
    def channels(self) -> int:
        return self.gate.shape[0]


def init_fusion_mlp(rng: np.random.Generator, channels: int, n_out: int = 4, zero_head: bool = False, dtype=np.float64) -> FusionMLP:
    hidden = max(channels // 4, 1)
    w2 = np.zeros((hidden, n_out)) if zero_head else 0.1 * rng.standard_normal((hidden, n_out))
    return FusionMLP(
        w1=Tensor(rng.standard_normal((channels, hidden)) / math.sqrt(channels), dtype=dtype),
        b1=Tensor(np.zeros(hidden), dtype=dtype),
        w2=Tensor(w2, dtype=dtype),
        b2=Tensor(np.zeros(n_out), dtype=dtype),
    )


def init_block(
    rng: np.random.Generator,
    channels: int,
    d_max: float,
    d_state: int = DEFAULT_D_STATE,
    chunk: int = DEFAULT_CHUNK,
    residual: bool = True,
    dtype=np.float64,
) -> BlockParams:
    C = channels
    dw = 0.1 * rng.standard_normal((C, 3, 3))
    dw[:, 1, 1] += 1.0
    pw = np.eye(C) + 0.1 * rng.standard_normal((C, C)) / math.sqrt(C)
    return BlockParams(
        gate=Tensor(np.zeros(C), dtype=dtype),
        dw_kernel=Tensor(dw, dtype=dtype),
        dw_bias=Tensor(np.zeros(C), dtype=dtype),
        pw_kernel=Tensor(pw, dtype=dtype),
        pw_bias=Tensor(np.zeros(C), dtype=dtype),
        fusion=init_fusion_mlp(rng, C, dtype=dtype),
        msf_logits=Tensor(np.zeros((3, C)), dtype=dtype),
        ssm_raster=init_aware_ssm(rng, C, d_max, d_state, chunk, dtype),
        ssm_zigzag=init_aware_ssm(rng, C, d_max, d_state, chunk, dtype),
        residual=residual,
    )


def gated_pe(x: Tensor, pe: Tensor | BevPosEncoding, gate_logits: Tensor) -> Tensor:
    """Convex blend of ``x + pe`` and ``x`` with per-channel sigmoid gates."""
    enc = pe.enc if isinstance(pe, BevPosEncoding) else pe
    if enc.shape != x.shape:
        raise ShapeError(f"positional encoding {enc.shape} does not match features {x.shape}")
    if gate_logits.shape != (x.shape[-1],):
        raise ShapeError(f"gate logits {gate_logits.shape} do not match {x.shape[-1]} channels")
    g = sigmoid(gate_logits)
    return g * (x + enc) + (1.0 - g) * x


def depthwise_conv3x3(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel 3x3 cross-correlation, zero padding, stride 1."""
    H, W, C = x.shape
    if kernel.shape != (C, 3, 3):
        raise ShapeError(f"depthwise kernel {kernel.shape} does not match {C} channels")
    xp = pad(x, ((1, 1), (1, 1), (0, 0)))
    out = None
    for i in range(3):
        for j in range(3):
            term = xp[i:i + H, j:j + W, :] * kernel[:, i, j]
            out = term if out is None else out + term
    return out if bias is None else out + bias


def pointwise_conv(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    H, W, C = x.shape
    y = x.reshape(H * W, C) @ kernel
    if bias is not None:
        y = y + bias
    return y.reshape(H, W, kernel.shape[1])


def dw_separable_conv(x: Tensor, params: BlockParams) -> Tensor:
    if x.shape[0] < 3 or x.shape[1] < 3:
        raise ShapeError(f"depthwise-separable conv needs H, W >= 3, got {x.shape}")
    y = depthwise_conv3x3(x, params.dw_kernel, params.dw_bias)
    return pointwise_conv(y, params.pw_kernel, params.pw_bias)


def avg_pool(x: Tensor, k: int) -> Tensor:
    H, W, C = x.shape
    return x.reshape(H // k, k, W // k, k, C).mean(axis=(1, 3))


def upsample_nearest(x: Tensor, k: int) -> Tensor:
    h, w, C = x.shape
    tiled = broadcast_to(x.reshape(h, 1, w, 1, C), (h, k, w, k, C))
    return tiled.reshape(h * k, w * k, C)


def check_multiscale_dims(H: int, W: int) -> None:
    if H % 4 or W % 4:
        raise ShapeError(f"multi-scale branch needs H, W divisible by 4, got {H}x{W}")


def multi_scale_branch(x: Tensor, msf_logits: Tensor) -> Tensor:
    """Mix full, 1/2 and 1/4 resolution average pools with per-channel softmax weights."""
    H, W, C = x.shape
    check_multiscale_dims(H, W)
    w = softmax(msf_logits, axis=0)
    up2 = upsample_nearest(avg_pool(x, 2), 2)
    up4 = upsample_nearest(avg_pool(x, 4), 4)
    return w[0] * x + w[1] * up2 + w[2] * up4


def fusion_weights(branches, mlp: FusionMLP) -> Tensor:
    total = branches[0]
    for b in branches[1:]:
        total = total + b
    pooled = total.mean(axis=(0, 1)).reshape(1, -1)
    hidden = relu(pooled @ mlp.w1 + mlp.b1)
    logits = hidden @ mlp.w2 + mlp.b2
    return softmax(logits.reshape(-1))


def adaptive_fuse(branches, mlp: FusionMLP) -> tuple[Tensor, Tensor]:
    """Softmax-weighted sum of the branches; returns (fused, weights)."""
    branches = list(branches)
    shape = branches[0].shape
    for b in branches[1:]:
        if b.shape != shape:
            raise ShapeError(f"branch shapes differ: {shape} vs {b.shape}")
    w = fusion_weights(branches, mlp)
    if w.shape[0] != len(branches):
        raise ShapeError(f"fusion head produces {w.shape[0]} weights for {len(branches)} branches")
    out = None
    for k, b in enumerate(branches):
        term = b * w[k]
        out = term if out is None else out + term
    return out, w


def ssm_branch(y: Tensor, pe: BevPosEncoding, pattern: str, params: AwareSSMParams) -> Tensor:
    H, W, _ = y.shape
    order = scan_order(pattern, H, W)
    d = serialize_array(pe.polar.d, order)
    seq = serialize(y, order)
    out = aware_ssm_forward(seq, d, pattern, params, d_max=pe.polar.d_max)
    return deserialize(out, order)


def block_forward(
    x: Tensor,
    pe: BevPosEncoding,
    params: BlockParams,
    threads: int = 1,
    return_aux: bool = False,
):
    """Run one BEV-SSM block on an (H, W, C) grid."""
    H, W, C = x.shape
    if C != params.channels:
        raise ShapeError(f"features have {C} channels, block expects {params.channels}")
    check_multiscale_dims(H, W)
    y = dw_separable_conv(gated_pe(x, pe, params.gate), params)
    jobs = [
        lambda: ssm_branch(y, pe, "raster", params.ssm_raster),
        lambda: ssm_branch(y, pe, "zigzag", params.ssm_zigzag),
        lambda: multi_scale_branch(y, params.msf_logits),
    ]
    if threads > 1 and active_tape() is None:
        with ThreadPoolExecutor(min(threads, len(jobs))) as ex:
            results = [f.result() for f in [ex.submit(j) for j in jobs]]
    else:
        results = [j() for j in jobs]
    branches = [y, *results]
    fused, weights = adaptive_fuse(branches, params.fusion)
    out = fused + x if params.residual else fused
    if return_aux:
        return out, {"weights": weights, "branches": branches, "conv": y}
    return out
