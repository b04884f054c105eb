"""Toy-scale gated multimodal fusion.

Per scale: channel-attention alignment of image and BEV features, gated
cross-attention with BEV queries, three BEV-SSM blocks (aligned, BEV and
cross-attended streams) and hierarchical deformable cross-attention into
the image pyramid. Scale outputs are upsampled to the finest scale and
summed. Backbones are replaced by a seeded strided-convolution stand-in.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bev_block import BlockParams, block_forward, init_block, upsample_nearest
from .bev_encoding import BevPosEncoding, bev_encoding
from .pillars import GridConfig
from .tensor import (
    ShapeError,
    Tensor,
    active_tape,
    concat,
    custom_op,
    relu,
    sigmoid,
    softmax,
    tanh,
)

MAX_TOKENS = 4096
NUM_SCALES = 4


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class ChannelAlignParams:
    w1: Tensor  # (2C, hidden)
    b1: Tensor
    w2: Tensor  # (hidden, 2C)
    b2: Tensor
    w_merge: Tensor  # (2C, C)


@dataclass(frozen=True)
class CrossAttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    gate: Tensor  # (C,) logits
    heads: int = 1


@dataclass(frozen=True)
class DeformableLevelParams:
    w_off: Tensor  # (C, heads * K * 2)
    b_off: Tensor
    w_attn: Tensor  # (C, heads * K)
    b_attn: Tensor
    w_v: Tensor  # (C, C)


@dataclass(frozen=True)
class DeformableHeadParams:
    levels: tuple[DeformableLevelParams, ...]
    w_o: Tensor
    K: int = 4
    heads: int = 2


@dataclass(frozen=True)
class GMFusionParams:
    align: ChannelAlignParams
    cross: CrossAttentionParams
    blocks: tuple[BlockParams, BlockParams, BlockParams]
    hca: DeformableHeadParams


@dataclass(frozen=True)
class ModalityFeatures:
    image: Tensor  # (H_i, W_i, C)
    bev: Tensor  # (H, W, C)
    scale_id: int = 0

    def __post_init__(self):
        if self.image.shape[-1] != self.bev.shape[-1]:
            raise ShapeError(f"image has {self.image.shape[-1]} channels, BEV has {self.bev.shape[-1]}")


def _mat(rng, n_in, n_out, gain=1.0, dtype=np.float64):
    return Tensor(gain * rng.standard_normal((n_in, n_out)) / math.sqrt(n_in), dtype=dtype)


def _zeros(n, dtype=np.float64):
    return Tensor(np.zeros(n), dtype=dtype)


def init_channel_align(rng, C, dtype=np.float64) -> ChannelAlignParams:
    hidden = max(C // 2, 1)
    return ChannelAlignParams(
        _mat(rng, 2 * C, hidden, dtype=dtype), _zeros(hidden, dtype),
        _mat(rng, hidden, 2 * C, dtype=dtype), _zeros(2 * C, dtype),
        _mat(rng, 2 * C, C, dtype=dtype),
    )


def init_cross_attention(rng, C, heads=1, dtype=np.float64) -> CrossAttentionParams:
    if C % heads:
        raise ShapeError(f"{C} channels do not split into {heads} heads")
    return CrossAttentionParams(
        _mat(rng, C, C, dtype=dtype), _mat(rng, C, C, dtype=dtype),
        _mat(rng, C, C, dtype=dtype), _mat(rng, C, C, dtype=dtype),
        _zeros(C, dtype), heads,
    )


def init_deformable(rng, C, level_shapes, K=4, heads=2, dtype=np.float64) -> DeformableHeadParams:
    if C % heads:
        raise ShapeError(f"{C} channels do not split into {heads} heads")
    levels = []
    for Hl, Wl in level_shapes:
        # start the K points on a ring around the reference, one direction per head
        ang = 2 * np.pi * np.arange(heads) / heads
        radius = 0.5 * (np.arange(K) + 1)
        off = np.stack([np.outer(np.cos(ang), radius), np.outer(np.sin(ang), radius)], axis=-1)
        ext = np.array([Hl, Wl], dtype=np.float64)
        b_off = np.arctanh(np.clip(off / ext, -0.99, 0.99)).reshape(-1)
        levels.append(DeformableLevelParams(
            w_off=_mat(rng, C, heads * K * 2, 0.01, dtype),
            b_off=Tensor(b_off, dtype=dtype),
            w_attn=_mat(rng, C, heads * K, 0.1, dtype),
            b_attn=_zeros(heads * K, dtype),
            w_v=_mat(rng, C, C, dtype=dtype),
        ))
    return DeformableHeadParams(tuple(levels), _mat(rng, C, C, dtype=dtype), K, heads)


def init_gm_fusion(
    rng, C, d_max, level_shapes, d_state=16, chunk=64, K=4, heads=2, ca_heads=1, dtype=np.float64
) -> GMFusionParams:
    return GMFusionParams(
        align=init_channel_align(rng, C, dtype),
        cross=init_cross_attention(rng, C, ca_heads, dtype),
        blocks=tuple(init_block(rng, C, d_max, d_state, chunk, dtype=dtype) for _ in range(3)),
        hca=init_deformable(rng, C, level_shapes, K, heads, dtype),
    )


# --------------------------------------------------------------------------
# channel alignment and cross-attention


def channel_align(img: Tensor, bev: Tensor, params: ChannelAlignParams) -> tuple[Tensor, Tensor]:
    """Squeeze-excitation over the concatenated modalities; returns (aligned, scales)."""
    if img.shape != bev.shape:
        raise ShapeError(f"image {img.shape} and BEV {bev.shape} must share dims")
    H, W, C = bev.shape
    z = concat([img, bev], axis=-1)
    pooled = z.mean(axis=(0, 1)).reshape(1, 2 * C)
    hidden = relu(pooled @ params.w1 + params.b1)
    scales = sigmoid(hidden @ params.w2 + params.b2).reshape(2 * C)
    merged = (z * scales).reshape(H * W, 2 * C) @ params.w_merge
    return merged.reshape(H, W, C), scales


def gated_cross_attention(
    q_bev: Tensor, kv: Tensor, params: CrossAttentionParams, max_tokens: int = MAX_TOKENS
) -> tuple[Tensor, Tensor]:
    """Scaled dot-product cross-attention plus gated residual; returns (out, weights)."""
    H, W, C = q_bev.shape
    Hk, Wk, Ck = kv.shape
    if Ck != C:
        raise ShapeError(f"query channels {C} and key/value channels {Ck} differ")
    N, M = H * W, Hk * Wk
    if max(N, M) > max_tokens:
        raise ShapeError(
            f"cross-attention over {max(N, M)} tokens exceeds the {max_tokens} limit; downsample the inputs"
        )
    h = params.heads
    dh = C // h
    q2 = q_bev.reshape(N, C)
    k2 = kv.reshape(M, C)

    def heads(t, n):
        return t.reshape(n, h, dh).transpose(1, 0, 2)

    Q = heads(q2 @ params.wq, N)
    K = heads(k2 @ params.wk, M)
    V = heads(k2 @ params.wv, M)
    weights = softmax((Q @ K.transpose(0, 2, 1)) * (1.0 / math.sqrt(dh)), axis=-1)
    attn = (weights @ V).transpose(1, 0, 2).reshape(N, C) @ params.wo
    g = sigmoid(params.gate)
    out = g * attn + (1.0 - g) * q2
    return out.reshape(H, W, C), weights


# --------------------------------------------------------------------------
# deformable sampling


def _corners(points: np.ndarray, H: int, W: int):
    u, v = points[:, 0], points[:, 1]
    u0 = np.floor(u)
    v0 = np.floor(v)
    fu, fv = u - u0, v - v0
    u0 = u0.astype(np.int64)
    v0 = v0.astype(np.int64)
    out = []
    for du, dv, w, dwu, dwv in (
        (0, 0, (1 - fu) * (1 - fv), -(1 - fv), -(1 - fu)),
        (1, 0, fu * (1 - fv), (1 - fv), -fu),
        (0, 1, (1 - fu) * fv, -fv, (1 - fu)),
        (1, 1, fu * fv, fv, fu),
    ):
        uu, vv = u0 + du, v0 + dv
        valid = (uu >= 0) & (uu < H) & (vv >= 0) & (vv < W)
        out.append((np.clip(uu, 0, H - 1), np.clip(vv, 0, W - 1), np.where(valid, w, 0.0), valid, dwu, dwv))
    return out


def bilinear_sample(feat: Tensor, points) -> Tensor:
    """Sample (H, W, C) features at continuous (u, v) points; integer coords are cell centers.

    Corners outside the grid contribute zero.
    """
    if feat.ndim != 3:
        raise ShapeError(f"expected (H, W, C) features, got {feat.shape}")
    pts_t = points if isinstance(points, Tensor) else Tensor(np.asarray(points, dtype=np.float64).reshape(-1, 2))
    if pts_t.ndim != 2 or pts_t.shape[1] != 2:
        raise ShapeError(f"expected (P, 2) sample points, got {pts_t.shape}")
    f = feat.numpy()
    H, W, C = f.shape
    corners = _corners(pts_t.numpy(), H, W)
    out = np.zeros((pts_t.shape[0], C), dtype=f.dtype)
    for uu, vv, w, _, _, _ in corners:
        out += w[:, None] * f[uu, vv]

    def vjp(g):
        gf = np.zeros_like(f)
        gp = np.zeros(pts_t.shape, dtype=pts_t.dtype)
        for uu, vv, w, valid, dwu, dwv in corners:
            np.add.at(gf, (uu, vv), w[:, None] * g)
            dot = np.where(valid, (f[uu, vv] * g).sum(axis=1), 0.0)
            gp[:, 0] += dwu * dot
            gp[:, 1] += dwv * dot
        return gf, gp

    return custom_op(out, (feat, pts_t), vjp)


def reference_points(H: int, W: int) -> np.ndarray:
    """Normalized cell-center coordinates in [0, 1]^2, shape (H*W, 2)."""
    u = (np.arange(H) + 0.5) / H
    v = (np.arange(W) + 0.5) / W
    uu, vv = np.meshgrid(u, v, indexing="ij")
    return np.column_stack([uu.reshape(-1), vv.reshape(-1)])


def hca_forward(queries: Tensor, img_pyramid, params: DeformableHeadParams, return_aux: bool = False):
    """Hierarchical deformable cross-attention of BEV queries into an image pyramid."""
    H, W, C = queries.shape
    if len(img_pyramid) != len(params.levels):
        raise ShapeError(f"pyramid has {len(img_pyramid)} levels, parameters expect {len(params.levels)}")
    N, h, K = H * W, params.heads, params.K
    dh = C // h
    q = queries.reshape(N, C)
    ref = reference_points(H, W)
    head_mask = Tensor(np.kron(np.eye(h), np.ones((1, dh))).reshape(1, h, C), dtype=queries.dtype)
    total = None
    aux = {"weights": [], "locations": []}
    for img, lp in zip(img_pyramid, params.levels):
        Hl, Wl, Cl = img.shape
        if Cl != C:
            raise ShapeError(f"pyramid level has {Cl} channels, queries have {C}")
        ext = np.array([Hl, Wl], dtype=np.float64)
        offsets = tanh(q @ lp.w_off + lp.b_off).reshape(N, h, K, 2) * Tensor(ext, dtype=queries.dtype)
        base = Tensor((ref * ext - 0.5).reshape(N, 1, 1, 2), dtype=queries.dtype)
        loc = (offsets + base).reshape(N * h * K, 2)
        weights = softmax((q @ lp.w_attn + lp.b_attn).reshape(N, h, K), axis=-1)
        values = (img.reshape(Hl * Wl, C) @ lp.w_v).reshape(Hl, Wl, C)
        samples = bilinear_sample(values, loc).reshape(N, h, K, C)
        per_head = (samples * weights.reshape(N, h, K, 1)).sum(axis=2)
        merged = (per_head * head_mask).sum(axis=1)
        total = merged if total is None else total + merged
        aux["weights"].append(weights)
        aux["locations"].append(loc)
    out = (total @ params.w_o).reshape(H, W, C)
    return (out, aux) if return_aux else out


# --------------------------------------------------------------------------
# fusion module


def resample_bilinear(x: Tensor, H: int, W: int) -> Tensor:
    Hs, Ws, C = x.shape
    if (Hs, Ws) == (H, W):
        return x
    pts = reference_points(H, W) * np.array([Hs, Ws]) - 0.5
    return bilinear_sample(x, pts).reshape(H, W, C)


def _run_parallel(jobs, threads: int):
    if threads > 1 and active_tape() is None:
        with ThreadPoolExecutor(min(threads, len(jobs))) as ex:
            return [f.result() for f in [ex.submit(j) for j in jobs]]
    return [j() for j in jobs]


def gm_fusion_forward(
    mf: ModalityFeatures,
    params: GMFusionParams,
    pe: BevPosEncoding,
    img_pyramid,
    threads: int = 1,
    return_aux: bool = False,
):
    """One GM-Fusion stage; returns the fused (H, W, C) BEV features."""
    H, W, C = mf.bev.shape
    img = resample_bilinear(mf.image, H, W)
    aligned, scales = channel_align(img, mf.bev, params.align)
    ca, attn = gated_cross_attention(mf.bev, aligned, params.cross)
    streams = _run_parallel(
        [lambda s=s, bp=bp: block_forward(s, pe, bp) for s, bp in zip((aligned, mf.bev, ca), params.blocks)],
        threads,
    )
    queries = streams[0] + streams[1]
    deform = hca_forward(queries, img_pyramid, params.hca)
    fused = streams[2] + deform
    if return_aux:
        return fused, {"aligned": aligned, "scales": scales, "attention": attn, "streams": streams, "hca": deform}
    return fused


# --------------------------------------------------------------------------
# backbone stand-in and multi-scale network


@dataclass(frozen=True)
class StemParams:
    """Per level: 2x2 stride-2 conv + ReLU, then a 1x1 conv."""

    down: tuple[Tensor, ...]  # level k: (4 * C_in_k, C)
    mix: tuple[Tensor, ...]  # (C, C)


def init_stem(rng, c_in, C, levels=NUM_SCALES, dtype=np.float64) -> StemParams:
    down, mix = [], []
    for k in range(levels):
        cin = c_in if k == 0 else C
        down.append(_mat(rng, 4 * cin, C, dtype=dtype))
        mix.append(_mat(rng, C, C, dtype=dtype))
    return StemParams(tuple(down), tuple(mix))


def strided_patch_conv(x: Tensor, kernel: Tensor) -> Tensor:
    H, W, C = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"stride-2 stand-in needs even dims, got {H}x{W}")
    patches = x.reshape(H // 2, 2, W // 2, 2, C).transpose(0, 2, 1, 3, 4).reshape((H // 2) * (W // 2), 4 * C)
    return (patches @ kernel).reshape(H // 2, W // 2, kernel.shape[1])


def stem_pyramid(x: Tensor, params: StemParams) -> list[Tensor]:
    levels = []
    cur = x
    for down, mix in zip(params.down, params.mix):
        cur = relu(strided_patch_conv(cur, down))
        H, W, C = cur.shape
        cur = (cur.reshape(H * W, C) @ mix).reshape(H, W, C)
        levels.append(cur)
    return levels


@dataclass(frozen=True)
class NetworkParams:
    image_stem: StemParams
    bev_stem: StemParams
    scales: tuple[GMFusionParams, ...]


def level_configs(cfg: GridConfig, levels: int = NUM_SCALES) -> list[GridConfig]:
    """Grid configs for the stride-2, 4, 8, 16 pyramid over the same metric extent."""
    return [
        GridConfig(cfg.rho / 2 ** (k + 1), cfg.x_min, cfg.x_max, cfg.y_min, cfg.y_max) for k in range(levels)
    ]


def init_network(
    rng, cfg: GridConfig, C, in_channels=14, image_channels=3, d_state=16, chunk=64, pe_base=10000.0,
    dtype=np.float64,
) -> NetworkParams:
    lcfgs = level_configs(cfg)
    shapes = [(c.H, c.W) for c in lcfgs]
    scales = []
    for lc in lcfgs:
        d_max = bev_encoding(lc, 4, pe_base).polar.d_max
        scales.append(init_gm_fusion(rng, C, d_max, shapes, d_state, chunk, dtype=dtype))
    return NetworkParams(
        init_stem(rng, image_channels, C, dtype=dtype), init_stem(rng, in_channels, C, dtype=dtype), tuple(scales)
    )


def network_forward(
    grid: Tensor, image: Tensor, params: NetworkParams, cfg: GridConfig, pe_base: float = 10000.0, threads: int = 1
) -> Tensor:
    """Pillar grid + raw image to fused (H, W, C) BEV features."""
    H, W, _ = grid.shape
    if (H, W) != (cfg.H, cfg.W):
        raise ShapeError(f"grid dims {H}x{W} do not match config {cfg.H}x{cfg.W}")
    bev_pyr = stem_pyramid(grid, params.bev_stem)
    img_pyr = stem_pyramid(image, params.image_stem)
    lcfgs = level_configs(cfg)
    out = None
    for k, (bev, img, lc, sp) in enumerate(zip(bev_pyr, img_pyr, lcfgs, params.scales)):
        pe = bev_encoding(lc, bev.shape[-1], pe_base, dtype=bev.dtype)
        fused = gm_fusion_forward(ModalityFeatures(img, bev, k), sp, pe, img_pyr, threads)
        up = upsample_nearest(fused, 2 ** k) if k else fused
        out = up if out is None else out + up
    return upsample_nearest(out, 2)
