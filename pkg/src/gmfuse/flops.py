"""Analytic FLOP counts, split by how each term scales with the cell count N.

Conventions: a multiply-add is 2 FLOPs, a matmul (n, k) @ (k, m) is 2nkm,
every transcendental (exp, tanh, sigmoid's exp) counts as 1 and sigmoid as
4. Terms are grouped by their power of N so that asymptotic scaling can be
compared exactly even when lower-order terms are present.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field


@dataclass
class FlopCount:
    terms: dict[int, int] = field(default_factory=lambda: defaultdict(int))
    by_op: dict[str, int] = field(default_factory=lambda: defaultdict(int))

    def add(self, op: str, order: int, flops: int) -> None:
        self.terms[order] += int(flops)
        self.by_op[op] += int(flops)

    def merge(self, other: "FlopCount", prefix: str = "") -> None:
        for k, v in other.terms.items():
            self.terms[k] += v
        for k, v in other.by_op.items():
            self.by_op[prefix + k] += v

    @property
    def total(self) -> int:
        return sum(self.terms.values())

    @property
    def order(self) -> int:
        return max((k for k, v in self.terms.items() if v), default=0)

    @property
    def leading(self) -> int:
        """FLOPs in the highest-order nonzero term."""
        return self.terms.get(self.order, 0)


def _padded(n: int, chunk: int) -> int:
    return -(-n // chunk) * chunk


def aware_ssm_flops(N: int, C: int, d_state: int, chunk: int = 64) -> FlopCount:
    fc = FlopCount()
    ds = d_state
    Lp = _padded(N, chunk)
    fc.add("decay", 1, 3 * N + N * C)  # d / d_max, * lam, exp, then scale rows
    fc.add("projections", 1, 3 * 2 * N * C * ds)
    fc.add("drive", 1, N * ds)
    fc.add("gates", 1, N * ds + 4 * N * ds)
    fc.add("scan", 1, 6 * Lp * ds)  # cumprod, ratio, cumsum, product, carry multiply-add
    fc.add("out_projection", 1, 2 * N * ds * C)
    fc.add("transition_mix", 0, 4 * 3 + 2 * 3 * ds)
    fc.add("lambda_softplus", 0, 2)
    return fc


def block_flops(H: int, W: int, C: int, d_state: int = 16, chunk: int = 64) -> FlopCount:
    """One BEV-SSM block forward on an (H, W, C) grid."""
    N = H * W
    hidden = max(C // 4, 1)
    fc = FlopCount()
    fc.add("gated_pe", 1, 4 * N * C)
    fc.add("gated_pe", 0, 5 * C)
    fc.add("depthwise", 1, 18 * N * C)
    fc.add("pointwise", 1, 2 * N * C * C + N * C)
    for pattern in ("raster", "zigzag"):
        fc.merge(aware_ssm_flops(N, C, d_state, chunk), prefix=f"{pattern}.")
    fc.add("multiscale", 1, 2 * N * C + 5 * N * C)
    fc.add("multiscale", 0, 5 * 3 * C)
    fc.add("fuse_pool", 1, 3 * N * C + N * C)
    fc.add("fuse_mlp", 0, 2 * C * hidden + 2 * hidden + 2 * hidden * 4 + 4 + 5 * 4)
    fc.add("fuse_sum", 1, 7 * N * C)
    fc.add("residual", 1, N * C)
    return fc


def attention_flops(N: int, C: int) -> FlopCount:
    """Single-layer single-head self-attention over N tokens."""
    fc = FlopCount()
    fc.add("qkv", 1, 3 * 2 * N * C * C)
    fc.add("scores", 2, 2 * N * N * C + N * N)
    fc.add("softmax", 2, 5 * N * N)
    fc.add("weighted_values", 2, 2 * N * N * C)
    fc.add("out_projection", 1, 2 * N * C * C)
    return fc


def hca_flops(N: int, C: int, level_shapes, K: int = 4, heads: int = 2) -> FlopCount:
    """Deformable cross-attention of N queries into a fixed image pyramid."""
    fc = FlopCount()
    hk = heads * K
    for Hl, Wl in level_shapes:
        fc.add("offsets", 1, 2 * N * C * 2 * hk + 3 * 2 * hk * N)
        fc.add("sample_weights", 1, 2 * N * C * hk + 5 * hk * N)
        fc.add("values", 0, 2 * Hl * Wl * C * C)
        fc.add("bilinear", 1, 8 * hk * N * C)
        fc.add("head_sum", 1, 2 * hk * N * C + 2 * heads * N * C)
        fc.add("level_sum", 1, N * C)
    fc.add("out_projection", 1, 2 * N * C * C)
    return fc
