"""Spatially-aware selective scan over serialized BEV features.

The recurrence is the channel-wise gated update ``h_t = A_t * h_{t-1} + u_t``
with ``u_t = B_t * C_t`` and ``A_t = sigmoid(A + Delta_t)``. The parallel
evaluation uses the cumulative-retention form

    h_t = P_t * sum_{j<=t} u_j / P_j,    P_t = prod_{i<=t} A_i

inside fixed-length chunks, carrying the hidden state across chunk
boundaries so that P never spans more than one chunk.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    custom_op,
    exp,
    reduce,
    sigmoid,
    softmax,
    softplus,
)

log = logging.getLogger(__name__)

DEFAULT_CHUNK = 64
DEFAULT_D_STATE = 16
# softmax targets for (forward, lateral, backward)
INIT_WEIGHTS = {"raster": (0.5, 0.3, 0.2), "zigzag": (0.4, 0.4, 0.2)}
INIT_LAMBDA = 1.0


# --------------------------------------------------------------------------
# scan kernels (plain arrays)


def scan_sequential(a: np.ndarray, u: np.ndarray, h0: np.ndarray | None = None) -> np.ndarray:
    """Reference loop for h_t = a_t * h_{t-1} + u_t with h_{-1} = 0."""
    a = np.asarray(a)
    u = np.asarray(u)
    h = np.empty(np.broadcast_shapes(a.shape, u.shape), dtype=np.result_type(a, u))
    prev = np.zeros(h.shape[1:], dtype=h.dtype) if h0 is None else h0
    for t in range(h.shape[0]):
        prev = a[t] * prev + u[t]
        h[t] = prev
    return h


@dataclass
class ScanStats:
    chunks: int = 0
    fallback_chunks: int = 0


def scan_chunked(a: np.ndarray, u: np.ndarray, chunk: int = DEFAULT_CHUNK, stats: ScanStats | None = None) -> np.ndarray:
    """Chunked ratio-sum evaluation of the gated recurrence along axis 0.

    Chunks whose cumulative retention leaves the normal floating-point range
    are evaluated sequentially from their carried-in state instead.
    """
    a = np.asarray(a)
    u = np.asarray(u)
    L = u.shape[0]
    rest = u.shape[1:]
    dtype = np.result_type(a, u)
    n = -(-L // chunk)
    pad = n * chunk - L
    if pad:
        a = np.concatenate([a, np.ones((pad,) + rest, dtype=dtype)])
        u = np.concatenate([u, np.zeros((pad,) + rest, dtype=dtype)])
    ab = a.reshape((n, chunk) + rest)
    ub = u.reshape((n, chunk) + rest)

    P = np.multiply.accumulate(ab, axis=1)
    tiny = np.finfo(dtype).tiny
    with np.errstate(all="ignore"):
        h = P * np.add.accumulate(ub / P, axis=1)
    # P_0 * (u_0 / P_0) is u_0 algebraically; store it exactly
    h[:, 0] = ub[:, 0]
    red = tuple(range(1, h.ndim))
    bad = ~(np.isfinite(h).all(axis=red) & (P >= tiny).all(axis=red))

    carry = np.zeros(rest, dtype=dtype)
    for c in range(n):
        if bad[c]:
            prev = carry
            for t in range(chunk):
                prev = ab[c, t] * prev + ub[c, t]
                h[c, t] = prev
        else:
            h[c] += P[c] * carry
        carry = h[c, -1]
    if stats is not None:
        stats.chunks += n
        stats.fallback_chunks += int(bad.sum())
    return h.reshape((n * chunk,) + rest)[:L]


def _scan_vjp_gates(a: np.ndarray) -> np.ndarray:
    """Gates of the reversed adjoint recurrence mu_t = g_t + a_{t+1} mu_{t+1}."""
    rev = a[::-1]
    return np.concatenate([np.ones_like(rev[:1]), rev[:-1]])


def linear_scan(a: Tensor, u: Tensor, chunk: int = DEFAULT_CHUNK) -> Tensor:
    """Differentiable chunked scan; ``a`` and ``u`` are (L, ...) with equal shapes."""
    if a.shape != u.shape:
        raise ShapeError(f"scan gates {a.shape} and drive {u.shape} differ")
    if a.shape[0] < 1:
        raise ShapeError("scan needs at least one step")
    av, uv = a.numpy(), u.numpy()
    h = scan_chunked(av, uv, chunk)

    def vjp(g):
        mu = scan_chunked(_scan_vjp_gates(av), g[::-1], chunk)[::-1]
        h_prev = np.concatenate([np.zeros_like(h[:1]), h[:-1]])
        return mu * h_prev, np.ascontiguousarray(mu)

    return custom_op(h, (a, u), vjp)


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class DirectionalTransition:
    a_forward: Tensor
    a_lateral: Tensor
    a_backward: Tensor
    logits_raster: Tensor
    logits_zigzag: Tensor

    def logits(self, pattern: str) -> Tensor:
        if pattern == "raster":
            return self.logits_raster
        if pattern == "zigzag":
            return self.logits_zigzag
        raise ValueError(f"unknown scan pattern {pattern!r}")

    def weights(self, pattern: str) -> Tensor:
        return softmax(self.logits(pattern))


@dataclass(frozen=True)
class DecayParams:
    lam_raw: Tensor  # softplus(lam_raw) is the decay rate
    d_max: float

    @property
    def lam(self) -> Tensor:
        return softplus(self.lam_raw)


@dataclass(frozen=True)
class ScanSequences:
    B: Tensor
    C: Tensor
    Delta: Tensor
    d: np.ndarray


@dataclass(frozen=True)
class ScanState:
    u: np.ndarray
    A_t: np.ndarray
    P: np.ndarray
    h: np.ndarray


@dataclass(frozen=True)
class AwareSSMParams:
    transition: DirectionalTransition
    decay: DecayParams
    w_b: Tensor  # (C, d_state)
    w_c: Tensor
    w_delta: Tensor
    w_out: Tensor  # (d_state, C)
    chunk: int = DEFAULT_CHUNK

    @property
    def d_state(self) -> int:
        return self.w_b.shape[1]


def inverse_softplus(y: float) -> float:
    return math.log(math.expm1(y))


def init_transition(rng: np.random.Generator, d_state: int = DEFAULT_D_STATE, dtype=np.float64) -> DirectionalTransition:
    ramp = np.linspace(-0.5, 0.5, d_state)

    def vec(center):
        return Tensor(center + ramp + 0.01 * rng.standard_normal(d_state), dtype=dtype)

    return DirectionalTransition(
        a_forward=vec(2.0),
        a_lateral=vec(1.0),
        a_backward=vec(0.0),
        logits_raster=Tensor(np.log(INIT_WEIGHTS["raster"]), dtype=dtype),
        logits_zigzag=Tensor(np.log(INIT_WEIGHTS["zigzag"]), dtype=dtype),
    )


def init_aware_ssm(
    rng: np.random.Generator,
    channels: int,
    d_max: float,
    d_state: int = DEFAULT_D_STATE,
    chunk: int = DEFAULT_CHUNK,
    dtype=np.float64,
) -> AwareSSMParams:
    def mat(n_in, n_out, gain=1.0):
        return Tensor(gain * rng.standard_normal((n_in, n_out)) / math.sqrt(n_in), dtype=dtype)

    return AwareSSMParams(
        transition=init_transition(rng, d_state, dtype),
        decay=DecayParams(Tensor(inverse_softplus(INIT_LAMBDA), dtype=dtype), float(d_max)),
        w_b=mat(channels, d_state),
        w_c=mat(channels, d_state),
        w_delta=mat(channels, d_state, 0.1),
        w_out=mat(d_state, channels),
        chunk=chunk,
    )


# --------------------------------------------------------------------------
# operations


def combine_transitions(dt: DirectionalTransition, pattern: str) -> Tensor:
    w = dt.weights(pattern)
    return w[0] * dt.a_forward + w[1] * dt.a_lateral + w[2] * dt.a_backward


def decay_factor(d: np.ndarray, lam: Tensor, d_max: float) -> Tensor:
    """exp(-lam * d / d_max) as an (L, 1) column."""
    ratio = Tensor((np.asarray(d, dtype=np.float64) / d_max)[:, None], dtype=lam.dtype)
    return exp(-(ratio * lam))


def distance_decay(x: Tensor, d: np.ndarray, lam, d_max: float) -> Tensor:
    """Attenuate each sequence row by its distance from the ego vehicle."""
    d = np.asarray(d, dtype=np.float64)
    if d.shape != (x.shape[0],):
        raise ShapeError(f"distances {d.shape} do not match sequence {x.shape}")
    if d_max <= 0:
        raise ValueError(f"d_max must be > 0, got {d_max}")
    if (d > d_max).any():
        log.warning("clamping %d distances above d_max=%g", int((d > d_max).sum()), d_max)
        d = np.minimum(d, d_max)
    if not isinstance(lam, Tensor):
        lam = Tensor(lam, dtype=x.dtype)
    return x * decay_factor(d, lam, d_max)


def scan_parallel(seq: ScanSequences, A: Tensor, chunk: int = DEFAULT_CHUNK) -> Tensor:
    u = seq.B * seq.C
    gates = sigmoid(seq.Delta + A)
    return linear_scan(gates, u, chunk)


def scan_state(seq: ScanSequences, A: Tensor) -> ScanState:
    """Intermediate quantities of the recurrence, with global cumulative retention."""
    u = seq.B * seq.C
    gates = sigmoid(seq.Delta + A)
    P = reduce("cumprod", gates, axis=0)
    h = scan_chunked(gates.numpy(), u.numpy())
    return ScanState(u.numpy(), gates.numpy(), P.numpy(), h)


def project(x_seq: Tensor, d: np.ndarray, params: AwareSSMParams, d_max: float | None = None) -> ScanSequences:
    d_max = params.decay.d_max if d_max is None else d_max
    xd = distance_decay(x_seq, d, params.decay.lam, d_max)
    return ScanSequences(xd @ params.w_b, xd @ params.w_c, xd @ params.w_delta, np.asarray(d))


def aware_ssm_forward(
    x_seq: Tensor, d: np.ndarray, pattern: str, params: AwareSSMParams, d_max: float | None = None
) -> Tensor:
    """Decay, project to B/C/Delta, gated scan, project back to C channels.

    ``d_max`` overrides the normalizing distance stored in ``params``.
    """
    if x_seq.ndim != 2 or x_seq.shape[1] != params.w_b.shape[0]:
        raise ShapeError(f"sequence {x_seq.shape} does not match {params.w_b.shape[0]} channels")
    seq = project(x_seq, d, params, d_max)
    A = combine_transitions(params.transition, pattern)
    h = scan_parallel(seq, A, params.chunk)
    return h @ params.w_out
