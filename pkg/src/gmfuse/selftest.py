"""Invariant suites run by ``gmfuse selftest``.

Every suite takes a seed and returns a short detail string; it raises
``AssertionError`` (or anything else) on failure. ``run_selftest`` turns the
outcomes into a JSON-serializable report.
"""

from __future__ import annotations

import math
import time
import traceback
from dataclasses import asdict, dataclass

import numpy as np

from . import aware_ssm, oracles
from .bench import grid_shape
from .bev_block import adaptive_fuse, block_forward, init_block, init_fusion_mlp
from .bev_encoding import bev_encoding
from .flops import attention_flops, block_flops
from .gradcheck import check_gradients, select_paths
from .pillars import GridConfig, PointCloud, covariance, jacobi_eigenvalues, pillarize, shape_descriptors
from .scan_order import deserialize, max_step, scan_order, serialize
from .tensor import Tensor

SUITES = {}


def suite(name):
    def register(fn):
        SUITES[name] = fn
        return fn
    return register


@dataclass
class SuiteResult:
    name: str
    passed: bool
    seed: int
    seconds: float
    detail: str


# --------------------------------------------------------------------------


@suite("scan-oracle")
def _scan_oracle(seed: int) -> str:
    rng = np.random.default_rng(seed)
    worst = 0.0
    cases = [(L, ds) for L in (1, 2, 16, 256, 1024) for ds in (1, 16)]
    for L, ds in cases:
        gates = 1 / (1 + np.exp(-rng.normal(1.0, 2.0, (L, ds))))
        u = rng.standard_normal((L, ds))
        ref = aware_ssm.scan_sequential(gates, u)
        got = aware_ssm.scan_chunked(gates, u)
        worst = max(worst, float(np.abs(got - ref).max() / max(np.abs(ref).max(), 1e-300)))
    stress_gates = np.full((512, 4), 1 / (1 + math.exp(20.0)))
    u = rng.standard_normal((512, 4))
    stats = aware_ssm.ScanStats()
    got = aware_ssm.scan_chunked(stress_gates, u, stats=stats)
    ref = aware_ssm.scan_sequential(stress_gates, u)
    worst = max(worst, float(np.abs(got - ref).max() / np.abs(ref).max()))
    assert worst <= 1e-5, f"max rel err {worst:.3e}"
    assert stats.fallback_chunks > 0, "stress case did not exercise the fallback"
    return f"max rel err {worst:.2e}"


@suite("recurrence-identity")
def _recurrence(seed: int) -> str:
    h = aware_ssm.scan_chunked(np.full((64, 1), 0.5), np.ones((64, 1)))[:, 0]
    t = np.arange(1, 65)
    err = float(np.abs(h - 2 * (1 - 0.5 ** t)).max())
    assert err <= 1e-10, f"max abs err {err:.3e}"
    return f"max abs err {err:.1e}"


@suite("serialization-bijectivity")
def _bijectivity(seed: int) -> str:
    rng = np.random.default_rng(seed)
    n = 0
    for H in range(1, 65, 3):
        for W in range(1, 65, 5):
            x = Tensor(rng.standard_normal((H, W, 2)))
            for pattern in ("raster", "zigzag"):
                order = scan_order(pattern, H, W)
                back = deserialize(serialize(x, order), order).numpy()
                assert np.array_equal(back, x.numpy()), f"{pattern} {H}x{W} round trip differs"
                n += 1
    return f"{n} round trips"


@suite("zigzag-adjacency")
def _adjacency(seed: int) -> str:
    for H in range(1, 65, 7):
        for W in range(1, 65, 3):
            order = scan_order("zigzag", H, W)
            assert order.cells() == oracles.zigzag_cells(H, W), f"zigzag {H}x{W} differs from oracle"
            if H * W > 1:
                assert max_step(order) == 1, f"zigzag {H}x{W} has a jump"
    return "all steps have Manhattan length 1"


@suite("pillar-permutation")
def _pillar_perm(seed: int) -> str:
    rng = np.random.default_rng(seed)
    cfg = GridConfig(rho=1.0, x_min=0.0, x_max=8.0, y_min=-4.0, y_max=4.0)
    n = 2000
    pc = PointCloud(
        np.column_stack([rng.uniform(0, 8, n), rng.uniform(-4, 4, n), rng.normal(0, 1, n)]),
        rng.uniform(0, 1, n), rng.integers(0, 64, n),
    )
    a = pillarize(pc, cfg).features.numpy()
    b = pillarize(pc.take(rng.permutation(n)), cfg).features.numpy()
    assert np.array_equal(a, b), "features change under point permutation"
    return f"{n} points, bitwise equal"


@suite("descriptor-simplex")
def _simplex(seed: int) -> str:
    rng = np.random.default_rng(seed)
    worst_sum = worst_eig = 0.0
    for _ in range(200):
        m = int(rng.integers(3, 40))
        xyz = rng.standard_normal((m, 3)) * rng.uniform(0.01, 2.0, 3)
        lam = jacobi_eigenvalues(covariance(xyz))
        ref = oracles.eigvalsh_cubic(covariance(xyz))
        worst_eig = max(worst_eig, float(np.abs(lam - ref).max() / max(ref[0], 1e-300)))
        worst_sum = max(worst_sum, abs(shape_descriptors(xyz)[:3].sum() - 1))
    line = np.outer(np.linspace(0, 1, 20), [1.0, 2.0, 0.5]) + 1e-4 * rng.standard_normal((20, 3))
    lin = shape_descriptors(line)[0]
    assert worst_sum <= 1e-10, f"descriptor sum off by {worst_sum:.3e}"
    assert worst_eig <= 1e-8, f"eigenvalues off by {worst_eig:.3e}"
    assert lin >= 0.999, f"collinear linearity {lin}"
    return f"sum err {worst_sum:.1e}, eig err {worst_eig:.1e}"


@suite("decay-monotonicity")
def _decay(seed: int) -> str:
    rng = np.random.default_rng(seed)
    d_max = 40.0
    lam = Tensor(1.3)
    d = np.sort(rng.uniform(0, d_max, 500))
    d = np.concatenate([[0.0], d, [d_max]])
    f = aware_ssm.distance_decay(Tensor(np.ones((len(d), 1))), d, lam, d_max).numpy()[:, 0]
    assert f[0] == 1.0, f"decay(0) = {f[0]!r}"
    assert abs(f[-1] - math.exp(-1.3)) <= 1e-12, f"decay(d_max) = {f[-1]!r}"
    steps = np.diff(f)[np.diff(d) > 0]
    assert (steps < 0).all(), "decay is not strictly decreasing in distance"
    return "decay(0)=1, decay(d_max)=e^-lam, strictly decreasing"


@suite("directional-init")
def _directional(seed: int) -> str:
    p = aware_ssm.init_aware_ssm(np.random.default_rng(seed), 8, 10.0)
    w = p.transition.weights("raster").numpy()
    assert w[0] > w[1] > w[2], f"raster weights {w}"
    return f"raster weights {np.round(w, 3).tolist()}"


@suite("fusion-convexity")
def _convexity(seed: int) -> str:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        C = 4 * int(rng.integers(1, 5))
        mlp = init_fusion_mlp(rng, C)
        mlp = type(mlp)(mlp.w1, Tensor(rng.standard_normal(mlp.b1.shape)), Tensor(3 * rng.standard_normal(mlp.w2.shape)), mlp.b2)
        x = Tensor(rng.standard_normal((4, 4, C)))
        out, w = adaptive_fuse([x] * 4, mlp)
        worst = max(worst, float(np.abs(out.numpy() - x.numpy()).max()))
        wn = w.numpy()
        assert (wn >= 0).all() and abs(wn.sum() - 1) <= 1e-6, f"weights {wn}"
    assert worst <= 1e-12, f"identical branches fuse with error {worst:.3e}"
    return f"max deviation {worst:.1e}"


@suite("gradient-check")
def _gradients(seed: int) -> str:
    rng = np.random.default_rng(seed)
    cfg = GridConfig(rho=1.0, x_min=0.0, x_max=8.0, y_min=-4.0, y_max=4.0)
    pe = bev_encoding(cfg, 8)
    params = init_block(rng, 8, pe.polar.d_max, d_state=4, chunk=16)
    x = Tensor(rng.standard_normal((8, 8, 8)))
    target = rng.standard_normal((8, 8, 8))

    def loss(p):
        out = block_forward(x, pe, p)
        return ((out - Tensor(target)) * (out - Tensor(target))).mean()

    paths = select_paths(params, ["lam_raw", "logits_", "fusion.", "gate"])
    errs = check_gradients(loss, params, paths)
    worst = max(errs, key=errs.get)
    assert errs[worst] <= 1e-4, f"{worst}: rel err {errs[worst]:.3e}"
    return f"{len(paths)} tensors, worst {worst} {errs[worst]:.1e}"


@suite("flop-scaling")
def _flops(seed: int) -> str:
    ns = (1024, 4096, 16384, 65536)
    for a, b in zip(ns, ns[1:]):
        ha, wa = grid_shape(a)
        hb, wb = grid_shape(b)
        assert block_flops(hb, wb, 16).terms[1] == 4 * block_flops(ha, wa, 16).terms[1], f"block {a}->{b}"
        assert attention_flops(b, 16).terms[2] == 16 * attention_flops(a, 16).terms[2], f"attention {a}->{b}"
    return "leading terms scale 4x and 16x per 4x N"


@suite("encoding-bounds")
def _encoding(seed: int) -> str:
    cfg = GridConfig(rho=2.0, x_min=0.0, x_max=16.0, y_min=-8.0, y_max=8.0)
    pe = bev_encoding(cfg, 16).enc.numpy()
    assert np.isfinite(pe).all() and np.abs(pe).max() <= 1.0, "encoding outside [-1, 1]"
    pairs = pe.reshape(-1, 8, 2)
    assert np.allclose((pairs ** 2).sum(-1), 1.0, atol=1e-12), "sin/cos pairs are not unit length"
    return "values bounded, sin/cos pairs unit norm"


# --------------------------------------------------------------------------


def run_selftest(seed: int = 0, names=None, log=None) -> dict:
    results = []
    for i, (name, fn) in enumerate(SUITES.items()):
        if names and name not in names:
            continue
        s = seed + i
        start = time.perf_counter()
        try:
            detail = fn(s)
            passed = True
        except Exception as exc:  # any failure is reported, not raised
            passed = False
            detail = f"{type(exc).__name__}: {exc}" if str(exc) else traceback.format_exc(limit=1).strip()
        res = SuiteResult(name, passed, s, round(time.perf_counter() - start, 4), detail)
        results.append(res)
        if log:
            log(f"{'PASS' if passed else 'FAIL'} {name} (seed {s}): {detail}")
    return {
        "passed": all(r.passed for r in results),
        "n_suites": len(results),
        "n_failed": sum(not r.passed for r in results),
        "suites": [asdict(r) for r in results],
    }
