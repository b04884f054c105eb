import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gmfuse import oracles
from gmfuse.pillars import (
    ConfigError,
    GridConfig,
    LidarPoint,
    PointCloud,
    assign,
    covariance,
    intensity_stats,
    jacobi_eigenvalues,
    pillar_features,
    pillarize,
    pooled_features,
    shape_descriptors,
)

SMALL = GridConfig(rho=1.0, x_min=0.0, x_max=8.0, y_min=-4.0, y_max=4.0)


def random_cloud(rng, n, cfg=SMALL, margin=0.0):
    return PointCloud(
        np.column_stack([
            rng.uniform(cfg.x_min - margin, cfg.x_max + margin, n),
            rng.uniform(cfg.y_min - margin, cfg.y_max + margin, n),
            rng.normal(0.0, 1.0, n),
        ]),
        rng.uniform(0, 1, n),
        rng.integers(0, 64, n),
    )


def test_default_grid_is_128_square():
    cfg = GridConfig()
    assert (cfg.H, cfg.W) == (128, 128)
    assert cfg.resolution == 0.25


def test_config_rejects_fractional_cells():
    with pytest.raises(ConfigError) as err:
        GridConfig(rho=3.0, x_min=0.0, x_max=1.1)
    assert err.value.key == "x_max"
    with pytest.raises(ConfigError, match="rho"):
        GridConfig(rho=0.0)


def test_point_validation():
    with pytest.raises(ValueError):
        LidarPoint(0.0, 0.0, 0.0, -1.0, 0)
    with pytest.raises(ValueError):
        LidarPoint(0.0, 0.0, 0.0, 0.5, 256)
    with pytest.raises(ValueError):
        PointCloud(np.zeros((1, 3)), [0.5], [300])


def test_half_open_bounds():
    pc = PointCloud(np.array([[0.0, -4.0, 0.0], [8.0, 0.0, 0.0], [7.999, 3.999, 0.0]]), np.zeros(3), np.zeros(3, int))
    asg = assign(pc, SMALL)
    occ = asg.occupancy()
    assert occ[0, 0] == 1 and occ[7, 7] == 1
    assert asg.dropped == 1


def test_conservation_on_large_cloud(rng):
    pc = random_cloud(rng, 10**5, GridConfig(), margin=5.0)
    grid = pillarize(pc, GridConfig())
    assert grid.occupancy.sum() + grid.dropped == 10**5


def test_uniform_in_bounds_cloud_fully_assigned(rng):
    pc = random_cloud(rng, 10**5, GridConfig())
    assert assign(pc, GridConfig()).occupancy().sum() == 10**5


def test_empty_cloud():
    grid = pillarize(PointCloud.empty(), SMALL)
    assert not grid.features.numpy().any() and not grid.occupancy.any()


def test_pooled_examples():
    f = pooled_features(np.array([[1.5, 2.5, 0.3, 0.2, 7.0]]), (1.5, 2.5))
    assert f[5:].tolist() == [0.0, 0.0, 0.0]
    f = pooled_features(np.array([[0.0, 0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 3.0, 0.0, 0.0]]), (0.0, 0.0))
    assert f[7] == 1.0


def test_intensity_examples():
    assert intensity_stats(np.full(5, 0.7)).tolist() == [0.7, 0.0]
    assert intensity_stats(np.array([0.0, 2.0])).tolist() == [1.0, 1.0]


def test_pooled_matches_loop_oracle(rng):
    pts = np.column_stack([rng.uniform(0, 1, (50, 4)), rng.integers(0, 64, 50)])
    center = (0.5, 0.5)
    ref = oracles.pillar_reference([tuple(p) for p in pts], center)
    assert pooled_features(pts, center).tolist() == ref[:8]


def test_stats_match_two_pass_oracle(rng):
    r = rng.uniform(0, 5, 100)
    pts = [(0.0, 0.0, 0.0, float(v), 0) for v in r]
    ref = oracles.pillar_reference(pts, (0.0, 0.0))[8:]
    np.testing.assert_allclose(intensity_stats(r), ref, rtol=1e-12)


def test_collinear_descriptors():
    xyz = np.outer(np.linspace(-1, 1, 10), [1.0, -2.0, 0.5])
    lin, pla, sph, ani = shape_descriptors(xyz)
    assert lin == pytest.approx(1.0, abs=1e-12)
    assert pla == pytest.approx(0.0, abs=1e-12) and sph == pytest.approx(0.0, abs=1e-12)
    assert ani == pytest.approx(1.0, abs=1e-12)


def test_ball_sample_is_spherical(rng):
    v = rng.standard_normal((10**4, 3))
    v *= (rng.uniform(0, 1, 10**4) ** (1 / 3) / np.linalg.norm(v, axis=1))[:, None]
    lam = np.sort(np.linalg.eigvalsh(covariance(v)))[::-1]
    ref_sph = lam[2] / lam[0]
    desc = shape_descriptors(v)
    assert desc[2] == pytest.approx(ref_sph, abs=0.05) and desc[2] > 0.9
    assert desc[3] < 0.1


def test_eigenvalues_match_cubic_oracle(rng):
    for _ in range(50):
        cov = covariance(rng.standard_normal((20, 3)) * rng.uniform(0.1, 3, 3))
        np.testing.assert_allclose(jacobi_eigenvalues(cov), oracles.eigvalsh_cubic(cov), rtol=0, atol=1e-8)


def test_degenerate_descriptors_are_zero():
    assert shape_descriptors(np.ones((2, 3))).tolist() == [0.0] * 4
    assert shape_descriptors(np.ones((5, 3))).tolist() == [0.0] * 4


def test_batched_path_matches_single_pillar_reference(rng):
    pc = random_cloud(rng, 3000, SMALL)
    grid = pillarize(pc, SMALL)
    asg = assign(pc, SMALL)
    xc, yc = SMALL.cell_centers()
    pts = pc.as_array()
    for cell in asg.cells[:20]:
        u, v = divmod(int(cell), SMALL.W)
        ref = pillar_features(pts[asg.indices(u, v)], (xc[u], yc[v]))
        np.testing.assert_allclose(grid.features.numpy()[u, v], ref, rtol=1e-12, atol=1e-14)


def test_thread_count_does_not_change_grid(rng):
    pc = random_cloud(rng, 5000, SMALL)
    a = pillarize(pc, SMALL, threads=1).features.numpy()
    b = pillarize(pc, SMALL, threads=4).features.numpy()
    assert np.array_equal(a, b)


@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    pc = random_cloud(rng, 400, SMALL)
    a = pillarize(pc, SMALL).features.numpy()
    b = pillarize(pc.take(rng.permutation(len(pc))), SMALL).features.numpy()
    assert np.array_equal(a[..., :8], b[..., :8])
    np.testing.assert_allclose(a[..., 8:], b[..., 8:], rtol=1e-12, atol=0)


@given(st.integers(0, 2**32 - 1), st.integers(3, 60))
def test_descriptor_simplex_and_translation(seed, m):
    rng = np.random.default_rng(seed)
    xyz = rng.standard_normal((m, 3)) * rng.uniform(0.01, 2, 3)
    pts = np.column_stack([xyz, rng.uniform(0, 1, m), np.zeros(m)])
    f = pillar_features(pts, (0.0, 0.0))
    assert abs(f[10:13].sum() - 1) <= 1e-10
    assert ((f[10:] >= 0) & (f[10:] <= 1)).all()
    shifted = pts.copy()
    shifted[:, :3] += rng.uniform(-50, 50, 3)
    g = pillar_features(shifted, (0.0, 0.0))
    np.testing.assert_allclose(g[9:], f[9:], atol=1e-10)
