import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gmfuse.bev_encoding import PolarGrid, bev_encoding, default_ego, encode, polar_from_grid, wrap_angle
from gmfuse.pillars import ConfigError, GridConfig

CENTERED = GridConfig(rho=2.0, x_min=-8.0, x_max=8.0, y_min=-6.0, y_max=6.0)


def test_ego_cell_is_origin():
    cfg = GridConfig(rho=1.0, x_min=0.0, x_max=10.0, y_min=-5.0, y_max=5.0)
    xc, yc = cfg.cell_centers()
    pg = polar_from_grid(cfg, ego=(xc[2], yc[4]))
    assert pg.d[2, 4] == 0.0 and pg.theta[2, 4] == 0.0


def test_three_four_five():
    cfg = GridConfig(rho=1.0, x_min=0.0, x_max=10.0, y_min=-5.0, y_max=5.0)
    xc, yc = cfg.cell_centers()
    pg = polar_from_grid(cfg, ego=(xc[1], yc[2]))
    assert pg.d[4, 6] == 5.0  # 3 m forward, 4 m left
    assert pg.theta[4, 6] == pytest.approx(math.atan2(4, 3))


def test_default_ego_and_mirror_symmetry():
    cfg = GridConfig()
    assert default_ego(cfg) == (0.0, 0.0)
    pg = polar_from_grid(cfg)
    np.testing.assert_array_equal(pg.d, pg.d[:, ::-1])
    assert pg.d_max == pytest.approx(math.hypot(31.875, 15.875))


def test_theta_range():
    pg = polar_from_grid(CENTERED)
    assert (pg.theta > -math.pi).all() and (pg.theta <= math.pi).all()
    assert (pg.d >= 0).all()


def test_channel_count_must_divide_by_four():
    with pytest.raises(ConfigError) as err:
        bev_encoding(CENTERED, 6)
    assert err.value.key == "channels"


def test_zero_distance_channels():
    pg = PolarGrid(np.zeros((2, 3)), np.linspace(-1, 1, 6).reshape(2, 3), 10.0)
    enc = encode(pg, 8).enc.numpy()
    assert (enc[..., 0::4] == 0).all() and (enc[..., 1::4] == 1).all()


def test_angle_periodicity():
    pg = polar_from_grid(CENTERED)
    shifted = PolarGrid(pg.d, pg.theta + 2 * math.pi, pg.d_max)
    a = encode(pg, 16).enc.numpy()
    b = encode(shifted, 16).enc.numpy()
    np.testing.assert_array_equal(a[..., 0::4], b[..., 0::4])
    np.testing.assert_allclose(a[..., 2::4], b[..., 2::4], atol=1e-12)
    np.testing.assert_allclose(a[..., 3::4], b[..., 3::4], atol=1e-12)


def test_interleaving_contract():
    pg = polar_from_grid(CENTERED)
    a = encode(pg, 16).enc.numpy()
    b = encode(PolarGrid(np.zeros_like(pg.d), pg.theta, pg.d_max), 16).enc.numpy()
    changed = (a != b).any(axis=(0, 1))
    assert set(np.flatnonzero(changed) % 4) == {0, 1}


def test_frequency_schedule():
    pg = PolarGrid(np.array([[1.0]]), np.array([[0.0]]), 1.0)
    enc = encode(pg, 8, base_d=100.0).enc.numpy()[0, 0]
    assert enc[0] == pytest.approx(math.sin(1.0))
    assert enc[4] == pytest.approx(math.sin(100.0 ** -0.5))


def test_half_turn_rotation():
    pg = polar_from_grid(CENTERED, ego=(0.0, 0.0))
    enc = encode(pg, 8).enc.numpy()
    rot = enc[::-1, ::-1]
    np.testing.assert_array_equal(enc[..., 0::4], rot[..., 0::4])
    np.testing.assert_array_equal(enc[..., 1::4], rot[..., 1::4])
    diff = wrap_angle(pg.theta[::-1, ::-1] - pg.theta - math.pi)
    assert np.abs(diff).max() <= 1e-12


@given(st.sampled_from([4, 8, 16, 32]), st.floats(1.5, 1e5))
def test_bounded_unit_pairs(C, base):
    enc = bev_encoding(CENTERED, C, base).enc.numpy()
    assert np.abs(enc).max() <= 1.0
    pairs = enc.reshape(-1, C // 2, 2)
    np.testing.assert_allclose((pairs ** 2).sum(-1), 1.0, atol=1e-12)


@given(st.floats(-50, 50))
def test_wrap_angle_range(t):
    w = float(wrap_angle(np.array(t)))
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(t), abs_tol=1e-9)
