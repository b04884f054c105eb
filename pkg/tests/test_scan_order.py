import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gmfuse import oracles
from gmfuse.scan_order import deserialize, max_step, raster_order, scan_order, serialize, serialize_array, zigzag_order
from gmfuse.tensor import GradTape, ShapeError, Tensor, backward

dims = st.integers(1, 32)


def test_small_enumerations():
    assert raster_order(2, 2).cells() == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert zigzag_order(2, 2).cells() == [(0, 0), (0, 1), (1, 1), (1, 0)]
    assert zigzag_order(3, 3).cells() == [(0, 0), (0, 1), (0, 2), (1, 2), (1, 1), (1, 0), (2, 0), (2, 1), (2, 2)]
    assert raster_order(3, 3).cells() == oracles.raster_cells(3, 3)
    assert raster_order(1, 7).perm.tolist() == list(range(7))


def test_zigzag_start_flag():
    assert zigzag_order(2, 3, start_left=False).cells() == [(0, 2), (0, 1), (0, 0), (1, 0), (1, 1), (1, 2)]


def test_zero_dimension_rejected():
    with pytest.raises(ValueError):
        raster_order(0, 3)
    with pytest.raises(ValueError):
        zigzag_order(3, 0)
    with pytest.raises(ValueError):
        scan_order("hilbert", 2, 2)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        serialize(Tensor(np.zeros((3, 4, 2))), raster_order(4, 3))
    with pytest.raises(ShapeError):
        deserialize(Tensor(np.zeros((11, 2))), raster_order(4, 3))


def test_raster_row_boundary_jump():
    order = raster_order(5, 9)
    u, v = np.divmod(order.perm, order.W)
    assert np.abs(np.diff(v)).max() == 9 - 1
    assert max_step(order) == 9


def test_raster_is_row_major_copy(rng):
    x = rng.standard_normal((4, 6, 3))
    seq = serialize(Tensor(x), raster_order(4, 6)).numpy()
    assert np.array_equal(seq, x.reshape(24, 3))


def test_constant_tensor():
    seq = serialize(Tensor(np.full((5, 3, 2), 1.25)), zigzag_order(5, 3)).numpy()
    assert (seq == 1.25).all()


def test_exhaustive_zigzag_adjacency():
    for H in range(1, 65):
        for W in range(1, 65):
            if H * W > 1:
                assert max_step(zigzag_order(H, W)) == 1


def test_serialize_gradient_is_permutation(rng):
    x = Tensor(rng.standard_normal((3, 4, 2)))
    w = rng.standard_normal((12, 2))
    with GradTape() as tape:
        tape.watch(x)
        out = (serialize(x, zigzag_order(3, 4)) * Tensor(w)).sum()
    (g,) = backward(tape, out)
    assert np.array_equal(serialize_array(g.numpy(), zigzag_order(3, 4)), w)


@given(dims, dims, st.sampled_from(["raster", "zigzag"]), st.integers(0, 2**32 - 1))
def test_round_trip_and_multiset(H, W, pattern, seed):
    x = np.random.default_rng(seed).standard_normal((H, W, 3))
    order = scan_order(pattern, H, W)
    seq = serialize(Tensor(x), order)
    assert np.array_equal(deserialize(seq, order).numpy(), x)
    assert np.array_equal(np.sort(seq.numpy(), axis=None), np.sort(x, axis=None))
    assert np.array_equal(np.sort(order.perm), np.arange(H * W))
    assert np.array_equal(order.inv[order.perm], np.arange(H * W))


@given(dims, dims)
def test_zigzag_matches_loop_oracle(H, W):
    assert zigzag_order(H, W).cells() == oracles.zigzag_cells(H, W)
    assert raster_order(H, W).cells() == oracles.raster_cells(H, W)
