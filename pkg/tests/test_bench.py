import numpy as np
import pytest

from gmfuse.bench import attention_reference, grid_shape, init_attention, loglog_slope, run_bench, self_attention, time_call, validate_sweep, write_bench_csv


def test_grid_shapes():
    assert grid_shape(1024) == (32, 32)
    assert grid_shape(4096) == (64, 64)
    assert grid_shape(2048) == (64, 32)
    with pytest.raises(ValueError):
        grid_shape(1000)


def test_sweep_validation():
    assert validate_sweep([1024, 4096]) == [1024, 4096]
    for bad in ([512], [1024, 1024], [4096, 1024], [3000]):
        with pytest.raises(ValueError):
            validate_sweep(bad)


def test_tiled_attention_matches_reference(rng):
    x = rng.standard_normal((300, 8)).astype(np.float64)
    p = init_attention(rng, 8, np.float64)
    np.testing.assert_allclose(self_attention(x, p, 64, 100), attention_reference(x, p), atol=1e-12)


def test_slope_of_power_law():
    ns = np.array([1.0, 4.0, 16.0])
    assert loglog_slope(ns, 3 * ns ** 2) == pytest.approx(2.0)


def test_timer_batches_fast_calls():
    calls = []
    t, peak = time_call(lambda: calls.append(1), repeats=3, min_sample=0.001)
    assert len(calls) > 3 and t > 0 and peak >= 0


def test_small_bench_csv(tmp_path):
    records, slopes = run_bench([1024, 4096], channels=8, d_state=4, repeats=1)
    assert [(r.N, r.mechanism) for r in records] == [
        (1024, "bev-ssm"), (1024, "self-attention"), (4096, "bev-ssm"), (4096, "self-attention"),
    ]
    write_bench_csv(tmp_path / "b.csv", records, slopes, "seed=0\n")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "# seed=0"
    assert lines[3] == "N,mechanism,wall_ms,flops,leading_flops,peak_bytes"
    assert len(lines) == 8
