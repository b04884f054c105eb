import numpy as np
import pytest

from gmfuse.io import (
    FormatError,
    RunConfig,
    load_run_config,
    parse_run_config,
    read_point_cloud,
    read_tensor,
    write_point_cloud_bin,
    write_point_cloud_csv,
    write_tensor,
)
from gmfuse.pillars import ConfigError, PointCloud


def cloud(rng, n=10):
    return PointCloud(rng.uniform(-5, 5, (n, 3)).astype(np.float32), rng.uniform(0, 1, n).astype(np.float32), rng.integers(0, 256, n))


def test_binary_round_trip(tmp_path, rng):
    pc = cloud(rng)
    write_point_cloud_bin(tmp_path / "a.bin", pc)
    assert (tmp_path / "a.bin").stat().st_size == 200
    back = read_point_cloud(tmp_path / "a.bin")
    assert np.array_equal(back.xyz, pc.xyz) and np.array_equal(back.r, pc.r) and np.array_equal(back.ring, pc.ring)


def test_binary_layout_is_little_endian(tmp_path):
    path = tmp_path / "one.bin"
    path.write_bytes(np.array([1.0, 2.0, 3.0, 0.5], "<f4").tobytes() + np.array([7], "<u4").tobytes())
    pc = read_point_cloud(path)
    assert pc.xyz.tolist() == [[1.0, 2.0, 3.0]] and pc.r.tolist() == [0.5] and pc.ring.tolist() == [7]


def test_truncated_binary(tmp_path):
    path = tmp_path / "t.bin"
    path.write_bytes(b"\0" * 21)
    with pytest.raises(FormatError, match="trailing 1 byte at offset 20"):
        read_point_cloud(path)


def test_invalid_ring_names_offset(tmp_path):
    rec = np.zeros(2, dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("r", "<f4"), ("ring", "<u4")])
    rec["ring"][1] = 300
    path = tmp_path / "r.bin"
    path.write_bytes(rec.tobytes())
    with pytest.raises(FormatError, match="record 1 at offset 20"):
        read_point_cloud(path)


def test_csv_round_trip_and_errors(tmp_path, rng):
    pc = cloud(rng)
    write_point_cloud_csv(tmp_path / "a.csv", pc)
    back = read_point_cloud(tmp_path / "a.csv")
    np.testing.assert_array_equal(back.xyz, pc.xyz)
    (tmp_path / "b.csv").write_text("x,y,z,r,ring\n1,2,3,0.5,1\n1,2,abc,0.5,1\n")
    with pytest.raises(FormatError, match="line 3"):
        read_point_cloud(tmp_path / "b.csv")
    (tmp_path / "c.csv").write_text("x,y,z\n")
    with pytest.raises(FormatError, match="line 1"):
        read_point_cloud(tmp_path / "c.csv")


def test_tensor_format(tmp_path, rng):
    a = rng.standard_normal((3, 4, 5))
    write_tensor(tmp_path / "t.bin", a)
    raw = (tmp_path / "t.bin").read_bytes()
    assert raw[:12] == np.array([3, 4, 5], "<u4").tobytes()
    assert len(raw) == 12 + 4 * 60
    np.testing.assert_array_equal(read_tensor(tmp_path / "t.bin"), a.astype(np.float32))
    (tmp_path / "bad.bin").write_bytes(raw[:-3])
    with pytest.raises(FormatError, match="dims"):
        read_tensor(tmp_path / "bad.bin")


def test_config_parse_and_echo():
    cfg = parse_run_config("rho = 2\n# comment\nchannels=8\nseed=9\n")
    assert (cfg.rho, cfg.channels, cfg.seed) == (2.0, 8, 9)
    assert parse_run_config(cfg.to_text()) == cfg
    assert load_run_config() == RunConfig()


@pytest.mark.parametrize("text,key", [
    ("bogus=1", "bogus"),
    ("channels=6", "channels"),
    ("d_state=x", "d_state"),
    ("rho=3\nx_max=1.1", "x_max"),
    ("threads=0", "threads"),
    ("seed=-1", "seed"),
])
def test_config_errors_name_key(text, key):
    with pytest.raises(ConfigError) as err:
        parse_run_config(text)
    assert err.value.key == key
