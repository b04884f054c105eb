import json
import subprocess
import sys

import numpy as np
import pytest

from gmfuse import aware_ssm
from gmfuse.cli import main
from gmfuse.io import read_tensor, write_point_cloud_bin, write_tensor
from gmfuse.pillars import PointCloud
from gmfuse.tensor import Tensor, exp

SMALL_CFG = "rho=1\nx_min=0\nx_max=64\ny_min=-32\ny_max=32\nchannels=8\nd_state=4\n"


def kitti_like(rng, n):
    """Ring-structured synthetic sweep: ranges 2-60 m around the sensor."""
    ring = rng.integers(0, 64, n)
    az = rng.uniform(-np.pi, np.pi, n)
    rng_m = rng.uniform(2, 60, n)
    elev = np.deg2rad(-24.8 + ring * 26.8 / 63)
    xyz = np.column_stack([rng_m * np.cos(az), rng_m * np.sin(az), rng_m * np.tan(elev) + 1.7])
    return PointCloud(xyz, rng.uniform(0, 1, n), ring)


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL_CFG)
    return path


def summary(path):
    lines = (path.parent / (path.name + ".summary.txt")).read_text().splitlines()
    return dict(line.split(": ", 1) for line in lines if ": " in line), lines


def test_single_point_file(tmp_path):
    src = tmp_path / "p.bin"
    write_point_cloud_bin(src, PointCloud(np.array([[1.0, 0.5, 0.0]]), [0.3], [2]))
    assert src.stat().st_size == 20
    assert main(["pillarize", "--input", str(src), "--output", str(tmp_path / "g.bin")]) == 0
    info, lines = summary(tmp_path / "g.bin")
    assert info["occupied_pillars"] == "1" and info["dropped_points"] == "0"
    assert "[config]" in lines and "rho=4.0" in lines
    assert read_tensor(tmp_path / "g.bin").shape == (128, 128, 14)


def test_truncated_file_exit_code(tmp_path, capsys):
    src = tmp_path / "t.bin"
    src.write_bytes(b"\0" * 21)
    assert main(["pillarize", "--input", str(src), "--output", str(tmp_path / "g.bin")]) == 1
    assert "trailing 1 byte at offset 20" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("rho=4\nlanes=3\n")
    code = main(["selftest", "--config", str(tmp_path / "bad.cfg")])
    assert code == 1 and "lanes" in capsys.readouterr().err


def test_conservation_on_kitti_like_cloud(tmp_path, rng):
    src = tmp_path / "k.bin"
    write_point_cloud_bin(src, kitti_like(rng, 10**5))
    assert main(["pillarize", "--input", str(src), "--output", str(tmp_path / "g.bin")]) == 0
    info, _ = summary(tmp_path / "g.bin")
    grid = read_tensor(tmp_path / "g.bin")
    assert int(info["dropped_points"]) > 0
    assert int(info["assigned_points"]) + int(info["dropped_points"]) == 10**5
    assert int(info["occupied_pillars"]) == int((grid != 0).any(axis=-1).sum())


def test_kitti_conservation_counts(rng):
    from gmfuse.pillars import GridConfig, pillarize

    grid = pillarize(kitti_like(rng, 10**5), GridConfig())
    assert grid.occupancy.sum() + grid.dropped == 10**5


def test_forward_determinism(tmp_path, rng, cfg_file):
    grid = tmp_path / "g.bin"
    write_tensor(grid, rng.standard_normal((64, 64, 14)))
    outs = []
    for name, threads in (("a", "1"), ("b", "1"), ("c", "8")):
        out = tmp_path / f"{name}.bin"
        assert main(["forward", "--config", str(cfg_file), "--input", str(grid), "--output", str(out), "--threads", threads]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    assert np.frombuffer(outs[0][:12], "<u4").tolist() == [64, 64, 8]
    info, lines = summary(tmp_path / "c.bin")
    assert "threads=8" in lines and info["dims"] == "64x64x8"


def test_forward_seed_changes_output(tmp_path, rng, cfg_file):
    grid = tmp_path / "g.bin"
    write_tensor(grid, rng.standard_normal((64, 64, 14)))
    for seed in ("1", "2"):
        assert main(["forward", "--config", str(cfg_file), "--input", str(grid), "--output", str(tmp_path / f"{seed}.bin"), "--seed", seed]) == 0
    assert (tmp_path / "1.bin").read_bytes() != (tmp_path / "2.bin").read_bytes()


def test_forward_dim_mismatch(tmp_path, rng, cfg_file, capsys):
    write_tensor(tmp_path / "g.bin", rng.standard_normal((32, 64, 14)))
    assert main(["forward", "--config", str(cfg_file), "--input", str(tmp_path / "g.bin"), "--output", str(tmp_path / "o.bin")]) == 1
    assert "do not match" in capsys.readouterr().err


def test_selftest_summary(tmp_path):
    assert main(["selftest", "--output", str(tmp_path / "r.json"), "--seed", "5"]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["passed"] and report["n_suites"] >= 9
    assert "seed=5" in report["config"]


def test_selftest_mutation_exit_code(monkeypatch, capsys):
    monkeypatch.setattr(aware_ssm, "decay_factor", lambda d, lam, d_max: exp(Tensor((d / d_max)[:, None]) * lam))
    assert main(["selftest"]) == 2
    assert "FAIL decay-monotonicity" in capsys.readouterr().out


def test_bench_command(tmp_path, cfg_file):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--config", str(cfg_file), "--sweep", "1024,2048", "--output", str(out)]) == 0
    text = out.read_text()
    assert "# channels=8" in text and "# slope[bev-ssm]=" in text
    assert main(["bench", "--sweep", "1000", "--output", str(out)]) == 1


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "gmfuse.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "pillarize" in proc.stdout
