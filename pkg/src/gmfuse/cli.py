"""gmfuse command line: pillarize, forward, selftest, bench.

Exit codes: 0 success, 1 validation error (bad file, config or shapes),
2 invariant failure (selftest failure or non-finite values).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .bench import DEFAULT_SWEEP, run_bench, validate_sweep, write_bench_csv
from .gm_fusion import init_network, network_forward
from .io import FormatError, RunConfig, load_run_config, read_point_cloud, read_tensor, write_summary, write_tensor
from .pillars import ConfigError, pillarize
from .selftest import run_selftest
from .tensor import NonFiniteError, ShapeError, Tensor

EXIT_OK, EXIT_INVALID, EXIT_INVARIANT = 0, 1, 2

log = logging.getLogger("gmfuse")


def _summary_path(output: Path) -> Path:
    return output.with_name(output.name + ".summary.txt")


def _resolve_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    return cfg.with_overrides(seed=args.seed, threads=args.threads)


def cmd_pillarize(input_path, cfg: RunConfig, output) -> dict:
    output = Path(output)
    pc = read_point_cloud(input_path)
    grid = pillarize(pc, cfg.grid(), threads=cfg.threads)
    write_tensor(output, grid.features.numpy())
    items = {
        "input": str(input_path),
        "points": len(pc),
        "dims": "x".join(map(str, grid.features.shape)),
        "occupied_pillars": grid.occupied,
        "assigned_points": int(grid.occupancy.sum()),
        "dropped_points": grid.dropped,
    }
    write_summary(_summary_path(output), items, cfg)
    return items


def image_stand_in(cfg: RunConfig, H: int, W: int) -> np.ndarray:
    """Seeded synthetic RGB-like input; no camera data ships with the package."""
    rng = np.random.default_rng([cfg.seed, 1])
    return rng.standard_normal((H, W, 3))


def cmd_forward(input_path, cfg: RunConfig, output) -> dict:
    output = Path(output)
    grid = read_tensor(input_path)
    gc = cfg.grid()
    if grid.shape[:2] != (gc.H, gc.W):
        raise ShapeError(f"{input_path}: grid dims {grid.shape[0]}x{grid.shape[1]} do not match config {gc.H}x{gc.W}")
    params = init_network(
        np.random.default_rng(cfg.seed), gc, cfg.channels, in_channels=grid.shape[2],
        d_state=cfg.d_state, chunk=cfg.chunk_len, pe_base=cfg.pe_base,
    )
    start = time.perf_counter()
    out = network_forward(
        Tensor(grid), Tensor(image_stand_in(cfg, gc.H, gc.W)), params, gc, cfg.pe_base, cfg.threads
    ).numpy()
    elapsed = time.perf_counter() - start
    write_tensor(output, out)
    items = {
        "input": str(input_path),
        "dims": "x".join(map(str, out.shape)),
        "mean": f"{out.mean():.17g}",
        "abs_max": f"{np.abs(out).max():.17g}",
        "sha256": hashlib.sha256(output.read_bytes()).hexdigest(),
        "seconds": f"{elapsed:.3f}",
    }
    write_summary(_summary_path(output), items, cfg)
    return items


def cmd_selftest(cfg: RunConfig, output=None) -> dict:
    report = run_selftest(seed=cfg.seed, log=print)
    report["config"] = cfg.to_text().splitlines()
    if output:
        Path(output).write_text(json.dumps(report, indent=2) + "\n")
    return report


def cmd_bench(cfg: RunConfig, sweep, output) -> dict:
    records, slopes = run_bench(
        sweep, channels=cfg.channels, d_state=cfg.d_state, chunk=cfg.chunk_len, seed=cfg.seed,
        threads=cfg.threads, pe_base=cfg.pe_base, log=print,
    )
    write_bench_csv(output, records, slopes, cfg.to_text())
    return slopes


def _parse_sweep(text: str) -> list[int]:
    try:
        return validate_sweep(int(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise ConfigError("sweep", str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gmfuse", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("pillarize", "forward", "selftest", "bench"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="key=value run config")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--output", type=Path, required=name in ("pillarize", "forward"))
        if name in ("pillarize", "forward"):
            p.add_argument("--input", type=Path, required=True)
        if name == "bench":
            p.add_argument("--sweep", default=",".join(map(str, DEFAULT_SWEEP)))
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.command == "pillarize":
            items = cmd_pillarize(args.input, cfg, args.output)
            print(f"occupied pillars: {items['occupied_pillars']}, dropped points: {items['dropped_points']}")
        elif args.command == "forward":
            items = cmd_forward(args.input, cfg, args.output)
            print(f"wrote {args.output} ({items['dims']}) sha256 {items['sha256'][:16]}")
        elif args.command == "selftest":
            report = cmd_selftest(cfg, args.output)
            print(f"{report['n_suites'] - report['n_failed']}/{report['n_suites']} suites passed")
            if not report["passed"]:
                return EXIT_INVARIANT
        else:
            sweep = _parse_sweep(args.sweep)
            slopes = cmd_bench(cfg, sweep, args.output or Path("bench.csv"))
            for mech, s in slopes.items():
                print(f"slope[{mech}] = {s:.3f}")
    except (ConfigError, FormatError, ShapeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NonFiniteError as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
