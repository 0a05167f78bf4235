"""Command line entry point: ``rafm <subcommand>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from rafm import config as cfgmod
from rafm import datasets, harness
from rafm.blobio import write_samples

log = logging.getLogger("rafm")


def parse_grids(text: str) -> list[tuple[int, int]]:
    grids = []
    for item in text.split(","):
        try:
            ny, nx = (int(v) for v in item.lower().split("x"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad grid {item!r}, expected NYxNX") from None
        grids.append((ny, nx))
    return grids


def _load(path: str, results: str | None) -> cfgmod.ExperimentConfig:
    cfg = cfgmod.load(path)
    return replace(cfg, results=results) if results else cfg


def cmd_prepare_piv(args) -> int:
    source = args.zip or args.dir
    frames, report = datasets.piv_frames(source, args.grids)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for (ny, nx), raw in frames.items():
        # raw subsampled vorticity; scaling and centering happen when a config loads it
        write_samples(out / f"piv_{ny}x{nx}.bin", raw, name=f"piv_{ny}x{nx}",
                      grid_ny=ny, grid_nx=nx)
    summary = {"retained": len(report.retained), "skipped": report.skipped}
    (out / "piv_report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"retained {len(report.retained)} frames, skipped {len(report.skipped)}")
    return 0


def _print_records(records) -> None:
    for r in records:
        status = "ok" if r.ok else f"FAILED in {r.error['stage']}: {r.error['message']}"
        print(f"{r.dataset}/{r.method}/seed_{r.seed}: {status}")


def cmd_run(args) -> int:
    cfg = _load(args.config, args.results)
    records = harness.run_experiment(cfg)
    _print_records(records)
    harness.aggregate(cfg)
    return 1 if harness.any_failed(records) else 0


def cmd_aggregate(args) -> int:
    cfg = _load(args.config, args.results)
    for row in harness.aggregate(cfg):
        cell = row.cells["radial_w1"]
        mean = "n/a" if cell.mean is None else f"{cell.mean:.4f}"
        print(f"{row.method}: radial_w1 {mean} over {len(row.seeds_ok)} seeds {row.flag}".rstrip())
    return 0


def cmd_tables(args) -> int:
    out = args.out or str(Path(args.results) / "tables")
    for path in harness.tables(args.results, out):
        print(path)
    return 0


def cmd_all(args) -> int:
    config_dir = Path(args.configs or ("configs/smoke" if args.profile == "smoke" else "configs"))
    paths = sorted(config_dir.glob("*.cfg"))
    if not paths:
        print(f"no configs in {config_dir}", file=sys.stderr)
        return 2
    failed = False
    roots: list[str] = []
    for path in paths:
        cfg = _load(str(path), args.results)
        if cfg.results not in roots:
            roots.append(cfg.results)
        if cfg.dataset.kind == "piv" and not Path(cfg.dataset.source).exists():
            print(f"skipping {path.name}: {cfg.dataset.source} not found")
            continue
        print(f"== {path.name}")
        records = harness.run_experiment(cfg)
        _print_records(records)
        harness.aggregate(cfg)
        failed |= harness.any_failed(records)
    for root in roots:
        harness.tables(root, Path(root) / "tables")
    return 1 if failed else 0


def cmd_timing(args) -> int:
    cfg = _load(args.config, args.results)
    report = harness.timing(cfg, warmup=args.warmup, timed_steps=args.steps, repeats=args.repeats)
    for method, entry in report["methods"].items():
        print(f"{method}: {entry['train_step_seconds']['mean'] * 1e3:.2f} ms/step")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rafm", description="Radial-angular flow matching experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare-piv", help="parse DaVis frames into vorticity matrices")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--zip", help="archive of Serie_*.txt frames")
    src.add_argument("--dir", help="directory of Serie_*.txt frames")
    s.add_argument("--out_dir", required=True)
    s.add_argument("--grids", type=parse_grids, default=parse_grids("8x4,8x8,16x16"))
    s.set_defaults(func=cmd_prepare_piv)

    for name, func, help_text in (("run", cmd_run, "train, sample and evaluate every run"),
                                  ("aggregate", cmd_aggregate, "mean and std across seeds"),
                                  ("timing", cmd_timing, "training and sampling wall times")):
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", required=True)
        s.add_argument("--results", help="override the results root")
        if name == "timing":
            s.add_argument("--warmup", type=int, default=10)
            s.add_argument("--steps", type=int, default=50)
            s.add_argument("--repeats", type=int, default=3)
        s.set_defaults(func=func)

    s = sub.add_parser("tables", help="rebuild result tables from stored metrics")
    s.add_argument("--results", default="results")
    s.add_argument("--out")
    s.set_defaults(func=cmd_tables)

    s = sub.add_parser("all", help="run every config of a profile, then tables")
    s.add_argument("--profile", choices=("smoke", "full"), default="smoke")
    s.add_argument("--configs", help="directory of .cfg files (overrides the profile)")
    s.add_argument("--results")
    s.set_defaults(func=cmd_all)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (cfgmod.ConfigError, datasets.EmptyDataset, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
