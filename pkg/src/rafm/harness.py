"""Experiment orchestration: runs, aggregation across seeds, result tables, timing."""
from __future__ import annotations

import csv
import json
import logging
import shutil
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rafm import datasets
from rafm.blobio import read_samples, write_samples
from rafm.config import ExperimentConfig, Variant
from rafm.flow_matching import (
    TrainConfig,
    TrainResult,
    make_batch,
    optimizer_step,
    train,
    training_source,
    write_loss_log,
)
from rafm.metrics import MetricsReport, evaluate, random_directions
from rafm.model import MLP, Adam
from rafm.numerics import Prng, row_norms, sample_gaussian, sample_student_t
from rafm.radial import OracleRadialLaw, RadialLaw, fit_empirical_radial
from rafm.sampler import SamplerConfig, generate

log = logging.getLogger(__name__)

METRIC_KEYS = ("radial_w1", "ks", "sliced_w1", "angular_sw", "mmd",
               "nan_rate", "exploding_rate", "invalid_rate")
HIST_BINS = 60


# Data ------------------------------------------------------------------------

def build_dataset(cfg: ExperimentConfig) -> np.ndarray:
    ds = cfg.dataset
    if ds.kind == "student_t":
        return datasets.gen_student_t(ds.d, ds.nu, ds.n_samples, ds.matrix_seed, ds.data_seed)
    if ds.kind == "aniso_gauss":
        return datasets.gen_aniso_gauss(ds.d, ds.n_samples, ds.matrix_seed, ds.data_seed)
    if ds.kind == "toy2d":
        return datasets.gen_toy2d(ds.n_samples, ds.modes, ds.kappa, ds.scale, ds.data_seed)
    trunc = ds.trunc or None
    source = Path(ds.source)
    if source.suffix == ".bin":
        header, raw = read_samples(source)
        if (header.get("grid_ny"), header.get("grid_nx")) != (ds.grid_ny, ds.grid_nx):
            raise ValueError(f"{source} holds grid {header.get('grid_ny')}x{header.get('grid_nx')}")
        return datasets.preprocess_piv(raw.astype(float), trunc)
    x, _ = datasets.piv_pipeline(source, (ds.grid_ny, ds.grid_nx), trunc)
    return x


def oracle_law(cfg: ExperimentConfig) -> RadialLaw:
    """Radii from fresh draws of the true generator."""
    ds = cfg.dataset
    if ds.kind == "student_t":
        A = datasets.mixing_matrix(ds.d, ds.matrix_seed)
        return OracleRadialLaw(lambda rng, m: sample_student_t(rng, m, ds.d, ds.nu) @ A.T)
    if ds.kind == "aniso_gauss":
        A = datasets.mixing_matrix(ds.d, ds.matrix_seed)
        return OracleRadialLaw(lambda rng, m: sample_gaussian(rng, m, ds.d) @ A.T)
    if ds.kind == "toy2d":
        # only the norm matters, and the toy norm is |t(3)| * scale
        return OracleRadialLaw(lambda rng, m: np.abs(sample_student_t(rng, m, 1, 3.0)) * ds.scale)
    raise ValueError(f"{ds.kind} has no oracle radial law")


def eval_seed(label: str, step: int) -> int:
    """Projection directions depend on (dataset, checkpoint step) only, so every method shares them."""
    return zlib.crc32(f"{label}:{step}".encode())


# Runs ------------------------------------------------------------------------

@dataclass
class RunRecord:
    path: Path
    dataset: str
    method: str
    seed: int
    metrics: MetricsReport | None = None
    error: dict | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def run_dir(cfg: ExperimentConfig, method: str, seed: int) -> Path:
    return Path(cfg.results) / cfg.dataset.label / method / f"seed_{seed}"


def _train_key(variant: Variant, seed: int) -> tuple:
    spec = variant.spec
    # rafm training never reads the radial law, and projection is a sampling option
    if spec.method == "rafm":
        return ("rafm", seed)
    return (spec.method, spec.radial_mode if spec.method == "source_only" else "", seed)


def _write_error(path: Path, stage: str, exc: BaseException) -> dict:
    marker = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
    (path / "error.json").write_text(json.dumps(marker, indent=2, sort_keys=True) + "\n")
    return marker


def write_histograms(path: Path, generated: np.ndarray, source: np.ndarray, test: np.ndarray) -> None:
    """Binned norm counts; the last row collects everything beyond the finite range."""
    gen_r = row_norms(generated[np.isfinite(generated).all(axis=1)])
    src_r, test_r = row_norms(source), row_norms(test)
    hi = float(np.quantile(test_r, 0.995)) * 1.5
    edges = np.linspace(0.0, hi, HIST_BINS + 1)
    bounds = np.append(edges, np.inf)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "generated", "source", "test"])
        counts = [np.histogram(r, bins=bounds)[0] for r in (gen_r, src_r, test_r)]
        for i in range(len(bounds) - 1):
            w.writerow([f"{bounds[i]:.6g}", f"{bounds[i + 1]:.6g}", *(int(c[i]) for c in counts)])


def _clear(path: Path) -> None:
    for name in ("metrics.json", "error.json", "timing.json", "samples.pt", "loss.csv",
                 "histograms.csv"):
        (path / name).unlink(missing_ok=True)
    for ckpt in path.glob("checkpoint_*.pt"):
        ckpt.unlink()


def run_experiment(cfg: ExperimentConfig) -> list[RunRecord]:
    """Every (method, seed) cell; a failing stage marks that run and the rest continue."""
    label = cfg.dataset.label
    snapshot = cfg.render()
    records = [RunRecord(run_dir(cfg, v.label, s), label, v.label, s)
               for v in cfg.methods for s in cfg.seeds]
    for rec in records:
        rec.path.mkdir(parents=True, exist_ok=True)
        _clear(rec.path)
        (rec.path / "config.cfg").write_text(snapshot)

    try:
        data = build_dataset(cfg)
        parts = datasets.split(data, cfg.dataset.split_seed)
        law = fit_empirical_radial(parts.train)
        root = Path(cfg.results) / label
        law.save_csv(root / "radial_law.csv")
        write_samples(root / "dataset.bin", data, name=label,
                      seeds={"matrix_seed": cfg.dataset.matrix_seed,
                             "data_seed": cfg.dataset.data_seed,
                             "split_seed": cfg.dataset.split_seed})
    except Exception as exc:
        log.error("dataset %s failed: %s", label, exc)
        for rec in records:
            rec.error = _write_error(rec.path, "data", exc)
        return records

    # The validation split is created for protocol parity; final checkpoints are reported.
    oracle = None
    trained: dict[tuple, tuple[TrainResult, Path]] = {}
    variants = {v.label: v for v in cfg.methods}
    tcfg = TrainConfig(steps=cfg.train_steps, batch=cfg.batch, lr=cfg.lr,
                       checkpoint_every=cfg.checkpoint_every)
    scfg = SamplerConfig(steps=cfg.sampler_steps, project=True)
    dirs = random_directions(Prng(eval_seed(label, cfg.train_steps)), parts.test.shape[1], cfg.n_proj)
    ang_dirs = (random_directions(Prng(eval_seed(label, cfg.train_steps), (1,)),
                                  parts.test.shape[1], 200) if cfg.angular else None)

    for rec in records:
        variant = variants[rec.method]
        spec = variant.spec
        timing: dict = {}
        stage = "radial_law"
        try:
            if spec.radial_mode == "oracle" and spec.method != "gaussian_fm":
                oracle = oracle or oracle_law(cfg)
                run_law = oracle
            else:
                run_law = law

            stage = "train"
            key = _train_key(variant, rec.seed)
            t0 = time.perf_counter()
            if key in trained:
                result, first = trained[key]
                for ckpt in first.glob("checkpoint_*.pt"):
                    shutil.copyfile(ckpt, rec.path / ckpt.name)
                timing["train_cached_from"] = first.parent.name
            else:
                result = train(spec, parts.train, tcfg, rec.seed, run_law, out_dir=rec.path)
                trained[key] = (result, rec.path)
            timing["train_seconds"] = time.perf_counter() - t0
            write_loss_log(rec.path / "loss.csv", result.losses)

            stage = "generate"
            t0 = time.perf_counter()
            gen = generate(spec, result.model, Prng(rec.seed, (2,)), cfg.n_gen, scfg, run_law)
            timing["generate_seconds"] = time.perf_counter() - t0
            write_samples(rec.path / "samples.pt", gen.samples, dataset=label, method=rec.method,
                          seed=rec.seed, nfe=scfg.nfe)

            stage = "evaluate"
            t0 = time.perf_counter()
            meta = {"dataset": label, "method": rec.method, "seed": rec.seed,
                    "checkpoint_step": cfg.train_steps, "radial_mode": spec.radial_mode,
                    "project": bool(spec.project and spec.method == "rafm"), "nfe": scfg.nfe,
                    "n_train": int(parts.train.shape[0]), "n_test": int(parts.test.shape[0]),
                    "n_dropped_rows": result.n_dropped,
                    "probe_loss_start": result.probe_loss_start,
                    "probe_loss_end": result.probe_loss_end}
            mmd_rng = Prng(eval_seed(label, cfg.train_steps), (2,)) if cfg.mmd else None
            report = evaluate(gen.samples, parts.test, dirs, ang_dirs, mmd_rng, meta)
            timing["evaluate_seconds"] = time.perf_counter() - t0
            write_histograms(rec.path / "histograms.csv", gen.samples, gen.x0, parts.test)
            report.write(rec.path / "metrics.json")
            rec.metrics = report
        except Exception as exc:
            log.error("%s/%s/seed_%d failed in %s: %s", label, rec.method, rec.seed, stage, exc)
            rec.error = _write_error(rec.path, stage, exc)
        (rec.path / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
    return records


# Aggregation -----------------------------------------------------------------

@dataclass
class Cell:
    mean: float | None
    std: float | None
    n: int


@dataclass
class AggregateRow:
    method: str
    cells: dict[str, Cell]
    seeds_ok: list[int]
    failed: list[int] = field(default_factory=list)

    @property
    def flag(self) -> str:
        if not self.seeds_ok:
            return "missing"
        return "partial" if self.failed else ""


def summarize(values: list[float]) -> Cell:
    """Mean and unbiased (n-1) standard deviation; std is None for a single value."""
    if not values:
        return Cell(None, None, 0)
    arr = np.asarray(values, dtype=float)
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else None
    return Cell(float(np.mean(arr)), std, int(arr.size))


def _seed_dirs(method_dir: Path) -> list[tuple[int, Path]]:
    found = []
    for p in method_dir.glob("seed_*"):
        try:
            found.append((int(p.name[5:]), p))
        except ValueError:
            continue
    return sorted(found)


def aggregate_dataset(dataset_dir: str | Path, methods: list[str] | None = None,
                      seeds: list[int] | None = None) -> list[AggregateRow]:
    """Read stored metrics.json files; seeds without one count as failed."""
    dataset_dir = Path(dataset_dir)
    if methods is None:
        methods = sorted(p.name for p in dataset_dir.iterdir()
                         if p.is_dir() and any(p.glob("seed_*")))
    rows = []
    for method in methods:
        present = dict(_seed_dirs(dataset_dir / method))
        wanted = sorted(seeds) if seeds is not None else sorted(present)
        values: dict[str, list[float]] = {k: [] for k in METRIC_KEYS}
        ok, failed = [], []
        for seed in wanted:
            path = present.get(seed)
            if path is None or not (path / "metrics.json").exists():
                failed.append(seed)
                continue
            metrics = json.loads((path / "metrics.json").read_text())["metrics"]
            ok.append(seed)
            for k in METRIC_KEYS:
                if metrics.get(k) is not None:
                    values[k].append(metrics[k])
        rows.append(AggregateRow(method, {k: summarize(v) for k, v in values.items()}, ok, failed))
    return rows


def _num(x: float | None) -> str:
    return "" if x is None else f"{x:.6g}"


def write_aggregate(rows: list[AggregateRow], out_dir: str | Path, stem: str = "aggregate") -> None:
    out_dir = Path(out_dir)
    header = ["method", "n_ok", "failed_seeds", "flag"]
    for k in METRIC_KEYS:
        header += [f"{k}_mean", f"{k}_std"]
    with open(out_dir / f"{stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            line = [r.method, len(r.seeds_ok), " ".join(map(str, r.failed)), r.flag]
            for k in METRIC_KEYS:
                line += [_num(r.cells[k].mean), _num(r.cells[k].std)]
            w.writerow(line)
    payload = {r.method: {"seeds_ok": r.seeds_ok, "failed_seeds": r.failed, "flag": r.flag,
                          "metrics": {k: {"mean": c.mean, "std": c.std, "n": c.n}
                                      for k, c in r.cells.items()}}
               for r in rows}
    (out_dir / f"{stem}.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def aggregate(cfg: ExperimentConfig) -> list[AggregateRow]:
    dataset_dir = Path(cfg.results) / cfg.dataset.label
    rows = aggregate_dataset(dataset_dir, [v.label for v in cfg.methods], list(cfg.seeds))
    write_aggregate(rows, dataset_dir)
    return rows


# Tables ----------------------------------------------------------------------

TABLES = {
    # name: (methods, metrics, which datasets qualify)
    "table1_main": (("gaussian_fm", "source_only", "rafm"), ("radial_w1", "ks", "sliced_w1"),
                    lambda label: not label.startswith("toy2d")),
    "table3_oracle": (("source_only", "source_only_oracle", "rafm", "rafm_oracle"),
                      ("radial_w1", "ks", "sliced_w1"), lambda label: True),
    "table4_toy": (("gaussian_fm", "source_only", "rafm"),
                   ("radial_w1", "ks", "sliced_w1", "angular_sw"),
                   lambda label: label.startswith("toy2d")),
    "table5_projection": (("rafm", "rafm_noproj"), ("radial_w1", "ks", "sliced_w1"),
                          lambda label: True),
}


def _pm(cell: Cell) -> str:
    if cell.mean is None:
        return "n/a"
    if cell.std is None:
        return f"{cell.mean:.4f}"
    return f"{cell.mean:.4f} ± {cell.std:.4f}"


def tables(results: str | Path, out_dir: str | Path) -> list[Path]:
    """Rebuild every table from stored metrics.json files; nothing is recomputed."""
    results, out_dir = Path(results), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = sorted(p.name for p in results.iterdir() if p.is_dir()) if results.exists() else []
    written = []
    for name, (methods, metrics, qualifies) in TABLES.items():
        csv_rows, json_rows = [], []
        for label in labels:
            ds_dir = results / label
            have = [m for m in methods if (ds_dir / m).is_dir()]
            # a table needs at least its first two methods to be a comparison
            if not qualifies(label) or not all(m in have for m in methods[:2]):
                continue
            for row in aggregate_dataset(ds_dir, have):
                csv_rows.append([label, row.method, len(row.seeds_ok), row.flag,
                                 *(_pm(row.cells[k]) for k in metrics)])
                json_rows.append({"dataset": label, "method": row.method,
                                  "n_seeds": len(row.seeds_ok), "flag": row.flag,
                                  **{k: {"mean": row.cells[k].mean, "std": row.cells[k].std}
                                     for k in metrics}})
        path = out_dir / f"{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset", "method", "n_seeds", "flag", *metrics])
            w.writerows(csv_rows)
        (out_dir / f"{name}.json").write_text(json.dumps(json_rows, indent=2, sort_keys=True) + "\n")
        written += [path, out_dir / f"{name}.json"]
    return written


# Timing ----------------------------------------------------------------------

def timing(cfg: ExperimentConfig, warmup: int = 10, timed_steps: int = 50, repeats: int = 3,
           nfe_levels=(32, 64, 128, 256), out: str | Path | None = None) -> dict:
    """Per-step training time after warm-up and sampling wall time per NFE level.

    Uses fresh models on the first configured seed; run this alone on the machine.
    """
    data = build_dataset(cfg)
    parts = datasets.split(data, cfg.dataset.split_seed)
    law = fit_empirical_radial(parts.train)
    seed = cfg.seeds[0]
    n, d = parts.train.shape
    report: dict = {"warmup_steps": warmup, "timed_steps": timed_steps, "repeats": repeats,
                    "sample_batch": cfg.n_gen, "methods": {}}
    for variant in cfg.methods:
        spec = variant.spec
        run_law = oracle_law(cfg) if spec.radial_mode == "oracle" and spec.uses_radial_source else law
        source = training_source(spec, d, run_law)
        per_step = []
        for rep in range(repeats):
            root = Prng(seed, (100 + rep,))
            model = MLP(d, root.spawn(0))
            opt = Adam([model.flat], lr=cfg.lr)
            rng = root.spawn(1)

            def step():
                x1 = parts.train[rng.integers(n, size=cfg.batch)]
                optimizer_step(model, opt, make_batch(spec.method, x1, source, rng))

            for _ in range(warmup):
                step()
            t0 = time.perf_counter()
            for _ in range(timed_steps):
                step()
            per_step.append((time.perf_counter() - t0) / timed_steps)

        model = MLP(d, Prng(seed, (0,)))
        sampling = {}
        for nfe in nfe_levels:
            scfg = SamplerConfig(steps=max(1, nfe // 4), project=True)
            runs = []
            for rep in range(repeats):
                t0 = time.perf_counter()
                generate(spec, model, Prng(seed, (200 + rep,)), cfg.n_gen, scfg, run_law)
                runs.append(time.perf_counter() - t0)
            sampling[str(nfe)] = {"repeats": runs, "mean": float(np.mean(runs))}
        report["methods"][variant.label] = {
            "train_step_seconds": {"repeats": per_step, "mean": float(np.mean(per_step))},
            "sampling_seconds": sampling,
        }
    if out is None:
        out = Path(cfg.results) / cfg.dataset.label / "timing.json"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def any_failed(records: list[RunRecord]) -> bool:
    return any(not r.ok for r in records)
