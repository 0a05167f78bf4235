"""Conditional paths, the CFM regression loss and the training loop.

Three methods share the loop and differ only in how a batch is built:

* ``gaussian_fm``: x0 ~ N(0, I), linear path.
* ``source_only``: x0 from the radial source (independent coupling), linear path.
* ``rafm``: x0 = |x1| u0 (matched radius), spherical geodesic path.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rafm import sphere
from rafm.model import MLP, Adam
from rafm.numerics import Prng, row_norms, sample_uniform_sphere
from rafm.radial import GaussianSource, RadialSource, SourceSampler

log = logging.getLogger(__name__)

METHODS = ("gaussian_fm", "source_only", "rafm")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, detail: str, checkpoint: Path | None = None):
        super().__init__(f"non-finite loss at step {step}: {detail}")
        self.step = step
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class MethodSpec:
    method: str
    radial_mode: str = "empirical"
    project: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.radial_mode not in ("empirical", "oracle"):
            raise ValueError(f"unknown radial mode {self.radial_mode!r}")

    @property
    def uses_radial_source(self) -> bool:
        return self.method != "gaussian_fm"


@dataclass
class PathBatch:
    t: np.ndarray
    x_t: np.ndarray
    target_v: np.ndarray
    x0: np.ndarray | None = None
    x1: np.ndarray | None = None
    # Radius each rafm pair was built on (copied from x1).
    radius: np.ndarray | None = None
    n_dropped: int = 0


def make_batch_linear(x1: np.ndarray, source: SourceSampler, rng: Prng,
                      t: np.ndarray | None = None) -> PathBatch:
    x1 = np.asarray(x1, dtype=float)
    if x1.shape[0] == 0:
        raise ValueError("empty batch")
    b = x1.shape[0]
    if t is None:
        t = rng.uniform(b)
    x0 = source.sample(rng, b)
    tt = t[:, None]
    x_t = (1.0 - tt) * x0 + tt * x1
    return PathBatch(t, x_t, x1 - x0, x0, x1)


def make_batch_rafm(x1: np.ndarray, rng: Prng, t: np.ndarray | None = None,
                    u0: np.ndarray | None = None) -> PathBatch:
    """Matched-radius coupling plus geodesic interpolation; zero-norm rows are dropped."""
    x1 = np.asarray(x1, dtype=float)
    r = row_norms(x1)
    keep = r > 0
    n_dropped = int((~keep).sum())
    if n_dropped:
        x1, r = x1[keep], r[keep]
        if t is not None:
            t = t[keep]
        if u0 is not None:
            u0 = u0[keep]
    b, d = x1.shape
    if b == 0:
        raise ValueError("batch has no nonzero rows")
    if t is None:
        t = rng.uniform(b)
    if u0 is None:
        u0 = sample_uniform_sphere(rng, b, d)
    x0 = r[:, None] * u0
    pair = sphere.geodesic_pair(x0, x1)
    return PathBatch(t, sphere.slerp(pair, t), sphere.slerp_velocity(pair, t), x0, x1, r, n_dropped)


def check_batch(batch: PathBatch, method: str, rtol: float = 1e-6) -> None:
    """Assert the path invariants of a batch (debug mode)."""
    if method == "rafm":
        rx = row_norms(batch.x_t)
        r1 = row_norms(batch.x1)
        if np.any(np.abs(rx - r1) > rtol * r1):
            raise AssertionError("rafm batch violates radius preservation")
        inner = np.abs(np.sum(batch.x_t * batch.target_v, axis=1))
        if np.any(inner > rtol * rx * row_norms(batch.target_v) + 1e-300):
            raise AssertionError("rafm batch violates tangency")
    else:
        tt = batch.t[:, None]
        if not np.array_equal(batch.x_t, (1.0 - tt) * batch.x0 + tt * batch.x1):
            raise AssertionError("linear batch interpolation mismatch")
        if not np.array_equal(batch.target_v, batch.x1 - batch.x0):
            raise AssertionError("linear batch target mismatch")


def cfm_loss(model: MLP, batch: PathBatch) -> tuple[float, list[np.ndarray]]:
    """Mean squared error over rows and coordinates, with parameter gradients.

    Normalizing by B*d rather than B keeps loss values comparable across
    dimensions.
    """
    out, cache = model.forward(batch.t, batch.x_t)
    diff = out - np.asarray(batch.target_v, dtype=model.dtype)
    loss = float(np.mean(np.square(diff, dtype=np.float64)))
    if not np.isfinite(loss):
        raise FloatingPointError(
            f"non-finite loss; max|out|={np.nanmax(np.abs(out)):.3g}, "
            f"max|target|={np.max(np.abs(batch.target_v)):.3g}")
    grads = model.backward(cache, (2.0 / diff.size) * diff)
    return loss, grads


@dataclass
class TrainConfig:
    steps: int = 10_000
    batch: int = 256
    lr: float = 1e-3
    checkpoint_every: int = 5_000
    probe_size: int = 1024
    debug_checks: bool = False
    dtype: str = "float32"


@dataclass
class TrainResult:
    model: MLP
    losses: list[float] = field(default_factory=list)
    probe_loss_start: float = float("nan")
    probe_loss_end: float = float("nan")
    n_dropped: int = 0
    checkpoints: list[Path] = field(default_factory=list)


def make_batch(method: str, x1: np.ndarray, source: SourceSampler | None, rng: Prng) -> PathBatch:
    if method == "rafm":
        return make_batch_rafm(x1, rng)
    if source is None:
        raise ValueError(f"{method} needs a source sampler")
    return make_batch_linear(x1, source, rng)


def training_source(spec: MethodSpec, d: int, radial_law=None) -> SourceSampler | None:
    if spec.method == "gaussian_fm":
        return GaussianSource(d)
    if spec.method == "source_only":
        if radial_law is None:
            raise ValueError("source_only needs a radial law")
        return RadialSource(radial_law, d)
    return None  # rafm copies radii from the targets


def optimizer_step(model: MLP, opt: Adam, batch: PathBatch) -> float:
    """One Adam update on ``batch``; ``opt`` must own ``model.flat``."""
    loss, grads = cfm_loss(model, batch)
    opt.step([model.flat], [model.flatten_grads(grads)])
    return loss


def _probe_loss(model: MLP, batch: PathBatch) -> float:
    out = model(batch.t, batch.x_t)
    return float(np.mean(np.square(out - batch.target_v, dtype=np.float64)))


def train(spec: MethodSpec, train_data: np.ndarray, cfg: TrainConfig, seed: int,
          radial_law=None, out_dir: str | Path | None = None) -> TrainResult:
    """Adam on the CFM loss with minibatches drawn with replacement.

    Streams derived from ``seed``: 0 initialization, 1 minibatches and paths,
    3 the fixed probe batch used to report loss before/after training.
    """
    train_data = np.asarray(train_data, dtype=float)
    n, d = train_data.shape
    if n == 0:
        raise ValueError("empty training split")
    root = Prng(seed)
    model = MLP(d, root.spawn(0), dtype=np.dtype(cfg.dtype))
    opt = Adam([model.flat], lr=cfg.lr)
    source = training_source(spec, d, radial_law)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    probe_rng = root.spawn(3)
    probe = make_batch(spec.method, train_data[probe_rng.integers(n, size=cfg.probe_size)],
                       source, probe_rng)
    result = TrainResult(model, probe_loss_start=_probe_loss(model, probe))

    rng = root.spawn(1)
    for step in range(1, cfg.steps + 1):
        x1 = train_data[rng.integers(n, size=cfg.batch)]
        batch = make_batch(spec.method, x1, source, rng)
        result.n_dropped += batch.n_dropped
        if cfg.debug_checks and step % 1000 == 0:
            check_batch(batch, spec.method)
        try:
            loss = optimizer_step(model, opt, batch)
        except FloatingPointError as exc:
            ckpt = None
            if out_dir is not None:
                ckpt = out_dir / f"checkpoint_{step - 1}_diverged.pt"
                model.save(ckpt, step - 1)
            raise TrainingDiverged(step, str(exc), ckpt) from exc
        result.losses.append(loss)
        if out_dir is not None and (step % cfg.checkpoint_every == 0 or step == cfg.steps):
            path = out_dir / f"checkpoint_{step}.pt"
            model.save(path, step)
            result.checkpoints.append(path)
    if result.n_dropped:
        log.warning("dropped %d zero-norm target rows during training", result.n_dropped)
    result.probe_loss_end = _probe_loss(model, probe)
    return result


def write_loss_log(path: str | Path, losses: list[float]) -> None:
    with open(path, "w") as fh:
        fh.write("step,loss\n")
        for i, loss in enumerate(losses, start=1):
            fh.write(f"{i},{loss:.9g}\n")
