"""Synthetic benchmarks, DaVis PIV parsing/vorticity preprocessing, and splits."""
from __future__ import annotations

import io
import logging
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from rafm.numerics import Prng, sample_gaussian, sample_student_t

log = logging.getLogger(__name__)

PIV_NY, PIV_NX = 740, 545
PIV_POINTS = PIV_NY * PIV_NX
PIV_SCALE = 2.5
TRAIN_FRAC, VALID_FRAC = 0.6, 0.2


# Synthetic data -------------------------------------------------------------

def mixing_matrix(d: int, matrix_seed: int) -> np.ndarray:
    """A_ij ~ N(0, 1), shared by every benchmark with the same (d, matrix_seed)."""
    return sample_gaussian(Prng(matrix_seed), d, d)


def gen_student_t(d: int, nu: float, n: int, matrix_seed: int, data_seed: int,
                  mixing: np.ndarray | None = None) -> np.ndarray:
    """X = Z A^T with i.i.d. t(nu) entries in Z; no centering or scaling."""
    A = mixing_matrix(d, matrix_seed) if mixing is None else mixing
    z = sample_student_t(Prng(data_seed), n, d, nu)
    return z @ A.T


def gen_aniso_gauss(d: int, n: int, matrix_seed: int, data_seed: int,
                    mixing: np.ndarray | None = None) -> np.ndarray:
    A = mixing_matrix(d, matrix_seed) if mixing is None else mixing
    return sample_gaussian(Prng(data_seed), n, d) @ A.T


def gen_toy2d(n: int, modes: int = 4, kappa: float = 5.0, scale: float = 1.0,
              data_seed: int = 0) -> np.ndarray:
    """r (cos th, sin th) with r = |t(3)| * scale and th from a wrapped-normal mode mixture."""
    rng = Prng(data_seed)
    r = np.abs(sample_student_t(rng.spawn(0), n, 1, 3.0)[:, 0]) * scale
    k = rng.spawn(1).integers(modes, size=n)
    g = rng.spawn(2).normal(n)
    theta = np.mod(2.0 * np.pi * k / modes + g / np.sqrt(kappa), 2.0 * np.pi)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


# Splits ------------------------------------------------------------------------

@dataclass(frozen=True)
class DataSplit:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    indices: tuple = field(repr=False, default=())


def split_sizes(n: int) -> tuple[int, int, int]:
    n_train = int(np.floor(TRAIN_FRAC * n))
    n_valid = int(np.floor(VALID_FRAC * n))
    return n_train, n_valid, n - n_train - n_valid


def split(data: np.ndarray, split_seed: int = 0) -> DataSplit:
    """Deterministic permutation followed by contiguous 60/20/20 slicing."""
    n = data.shape[0]
    if n < 5:
        raise ValueError("need at least 5 rows to split")
    perm = Prng(split_seed).permutation(n)
    n_train, n_valid, _ = split_sizes(n)
    idx = (perm[:n_train], perm[n_train:n_train + n_valid], perm[n_train + n_valid:])
    return DataSplit(data[idx[0]], data[idx[1]], data[idx[2]], idx)


# PIV -------------------------------------------------------------------------

class FrameRejected(ValueError):
    """A DaVis frame failed one of the acceptance rules."""

    PARSE = "parse-error"
    COUNT = "wrong-count"
    NAN = "contains-nan"

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class EmptyDataset(RuntimeError):
    pass


def parse_davis(data: bytes | str) -> tuple[np.ndarray, np.ndarray]:
    """Parse ``x;y;Vx;Vy`` rows into (Vx, Vy) grids of shape (740, 545)."""
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="strict")
    try:
        table = np.loadtxt(io.StringIO(data), delimiter=";", comments="#", ndmin=2)
    except (ValueError, UnicodeDecodeError) as exc:
        raise FrameRejected(FrameRejected.PARSE, str(exc)) from exc
    if table.shape[1] != 4:
        raise FrameRejected(FrameRejected.PARSE, f"expected 4 columns, got {table.shape[1]}")
    if table.shape[0] != PIV_POINTS:
        raise FrameRejected(FrameRejected.COUNT, f"{table.shape[0]} points")
    vel = table[:, 2:4]
    if np.isnan(vel).any():
        raise FrameRejected(FrameRejected.NAN)
    vx = vel[:, 0].reshape(PIV_NY, PIV_NX)
    vy = vel[:, 1].reshape(PIV_NY, PIV_NX)
    return vx, vy


def vorticity(vx: np.ndarray, vy: np.ndarray) -> np.ndarray:
    """dVy/dx - dVx/dy with unit spacing (central inside, one-sided at edges)."""
    if vx.shape != vy.shape:
        raise ValueError(f"grid shape mismatch {vx.shape} vs {vy.shape}")
    return np.gradient(vy, axis=1) - np.gradient(vx, axis=0)


def subsample_grid(omega: np.ndarray, ny: int, nx: int) -> np.ndarray:
    full_y, full_x = omega.shape
    if not (1 <= ny <= full_y and 1 <= nx <= full_x):
        raise ValueError(f"grid {ny}x{nx} outside {full_y}x{full_x}")
    yi = np.linspace(0, full_y - 1, ny).astype(int)
    xi = np.linspace(0, full_x - 1, nx).astype(int)
    return omega[np.ix_(yi, xi)].ravel()


@dataclass
class PivReport:
    retained: list[str] = field(default_factory=list)
    skipped: dict[str, str] = field(default_factory=dict)


def _iter_frames(source: str | Path) -> Iterable[tuple[str, bytes]]:
    source = Path(source)
    if source.is_file() and zipfile.is_zipfile(source):
        with zipfile.ZipFile(source) as zf:
            names = sorted(n for n in zf.namelist()
                           if Path(n).name.startswith("Serie_") and n.endswith(".txt"))
            for name in names:
                yield Path(name).name, zf.read(name)
    else:
        for path in sorted(source.glob("Serie_*.txt")):
            yield path.name, path.read_bytes()


def piv_frames(source: str | Path, grids: list[tuple[int, int]]) -> tuple[dict, PivReport]:
    """Parse every frame once and subsample its vorticity onto each grid."""
    report = PivReport()
    rows: dict = {g: [] for g in grids}
    for name, blob in _iter_frames(source):
        try:
            vx, vy = parse_davis(blob)
        except FrameRejected as exc:
            log.warning("skipping %s (%s)", name, exc.reason)
            report.skipped[name] = exc.reason
            continue
        omega = vorticity(vx, vy)
        for g in grids:
            rows[g].append(subsample_grid(omega, *g))
        report.retained.append(name)
    if not report.retained:
        raise EmptyDataset(f"no valid Serie_*.txt frames in {source}")
    return {g: np.stack(v) for g, v in rows.items()}, report


def center(x: np.ndarray) -> np.ndarray:
    return x - x.mean(axis=0, keepdims=True)


def preprocess_piv(stacked: np.ndarray, trunc: int | None = None) -> np.ndarray:
    """Scale by 1/2.5, center on the full dataset, optionally truncate and re-center."""
    x = center(stacked / PIV_SCALE)
    if trunc is not None:
        x = center(x[:, :trunc])
    return x


def piv_pipeline(source: str | Path, grid: tuple[int, int], trunc: int | None = None
                 ) -> tuple[np.ndarray, PivReport]:
    frames, report = piv_frames(source, [grid])
    return preprocess_piv(frames[grid], trunc), report


def write_davis_frame(path: str | Path, vx: np.ndarray, vy: np.ndarray,
                      drop_last: bool = False, nan_at: tuple[int, int] | None = None) -> None:
    """Write a DaVis-style text frame (test fixtures and synthetic archives)."""
    ny, nx = vx.shape
    yy, xx = np.meshgrid(np.arange(ny, dtype=float), np.arange(nx, dtype=float), indexing="ij")
    table = np.stack([xx.ravel(), yy.ravel(), vx.ravel(), vy.ravel()], axis=1)
    if nan_at is not None:
        table[nan_at[0] * nx + nan_at[1], 2] = np.nan
    if drop_last:
        table = table[:-1]
    np.savetxt(path, table, delimiter=";", fmt="%.6g")
