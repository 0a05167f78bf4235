"""Distributional distances and stability rates used for evaluation."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from rafm.numerics import Prng, row_norms, sample_uniform_sphere

log = logging.getLogger(__name__)

MMD_MAX_ROWS = 2000
EXPLODE_FACTOR = 100.0
ANGULAR_NORM_CLAMP = 1e-12


def _as_1d(a, name):
    a = np.asarray(a, dtype=float).ravel()
    if a.size == 0:
        raise ValueError(f"{name} is empty")
    return a


def _w1_equal(a_sorted: np.ndarray, b_sorted: np.ndarray) -> float:
    return float(np.mean(np.abs(a_sorted - b_sorted)))


def _w1_merged(a_sorted: np.ndarray, b_sorted: np.ndarray) -> float:
    """Integral over u of |F_a^{-1}(u) - F_b^{-1}(u)| on the merged breakpoints."""
    na, nb = a_sorted.size, b_sorted.size
    u = np.union1d(np.arange(1, na + 1) / na, np.arange(1, nb + 1) / nb)
    lo = np.concatenate([[0.0], u[:-1]])
    mid = 0.5 * (lo + u)
    ia = np.minimum(np.ceil(mid * na).astype(np.int64) - 1, na - 1)
    ib = np.minimum(np.ceil(mid * nb).astype(np.int64) - 1, nb - 1)
    return float(np.sum((u - lo) * np.abs(a_sorted[ia] - b_sorted[ib])))


def w1_1d(a, b) -> float:
    """Wasserstein-1 between two empirical 1D distributions."""
    a = np.sort(_as_1d(a, "a"))
    b = np.sort(_as_1d(b, "b"))
    if a.size == b.size:
        return _w1_equal(a, b)
    return _w1_merged(a, b)


def ks_2sample(a, b) -> float:
    """sup_x |F_a(x) - F_b(x)| over the merged sample."""
    a = np.sort(_as_1d(a, "a"))
    b = np.sort(_as_1d(b, "b"))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def random_directions(rng: Prng, d: int, n_proj: int) -> np.ndarray:
    return sample_uniform_sphere(rng, n_proj, d)


def sliced_w1(A, B, directions: np.ndarray | None = None, n_proj: int = 500,
              rng: Prng | None = None) -> float:
    """Mean over unit directions of W1 between the projected clouds.

    Pass ``directions`` to share one direction set across comparisons.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch {A.shape[1]} vs {B.shape[1]}")
    if directions is None:
        if rng is None:
            raise ValueError("need either directions or rng")
        directions = random_directions(rng, A.shape[1], n_proj)
    pa = np.sort(A @ directions.T, axis=0)
    pb = np.sort(B @ directions.T, axis=0)
    if pa.shape[0] == pb.shape[0]:
        return float(np.mean(np.abs(pa - pb)))
    return float(np.mean([_w1_merged(pa[:, k], pb[:, k]) for k in range(pa.shape[1])]))


@dataclass
class AngularResult:
    value: float
    skipped_bins: int


def angular_sw(A, B, test_radii, directions: np.ndarray | None = None, n_bins: int = 4,
               n_proj: int = 200, rng: Prng | None = None) -> AngularResult:
    """Sliced W1 between unit directions inside radial bins.

    Bins are the test-radius quantiles; the per-bin values are averaged with
    weights equal to the combined bin counts. A bin empty on either side is
    skipped and counted.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    test_radii = _as_1d(test_radii, "test_radii")
    if directions is None:
        if rng is None:
            raise ValueError("need either directions or rng")
        directions = random_directions(rng, A.shape[1], n_proj)
    edges = np.quantile(test_radii, np.arange(1, n_bins) / n_bins)
    ra, rb = row_norms(A), row_norms(B)
    ba = np.searchsorted(edges, ra, side="right")
    bb = np.searchsorted(edges, rb, side="right")
    ua = A / np.maximum(ra, ANGULAR_NORM_CLAMP)[:, None]
    ub = B / np.maximum(rb, ANGULAR_NORM_CLAMP)[:, None]
    total, weight, skipped = 0.0, 0, 0
    for k in range(n_bins):
        ma, mb = ba == k, bb == k
        if not ma.any() or not mb.any():
            skipped += 1
            continue
        w = int(ma.sum() + mb.sum())
        total += w * sliced_w1(ua[ma], ub[mb], directions=directions)
        weight += w
    if skipped:
        log.warning("angular_sw skipped %d empty bins", skipped)
    value = total / weight if weight else math.nan
    return AngularResult(float(value), skipped)


def _pairwise_sq(X, Y):
    d2 = np.sum(X * X, axis=1)[:, None] + np.sum(Y * Y, axis=1)[None, :] - 2.0 * X @ Y.T
    return np.maximum(d2, 0.0)


def median_bandwidth(Z) -> float:
    """Median of the nonzero pairwise distances within Z."""
    # pdist differences coordinates directly, so duplicate rows give exact zeros
    dist = pdist(np.asarray(Z, dtype=float))
    dist = dist[dist > 0]
    if dist.size == 0:
        raise ValueError("all pairwise distances are zero; bandwidth undefined")
    return float(np.median(dist))


def mmd_rbf(A, B, rng: Prng | None = None, max_rows: int = MMD_MAX_ROWS,
            bandwidth: float | None = None) -> float:
    """Unbiased RBF-MMD^2 (clamped at 0), square-rooted.

    Inputs larger than ``max_rows`` are subsampled without replacement.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if (A.shape[0] > max_rows or B.shape[0] > max_rows) and rng is None:
        raise ValueError("rng required to subsample large inputs")
    if A.shape[0] > max_rows:
        A = A[np.sort(rng.permutation(A.shape[0])[:max_rows])]
    if B.shape[0] > max_rows:
        B = B[np.sort(rng.permutation(B.shape[0])[:max_rows])]
    if bandwidth is None:
        bandwidth = median_bandwidth(np.concatenate([A, B]))
    g = 1.0 / (2.0 * bandwidth * bandwidth)
    kxx = np.exp(-g * _pairwise_sq(A, A))
    kyy = np.exp(-g * _pairwise_sq(B, B))
    kxy = np.exp(-g * _pairwise_sq(A, B))
    n, m = A.shape[0], B.shape[0]
    sxx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    mmd2 = sxx + syy - 2.0 * kxy.mean()
    return float(math.sqrt(max(mmd2, 0.0)))


@dataclass
class StabilityRates:
    nan_rate: float
    exploding_rate: float
    invalid_rate: float


def stability(A_raw, test_radii) -> StabilityRates:
    """NaN rate, exploding-norm rate among non-NaN rows, and combined invalid rate."""
    A = np.atleast_2d(np.asarray(A_raw, dtype=float))
    test_radii = _as_1d(test_radii, "test_radii")
    n = A.shape[0]
    nan_rows = np.isnan(A).any(axis=1)
    nan_rate = float(nan_rows.sum() / n) if n else 0.0
    valid = A[~nan_rows]
    threshold = EXPLODE_FACTOR * float(np.median(test_radii))
    if valid.shape[0]:
        with np.errstate(over="ignore"):
            exploding_rate = float(np.mean(row_norms(valid) > threshold))
    else:
        exploding_rate = 0.0
    return StabilityRates(nan_rate, exploding_rate, nan_rate + (1.0 - nan_rate) * exploding_rate)


@dataclass
class MetricsReport:
    radial_w1: float
    ks: float
    sliced_w1: float
    nan_rate: float
    exploding_rate: float
    invalid_rate: float
    angular_sw: float | None = None
    mmd: float | None = None
    n_eval: int = 0
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        meta = d.pop("metadata")
        return json.dumps({"metrics": d, "metadata": meta}, indent=2, sort_keys=True) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def read(cls, path: str | Path) -> "MetricsReport":
        raw = json.loads(Path(path).read_text())
        return cls(**raw["metrics"], metadata=raw.get("metadata", {}))


def evaluate(generated_raw, test, directions: np.ndarray, angular_directions: np.ndarray | None = None,
             mmd_rng: Prng | None = None, metadata: dict | None = None) -> MetricsReport:
    """Stability screen on the raw output, then distances on the finite rows."""
    test = np.asarray(test, dtype=float)
    gen = np.asarray(generated_raw, dtype=float)
    test_r = row_norms(test)
    rates = stability(gen, test_r)
    finite = gen[np.isfinite(gen).all(axis=1)]
    if finite.shape[0] == 0:
        raise ValueError("no finite generated samples to evaluate")
    gen_r = row_norms(finite)
    report = MetricsReport(
        radial_w1=w1_1d(gen_r, test_r),
        ks=ks_2sample(gen_r, test_r),
        sliced_w1=sliced_w1(finite, test, directions=directions),
        nan_rate=rates.nan_rate,
        exploding_rate=rates.exploding_rate,
        invalid_rate=rates.invalid_rate,
        n_eval=int(finite.shape[0]),
        metadata=dict(metadata or {}),
    )
    if angular_directions is not None:
        ang = angular_sw(finite, test, test_r, directions=angular_directions)
        report.angular_sw = ang.value
        report.metadata["angular_skipped_bins"] = ang.skipped_bins
    if mmd_rng is not None:
        report.mmd = mmd_rbf(finite, test, rng=mmd_rng)
    return report
