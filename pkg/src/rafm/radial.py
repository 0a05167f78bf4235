"""Radial laws, radial/Gaussian sources and the radial KL and DKW diagnostics."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from rafm.numerics import (
    Prng,
    chi_cdf,
    chi_logpdf,
    chi_ppf,
    gamma_logpdf,
    gaussian_logpdf,
    log_sphere_area,
    row_norms,
    sample_gaussian,
    sample_uniform_sphere,
)

log = logging.getLogger(__name__)


class RadialLaw:
    """A sampleable law on [0, inf)."""

    def sample(self, rng: Prng, m: int) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class EmpiricalRadialLaw(RadialLaw):
    radii: np.ndarray
    n_zero_dropped: int = 0

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        if r.ndim != 1 or r.size == 0:
            raise ValueError("empirical radial law needs at least one radius")
        if not np.all(np.isfinite(r)) or np.any(r <= 0):
            raise ValueError("empirical radii must be finite and positive")
        if np.any(np.diff(r) < 0):
            r = np.sort(r)
        object.__setattr__(self, "radii", r)

    @property
    def support_max(self) -> float:
        return float(self.radii[-1])

    def quantile(self, u) -> np.ndarray:
        """Inverse empirical CDF r_(ceil(n u)) for u in (0, 1]."""
        u = np.asarray(u, dtype=float)
        n = self.radii.size
        idx = np.clip(np.ceil(n * u).astype(np.int64) - 1, 0, n - 1)
        return self.radii[idx]

    def cdf(self, r) -> np.ndarray:
        return np.searchsorted(self.radii, np.asarray(r, dtype=float), side="right") / self.radii.size

    def sample(self, rng: Prng, m: int) -> np.ndarray:
        return self.quantile(rng.uniform_open_left(m))

    def save_csv(self, path: str | Path) -> None:
        np.savetxt(path, self.radii, fmt="%.17g")

    @classmethod
    def load_csv(cls, path: str | Path) -> "EmpiricalRadialLaw":
        return cls(np.atleast_1d(np.loadtxt(path, dtype=float)))


@dataclass(frozen=True)
class OracleRadialLaw(RadialLaw):
    """Norms of fresh draws from the true data generator.

    ``draw(rng, m)`` must return an ``(m, d)`` sample matrix.
    """

    draw: Callable[[Prng, int], np.ndarray]

    def sample(self, rng: Prng, m: int) -> np.ndarray:
        return row_norms(self.draw(rng, m))


@dataclass(frozen=True)
class ChiRadialLaw(RadialLaw):
    d: int

    def sample(self, rng: Prng, m: int) -> np.ndarray:
        return chi_ppf(rng.uniform_open_left(m), self.d)

    def logpdf(self, r):
        return chi_logpdf(r, self.d)

    def pdf(self, r):
        return np.exp(self.logpdf(r))

    def cdf(self, r):
        return chi_cdf(r, self.d)


@dataclass(frozen=True)
class GammaRadialLaw(RadialLaw):
    """Gamma(k, theta) radii; a tractable radial law for KL checks."""

    k: float
    theta: float = 1.0

    def sample(self, rng: Prng, m: int) -> np.ndarray:
        return self.theta * rng.gamma(self.k, m)

    def logpdf(self, r):
        return gamma_logpdf(r, self.k, self.theta)

    def pdf(self, r):
        return np.exp(self.logpdf(r))


@dataclass(frozen=True)
class ScaledRadialLaw(RadialLaw):
    base: RadialLaw
    scale: float

    def sample(self, rng: Prng, m: int) -> np.ndarray:
        return self.scale * self.base.sample(rng, m)

    def logpdf(self, r):
        return self.base.logpdf(np.asarray(r) / self.scale) - math.log(self.scale)

    def pdf(self, r):
        return np.exp(self.logpdf(r))


def fit_empirical_radial(train: np.ndarray) -> EmpiricalRadialLaw:
    """Sorted norms of the training rows; zero-norm rows are dropped and counted."""
    r = row_norms(np.asarray(train, dtype=float))
    keep = r > 0
    dropped = int((~keep).sum())
    if dropped:
        log.warning("dropped %d zero-norm rows while fitting the radial law", dropped)
    return EmpiricalRadialLaw(np.sort(r[keep]), n_zero_dropped=dropped)


def sample_radial(law: RadialLaw, rng: Prng, m: int) -> np.ndarray:
    return law.sample(rng, m)


# Sources ---------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianSource:
    d: int

    def sample(self, rng: Prng, m: int) -> np.ndarray:
        return sample_gaussian(rng, m, self.d)


@dataclass(frozen=True)
class RadialSource:
    """X0 = R U0 with R ~ law and U0 ~ Unif(S^{d-1}) independent."""

    law: RadialLaw
    d: int

    def sample_with_radii(self, rng: Prng, m: int) -> tuple[np.ndarray, np.ndarray]:
        radii = self.law.sample(rng, m)
        u = sample_uniform_sphere(rng, m, self.d)
        return radii[:, None] * u, radii

    def sample(self, rng: Prng, m: int) -> np.ndarray:
        return self.sample_with_radii(rng, m)[0]


SourceSampler = GaussianSource | RadialSource


def sample_source(src: SourceSampler, rng: Prng, m: int) -> np.ndarray:
    if m < 1:
        raise ValueError("m must be >= 1")
    return src.sample(rng, m)


def q_rad_logdensity(x, radial_logpdf: Callable) -> np.ndarray:
    """log q_rad(x) = log p_R(|x|) - log|S^{d-1}| - (d-1) log|x| (row-wise)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[1]
    r = row_norms(x)
    if np.any(r == 0):
        raise ValueError("q_rad density is undefined at the origin")
    return radial_logpdf(r) - log_sphere_area(d) - (d - 1) * np.log(r)


# Quadrature ------------------------------------------------------------------

def adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                     tol: float = 1e-12, max_depth: int = 60) -> float:
    """Adaptive Simpson rule with Richardson correction, iterative."""

    def simpson(fa, fm, fb, lo, hi):
        return (hi - lo) / 6.0 * (fa + 4.0 * fm + fb)

    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    stack = [(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 0)]
    total = 0.0
    while stack:
        lo, hi, flo, fmid, fhi, whole, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = simpson(flo, flm, fmid, lo, mid)
        right = simpson(fmid, frm, fhi, mid, hi)
        delta = left + right - whole
        if depth >= max_depth or abs(delta) <= 15.0 * eps:
            total += left + right + delta / 15.0
        else:
            stack.append((lo, mid, flo, flm, fmid, left, eps / 2.0, depth + 1))
            stack.append((mid, hi, fmid, frm, fhi, right, eps / 2.0, depth + 1))
    return total


def _tail_cutoff(logpdfs: list[Callable], start: float = 1.0, limit: float = 1e6) -> float:
    """Radius beyond which every density is below exp(-40)/r (tail mass << 1e-12)."""
    r = start
    while r < limit:
        if all(float(lp(r)) < -40.0 - math.log(r) for lp in logpdfs):
            return r
        r *= 1.25
    return math.inf


def radial_kl_gap(radial_logpdf: Callable, d: int, r_max: float | None = None,
                  tol: float = 1e-12) -> float:
    """KL(p_R || p_chi_d) by adaptive Simpson on [0, r_max].

    Returns ``inf`` when no finite cutoff exists (tails heavier than chi_d
    make the integral diverge).
    """

    def lchi(r):
        return float(chi_logpdf(r, d))

    if r_max is None:
        r_max = _tail_cutoff([radial_logpdf, lchi])
        if not math.isfinite(r_max):
            return math.inf

    def integrand(r: float) -> float:
        lp = float(radial_logpdf(r))
        if lp == -math.inf:
            return 0.0
        lq = lchi(r)
        if lq == -math.inf:
            return math.inf
        return math.exp(lp) * (lp - lq)

    # f(0) is the r -> 0+ limit; a mass-bearing density against chi_d (d >= 2) diverges there.
    f0 = integrand(0.0)
    if math.isinf(f0):
        return math.inf

    def f(r: float) -> float:
        return f0 if r == 0.0 else integrand(r)

    # Polynomial tails leave a non-negligible integrand at the cutoff.
    if abs(f(r_max)) * r_max > 1e-12:
        return math.inf
    val = adaptive_simpson(f, 0.0, r_max, tol=tol)
    return max(val, 0.0) if math.isfinite(val) else math.inf


@dataclass(frozen=True)
class KLCheck:
    lhs: float
    rhs: float
    stderr: float
    kl_to_qrad: float
    kl_to_qrad_stderr: float


def kl_decomposition_check(law, d: int, rng: Prng, n_mc: int) -> KLCheck:
    """Monte-Carlo check of the radial KL decomposition on isotropic data.

    Data are X = R U with R ~ ``law`` (needs ``sample`` and ``logpdf``) and U
    uniform, so the angular term vanishes: KL(p_data||phi_d) should equal the
    quadrature value KL(p_R||p_chi_d) and KL(p_data||q_rad) should be zero.
    """
    r = law.sample(rng.spawn(0), n_mc)
    r = r[r > 0]
    x = r[:, None] * sample_uniform_sphere(rng.spawn(1), r.size, d)
    # Data density through the polar change of variables on the drawn vectors.
    log_p = law.logpdf(row_norms(x)) - log_sphere_area(d) - (d - 1) * np.log(row_norms(x))
    diff_gauss = log_p - gaussian_logpdf(x)
    diff_qrad = log_p - q_rad_logdensity(x, law.logpdf)
    n = diff_gauss.size
    return KLCheck(
        lhs=float(diff_gauss.mean()),
        rhs=radial_kl_gap(law.logpdf, d),
        stderr=float(diff_gauss.std(ddof=1) / math.sqrt(n)),
        kl_to_qrad=float(diff_qrad.mean()),
        kl_to_qrad_stderr=float(diff_qrad.std(ddof=1) / math.sqrt(n)),
    )


# Empirical-CDF statistics --------------------------------------------------

def dkw_band(n: int, delta: float) -> float:
    """Half-width eps with P(sup|F_n - F| > eps) <= delta."""
    if n < 1 or not 0 < delta < 1:
        raise ValueError("need n >= 1 and 0 < delta < 1")
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n))


def ecdf_sup_gap(samples, cdf: Callable) -> float:
    """sup_x |F_n(x) - F(x)|, evaluated at both sides of every jump."""
    s = np.sort(np.asarray(samples, dtype=float))
    n = s.size
    f = cdf(s)
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


@dataclass(frozen=True)
class TransferCheck:
    coupling_w1: float
    sliced_w1: float
    stderr: float


def coupling_cost_vs_sliced(law_a: RadialLaw, law_b: RadialLaw, d: int, rng: Prng,
                            m: int, n_proj: int = 500) -> TransferCheck:
    """Compare the comonotone radial coupling cost with sliced W1 of the sources.

    Coupling (R_a U, R_b U) with sorted radii and a shared direction costs
    E|R_a - R_b|; sliced W1 between the two radial sources (independent
    directions) cannot exceed it in population. ``stderr`` combines the
    coupling-mean standard error with the sampling floor of sliced W1,
    estimated from two independent draws of source b.
    """
    from rafm.metrics import random_directions, sliced_w1

    if m < 1000:
        raise ValueError("m must be >= 1000")
    ra = np.sort(law_a.sample(rng.spawn(0), m))
    rb = np.sort(law_b.sample(rng.spawn(1), m))
    gaps = np.abs(ra - rb)
    coupling = float(gaps.mean())
    se_coupling = float(gaps.std(ddof=1) / math.sqrt(m))

    dirs = random_directions(rng.spawn(2), d, n_proj)
    xa = RadialSource(law_a, d).sample(rng.spawn(3), m)
    xb = RadialSource(law_b, d).sample(rng.spawn(4), m)
    sliced = sliced_w1(xa, xb, directions=dirs)
    xb2 = RadialSource(law_b, d).sample(rng.spawn(5), m)
    floor = sliced_w1(xb, xb2, directions=dirs)
    return TransferCheck(coupling, sliced, math.sqrt(se_coupling**2 + floor**2))


def save_radii_binary(path: str | Path, radii: np.ndarray) -> None:
    np.asarray(np.sort(radii), dtype="<f8").tofile(path)


def load_radii_binary(path: str | Path) -> EmpiricalRadialLaw:
    return EmpiricalRadialLaw(np.fromfile(path, dtype="<f8"))
