"""Seeded random streams, elementary samplers and reference densities.

Sample collections are plain ``(n, d)`` numpy arrays throughout the package.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special

_MAX_SUM_OF_SQUARES_NU = 30


class Prng:
    """Reproducible random stream addressed by ``(seed, stream ids...)``.

    Backed by PCG64 seeded through ``SeedSequence`` so that sub-streams
    obtained with :meth:`spawn` are statistically independent and identical
    across platforms.
    """

    def __init__(self, seed: int, stream: tuple[int, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be a u64, got {seed}")
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def spawn(self, stream_id: int) -> "Prng":
        return Prng(self.seed, self.stream + (stream_id,))

    def uniform(self, size=None) -> np.ndarray:
        """Uniforms in [0, 1)."""
        return self._gen.random(size)

    def uniform_open_left(self, size=None) -> np.ndarray:
        """Uniforms in (0, 1]."""
        return 1.0 - self._gen.random(size)

    def integers(self, high: int, size=None) -> np.ndarray:
        return self._gen.integers(0, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def normal(self, size) -> np.ndarray:
        """Standard normals by Box-Muller on the uniform stream."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        count = int(np.prod(shape, dtype=np.int64))
        half = (count + 1) // 2
        u1 = self.uniform_open_left(half)
        u2 = self.uniform(half)
        rad = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        z = np.empty(2 * half)
        z[0::2] = rad * np.cos(ang)
        z[1::2] = rad * np.sin(ang)
        return z[:count].reshape(shape)

    def gamma(self, shape: float, size) -> np.ndarray:
        """Unit-scale Gamma draws; integer shapes use sums of exponentials."""
        if float(shape).is_integer() and 1 <= shape <= _MAX_SUM_OF_SQUARES_NU:
            k = int(shape)
            size_t = (size,) if np.isscalar(size) else tuple(size)
            u = self.uniform_open_left(size_t + (k,))
            return -np.log(u).sum(axis=-1)
        return self._gen.standard_gamma(shape, size)


def sample_gaussian(rng: Prng, n: int, d: int) -> np.ndarray:
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    return rng.normal((n, d))


def sample_chisq(rng: Prng, size, nu: float) -> np.ndarray:
    # Small integer dof: sum of squared normals, otherwise 2*Gamma(nu/2).
    if float(nu).is_integer() and 1 <= nu <= _MAX_SUM_OF_SQUARES_NU:
        size_t = (size,) if np.isscalar(size) else tuple(size)
        g = rng.normal(size_t + (int(nu),))
        return np.square(g).sum(axis=-1)
    return 2.0 * rng.gamma(nu / 2.0, size)


def sample_student_t(rng: Prng, n: int, d: int, nu: float) -> np.ndarray:
    """i.i.d. t(nu) entries as N(0,1) / sqrt(ChiSq(nu)/nu)."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    z = sample_gaussian(rng, n, d)
    chi2 = sample_chisq(rng, (n, d), nu)
    return z / np.sqrt(chi2 / nu)


def sample_uniform_sphere(rng: Prng, n: int, d: int) -> np.ndarray:
    if d < 1:
        raise ValueError("d must be >= 1")
    g = rng.normal((n, d))
    norms = np.linalg.norm(g, axis=1)
    bad = norms < 1e-30
    while np.any(bad):
        g[bad] = rng.normal((int(bad.sum()), d))
        norms[bad] = np.linalg.norm(g[bad], axis=1)
        bad = norms < 1e-30
    return g / norms[:, None]


def log_sphere_area(d: int) -> float:
    """log |S^{d-1}| = log(2 pi^{d/2} / Gamma(d/2))."""
    return math.log(2.0) + 0.5 * d * math.log(math.pi) - special.gammaln(0.5 * d)


def chi_logpdf(r, d: int):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        out = (d - 1) * np.log(r) - 0.5 * r * r - (0.5 * d - 1) * math.log(2.0) - special.gammaln(0.5 * d)
    if d == 1:
        out = np.where(r >= 0, -0.5 * r * r + 0.5 * math.log(2.0 / math.pi), -np.inf)
    return out


def chi_pdf(r, d: int):
    """Density of the norm of a standard Gaussian vector in R^d."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("chi_pdf requires r >= 0")
    return np.exp(chi_logpdf(r, d))


def chi_cdf(r, d: int):
    r = np.asarray(r, dtype=float)
    return special.gammainc(0.5 * d, 0.5 * np.square(np.maximum(r, 0.0)))


def chi_ppf(u, d: int):
    return np.sqrt(2.0 * special.gammaincinv(0.5 * d, np.asarray(u, dtype=float)))


def gamma_logpdf(r, k: float, theta: float = 1.0):
    if k <= 0 or theta <= 0:
        raise ValueError("shape and scale must be positive")
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (k - 1) * np.log(r) - r / theta - special.gammaln(k) - k * math.log(theta)
    if k == 1:
        out = np.where(r >= 0, -r / theta - math.log(theta), -np.inf)
    return out


def gamma_pdf(r, k: float, theta: float = 1.0):
    return np.exp(gamma_logpdf(r, k, theta))


def gaussian_logpdf(x: np.ndarray) -> np.ndarray:
    """Row-wise log density of N(0, I_d)."""
    x = np.atleast_2d(x)
    d = x.shape[1]
    return -0.5 * d * math.log(2 * math.pi) - 0.5 * np.einsum("ij,ij->i", x, x)


# Dense kernels. Thin wrappers that refuse silent broadcasting.

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} x {b.shape}")
    return a @ b


def transpose_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a^T b."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError(f"transpose_matmul shape mismatch {a.shape} x {b.shape}")
    return a.T @ b


def row_norms(x: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.atleast_2d(x), axis=1)


def add_scaled(a: np.ndarray, b: np.ndarray, alpha: float) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError(f"add_scaled shape mismatch {a.shape} vs {b.shape}")
    return a + alpha * b


def sort_column(x: np.ndarray, j: int) -> np.ndarray:
    return np.sort(np.asarray(x)[:, j])
