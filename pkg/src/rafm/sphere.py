"""Matched-radius spherical constructions.

All functions accept a single vector of shape ``(d,)`` or a batch ``(B, d)``
and broadcast the time argument over the leading axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RADIUS_RTOL = 1e-6
ANTIPODAL_TOL = 1e-12
ANTIPODAL_ANGLE = np.pi - 1e-7
SMALL_ANGLE = 1e-6
PROJECTION_SKIP_NORM = 1e-3


class SphereDomainError(ValueError):
    pass


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def _norm(a):
    return np.sqrt(_dot(a, a))


def _angle_between(u0, u1):
    # 2*atan2(|u0-u1|, |u0+u1|) keeps full relative precision near 0 and pi.
    return 2.0 * np.arctan2(_norm(u0 - u1), _norm(u0 + u1))


def _antipodal_completion(u0: np.ndarray) -> np.ndarray:
    """Deterministic stand-in target for u1 = -u0.

    Gram-Schmidt the first standard basis vector against u0 (the second one
    when e_1 is nearly parallel), then rotate u0 by ANTIPODAL_ANGLE in the
    resulting plane.
    """
    d = u0.shape[-1]
    if d < 2:
        raise SphereDomainError("antipodal pair on S^0 has no geodesic")
    e = np.zeros_like(u0)
    use_second = np.abs(u0[..., 0]) > 0.9
    e[..., 0] = np.where(use_second, 0.0, 1.0)
    e[..., 1] = np.where(use_second, 1.0, 0.0)
    w = e - _dot(e, u0)[..., None] * u0
    w /= _norm(w)[..., None]
    return np.cos(ANTIPODAL_ANGLE) * u0 + np.sin(ANTIPODAL_ANGLE) * w


@dataclass(frozen=True)
class GeodesicPair:
    x0: np.ndarray
    x1: np.ndarray
    R: np.ndarray
    u0: np.ndarray
    u1: np.ndarray
    theta: np.ndarray
    antipodal: np.ndarray


def geodesic_pair(x0, x1) -> GeodesicPair:
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if x0.shape != x1.shape:
        raise SphereDomainError(f"shape mismatch {x0.shape} vs {x1.shape}")
    r0 = _norm(x0)
    r1 = _norm(x1)
    if np.any(r0 <= 0) or np.any(r1 <= 0):
        raise SphereDomainError("zero-norm endpoint")
    if np.any(np.abs(r0 - r1) > RADIUS_RTOL * r1):
        raise SphereDomainError("endpoint radii differ beyond tolerance")
    u0 = x0 / r0[..., None]
    u1 = x1 / r1[..., None]
    cos = np.clip(_dot(u0, u1), -1.0, 1.0)
    antipodal = cos < -1.0 + ANTIPODAL_TOL
    theta = _angle_between(u0, u1)
    if np.any(antipodal):
        u1 = np.where(antipodal[..., None], _antipodal_completion(u0), u1)
        theta = np.where(antipodal, ANTIPODAL_ANGLE, theta)
    return GeodesicPair(x0, x1, r1, u0, u1, theta, antipodal)


def _check_t(t):
    t = np.asarray(t, dtype=float)
    if np.any((t < 0) | (t > 1)) or np.any(np.isnan(t)):
        raise SphereDomainError("t must lie in [0, 1]")
    return t


def _sin_ratio(a, theta):
    """sin(a*theta)/sin(theta) with a Taylor branch for tiny theta."""
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    exact = np.sin(a * safe) / np.sin(safe)
    taylor = a * (1.0 + theta * theta * (1.0 - a * a) / 6.0)
    return np.where(small, taylor, exact)


def _theta_over_sin(theta):
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    return np.where(small, 1.0 + theta * theta / 6.0, safe / np.sin(safe))


def slerp(pair: GeodesicPair, t) -> np.ndarray:
    """psi_t(x0, x1) = R * gamma_t(u0, u1); endpoints are returned verbatim."""
    t = _check_t(t)
    a = _sin_ratio(1.0 - t, pair.theta)
    b = _sin_ratio(t, pair.theta)
    out = pair.R[..., None] * (a[..., None] * pair.u0 + b[..., None] * pair.u1)
    t_b = np.broadcast_to(t, pair.theta.shape)[..., None]
    out = np.where(t_b == 0.0, pair.x0, out)
    # Antipodal completions end near, not at, x1.
    at_end = (t_b == 1.0) & ~pair.antipodal[..., None]
    return np.where(at_end, pair.x1, out)


def slerp_velocity(pair: GeodesicPair, t) -> np.ndarray:
    t = _check_t(t)
    th = pair.theta
    c = _theta_over_sin(th)
    a = -np.cos((1.0 - t) * th)
    b = np.cos(t * th)
    return (pair.R * c)[..., None] * (a[..., None] * pair.u0 + b[..., None] * pair.u1)


def log_map(x, y) -> np.ndarray:
    """Riemannian log on the sphere of radius ||x|| through x, towards y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rx = _norm(x)
    ry = _norm(y)
    if np.any(rx <= 0) or np.any(np.abs(rx - ry) > RADIUS_RTOL * ry):
        raise SphereDomainError("log_map needs equal, nonzero radii")
    R2 = rx * rx
    inner = _dot(x, y)
    w = y - (inner / R2)[..., None] * x
    phi = _angle_between(x / rx[..., None], y / ry[..., None])
    if np.any(inner / R2 < -1.0 + ANTIPODAL_TOL):
        raise SphereDomainError("log_map undefined for antipodal points")
    # phi/sin(phi) * w, with sin(phi) = |w| / R on the sphere.
    wn = _norm(w)
    small = phi < SMALL_ANGLE
    scale = np.where(small, 1.0 + phi * phi / 6.0, phi * rx / np.where(small, 1.0, wn))
    # Coincident points: w is pure rounding residue.
    scale = np.where(phi == 0.0, 0.0, scale)
    return scale[..., None] * w


def conditional_field(x, x1, t) -> np.ndarray:
    """Velocity at x of the geodesic reaching x1 at time 1: Log_x(x1)/(1-t)."""
    t = np.asarray(t, dtype=float)
    if np.any(t >= 1) or np.any(t < 0):
        raise SphereDomainError("conditional_field needs t in [0, 1)")
    denom = 1.0 - t
    if denom.ndim:
        denom = denom[..., None]
    return log_map(x, x1) / denom


def tangential_project(x, v, skip_norm: float = PROJECTION_SKIP_NORM) -> np.ndarray:
    """Remove the radial part of v at x; rows with ||x|| < skip_norm pass through."""
    x = np.asarray(x)
    v = np.asarray(v)
    r2 = _dot(x, x)
    keep = r2 < skip_norm * skip_norm
    coef = np.where(keep, 0.0, _dot(x, v) / np.where(keep, 1.0, r2))
    return v - coef[..., None] * x
