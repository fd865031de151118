"""Brute-force oracles for small instances.

These deliberately avoid the library's fast paths: membership tests are
pure-python loops, superlevel sets come from dense scans, Lipschitz bounds
from finite differences.  The test suite checks the optimized code against
these on instances small enough to enumerate.
"""

from __future__ import annotations

import math

import numpy as np

MAX_DIM = 3
MAX_PAIRWISE_RESOLUTION = 65


class InstanceTooLarge(ValueError):
    pass


def check_small(dim: int, resolution: int) -> None:
    if dim > MAX_DIM or resolution > MAX_PAIRWISE_RESOLUTION:
        raise InstanceTooLarge(
            f"oracle instances are limited to d <= {MAX_DIM} and "
            f"m <= {MAX_PAIRWISE_RESOLUTION} per axis; got d={dim}, m={resolution}")


def overlap_count_bruteforce(cubes, r: float, points) -> list:
    """Count dilated-cube membership per point by plain loops."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    counts = []
    for p in points:
        c = 0
        for q in cubes:
            inside = True
            for k in range(len(p)):
                half = r * q.side / 2.0
                if abs(p[k] - q.center[k]) > half:
                    inside = False
                    break
            if inside:
                c += 1
        counts.append(c)
    return counts


def dense_superlevel(fn, dim: int, eps: float, resolution: int):
    """Dense-grid superlevel set of fn: points with fn >= (1-eps) * max(fn+).

    Returns (points, mask, sup_estimate).
    """
    ax = np.arange(resolution) / (resolution - 1)
    mesh = np.meshgrid(*([ax] * dim), indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    vals = fn(pts)
    sup = max(float(np.max(vals)), 0.0)
    mask = vals >= (1.0 - eps) * sup if sup > 0 else np.zeros(len(pts), dtype=bool)
    return pts, mask, sup


def pairwise_modulus_check(fn, modulus, dim: int, resolution: int) -> float:
    """Worst violation of |f(x)-f(y)| <= bound(||x-y||) over all grid pairs.

    Nonpositive result means the modulus model dominates on this grid.
    """
    check_small(dim, resolution)
    ax = np.arange(resolution) / (resolution - 1)
    mesh = np.meshgrid(*([ax] * dim), indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    vals = fn(pts)
    worst = -math.inf
    for i in range(len(pts)):
        d = np.linalg.norm(pts[i + 1:] - pts[i], axis=1)
        gap = np.abs(vals[i + 1:] - vals[i]) - modulus.bound(d)
        if len(gap):
            worst = max(worst, float(gap.max()))
    return worst


def finite_difference_lipschitz(fn_points, dim: int, n_pairs: int = 100000,
                                seed: int = 0) -> float:
    """Max difference quotient over random point pairs in [0,1]^d."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, (n_pairs, dim))
    b = a + rng.normal(scale=1e-3, size=(n_pairs, dim))
    b = np.clip(b, 0.0, 1.0)
    dist = np.linalg.norm(b - a, axis=1)
    ok = dist > 1e-12
    quot = np.abs(fn_points(b[ok]) - fn_points(a[ok])) / dist[ok]
    return float(quot.max())


def norm_1d_linear(p) -> float:
    """Closed-form L^p norms of g(x) = x on [0,1]."""
    if p == 1:
        return 0.5
    if p == 2:
        return 1.0 / math.sqrt(3.0)
    if p in (np.inf, "inf"):
        return 1.0
    raise ValueError(f"unsupported p = {p!r}")


def quadrature_norm(fn_points, dim: int, p, resolution: int = 1025) -> float:
    """Dense trapezoid-quadrature norm, an independent check of grid_norm."""
    ax = np.arange(resolution) / (resolution - 1)
    mesh = np.meshgrid(*([ax] * dim), indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    v = fn_points(pts).reshape((resolution,) * dim)
    if p in (np.inf, "inf"):
        return float(np.abs(v).max())
    w1 = np.ones(resolution)
    w1[0] = w1[-1] = 0.5
    w = np.ones((resolution,) * dim)
    for axis in range(dim):
        shape = [1] * dim
        shape[axis] = resolution
        w = w * w1.reshape(shape)
    h = 1.0 / (resolution - 1)
    if p == 1:
        return float(np.sum(w * np.abs(v)) * h ** dim)
    if p == 2:
        return math.sqrt(float(np.sum(w * v * v) * h ** dim))
    raise ValueError(f"unsupported p = {p!r}")
