"""Axis-aligned cube covers and exactly ReLU-realizable cutoff bumps.

A cutoff bump for a cube Q is a continuous piecewise-linear function that is
1 on Q, decays linearly to 0 on the centered dilate rQ (1 < r < 2), and is 0
outside rQ.  Everything here is built from four ReLU ramps per coordinate, so
each bump compiles exactly into one narrow network grade.

The dilation ratio is restricted to (1, 2): large enough that a neighborhood
of every cube is covered, small enough that no point of space lies in more
than 2**d dilated cubes of one lattice (see :func:`overlap_count`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DILATION = 1.5

#: cutoff forms: "clipped" = relu(sum_i psi_i - (d-1)), which vanishes outside
#: the dilated cube; "averaged" = mean_i psi_i, which does not (kept for
#: comparison behind this flag).
CUTOFF_FORMS = ("clipped", "averaged")


def _check_dilation(r: float) -> float:
    r = float(r)
    if not 1.0 < r < 2.0:
        raise ValueError(f"dilation ratio must lie in the open interval (1, 2), got {r}")
    return r


@dataclass(frozen=True)
class Dilation:
    """Validated dilation ratio; construction fails outside (1, 2)."""

    r: float = DEFAULT_DILATION

    def __post_init__(self):
        _check_dilation(self.r)


@dataclass(frozen=True)
class Cube:
    """Closed axis-aligned cube with center ``center``, side ``side``.

    ``index`` is the integer lattice multi-index of the cube on its grid
    (center == (index + 1/2) * side); it gives plans a deterministic order.
    """

    center: tuple
    side: float
    index: tuple

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError(f"cube side must be positive, got {self.side}")

    @property
    def dim(self) -> int:
        return len(self.center)

    @classmethod
    def from_index(cls, index, side: float) -> "Cube":
        index = tuple(int(b) for b in np.atleast_1d(index))
        side = float(side)
        center = tuple((b + 0.5) * side for b in index)
        return cls(center=center, side=side, index=index)

    def scaled_coords(self, x) -> np.ndarray:
        """Map points to cube-local coordinates: Q becomes [-1, 1]^d."""
        x = np.asarray(x, dtype=float)
        return 2.0 * (x - np.asarray(self.center)) / self.side

    def contains(self, x) -> np.ndarray:
        """Closed membership test, consistent with the cutoff plateau."""
        s = self.scaled_coords(x)
        return np.all(np.abs(s) <= 1.0, axis=-1)

    def dilated_contains(self, x, r: float = DEFAULT_DILATION) -> np.ndarray:
        r = _check_dilation(r)
        s = self.scaled_coords(x)
        return np.all(np.abs(s) <= r, axis=-1)


def trapezoid(x, r: float = DEFAULT_DILATION):
    """Symmetric trapezoid ramp from four ReLUs: 1 on [-1, 1], linear on
    [1, r] and [-r, -1], 0 outside [-r, r].

    The four ReLU units are grouped as (relu(x-1) - relu(x-r)) +
    (relu(-x-1) - relu(-x-r)), an algebraically equal rearrangement of the
    plateau-minus-shoulders combination.  With this grouping the plateau
    value is exactly 1.0 in binary64 for every admissible r, the value
    outside the support is exactly 0.0 when the ramp slope 1/(r-1) is a
    power of two (so for the default r = 3/2), and trapezoid(x) ==
    trapezoid(-x) holds bit-for-bit.  The final clamp at zero absorbs the
    few-ulp negative excursions other ratios can produce off-support; it
    never binds where the combination is exact.
    """
    r = _check_dilation(r)
    x = np.asarray(x, dtype=float)
    right = np.maximum(x - 1.0, 0.0) - np.maximum(x - r, 0.0)
    left = np.maximum(-x - 1.0, 0.0) - np.maximum(-x - r, 0.0)
    return np.maximum(1.0 - (right + left) / (r - 1.0), 0.0)


def cutoff_value(cube: Cube, x, r: float = DEFAULT_DILATION, form: str = "clipped"):
    """Evaluate the cutoff bump of ``cube`` at points ``x``.

    ``x`` has shape (..., d).  Returns values in [0, 1]: exactly 1 on the
    cube, exactly 0 outside the r-dilate (for the default "clipped" form),
    linear in between.
    """
    if form not in CUTOFF_FORMS:
        raise ValueError(f"unknown cutoff form {form!r}, expected one of {CUTOFF_FORMS}")
    r = _check_dilation(r)
    s = cube.scaled_coords(x)
    ramps = trapezoid(s, r)
    d = cube.dim
    if d == 1:
        return ramps[..., 0]
    if form == "averaged":
        return ramps.sum(axis=-1) / d
    return np.maximum(ramps.sum(axis=-1) - (d - 1), 0.0)


def _check_common_grid(cubes) -> float:
    """All cubes must come from one lattice: equal sides, centers on it."""
    if not cubes:
        raise ValueError("need at least one cube")
    side = cubes[0].side
    for q in cubes:
        if q.side != side:
            raise ValueError(
                f"cubes from mixed grids: side {q.side} != {side}"
            )
        expect = tuple((b + 0.5) * side for b in q.index)
        if not np.allclose(q.center, expect, rtol=0.0, atol=1e-12 * side):
            raise ValueError(f"cube center {q.center} is off its lattice position {expect}")
    return side


def overlap_count(cubes, x, r: float = DEFAULT_DILATION) -> np.ndarray:
    """Number of r-dilated cubes containing each point of ``x``.

    ``cubes`` must be drawn from a single lattice.  For r in (1, 2) the
    count never exceeds 2**d, with equality exactly at lattice vertices
    whose incident cubes are all present.
    """
    r = _check_dilation(r)
    _check_common_grid(cubes)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    counts = np.zeros(len(pts), dtype=np.int64)
    for q in cubes:
        counts += q.dilated_contains(pts, r)
    return counts[0] if single else counts
