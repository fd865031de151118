"""Continuous targets on [0,1]^d with certified continuity-modulus models.

Every construction in this package discretizes onto a finite verification
grid; the modulus model is what turns grid statements back into certified
continuum statements.  Modulus bounds must therefore *dominate* the true
modulus of continuity; an estimate that can undershoot would silently break
the cube-size selection downstream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


class DomainError(ValueError):
    """A point fell outside [0,1]^d."""


# ---------------------------------------------------------------------------
# modulus models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LipschitzModulus:
    """bound(t) = rate * t."""

    rate: float

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError(f"Lipschitz rate must be nonnegative, got {self.rate}")

    def bound(self, t):
        return self.rate * np.asarray(t, dtype=float)


@dataclass(frozen=True)
class TabulatedModulus:
    """Piecewise-linear bound through (t, w) knots, extrapolated by the
    final slope.  Knots must start at (0, 0) and be nondecreasing."""

    knots: tuple

    def __post_init__(self):
        knots = tuple((float(t), float(w)) for t, w in self.knots)
        if not knots or knots[0] != (0.0, 0.0):
            raise ValueError("tabulated modulus must start at the knot (0, 0)")
        ts = [t for t, _ in knots]
        ws = [w for _, w in knots]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("tabulated modulus knots must have increasing t")
        if any(b < a for a, b in zip(ws, ws[1:])):
            raise ValueError("tabulated modulus must be nondecreasing")
        object.__setattr__(self, "knots", knots)

    def bound(self, t):
        t = np.asarray(t, dtype=float)
        ts = np.array([k[0] for k in self.knots])
        ws = np.array([k[1] for k in self.knots])
        out = np.interp(t, ts, ws)
        if len(ts) >= 2:
            slope = (ws[-1] - ws[-2]) / (ts[-1] - ts[-2])
        else:
            slope = 0.0
        beyond = t > ts[-1]
        out = np.where(beyond, ws[-1] + slope * (t - ts[-1]), out)
        return out if out.ndim else float(out)


def residual_modulus(base, net_lipschitz: float):
    """Modulus model for (target - network): bound(t) = base(t) + L*t.

    Uses the conservative sum; the result must stay an upper bound, so no
    empirical re-estimation is allowed here.
    """
    if net_lipschitz < 0:
        raise ValueError("network Lipschitz bound must be nonnegative")
    if net_lipschitz == 0:
        return base
    if isinstance(base, LipschitzModulus):
        return LipschitzModulus(base.rate + net_lipschitz)
    if isinstance(base, TabulatedModulus):
        bumped = tuple((t, w + net_lipschitz * t) for t, w in base.knots)
        return TabulatedModulus(bumped)
    raise TypeError(f"unsupported modulus model {type(base).__name__}")


# ---------------------------------------------------------------------------
# targets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TargetFunction:
    """Evaluable target on [0,1]^d.

    ``evaluate`` maps an (n, d) array of points to an (n,) array of values
    and must be defined on the closed cube, boundary included.
    """

    dim: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    modulus: object
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.dim}")

    def __call__(self, points) -> np.ndarray:
        return self.evaluate(np.asarray(points, dtype=float))


def check_domain(points, dim: int) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[None, :]
    if points.shape[-1] != dim:
        raise DomainError(f"points have dimension {points.shape[-1]}, expected {dim}")
    if np.any(points < 0.0) or np.any(points > 1.0):
        raise DomainError("point outside [0,1]^d")
    return points


def constant_target(value: float = 1.0, dim: int = 1) -> TargetFunction:
    def ev(points):
        points = np.asarray(points, dtype=float)
        return np.full(points.shape[0], float(value))

    return TargetFunction(dim=dim, evaluate=ev, modulus=LipschitzModulus(0.0),
                          name=f"constant({value})")


# |d/dx sin(32 pi x)| <= 32 pi and |d/dx 0.5 cos(16 pi x^2)| <= 16 pi on [0,1]
F1_LIPSCHITZ = 48.0 * np.pi


def f1_target() -> TargetFunction:
    """1-D oscillatory benchmark: sin(32 pi x) - 0.5 cos(16 pi x^2)."""

    def ev(points):
        x = np.asarray(points, dtype=float).reshape(-1)
        return np.sin(32 * np.pi * x) - 0.5 * np.cos(16 * np.pi * x ** 2)

    return TargetFunction(dim=1, evaluate=ev, modulus=LipschitzModulus(F1_LIPSCHITZ),
                          name="f1")


F2_A = np.array([[0.3, 0.2], [0.2, 0.3]])
F2_B = np.array([12 * np.pi, 8 * np.pi])
F2_C = np.array([[4 * np.pi, 12 * np.pi], [6 * np.pi, 10 * np.pi]])
F2_D = np.array([[14 * np.pi, 12 * np.pi], [8 * np.pi, 10 * np.pi]])


def _f2_lipschitz() -> float:
    # Per term a_ij * sin(u) * |cos(v)| with u = b_i x_i + c_ij x_i x_j,
    # v = b_j x_j + d_ij x_i^2: |grad| <= |grad u| + |grad v| coordinatewise
    # since |sin|, |cos| <= 1 and both factors are 1-Lipschitz in u, v.
    total = 0.0
    for i in range(2):
        for j in range(2):
            gu = np.zeros(2)
            gu[i] += F2_B[i]
            gu[i] += F2_C[i, j]  # x_j factor, |x_j| <= 1
            gu[j] += F2_C[i, j]  # x_i factor
            gv = np.zeros(2)
            gv[j] += F2_B[j]
            gv[i] += 2 * F2_D[i, j]
            total += F2_A[i, j] * np.linalg.norm(gu + gv)
    return float(total)


def f2_target() -> TargetFunction:
    """2-D coupled oscillatory benchmark."""

    def ev(points):
        p = np.asarray(points, dtype=float)
        x1, x2 = p[..., 0], p[..., 1]
        x = (x1, x2)
        out = np.zeros_like(x1)
        for i in range(2):
            for j in range(2):
                u = F2_B[i] * x[i] + F2_C[i, j] * x[i] * x[j]
                v = F2_B[j] * x[j] + F2_D[i, j] * x[i] ** 2
                out += F2_A[i, j] * np.sin(u) * np.abs(np.cos(v))
        return out

    return TargetFunction(dim=2, evaluate=ev, modulus=LipschitzModulus(_f2_lipschitz()),
                          name="f2")


def load_grid_target(path, lipschitz: float) -> TargetFunction:
    """Load a target from CSV grid samples (header x1,...,xd,value).

    The samples must form a complete axis-aligned lattice; evaluation is
    multilinear interpolation between lattice nodes, with the declared
    Lipschitz constant as modulus model.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    if header[-1] != "value" or not all(h == f"x{i+1}" for i, h in enumerate(header[:-1])):
        raise ValueError(f"expected header x1,...,xd,value, got {header}")
    dim = len(header) - 1
    data = np.asarray(rows, dtype=float)
    axes = [np.unique(data[:, k]) for k in range(dim)]
    shape = tuple(len(a) for a in axes)
    if np.prod(shape) != len(data):
        raise ValueError("grid samples do not form a complete lattice")
    values = np.full(shape, np.nan)
    idx = tuple(np.searchsorted(axes[k], data[:, k]) for k in range(dim))
    values[idx] = data[:, dim]
    if np.any(np.isnan(values)):
        raise ValueError("grid samples do not form a complete lattice")

    def ev(points):
        p = check_domain(points, dim)
        out = np.zeros(len(p))
        # multilinear interpolation, one corner of the surrounding cell at a time
        los, ws = [], []
        for k in range(dim):
            j = np.clip(np.searchsorted(axes[k], p[:, k], side="right") - 1, 0,
                        shape[k] - 2)
            a0, a1 = axes[k][j], axes[k][j + 1]
            los.append(j)
            ws.append((p[:, k] - a0) / (a1 - a0))
        for corner in range(1 << dim):
            w = np.ones(len(p))
            ix = []
            for k in range(dim):
                if corner >> k & 1:
                    w = w * ws[k]
                    ix.append(los[k] + 1)
                else:
                    w = w * (1.0 - ws[k])
                    ix.append(los[k])
            out += w * values[tuple(ix)]
        return out

    return TargetFunction(dim=dim, evaluate=ev,
                          modulus=LipschitzModulus(float(lipschitz)),
                          name="custom-grid")


TARGET_NAMES = ("constant", "f1", "f2")


def named_target(name: str, dim: Optional[int] = None) -> TargetFunction:
    if name == "constant":
        return constant_target(1.0, dim=dim or 1)
    if name == "f1":
        return f1_target()
    if name == "f2":
        return f2_target()
    raise ValueError(f"unknown target {name!r}; choose from {TARGET_NAMES + ('custom',)}")


# ---------------------------------------------------------------------------
# verification grid and residual state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VerificationGrid:
    """Uniform lattice {0, h, 2h, ..., 1}^d with m points per axis."""

    dim: int
    resolution: int

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("grid needs at least 2 points per axis")

    @property
    def spacing(self) -> float:
        return 1.0 / (self.resolution - 1)

    @property
    def point_count(self) -> int:
        return self.resolution ** self.dim

    def axis(self) -> np.ndarray:
        return np.arange(self.resolution) / (self.resolution - 1)

    def points(self) -> np.ndarray:
        """Full (m^d, d) lattice in C order (last axis fastest)."""
        ax = self.axis()
        mesh = np.meshgrid(*([ax] * self.dim), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def index_points(self, flat_index) -> np.ndarray:
        """Coordinates of lattice points given flat C-order indices."""
        flat_index = np.asarray(flat_index, dtype=np.int64)
        coords = np.empty(flat_index.shape + (self.dim,), dtype=float)
        rem = flat_index
        for k in range(self.dim - 1, -1, -1):
            coords[..., k] = (rem % self.resolution) / (self.resolution - 1)
            rem = rem // self.resolution
        return coords


@dataclass(frozen=True)
class ResidualState:
    """Target minus the approximation built so far.

    ``approx`` is anything with an ``evaluate(points) -> values`` method (a
    contraction plan stack or a compiled network) or None for the raw
    target.  ``modulus`` must dominate the residual's true modulus of
    continuity: the cube-size selection consumes it as a certified bound.
    """

    base: TargetFunction
    approx: object
    modulus: object
    grid: VerificationGrid

    def evaluate(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        vals = self.base.evaluate(points)
        if self.approx is not None:
            vals = vals - self.approx.evaluate(points)
        return vals


def initial_state(target: TargetFunction, resolution: int) -> ResidualState:
    return ResidualState(base=target, approx=None, modulus=target.modulus,
                         grid=VerificationGrid(target.dim, resolution))


def eval_positive_part(state: ResidualState, x) -> float:
    """max(residual(x), 0) at a single point of [0,1]^d."""
    pts = check_domain(x, state.base.dim)
    val = state.evaluate(pts)
    return float(np.maximum(val, 0.0)[0])


def estimate_sup(state: ResidualState, sign: int = +1, chunk: int = 1 << 22) -> float:
    """Grid maximum of (sign * residual)^+.

    This is a *lower* bound on the true supremum; the gap to the truth is at
    most modulus.bound(h * sqrt(d) / 2) since every point of the cube lies
    within that distance of a grid point.
    """
    if sign not in (+1, -1):
        raise ValueError("sign must be +1 or -1")
    grid = state.grid
    best = 0.0
    if grid.dim == 1:
        m = grid.resolution
        for i0 in range(0, m, chunk):
            i1 = min(m, i0 + chunk)
            x = (np.arange(i0, i1) / (m - 1))[:, None]
            v = sign * state.evaluate(x)
            best = max(best, float(np.maximum(v, 0.0).max()))
        return best
    v = sign * state.evaluate(grid.points())
    return float(np.maximum(v, 0.0).max())
