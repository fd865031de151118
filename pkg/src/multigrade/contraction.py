"""One application of the balanced residual-contraction operator.

Given a residual g on [0,1]^d and a proportion eps < 1/(1 + 2^d), the
operator covers the near-maximum set {g >= (1-eps) sup g+} with lattice
cubes small enough that g stays positive on their dilates, and subtracts a
bump of height eps*sup on each cube.  Doing the same to -g and taking the
difference contracts the uniform norm by the factor (1 - eps): the bumps
never overshoot (at most 2^d of them overlap anywhere, which is where the
eps bound comes from), and every near-max point retains the full plateau
value.

All detection happens on the finite verification grid and is witness-based:
a cube is selected only when a grid point inside it certifies intersection
with the superlevel set, so every selected cube genuinely meets it and the
proved inequalities survive discretization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cutoff import DEFAULT_DILATION, Cube, _check_dilation, trapezoid
from .targets import LipschitzModulus, ResidualState

#: cap for the cube size when the modulus condition never binds (near-constant
#: residuals).  A coarse power of two keeps every cube face and every dilated
#: face of such rounds on the dyadic verification lattice, so piecewise-linear
#: residuals are measured without any grid gap.
DELTA_CAP = 0.5


class GridTooCoarseError(RuntimeError):
    """Superlevel detection would be unsound at the current resolution."""

    def __init__(self, spacing, delta):
        super().__init__(
            f"grid spacing {spacing:g} exceeds delta/2 = {delta / 2:g}; "
            "refine the verification grid before building this plan"
        )
        self.spacing = spacing
        self.delta = delta


def eps_limit(dim: int) -> float:
    """Largest admissible contraction proportion, 1 / (1 + 2^d)."""
    return 1.0 / (1.0 + 2 ** dim)


def default_eps(dim: int) -> float:
    """90% of the admissible bound: contracts fast without collapsing delta."""
    return 0.9 * eps_limit(dim)


def _check_eps(eps: float, dim: int) -> float:
    eps = float(eps)
    if not 0.0 < eps < eps_limit(dim):
        raise ValueError(
            f"eps must lie in (0, {eps_limit(dim):.6g}) for dimension {dim}, got {eps}"
        )
    return eps


def admissible_cube_size(eps: float, m: float, modulus, dim: int) -> float:
    """Largest cube size t < 1 with modulus.bound(2*sqrt(d)*t) <= (1-eps-2^d*eps)*m.

    The right-hand side is the continuity budget left over after reserving
    eps for the bump height and 2^d*eps for worst-case bump overlap; keeping
    the cubes this small guarantees the residual is still >= 2^d*eps*m on
    every dilated cube, which is what makes the bumps sign-aligned.

    Closed form for Lipschitz models; bisection to relative tolerance 1e-12
    otherwise.  Capped at DELTA_CAP (< 1).
    """
    eps = _check_eps(eps, dim)
    if m <= 0:
        raise ValueError("sup estimate m must be positive; the trivial case m == 0 "
                         "is the caller's empty plan")
    budget = (1.0 - eps - (2 ** dim) * eps) * m
    scale = 2.0 * np.sqrt(dim)
    if isinstance(modulus, LipschitzModulus):
        if modulus.rate == 0.0:
            return DELTA_CAP
        return min(DELTA_CAP, budget / (scale * modulus.rate))
    if modulus.bound(scale * DELTA_CAP) <= budget:
        return DELTA_CAP
    lo, hi = 0.0, DELTA_CAP  # bound(scale*lo) <= budget always (bound(0) = 0)
    while hi - lo > 1e-12 * max(lo, 1e-300):
        mid = 0.5 * (lo + hi)
        if modulus.bound(scale * mid) <= budget:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class CutoffAtom:
    """One signed scaled bump: amplitude * cutoff of ``cube``.

    ``grade_index`` is the atom's 1-based position in its plan's unified
    sequence; positive-side atoms come first and carry amplitude > 0.
    """

    cube: Cube
    amplitude: float
    r: float
    grade_index: int


@dataclass(frozen=True)
class SidePlan:
    """Cubes covering the near-max set of one sign of the residual.

    ``betas`` holds the lattice multi-indices (n, d) in lexicographic order;
    ``witnesses`` the certifying grid point for each cube.  ``amplitude`` is
    sign * eps * m.
    """

    sign: int
    m: float
    delta: float
    amplitude: float
    betas: np.ndarray
    witnesses: np.ndarray

    @property
    def count(self) -> int:
        return len(self.betas)

    def cube(self, i: int) -> Cube:
        return Cube.from_index(self.betas[i], self.delta)


def _detect_side(values, threshold):
    """Grid points with value >= threshold (closed superlevel set)."""
    return np.flatnonzero(values >= threshold)


def _cubes_for_points(points: np.ndarray, delta: float):
    """All lattice cubes whose closed cube contains a given point.

    Returns (betas, owner) where ``owner[i]`` indexes the point that
    witnessed ``betas[i]``.  A point on a shared face belongs to every
    incident cube, matching closed-cube membership.
    """
    n, d = points.shape
    base = np.floor(points / delta).astype(np.int64)
    betas_parts = []
    owner_parts = []
    for corner in range(3 ** d):
        off = np.empty(d, dtype=np.int64)
        c = corner
        for k in range(d):
            off[k] = c % 3 - 1
            c //= 3
        cand = base + off
        lo = cand * delta
        hi = (cand + 1) * delta
        ok = np.all((points >= lo) & (points <= hi), axis=1)
        betas_parts.append(cand[ok])
        owner_parts.append(np.flatnonzero(ok))
    betas = np.concatenate(betas_parts, axis=0)
    owners = np.concatenate(owner_parts, axis=0)
    # sort lexicographically by beta with the witness index as final tiebreak
    # (np.lexsort treats the last key as primary), then keep first witnesses
    order = np.lexsort((owners,) + tuple(betas[:, k] for k in range(d - 1, -1, -1)))
    betas, owners = betas[order], owners[order]
    if len(betas):
        keep = np.ones(len(betas), dtype=bool)
        keep[1:] = np.any(betas[1:] != betas[:-1], axis=1)
        betas, owners = betas[keep], owners[keep]
    return betas, owners


def build_side_plan(state: ResidualState, sign: int, eps: float,
                    grid_values: Optional[np.ndarray] = None) -> SidePlan:
    """Cover the grid-detected superlevel set of sign * residual.

    ``grid_values`` may pass precomputed residual values on the full grid
    (C order); otherwise they are evaluated here.  Raises
    GridTooCoarseError when the grid spacing exceeds delta/2, below which a
    cube could fail to contain any grid sample.
    """
    eps = _check_eps(eps, state.base.dim)
    if sign not in (+1, -1):
        raise ValueError("sign must be +1 or -1")
    grid = state.grid
    if grid_values is None:
        grid_values = state.evaluate(grid.points())
    signed = sign * np.asarray(grid_values).reshape(-1)
    m = float(np.maximum(signed, 0.0).max())
    if m <= 0.0:
        return SidePlan(sign=sign, m=0.0, delta=0.0, amplitude=0.0,
                        betas=np.empty((0, state.base.dim), dtype=np.int64),
                        witnesses=np.empty((0, state.base.dim)))
    delta = admissible_cube_size(eps, m, state.modulus, state.base.dim)
    if grid.spacing > delta / 2.0:
        raise GridTooCoarseError(grid.spacing, delta)
    idx = _detect_side(signed, (1.0 - eps) * m)
    pts = grid.index_points(idx)
    betas, owners = _cubes_for_points(pts, delta)
    return SidePlan(sign=sign, m=m, delta=delta, amplitude=sign * eps * m,
                    betas=betas, witnesses=pts[owners])


@dataclass(frozen=True)
class ContractionPlan:
    """Both side plans in unified order: positive side first, then negative,
    each sorted lexicographically by cube index."""

    eps: float
    r: float
    dim: int
    positive: SidePlan
    negative: SidePlan
    form: str = "clipped"

    @property
    def n(self) -> int:
        return self.positive.count + self.negative.count

    @property
    def m_plus(self) -> float:
        return self.positive.m

    @property
    def m_minus(self) -> float:
        return self.negative.m

    @property
    def delta(self) -> float:
        """The smaller of the two side cube sizes (for trace purposes)."""
        ds = [s.delta for s in (self.positive, self.negative) if s.count]
        return min(ds) if ds else 0.0

    def sides(self):
        return (self.positive, self.negative)

    def iter_atoms(self):
        k = 0
        for side in self.sides():
            for i in range(side.count):
                k += 1
                yield CutoffAtom(cube=side.cube(i), amplitude=side.amplitude,
                                 r=self.r, grade_index=k)

    @property
    def atoms(self):
        return list(self.iter_atoms())

    def evaluate(self, points) -> np.ndarray:
        """Sum of all signed bumps at ``points`` (shape (n, d) or (d,))."""
        points = np.asarray(points, dtype=float)
        single = points.ndim == 1
        pts = points[None, :] if single else points
        out = np.zeros(len(pts))
        for side in self.sides():
            out += _side_values(side, self.r, pts, self.form)
        return out[0] if single else out

    def lipschitz_round_bound(self) -> float:
        """Certified Lipschitz bound of this plan's sum, via bounded overlap.

        At most 2^d dilated cubes of one side's lattice contain any point,
        and each bump has Euclidean gradient at most |amp| * 2*sqrt(d) /
        (delta * (r-1)).
        """
        d = self.dim
        total = 0.0
        for side in self.sides():
            if side.count:
                total += (2 ** d) * abs(side.amplitude) * 2.0 * np.sqrt(d) / (
                    side.delta * (self.r - 1.0))
        return total


def _side_values(side: SidePlan, r: float, pts: np.ndarray, form: str) -> np.ndarray:
    """Vectorized sum of one side's bumps via lattice bucketing.

    Any point lies in the r-dilate of at most 2^d of the side's cubes, all
    with lattice index within one step of floor(x/delta), so only 3^d
    candidate cubes are checked per point.  The bucketing is only valid for
    cutoffs supported inside the dilate; the "averaged" comparison form is
    not, and falls back to the dense sum.
    """
    out = np.zeros(len(pts))
    if side.count == 0:
        return out
    d = pts.shape[1]
    if form == "averaged" and d > 1:
        for i in range(side.count):
            s = 2.0 * (pts - (side.betas[i] + 0.5) * side.delta) / side.delta
            out += side.amplitude * _cutoff_from_scaled(s, r, form, d)
        return out
    delta = side.delta
    lo, base = _beta_key_basis(side.betas)
    keys_sorted = np.sort(_beta_keys(side.betas, lo, base))
    anchor = np.floor(pts / delta).astype(np.int64)
    for corner in range(3 ** d):
        off = np.empty(d, dtype=np.int64)
        c = corner
        for k in range(d):
            off[k] = c % 3 - 1
            c //= 3
        cand = anchor + off
        centers = (cand + 0.5) * delta
        s = 2.0 * (pts - centers) / delta
        near = np.all(np.abs(s) <= r, axis=1)
        near &= np.all((cand >= lo) & (cand < lo + base), axis=1)
        idx_in = np.flatnonzero(near)
        if not len(idx_in):
            continue
        want = _beta_keys(cand[idx_in], lo, base)
        pos = np.clip(np.searchsorted(keys_sorted, want), 0, len(keys_sorted) - 1)
        hit = keys_sorted[pos] == want
        if not hit.any():
            continue
        sel = idx_in[hit]
        vals = _cutoff_from_scaled(s[idx_in][hit], r, form, d)
        out[sel] += side.amplitude * vals
    return out


def _cutoff_from_scaled(s: np.ndarray, r: float, form: str, d: int) -> np.ndarray:
    ramps = trapezoid(s, r)
    if d == 1:
        return ramps[..., 0]
    if form == "averaged":
        return ramps.sum(axis=-1) / d
    return np.maximum(ramps.sum(axis=-1) - (d - 1), 0.0)


def _beta_key_basis(betas: np.ndarray):
    """Shift and mixed-radix basis making multi-index keys collision-free."""
    lo = betas.min(axis=0)
    base = betas.max(axis=0) - lo + 1
    if np.prod(base.astype(float)) >= 2 ** 62:
        raise ValueError("cube index range too large to key")
    return lo, base


def _beta_keys(betas: np.ndarray, lo, base) -> np.ndarray:
    keys = np.zeros(len(betas), dtype=np.int64)
    for k in range(betas.shape[1]):
        keys = keys * base[k] + (betas[:, k] - lo[k])
    return keys


def build_balanced_plan(state: ResidualState, eps: float,
                        r: float = DEFAULT_DILATION, form: str = "clipped",
                        grid_values: Optional[np.ndarray] = None) -> ContractionPlan:
    """Build the full two-sided plan for the current residual."""
    r = _check_dilation(r)
    eps = _check_eps(eps, state.base.dim)
    if grid_values is None:
        grid_values = state.evaluate(state.grid.points())
    pos = build_side_plan(state, +1, eps, grid_values)
    neg = build_side_plan(state, -1, eps, grid_values)
    return ContractionPlan(eps=eps, r=r, dim=state.base.dim,
                           positive=pos, negative=neg, form=form)


def apply_plan(plan: ContractionPlan, points) -> np.ndarray:
    """Plan value at points of [0,1]^d (domain-checked)."""
    from .targets import check_domain

    pts = check_domain(points, plan.dim)
    vals = plan.evaluate(pts)
    return vals if np.asarray(points).ndim > 1 else float(vals[0])


class PlanStack:
    """Sum of several plans; quacks like a network for residual evaluation."""

    def __init__(self, plans=()):
        self.plans = tuple(plans)

    def append(self, plan) -> "PlanStack":
        return PlanStack(self.plans + (plan,))

    def evaluate(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        single = points.ndim == 1
        pts = points[None, :] if single else points
        out = np.zeros(len(pts))
        for plan in self.plans:
            out += plan.evaluate(pts)
        return out[0] if single else out


# ---------------------------------------------------------------------------
# serialization (documented layout; field names and order are frozen)
# ---------------------------------------------------------------------------

def _fmt(x: float) -> float:
    return float(f"{x:.17g}")


def plan_to_dict(plan: ContractionPlan) -> dict:
    sides = []
    for side in plan.sides():
        cubes = []
        for i in range(side.count):
            cube = side.cube(i)
            cubes.append({
                "beta": [int(b) for b in cube.index],
                "center": [_fmt(c) for c in cube.center],
                "side": _fmt(cube.side),
                "witness_point": [_fmt(w) for w in side.witnesses[i]],
            })
        sides.append({
            "sign": "+" if side.sign > 0 else "-",
            "m": _fmt(side.m),
            "delta": _fmt(side.delta),
            "cubes": cubes,
        })
    return {"epsilon": _fmt(plan.eps), "r": _fmt(plan.r), "sides": sides}


def plan_to_json(plan: ContractionPlan, path=None) -> str:
    text = json.dumps(plan_to_dict(plan), indent=1)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
