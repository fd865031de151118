"""Compile contraction plans into exact fixed-width ReLU network grades.

Each cutoff bump becomes one grade: a hidden layer of width 5d holding d
carry units (ReLU pass-through of the input, which is nonnegative on
[0,1]^d) plus 4d ramp units, followed for d >= 2 by a second hidden layer
of d carries plus one clipping unit, and an affine output map that scales
by the signed amplitude.  The compiled grade reproduces the analytic bump
to floating-point rounding; no approximation is introduced.

The accumulated network evaluates to the running sum of its grades'
outputs, each grade applied to the carried input.  In the chained view each
grade's hidden affine reads only the first d coordinates of the previous
layer, so all maps stay inside the width-5d affine class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cutoff import DEFAULT_DILATION, _check_dilation
from .contraction import ContractionPlan, CutoffAtom


@dataclass(frozen=True)
class AffineMap:
    """x -> weights @ x + bias."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        b = np.asarray(self.bias, dtype=float)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ValueError(f"inconsistent affine shapes {w.shape}, {b.shape}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Batched application; x has shape (n, cols)."""
        return x @ self.weights.T + self.bias


@dataclass(frozen=True)
class GradeBlock:
    """One grade: hidden ReLU stack plus affine output, acting on the
    carried input point.  The first d outputs of every hidden layer equal
    the input exactly (identity carry)."""

    hidden: tuple
    output: AffineMap
    carry_dims: int

    def __post_init__(self):
        width_cap = 5 * self.carry_dims
        for aff, act in self.hidden:
            if act != "relu":
                raise ValueError(f"unsupported activation {act!r}")
            if aff.rows > width_cap or aff.cols > width_cap:
                raise AssertionError(
                    f"affine {aff.rows}x{aff.cols} exceeds width budget {width_cap}")
        if self.output.rows > width_cap or self.output.cols > width_cap:
            raise AssertionError("output affine exceeds width budget")

    def hidden_values(self, x: np.ndarray) -> np.ndarray:
        h = x
        for aff, _ in self.hidden:
            h = np.maximum(aff.apply(h), 0.0)
        return h

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Grade output at points x of shape (n, d); returns (n,)."""
        return self.output.apply(self.hidden_values(np.asarray(x, dtype=float)))[:, 0]


def signed_carry_maps(dim: int):
    """Identity carry for inputs of arbitrary sign via relu(x) - relu(-x).

    Returns (hidden_affine, combine) with combine @ relu(hidden_affine @ x
    + 0) == x for every x.  The default grade layout never needs this (the
    carried point lives in [0,1]^d, so plain ReLU pass-through is exact);
    it is the drop-in replacement should a layout ever carry negative
    intermediates, and costs 2d of the 5d width budget.
    """
    eye = np.eye(dim)
    hidden = AffineMap(np.vstack([eye, -eye]), np.zeros(2 * dim))
    combine = np.hstack([eye, -eye])
    return hidden, combine


def compile_atom(atom: CutoffAtom, dim: int, r: Optional[float] = None,
                 form: str = "clipped") -> GradeBlock:
    """Build the grade block computing amplitude * cutoff(cube, x) exactly."""
    r = _check_dilation(atom.r if r is None else r)
    cube = atom.cube
    if not cube.side > 0:
        raise ValueError("atom cube must have positive side length")
    d = dim
    scale = 2.0 / cube.side
    c = np.asarray(cube.center)
    # first hidden layer: [d carries; per coordinate the 4 ramp units
    #   relu(s-1), relu(-s-1), relu(s-r), relu(-s-r)] with s = scale*(x - c)
    w1 = np.zeros((5 * d, d))
    b1 = np.zeros(5 * d)
    w1[:d, :] = np.eye(d)
    for i in range(d):
        rows = d + 4 * i
        for j, (sign, shift) in enumerate(((+1, 1.0), (-1, 1.0), (+1, r), (-1, r))):
            w1[rows + j, i] = sign * scale
            b1[rows + j] = -sign * scale * c[i] - shift
    hidden = [(AffineMap(w1, b1), "relu")]

    # ramp combination coefficients: psi_i = 1 - (u1 + u2 - u3 - u4)/(r-1)
    comb = np.zeros(5 * d)
    for i in range(d):
        rows = d + 4 * i
        comb[rows:rows + 4] = np.array([1.0, 1.0, -1.0, -1.0]) / (r - 1.0)

    amp = float(atom.amplitude)
    if d == 1 or form == "averaged":
        # output = amp * (1/d) * sum_i psi_i = amp - (amp/d) * comb . h
        w_out = (-(amp / d) * comb)[None, :]
        out = AffineMap(w_out, np.array([amp]))
        return GradeBlock(hidden=tuple(hidden), output=out, carry_dims=d)

    # clipped form, d >= 2: second hidden layer [d carries; clip unit]
    # clip pre-activation = sum_i psi_i - (d-1) = 1 - comb . h
    w2 = np.zeros((d + 1, 5 * d))
    b2 = np.zeros(d + 1)
    w2[:d, :d] = np.eye(d)
    w2[d, :] = -comb
    b2[d] = 1.0
    hidden.append((AffineMap(w2, b2), "relu"))
    w_out = np.zeros((1, d + 1))
    w_out[0, d] = amp
    out = AffineMap(w_out, np.array([0.0]))
    return GradeBlock(hidden=tuple(hidden), output=out, carry_dims=d)


class _PlanGrades:
    """Lazy per-grade view of a plan: blocks are materialized on access so
    large plans do not hold one matrix set per atom."""

    def __init__(self, plan: ContractionPlan):
        self.plan = plan
        self._counts = (plan.positive.count, plan.negative.count)

    def __len__(self) -> int:
        return sum(self._counts)

    def atom(self, i: int) -> CutoffAtom:
        npos = self._counts[0]
        side = self.plan.positive if i < npos else self.plan.negative
        j = i if i < npos else i - npos
        return CutoffAtom(cube=side.cube(j), amplitude=side.amplitude,
                          r=self.plan.r, grade_index=i + 1)

    def block(self, i: int) -> GradeBlock:
        return compile_atom(self.atom(i), self.plan.dim, self.plan.r, self.plan.form)


class _RawGrades:
    """Grade blocks loaded from an interchange file."""

    def __init__(self, blocks):
        self.blocks = list(blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def block(self, i: int) -> GradeBlock:
        return self.blocks[i]


class MultigradeNetwork:
    """Immutable accumulated network: appending a plan returns a new object
    sharing the existing grade storage."""

    def __init__(self, dim: int, r: float = DEFAULT_DILATION, segments=(),
                 form: str = "clipped"):
        self.dim = int(dim)
        self.r = _check_dilation(r)
        self.form = form
        self._segments = tuple(segments)
        bounds = []
        total = 0
        for seg in self._segments:
            total += len(seg)
            bounds.append(total)
        self._total = total
        self.round_boundaries = bounds

    @property
    def grade_count(self) -> int:
        return self._total

    def grade(self, k: int) -> GradeBlock:
        """Grade block for 0-based grade index k."""
        if not 0 <= k < self.grade_count:
            raise IndexError(f"grade {k} out of range")
        for seg in self._segments:
            if k < len(seg):
                return seg.block(k)
            k -= len(seg)
        raise AssertionError("unreachable")

    @property
    def grades(self):
        return [self.grade(k) for k in range(self.grade_count)]

    def iter_grades(self):
        for k in range(self.grade_count):
            yield self.grade(k)

    def append_plan(self, plan: ContractionPlan) -> "MultigradeNetwork":
        if plan.dim != self.dim:
            raise ValueError(f"plan dimension {plan.dim} != network dimension {self.dim}")
        if plan.n == 0:
            return self
        return MultigradeNetwork(self.dim, self.r, self._segments + (_PlanGrades(plan),),
                                 self.form)

    def evaluate(self, points, upto: Optional[int] = None) -> np.ndarray:
        """Phi_upto at points (n, d); the full sum when upto is omitted."""
        points = np.asarray(points, dtype=float)
        single = points.ndim == 1
        pts = points[None, :] if single else points
        if upto is None:
            upto = self.grade_count
        if not 0 <= upto <= self.grade_count:
            raise ValueError(f"upto={upto} out of range 0..{self.grade_count}")
        out = np.zeros(len(pts))
        for k in range(upto):
            out += self.grade(k).evaluate(pts)
        return out[0] if single else out

    def grade_outputs(self, points) -> np.ndarray:
        """Per-grade outputs, shape (grade_count, n); feeds traces."""
        pts = np.asarray(points, dtype=float)
        return np.stack([self.grade(k).evaluate(pts) for k in range(self.grade_count)]) \
            if self.grade_count else np.zeros((0, len(pts)))

    def lipschitz_bound(self) -> float:
        """Certified upper bound on the network's Euclidean Lipschitz constant.

        Atom grades use |amp| * 2 d / (side * (r-1)) (ramp slope times the
        coordinate-sum chain); grades loaded from file fall back to the
        product of layer spectral norms.
        """
        total = 0.0
        for seg in self._segments:
            if isinstance(seg, _PlanGrades):
                plan = seg.plan
                for side in plan.sides():
                    if side.count:
                        total += side.count * abs(side.amplitude) * 2.0 * self.dim / (
                            side.delta * (plan.r - 1.0))
            else:
                for i in range(len(seg)):
                    block = seg.block(i)
                    lip = 1.0
                    for aff, _ in block.hidden:
                        lip *= np.linalg.norm(aff.weights, 2)
                    lip *= np.linalg.norm(block.output.weights, 2)
                    total += lip
        return float(total)


def empty_network(dim: int, r: float = DEFAULT_DILATION, form: str = "clipped") -> MultigradeNetwork:
    return MultigradeNetwork(dim, r, (), form)


# ---------------------------------------------------------------------------
# interchange format: binary64 values as 17-significant-digit decimals, which
# round-trip exactly
# ---------------------------------------------------------------------------

def _encode_matrix(a: np.ndarray):
    return [[f"{v:.17g}" for v in row] for row in a]


def _encode_vector(a: np.ndarray):
    return [f"{v:.17g}" for v in a]


def _affine_dict(aff: AffineMap) -> dict:
    return {"weights": _encode_matrix(aff.weights), "bias": _encode_vector(aff.bias)}


def save_network(net: MultigradeNetwork, path) -> None:
    """Write the documented JSON interchange layout:
    {dim, r, grades: [{hidden: [{weights, bias}], output: {weights, bias}}],
     round_boundaries}."""
    try:
        with open(path, "w") as fh:
            fh.write('{"dim": %d, "r": %s, "grades": [' % (net.dim, f"{net.r:.17g}"))
            first = True
            for block in net.iter_grades():
                item = {
                    "hidden": [_affine_dict(aff) for aff, _ in block.hidden],
                    "output": _affine_dict(block.output),
                }
                fh.write(("" if first else ", ") + json.dumps(item))
                first = False
            fh.write('], "round_boundaries": %s}' % json.dumps(list(net.round_boundaries)))
    except OSError as exc:
        raise OSError(f"failed to write network file {path}: {exc}") from exc


class _LoadedNetwork(MultigradeNetwork):
    def __init__(self, dim, r, blocks, boundaries, form="clipped"):
        super().__init__(dim, r, (_RawGrades(blocks),) if blocks else (), form)
        self.round_boundaries = list(boundaries)


def load_network(path) -> MultigradeNetwork:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed network file {path} at byte {exc.pos}: {exc.msg}") from exc
    if data.get("trained"):
        raise ValueError(f"{path} is a trained-model file; use "
                         "trainer.load_trained_model for it")
    dim = int(data["dim"])
    r = float(data["r"])
    blocks = []
    for g in data["grades"]:
        hidden = tuple(
            (AffineMap(np.array(h["weights"], dtype=float),
                       np.array(h["bias"], dtype=float)), "relu")
            for h in g["hidden"]
        )
        out = AffineMap(np.array(g["output"]["weights"], dtype=float),
                        np.array(g["output"]["bias"], dtype=float))
        blocks.append(GradeBlock(hidden=hidden, output=out, carry_dims=dim))
    return _LoadedNetwork(dim, r, blocks, data.get("round_boundaries", []))
