import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multigrade import (DomainError, LipschitzModulus, TabulatedModulus,
                        constant_target, estimate_sup, eval_positive_part,
                        f1_target, f2_target, initial_state, load_grid_target,
                        residual_modulus, VerificationGrid, TargetFunction)
from multigrade.oracles import finite_difference_lipschitz, pairwise_modulus_check


def linear_target(slope=1.0):
    return TargetFunction(dim=1, evaluate=lambda p: slope * p[:, 0],
                          modulus=LipschitzModulus(abs(slope)), name="linear")


class TestPositivePart:
    def test_negative_clips(self):
        st_ = initial_state(constant_target(-0.3, 1), 17)
        assert eval_positive_part(st_, [0.5]) == 0.0

    def test_zero(self):
        st_ = initial_state(constant_target(0.0, 1), 17)
        assert eval_positive_part(st_, [0.25]) == 0.0

    def test_f1_point(self):
        # direct formula evaluation at x = 1/64, then clipped
        x = 1.0 / 64.0
        expected = max(math.sin(32 * math.pi * x) - 0.5 * math.cos(16 * math.pi * x * x), 0.0)
        st_ = initial_state(f1_target(), 17)
        assert eval_positive_part(st_, [x]) == pytest.approx(expected, abs=1e-15)

    def test_domain_error(self):
        st_ = initial_state(f1_target(), 17)
        with pytest.raises(DomainError):
            eval_positive_part(st_, [1.5])


class TestEstimateSup:
    def test_constant(self):
        assert estimate_sup(initial_state(constant_target(1.0, 1), 33), +1) == 1.0

    def test_no_positive_part(self):
        assert estimate_sup(initial_state(constant_target(-1.0, 1), 33), +1) == 0.0

    def test_f1_against_dense_oracle(self):
        coarse_state = initial_state(f1_target(), 4097)
        coarse = estimate_sup(coarse_state, +1)
        dense = estimate_sup(initial_state(f1_target(), 2 ** 20 + 1), +1)
        gap = coarse_state.modulus.bound(coarse_state.grid.spacing / 2.0)
        assert coarse <= dense <= coarse + gap

    def test_negative_side(self):
        st_ = initial_state(linear_target(-2.0), 33)
        assert estimate_sup(st_, -1) == 2.0
        assert estimate_sup(st_, +1) == 0.0


class TestModulus:
    def test_lipschitz_sum(self):
        out = residual_modulus(LipschitzModulus(2.0), 3.0)
        assert out.bound(0.1) == pytest.approx(0.5)

    def test_zero_is_identity(self):
        base = LipschitzModulus(2.0)
        assert residual_modulus(base, 0.0) is base

    def test_tabulated_plus_linear(self):
        base = TabulatedModulus(((0.0, 0.0), (1.0, 1.0)))
        out = residual_modulus(base, 1.0)
        assert out.bound(0.5) == pytest.approx(1.0)

    def test_tabulated_extrapolation(self):
        mod = TabulatedModulus(((0.0, 0.0), (0.5, 1.0), (1.0, 1.5)))
        assert mod.bound(2.0) == pytest.approx(1.5 + 1.0)

    def test_tabulated_validation(self):
        with pytest.raises(ValueError):
            TabulatedModulus(((0.1, 0.0), (1.0, 1.0)))
        with pytest.raises(ValueError):
            TabulatedModulus(((0.0, 0.0), (1.0, 1.0), (2.0, 0.5)))

    @given(st.floats(0, 3), st.floats(0, 3))
    @settings(max_examples=200, deadline=None)
    def test_monotone(self, a, b):
        mod = TabulatedModulus(((0.0, 0.0), (0.3, 0.4), (1.1, 0.9)))
        t1, t2 = min(a, b), max(a, b)
        assert mod.bound(t1) <= mod.bound(t2) + 1e-12

    def test_f1_domination_exhaustive(self):
        t = f1_target()
        assert pairwise_modulus_check(t.evaluate, t.modulus, 1, 33) <= 0.0

    def test_f2_domination_exhaustive(self):
        t = f2_target()
        assert pairwise_modulus_check(t.evaluate, t.modulus, 2, 17) <= 0.0

    def test_f2_lipschitz_dominates_finite_differences(self):
        t = f2_target()
        fd = finite_difference_lipschitz(t.evaluate, 2, 50000)
        assert fd <= t.modulus.rate


class TestGrid:
    def test_spacing(self):
        g = VerificationGrid(2, 33)
        assert g.spacing * (g.resolution - 1) == pytest.approx(1.0)

    def test_points_in_domain(self):
        g = VerificationGrid(2, 9)
        pts = g.points()
        assert pts.shape == (81, 2)
        assert pts.min() == 0.0 and pts.max() == 1.0

    def test_index_points_roundtrip(self):
        g = VerificationGrid(3, 5)
        pts = g.points()
        idx = np.arange(g.point_count)
        assert np.array_equal(g.index_points(idx), pts)


class TestResidualState:
    def test_residual_matches_network_evaluation(self):
        from multigrade import refine

        result = refine(constant_target(1.0, 1), eps=0.25, rounds=1, resolution=257)
        pts = np.random.default_rng(0).uniform(0, 1, (500, 1))
        resid = result.state.evaluate(pts)
        direct = result.state.base.evaluate(pts) - result.network.evaluate(pts)
        assert np.abs(resid - direct).max() <= 1e-9

    def test_residual_modulus_dominates(self):
        from multigrade import refine
        from multigrade.oracles import finite_difference_lipschitz

        result = refine(f1_target(), eps=0.25, rounds=1, resolution=4097)
        st_ = result.state
        # residual difference quotients never exceed the propagated rate
        fd = finite_difference_lipschitz(
            lambda p: st_.evaluate(p), 1, 20000, seed=3)
        assert fd <= st_.modulus.rate


class TestCsvTarget:
    def test_lattice_roundtrip(self, tmp_path):
        path = tmp_path / "samples.csv"
        ax = np.linspace(0, 1, 9)
        rows = ["x1,x2,value"]
        for a in ax:
            for b in ax:
                rows.append(f"{a},{b},{a + 2 * b}")
        path.write_text("\n".join(rows) + "\n")
        t = load_grid_target(path, lipschitz=3.0)
        pts = np.random.default_rng(1).uniform(0, 1, (200, 2))
        vals = t.evaluate(pts)
        assert np.abs(vals - (pts[:, 0] + 2 * pts[:, 1])).max() <= 1e-12

    def test_incomplete_lattice_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x1,x2,value\n0,0,1\n0,1,2\n1,0,3\n")
        with pytest.raises(ValueError, match="lattice"):
            load_grid_target(path, lipschitz=1.0)

    def test_header_rejected(self, tmp_path):
        path = tmp_path / "bad2.csv"
        path.write_text("a,b\n0,1\n")
        with pytest.raises(ValueError, match="header"):
            load_grid_target(path, lipschitz=1.0)
