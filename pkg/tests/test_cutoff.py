import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multigrade import Cube, Dilation, cutoff_value, overlap_count, trapezoid
from multigrade.oracles import overlap_count_bruteforce


class TestTrapezoid:
    def test_plateau_center(self):
        assert trapezoid(0.0, 1.5) == 1.0

    def test_support_endpoint(self):
        assert trapezoid(1.5, 1.5) == 0.0

    def test_ramp_midpoint(self):
        # hand evaluation of the four-ReLU combination at the ramp midpoint:
        # (relu(2.75) - relu(2.25) + relu(0.25) - relu(-0.25)) / 0.5 - 1 = 0.5
        assert trapezoid(1.25, 1.5) == 0.5

    def test_plateau_is_exactly_one(self):
        xs = np.random.default_rng(0).uniform(-1.0, 1.0, 50000)
        assert np.all(trapezoid(xs, 1.5) == 1.0)
        assert trapezoid(1.0, 1.5) == 1.0 and trapezoid(-1.0, 1.5) == 1.0

    def test_outside_support_is_exactly_zero(self):
        rng = np.random.default_rng(1)
        xs = np.concatenate([rng.uniform(1.5, 1e6, 20000),
                             rng.uniform(-1e6, -1.5, 20000)])
        assert np.all(trapezoid(xs, 1.5) == 0.0)

    def test_breakpoints_and_linearity(self):
        # slopes are -1/(r-1) on [1, r], +1/(r-1) on [-r, -1], 0 elsewhere
        r = 1.25
        for a, b, slope in [(-2.0, -r, 0.0), (-r, -1.0, 4.0), (-1.0, 1.0, 0.0),
                            (1.0, r, -4.0), (r, 2.0, 0.0)]:
            xs = np.linspace(a, b, 9)[1:-1]
            vals = trapezoid(xs, r)
            fitted = np.polyfit(xs, vals, 1)
            assert fitted[0] == pytest.approx(slope, abs=1e-9)

    @given(st.floats(-4, 4), st.floats(1.01, 1.99))
    @settings(max_examples=300, deadline=None)
    def test_symmetry_and_range(self, x, r):
        v = trapezoid(x, r)
        assert v == trapezoid(-x, r)
        assert 0.0 <= v <= 1.0

    def test_invalid_dilation(self):
        for r in (1.0, 2.0, 0.5, 2.5):
            with pytest.raises(ValueError):
                trapezoid(0.0, r)
        with pytest.raises(ValueError):
            Dilation(2.0)


class TestCutoff:
    def test_center_value(self):
        q = Cube.from_index((2, 3), 0.25)
        assert cutoff_value(q, np.asarray(q.center), 1.5) == 1.0

    def test_outside_dilate_is_zero(self):
        q = Cube.from_index((0,), 0.5)
        vals = cutoff_value(q, np.array([[0.7], [0.9], [5.0]]), 1.5)
        assert np.all(vals == 0.0)

    def test_hand_example_2d(self):
        # Q = [0,1]^2, x = (1.125, 0.5): scaled coords (1.25, 0), ramps
        # (0.5, 1), clipped sum relu(0.5 + 1 - 1) = 0.5
        q = Cube(center=(0.5, 0.5), side=1.0, index=(0, 0))
        assert cutoff_value(q, np.array([1.125, 0.5]), 1.5) == 0.5

    def test_one_on_cube_zero_off_dilate(self):
        rng = np.random.default_rng(2)
        q = Cube.from_index((1, 2, 0), 0.2)
        c = np.asarray(q.center)
        inside = c + rng.uniform(-0.1, 0.1, (2000, 3))
        assert np.all(cutoff_value(q, inside, 1.5) == 1.0)
        # push one coordinate beyond the dilated face
        outside = c + rng.uniform(-0.1, 0.1, (2000, 3))
        axis = rng.integers(0, 3, 2000)
        sign = rng.choice([-1.0, 1.0], 2000)
        outside[np.arange(2000), axis] = c[axis] + sign * rng.uniform(0.151, 3.0, 2000)
        assert np.all(cutoff_value(q, outside, 1.5) == 0.0)

    def test_range_and_lipschitz(self):
        rng = np.random.default_rng(3)
        q = Cube.from_index((0, 1), 0.3)
        x = rng.uniform(-0.5, 1.5, (3000, 2))
        y = rng.uniform(-0.5, 1.5, (3000, 2))
        vx, vy = cutoff_value(q, x, 1.5), cutoff_value(q, y, 1.5)
        assert np.all((vx >= 0) & (vx <= 1))
        rate = 2.0 / (q.side * 0.5)
        assert np.all(np.abs(vx - vy) <= rate * np.abs(x - y).sum(axis=1) + 1e-12)

    def test_averaged_form_does_not_vanish_off_support(self):
        # the flag exists to compare against the coordinate-average variant,
        # which is nonzero when only one coordinate leaves the dilate
        q = Cube(center=(0.5, 0.5), side=1.0, index=(0, 0))
        x = np.array([3.0, 0.5])
        assert cutoff_value(q, x, 1.5, form="averaged") == 0.5
        assert cutoff_value(q, x, 1.5, form="clipped") == 0.0


class TestOverlap:
    def grid_cubes(self, d, n=5, side=0.2):
        return [Cube.from_index(idx, side) for idx in np.ndindex(*(n,) * d)]

    def test_vertex_count_is_2d(self):
        cubes = self.grid_cubes(2)
        assert overlap_count(cubes, np.array([0.4, 0.4]), 1.5) == 4

    def test_center_count_is_one(self):
        cubes = self.grid_cubes(1)
        assert overlap_count(cubes, np.array([0.5]), 1.5) == 1

    def test_random_d3_bruteforce(self):
        cubes = self.grid_cubes(3)
        pts = np.random.default_rng(4).uniform(0, 1, (1000, 3))
        fast = overlap_count(cubes, pts, 1.5)
        assert fast.max() <= 8
        assert np.array_equal(fast, overlap_count_bruteforce(cubes, 1.5, pts))

    @given(st.integers(1, 3), st.floats(1.05, 1.95))
    @settings(max_examples=40, deadline=None)
    def test_bound_holds(self, d, r):
        cubes = self.grid_cubes(d, n=4, side=0.25)
        pts = np.random.default_rng(5).uniform(-0.2, 1.2, (200, d))
        assert overlap_count(cubes, pts, r).max() <= 2 ** d

    def test_interior_vertices_reach_bound(self):
        for d in (1, 2, 3):
            cubes = self.grid_cubes(d, n=4, side=0.25)
            interior = np.stack([g.reshape(-1) for g in np.meshgrid(
                *([np.array([0.25, 0.5, 0.75])] * d), indexing="ij")], axis=-1)
            counts = overlap_count(cubes, interior, 1.1)
            assert np.all(counts == 2 ** d)

    def test_mixed_grids_rejected(self):
        cubes = [Cube.from_index((0,), 0.2), Cube.from_index((1,), 0.25)]
        with pytest.raises(ValueError, match="mixed"):
            overlap_count(cubes, np.array([0.1]), 1.5)
