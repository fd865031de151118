# Cutoff bumps and the bounded-overlap guarantee.
#
# A bump for a cube Q is 1 on Q, ramps linearly to 0 on the dilate rQ, and
# vanishes outside it -- built from four ReLU ramps per coordinate, so it
# compiles exactly into a narrow network grade.  The dilation ratio r < 2 is
# what caps the number of bumps covering any point at 2^d.

import numpy as np

from multigrade import Cube, cutoff_value, overlap_count, trapezoid

# the one-dimensional profile: plateau [-1, 1], support [-1.5, 1.5]
xs = np.linspace(-2, 2, 9)
print("trapezoid profile (r = 1.5):")
for x, v in zip(xs, trapezoid(xs, 1.5)):
    print(f"  psi({x:+.1f}) = {v:.3f}")

# the plateau and support values are exact in floating point, not just close
assert trapezoid(0.37, 1.5) == 1.0
assert trapezoid(1.7, 1.5) == 0.0

# a 2-D bump: 1 on the cube, 0 once any coordinate leaves the dilate
q = Cube.from_index((1, 1), side=0.25)
print(f"\ncube center {q.center}, side {q.side}")
probe = np.array([
    q.center,                      # center: exactly 1
    [0.53, 0.40],                  # inside the ramp ring
    [0.70, 0.375],                 # outside the dilate in x only: exactly 0
])
print("bump values:", cutoff_value(q, probe, 1.5))

# bounded overlap: on a 5x5x5 cube lattice no point meets more than 8
# dilated cubes, and interior lattice vertices meet exactly 8
cubes = [Cube.from_index(i, 0.2) for i in np.ndindex(5, 5, 5)]
rng = np.random.default_rng(0)
pts = rng.uniform(0, 1, (20000, 3))
counts = overlap_count(cubes, pts, r=1.5)
print(f"\nmax dilated-cube overlap over {len(pts)} random points: "
      f"{counts.max()} (bound 2^3 = 8)")
vertex = np.array([0.4, 0.6, 0.2])
print(f"overlap at a lattice vertex: {overlap_count(cubes, vertex, r=1.5)}")
