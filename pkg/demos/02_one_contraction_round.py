# One balanced contraction round, in slow motion.
#
# Given a residual g, the round finds where |g| is within eps of its max,
# covers that region with lattice cubes sized so g keeps its sign on their
# dilates, and subtracts a bump of height eps * max per cube (separately for
# the positive and negative parts).  The uniform error then shrinks by the
# factor 1 - eps, pointwise errors never grow, and the L1/L2 errors strictly
# drop with every single bump.

import numpy as np

from multigrade import (build_balanced_plan, f1_target, initial_state,
                        plan_to_json)

eps = 0.25
state = initial_state(f1_target(), resolution=32769)

plan = build_balanced_plan(state, eps)
print(f"residual sups: +{plan.m_plus:.4f} / -{plan.m_minus:.4f}")
print(f"cube sizes:    +{plan.positive.delta:.2e} / -{plan.negative.delta:.2e}")
print(f"atoms:         {plan.positive.count} positive, "
      f"{plan.negative.count} negative")

# every selected cube carries a witness point that certifies intersection
# with the superlevel set
w = plan.positive.witnesses[:3]
print("first positive witnesses:", np.round(w[:, 0], 5),
      "values:", np.round(state.base.evaluate(w), 4))

# subtracting the plan contracts the sup by (1 - eps) up to grid slack
xs = np.linspace(0, 1, 32769)[:, None]
before = state.base.evaluate(xs)
after = before - plan.evaluate(xs)
print(f"\nsup before: {np.abs(before).max():.5f}")
print(f"sup after:  {np.abs(after).max():.5f}")
print(f"(1 - eps) * sup before = {0.75 * np.abs(before).max():.5f}")

# pointwise domination: no point gets worse
print("pointwise |after| <= |before| everywhere:",
      bool(np.all(np.abs(after) <= np.abs(before) + 1e-12)))

# the plan serializes to a frozen JSON layout (first 300 characters)
print("\n" + plan_to_json(plan)[:300] + " ...")
