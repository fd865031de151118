"""Grade-by-grade construction and training of fixed-width ReLU networks.

The library builds a network one narrow grade at a time: every round covers
the near-maximum set of the current residual with cutoff bumps compiled
exactly into ReLU blocks, which contracts the uniform error by a fixed
factor per round with per-grade monotonicity certificates.  A companion
trainer runs the same grade-wise scheme as a gradient-descent procedure and
compares it against end-to-end training at a matched budget.
"""

from .cutoff import Cube, Dilation, DEFAULT_DILATION, cutoff_value, overlap_count, trapezoid
from .targets import (DomainError, LipschitzModulus, ResidualState, TabulatedModulus,
                      TargetFunction, VerificationGrid, constant_target,
                      estimate_sup, eval_positive_part, f1_target, f2_target,
                      initial_state, load_grid_target, named_target, residual_modulus)
from .contraction import (ContractionPlan, CutoffAtom, GridTooCoarseError, PlanStack,
                          SidePlan, admissible_cube_size, apply_plan,
                          build_balanced_plan, build_side_plan, default_eps,
                          eps_limit, plan_to_dict, plan_to_json)
from .network import (AffineMap, GradeBlock, MultigradeNetwork, compile_atom,
                      empty_network, load_network, save_network)
from .refine import (RefineResult, RefinementTrace, grid_norm, refine, run_round)
from .trainer import (Dataset, TrainConfig, TrainTrace, fcnn_train, make_dataset,
                      mgdl_train)

__version__ = "0.1.0"
