"""Stochastic motion planning for controlled diffusions.

Value-function chains are solved by backward HJB sweeps and cross-checked
against a Monte Carlo exit-time oracle.
"""

__version__ = "0.1.0"

from .geometry import (Ball, Box, Complement, Empty, Everything, GridMaskRegion, HalfSpace, Intersection,
                       MollifiedPayoff, RegionSet, Union, ball, box, complement, difference, erode, half_space,
                       indicator, intersection, mollified_payoff, union)
from .grid import Grid, ValueField
from .hjb import (CFLError, ChainProblem, ChainSolution, DiscreteGenerator, StencilError, boundary_audit,
                  dynkin_apply, hamiltonian_max, solve_chain, step_backward, superlevel_set)
from .montecarlo import (BallExit, FixedTime, ProbEstimate, RegionExit, StartTime, dpp_residual, estimate_field,
                         estimate_success)
from .motion import (ExitTimeRecord, MotionSpec, PathUntilT, Phase, PhaseTracker, ReachAtT, RelativeDwell,
                     SpecificationError, chained_exit_times, event_indicator, event_indicator_mixed,
                     event_indicator_path, event_indicator_reach, sequential_exit_times)
from .policy import FeedbackPolicy, closed_loop_verify, extract_policy, load_policy, save_policy
from .sde import (ConstantPolicy, FunctionPolicy, ModelEvaluationError, SdeModel, TrajectorySample, em_step,
                  simulate_path, simulate_paths)
