"""Sub-level set teleportation for gradient methods.

A numpy toolkit with four layers: an objective zoo with exact derivatives
and finite-difference oracles, the teleportation solver itself, gradient
descent drivers with teleportation schedules, and rate-bound calculators
plus a benchmark harness for comparing methods with and without access to
the teleportation oracle.
"""

from .objectives import (Booth, Dataset, DistanceCounterexample, GoldsteinPrice,
                         H2Chain, LogisticRegression, MLP, NonFiniteError,
                         Objective, Quadratic, build_objective, fd_gradient,
                         fd_hvp)
from .optimize import (ArmijoStep, FixedStep, MomentumStep, NormalizedStep,
                       PolyakStep, RunConfig, Schedule, Trace, armijo_step,
                       polyak_step, run, schedule_member)
from .solver import (SqpStep, TeleportConfig, TeleportResult, kkt_residual,
                     ls_condition, merit, penalty_strength, solve_teleport,
                     sqp_step)
from .theory import (BoundCurve, RateInputs, alternating_ls_closed_form,
                     combined_ls_bound, convex_bound, estimate_radius,
                     fixed_step_bounds, newton_collinearity,
                     stability_ls_bound, stability_progress_check,
                     strongly_convex_bounds)
from .bench import (Method, Problem, ProfileTable, Reference, RunRecord,
                    build_problem, load_dataset, performance_profile,
                    reference_solution, run_suite, synthetic_binary,
                    write_summary_csv)

__version__ = "0.1.0"

__all__ = [
    "ArmijoStep", "Booth", "BoundCurve", "Dataset", "DistanceCounterexample",
    "FixedStep", "GoldsteinPrice", "H2Chain", "LogisticRegression", "MLP",
    "Method", "MomentumStep", "NonFiniteError", "NormalizedStep", "Objective",
    "PolyakStep", "Problem", "ProfileTable", "Quadratic", "RateInputs",
    "Reference", "RunConfig", "RunRecord", "Schedule", "SqpStep",
    "TeleportConfig", "TeleportResult", "Trace", "alternating_ls_closed_form",
    "armijo_step", "build_objective", "build_problem", "combined_ls_bound",
    "convex_bound", "estimate_radius", "fd_gradient", "fd_hvp",
    "fixed_step_bounds", "kkt_residual", "load_dataset", "ls_condition",
    "merit", "newton_collinearity", "penalty_strength", "performance_profile",
    "polyak_step", "reference_solution", "run", "run_suite", "schedule_member",
    "solve_teleport", "sqp_step", "stability_ls_bound",
    "stability_progress_check", "strongly_convex_bounds", "synthetic_binary",
    "write_summary_csv",
]
