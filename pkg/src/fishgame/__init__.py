"""Numerical toolkit for spatial fishing problems.

Steady logistic-diffusive states, single-player optimal harvesting via
adjoint gradients, multi-player Nash equilibria by best-response iteration,
large-diffusivity asymptotics, and the coupled time-dependent mean-field
harvesting system with traveling-wave experiments.
"""

__version__ = "0.1.0"

from .grid import Field, Grid, field_to_csv, gradient, integral, laplacian_apply, mean, norm_l2, norm_sup
from .elliptic import (
    LogisticProblem,
    SolveReport,
    SolverError,
    principal_eigenvalue,
    solve_linear_reaction,
    solve_steady,
    solve_zero_mean_poisson,
)
from .harvest import (
    EQUALITY,
    INEQUALITY,
    OptimizeOptions,
    OptimizeReport,
    StrategyConstraints,
    adjoint_state,
    bang_bang_strategy,
    fishing_output,
    gateaux_gradient,
    gateaux_second,
    interval_strategy,
    j0_argmax,
    j0_eval,
    j1_eval,
    j1_gradient,
    optimize_single,
    project,
)
from .game import (
    GameSpec,
    NashReport,
    SweepRow,
    best_response,
    eps_nash_check,
    joint_state,
    nash_fixed_point,
    potential_game_counterexample,
    price_of_anarchy,
    regulation_sweep,
    write_sweep_csv,
)
from .mfhg import (
    Bistable,
    FrontSeries,
    MfhgSpec,
    MfhgState,
    Monostable,
    agent_payoff,
    fish_forward,
    fp_forward,
    front_speed,
    hjb_backward,
    mfhg_solve,
    optimal_feedback,
    write_slices_csv,
)
