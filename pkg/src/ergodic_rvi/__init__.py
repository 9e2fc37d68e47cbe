"""Relative value iteration for average-cost control of chains and 1-D diffusions."""
from ergodic_rvi.model import (
    BUILTINS, CtmcModel, DiffusionProblem, FiniteMdp, Lyapunov, SolveReport, StepRecord,
    ValidationReport, ValueField, build_c1, build_e1, build_lq_benchmark, build_pure_diffusion,
    build_two_cycle, random_ctmc, random_diffusion, random_mdp, span, validate,
)
from ergodic_rvi.discrete_rvi import (
    ErgodicSolution, bellman_min, bertsekas_step, exact_ergodic, solve_bertsekas, solve_white,
    stationary_distribution, white_step,
)
from ergodic_rvi.ctmc_rvi import (
    ctmc_hjb_residual, ctmc_rvi_rhs, ctmc_vi_rhs, exact_ctmc, integrate, solve_ctmc,
    solve_ctmc_batch,
)
from ergodic_rvi.pde_rvi import (
    cfl_max_dt, check_bound, check_vv_identity, discretize_generator, hjb_residual, lq_exact,
    rhs_min, solve_parabolic, step, verify_lyapunov,
)

__all__ = [
    "BUILTINS", "CtmcModel", "DiffusionProblem", "FiniteMdp", "Lyapunov", "SolveReport",
    "StepRecord", "ValidationReport", "ValueField", "build_c1", "build_e1", "build_lq_benchmark",
    "build_pure_diffusion", "build_two_cycle", "random_ctmc", "random_diffusion", "random_mdp",
    "span", "validate", "ErgodicSolution", "bellman_min", "bertsekas_step", "exact_ergodic",
    "solve_bertsekas", "solve_white", "stationary_distribution", "white_step", "ctmc_hjb_residual",
    "ctmc_rvi_rhs", "ctmc_vi_rhs", "exact_ctmc", "integrate", "solve_ctmc", "solve_ctmc_batch",
    "cfl_max_dt", "check_bound", "check_vv_identity", "discretize_generator", "hjb_residual",
    "lq_exact", "rhs_min", "solve_parabolic", "step", "verify_lyapunov",
]

__version__ = "0.1.0"
