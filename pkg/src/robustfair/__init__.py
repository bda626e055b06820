"""Fairness-aware linear regression under worst-case data poisoning.

The package pairs exact attacks with certified defenses for a linear model
trained with a group-fairness penalty: a single adversarial training point
or a rank-one perturbation of the whole feature matrix, each solved to
global optimality for a fixed model, and minimax defenders that pick the
model minimizing the corresponding worst-case loss.
"""

from __future__ import annotations

from ._kernels import BACKEND_NAME
from .dataset import (
    Dataset,
    DatasetStats,
    SynthParams,
    compute_stats,
    demo_synth_params,
    load_csv,
    save_csv,
    synth_generate,
)
from .errors import ParseError, ValidationError
from .harness import (
    AttackReport,
    ExperimentConfig,
    Report,
    evaluate_under_attack,
    fair_fit_unrobust,
    ols_fit,
    r2_score,
    run_sweep,
)
from .objective import (
    POINT_BRANCHES,
    PointAttackCoeffs,
    RankOneCoeffs,
    SurrogateMatrices,
    TradeoffConfig,
    fairness_gap,
    mse,
    objective_l,
    point_coeffs,
    rankone_coeffs,
    surrogate_matrices,
    surrogate_value,
    surrogate_values,
)
from .point_attack import (
    AdversarialPoint,
    apply_point,
    best_point,
    orthogonal_to,
)
from .point_defense import (
    PsdInterval,
    QcqpDiagnostics,
    RobustModel,
    psd_interval,
    robust_fit_point,
    solve_case1,
    solve_case2,
    solve_case3,
    solve_case4,
)
from .rankone_attack import (
    RANKONE_BRANCHES,
    ProfileIntermediates,
    RankOneAttack,
    apply_rankone,
    best_rankone,
    g_profile,
    h_profile,
    profile_intermediates,
    reconstruct_cd,
)
from .rankone_defense import (
    SubproblemDescriptor,
    WeakConvexityConstants,
    ipp_solve,
    robust_fit_rankone,
    solve_sp_closed,
    split_subproblems,
    weak_convexity_constants,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND_NAME",
    "Dataset",
    "DatasetStats",
    "SynthParams",
    "compute_stats",
    "demo_synth_params",
    "load_csv",
    "save_csv",
    "synth_generate",
    "ParseError",
    "ValidationError",
    "AttackReport",
    "ExperimentConfig",
    "Report",
    "evaluate_under_attack",
    "fair_fit_unrobust",
    "ols_fit",
    "r2_score",
    "run_sweep",
    "POINT_BRANCHES",
    "PointAttackCoeffs",
    "RankOneCoeffs",
    "SurrogateMatrices",
    "TradeoffConfig",
    "fairness_gap",
    "mse",
    "objective_l",
    "point_coeffs",
    "rankone_coeffs",
    "surrogate_matrices",
    "surrogate_value",
    "surrogate_values",
    "AdversarialPoint",
    "apply_point",
    "best_point",
    "orthogonal_to",
    "PsdInterval",
    "QcqpDiagnostics",
    "RobustModel",
    "psd_interval",
    "robust_fit_point",
    "solve_case1",
    "solve_case2",
    "solve_case3",
    "solve_case4",
    "RANKONE_BRANCHES",
    "ProfileIntermediates",
    "RankOneAttack",
    "apply_rankone",
    "best_rankone",
    "g_profile",
    "h_profile",
    "profile_intermediates",
    "reconstruct_cd",
    "SubproblemDescriptor",
    "WeakConvexityConstants",
    "ipp_solve",
    "robust_fit_rankone",
    "solve_sp_closed",
    "split_subproblems",
    "weak_convexity_constants",
    "__version__",
]
