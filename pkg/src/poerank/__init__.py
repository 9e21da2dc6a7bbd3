"""Product-of-experts score inference from pairwise comparisons."""

from .core import (
    ComparisonRecord,
    ComparisonSet,
    ConvergenceError,
    DisconnectedError,
    ScoreEstimate,
    ValidationError,
    sample_subset,
    symmetrize,
    validate_set,
)
from .estimators import (
    METHODS,
    DebiasParams,
    EstimatorConfig,
    avg_prob,
    bt_expert_mean,
    bt_hard,
    estimate,
    estimate_debias,
    poe_bt,
    win_ratio,
)
from .gaussian import DesignSystem, GaussianPosterior, build_design, full_set_normal_matrix, poe_g, poe_g_hard, posterior
from .selection import (
    LaplaceApprox,
    SelectionState,
    commit_pair,
    init_selection,
    laplace_hessian,
    next_pair_gaussian,
    next_pair_laplace_bt,
    select_batch,
)
from .simulate import CurveResult, JudgeModel, generate_judgments, pearson, run_curve, spearman

__version__ = "0.1.0"
