"""Two-stage load-model fitting: double-Q composition search, then Monte-Carlo parameters."""
from .agent import (
    FractionAction,
    HyperParams,
    QPair,
    ReplayBuffer,
    TrainingLog,
    action_space,
    apply_action,
    ddqn_update,
    reward,
    train,
)
from .loss import LossConfig, PinballConfig, pinball, pinball_score, rmse, trajectory_loss
from .problem import (
    CandidateSolution,
    CompositionEvaluator,
    FitProblem,
    FitResult,
    evaluate_composition,
    fit,
    grid_search,
    rank_candidates,
    stage_two_monte_carlo,
    train_stage_one,
)
from .qnet import QNetwork

__all__ = [
    "CandidateSolution",
    "CompositionEvaluator",
    "FitProblem",
    "FitResult",
    "FractionAction",
    "HyperParams",
    "LossConfig",
    "PinballConfig",
    "QNetwork",
    "QPair",
    "ReplayBuffer",
    "TrainingLog",
    "action_space",
    "apply_action",
    "ddqn_update",
    "evaluate_composition",
    "fit",
    "grid_search",
    "pinball",
    "pinball_score",
    "rank_candidates",
    "reward",
    "rmse",
    "stage_two_monte_carlo",
    "train",
    "train_stage_one",
    "trajectory_loss",
]
