"""Dataset-pattern and RL-pattern trainers with optional algorithm distillation."""

from .config import (
    BETA_KINDS,
    CSV_COLUMNS,
    METHODS,
    BetaSchedule,
    MetricsLog,
    TrainConfig,
    beta_value,
)
from .dataset import (
    EvalSet,
    Metrics,
    clip_gradient,
    distance,
    evaluate,
    neg_sum_rate,
    train_ad_unsupervised,
    train_supervised,
    train_unsupervised,
)
from .rl import (
    OracleCritic,
    ReplayBuffer,
    Transition,
    actor_gradient,
    critic_value_and_grad,
    train_ad_rl,
    train_rl,
    train_rl_supervised,
)

__all__ = [
    "BETA_KINDS", "CSV_COLUMNS", "METHODS", "BetaSchedule", "MetricsLog", "TrainConfig", "beta_value",
    "EvalSet", "Metrics", "clip_gradient", "distance", "evaluate", "neg_sum_rate",
    "train_ad_unsupervised", "train_supervised", "train_unsupervised",
    "OracleCritic", "ReplayBuffer", "Transition", "actor_gradient", "critic_value_and_grad",
    "train_ad_rl", "train_rl", "train_rl_supervised",
]
