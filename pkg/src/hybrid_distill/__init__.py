"""Hybrid imitation/reinforcement gradients for autoregressive policies, with exact oracles."""
from .distiller import HybridDistiller
from .estimator import (
    GradAccumulator,
    HybridConfig,
    apply_update,
    dense_term,
    hybrid_gradient,
    hybrid_step,
    lambda_schedule,
    preset,
    sparse_term,
)
from .exceptions import (
    ConfigError,
    ContractBreach,
    HorizonError,
    HybridDistillError,
    InputDomainError,
    ResourceError,
    ShapeError,
)
from .kernels import (
    SparseGradVec,
    dense_logit_gradient_full,
    dense_logit_gradient_topk,
    kl_divergence,
    softmax,
)
from .policy import (
    ContextKey,
    ParamGrad,
    TabularPolicy,
    load_policy,
    log_prob,
    sample_trajectory,
    save_policy,
    score_function,
    token_distribution,
)
from .returns import (
    RewardSpec,
    Trajectory,
    discounted_future_returns,
    step_costs,
    total_weighted_reward,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContextKey", "ContractBreach", "GradAccumulator", "HorizonError",
    "HybridConfig", "HybridDistillError", "HybridDistiller", "InputDomainError", "ParamGrad",
    "ResourceError", "RewardSpec", "ShapeError", "SparseGradVec", "TabularPolicy", "Trajectory",
    "apply_update", "dense_logit_gradient_full", "dense_logit_gradient_topk", "dense_term",
    "discounted_future_returns", "hybrid_gradient", "hybrid_step", "kl_divergence",
    "lambda_schedule", "load_policy", "log_prob", "preset", "sample_trajectory", "save_policy",
    "score_function", "softmax", "sparse_term", "step_costs", "token_distribution",
    "total_weighted_reward",
]
