"""Per-step divergence costs, terminal rewards and discounted future returns."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import ConfigError, InputDomainError
from .policy import TabularPolicy, token_log_probs
from .trajectory import Trajectory
from .validation import check_scalar, check_weights

__all__ = [
    "RewardSpec",
    "Trajectory",
    "step_costs",
    "mixture_step_costs",
    "discounted_future_returns",
    "total_weighted_reward",
    "annotate",
]

REWARD_KINDS = ("constant", "target_token_count", "exact_match", "custom")


@dataclass
class RewardSpec:
    """A terminal reward ``r(x, y)`` with a nonnegative weight.

    kinds
        ``constant``: ``params["value"]``.
        ``target_token_count``: number of occurrences of ``params["token"]``.
        ``exact_match``: ``params.get("value", 1.0)`` when the response equals
        ``params["target"]`` (optionally keyed per prompt via ``params["targets"]``), else 0.
        ``custom``: ``fn(prompt_id, tokens) -> float``.
    """

    kind: str
    params: dict = field(default_factory=dict)
    weight: float = 1.0
    fn: Callable[[int, tuple], float] | None = None

    def __post_init__(self):
        if self.kind not in REWARD_KINDS:
            raise ConfigError(f"unknown reward kind {self.kind!r}; expected one of {REWARD_KINDS}")
        self.weight = check_scalar(self.weight, "reward weight", lo=0.0, exc=ConfigError)
        if self.kind == "custom" and not callable(self.fn):
            raise ConfigError("custom reward requires a callable fn")
        required = {"constant": "value", "target_token_count": "token"}.get(self.kind)
        if required and required not in self.params:
            raise ConfigError(f"{self.kind} reward requires parameter {required!r}")
        if self.kind == "exact_match" and not ({"target", "targets"} & set(self.params)):
            raise ConfigError("exact_match reward requires 'target' or 'targets'")

    def __call__(self, prompt_id: int, tokens: Sequence[int]) -> float:
        tokens = tuple(int(t) for t in tokens)
        if self.kind == "constant":
            return float(self.params["value"])
        if self.kind == "target_token_count":
            return float(tokens.count(int(self.params["token"])))
        if self.kind == "exact_match":
            targets = self.params.get("targets")
            target = targets.get(prompt_id) if targets is not None else self.params["target"]
            hit = target is not None and tuple(target) == tokens
            return float(self.params.get("value", 1.0)) if hit else 0.0
        return float(self.fn(prompt_id, tokens))


def _check_pair(student: TabularPolicy, teacher: TabularPolicy) -> None:
    if not student.compatible_with(teacher):
        raise ConfigError(
            "student and teacher disagree on (vocab_size, horizon, eos): "
            f"{(student.vocab_size, student.horizon, student.eos_token)} vs "
            f"{(teacher.vocab_size, teacher.horizon, teacher.eos_token)}")


def step_costs(student: TabularPolicy, teacher: TabularPolicy, tokens, prompt_id: int) -> np.ndarray:
    """``c_t = log pi_student(y_t|ctx_t) - log pi_teacher(y_t|ctx_t)`` for every step."""
    _check_pair(student, teacher)
    return token_log_probs(student, prompt_id, tokens) - token_log_probs(teacher, prompt_id, tokens)


def mixture_step_costs(student: TabularPolicy, teachers: Sequence[TabularPolicy], weights,
                       tokens, prompt_id: int) -> np.ndarray:
    """Weighted cost ``sum_m w_m c_t^(m)`` over several teachers."""
    w = check_weights(weights, len(teachers), "teacher weights")
    out = np.zeros(len(tokens))
    for wm, teacher in zip(w, teachers):
        out += wm * step_costs(student, teacher, tokens, prompt_id)
    return out


def discounted_future_returns(costs, total_weighted_reward: float, gamma: float) -> np.ndarray:
    """Return ``G[t] = sum_{k>t} gamma**(k-t) * costs[k] - total_weighted_reward`` (0-indexed).

    The last entry is ``-total_weighted_reward``. The reward term is not
    discounted. Computed with one backward pass.
    """
    gamma = check_scalar(gamma, "gamma", lo=0.0, hi=1.0)
    c = np.asarray(costs, dtype=np.float64)
    if c.ndim != 1 or c.shape[0] < 1:
        raise InputDomainError("costs must be a non-empty 1-D sequence")
    n = c.shape[0]
    tail = np.zeros(n)
    for t in range(n - 2, -1, -1):
        tail[t] = gamma * (c[t + 1] + tail[t + 1])
    return tail - float(total_weighted_reward)


def total_weighted_reward(specs: Sequence[RewardSpec], prompt_id: int, tokens) -> float:
    """``sum_n weight_n * r_n(x, y)``."""
    if not specs:
        raise ConfigError("at least one reward spec is required")
    return float(sum(s.weight * s(prompt_id, tokens) for s in specs))


def annotate(traj: Trajectory, student: TabularPolicy, teachers: Sequence[TabularPolicy],
             weights, reward_specs: Sequence[RewardSpec], gamma: float, lam: float) -> Trajectory:
    """Fill costs, per-spec rewards and future returns of a sampled trajectory in place.

    The returns use ``lam * total_weighted_reward`` as the terminal term.
    """
    w = check_weights(weights, len(teachers), "teacher weights")
    traj.teacher_logp = np.array([token_log_probs(t, traj.prompt_id, traj.tokens) for t in teachers])
    traj.costs = np.zeros(traj.length)
    for wm, row in zip(w, traj.teacher_logp):
        traj.costs += wm * (traj.student_logp - row)
    traj.rewards = [s(traj.prompt_id, traj.tokens) for s in reward_specs]
    reward_term = lam * sum(s.weight * r for s, r in zip(reward_specs, traj.rewards)) if reward_specs else 0.0
    traj.returns = discounted_future_returns(traj.costs, reward_term, gamma)
    return traj
