"""Scikit-learn style estimator wrapping the hybrid training loop."""
from __future__ import annotations

import time
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .estimator import HybridConfig, PRESETS, apply_update, hybrid_step
from .exceptions import ConfigError
from .oracle import exact_expected_reward, exact_kl, exact_objective
from .policy import TabularPolicy, sample_trajectory
from .trajectory import ContextKey
from .returns import RewardSpec
from .trajectory import ContextKey, Trajectory
from .validation import check_scalar


def check_prompts(X) -> np.ndarray:
    """Prompt ids as a non-empty 1-D int array."""
    arr = np.asarray(X)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr.ravel()
    if arr.ndim != 1 or arr.shape[0] == 0:
        raise ConfigError(f"prompts must be a non-empty 1-D sequence of ids, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise ConfigError("prompt ids must be integers")
        arr = arr.astype(np.int64)
    return arr


class HybridDistiller(BaseEstimator):
    """Train a tabular student against fixed teachers and terminal rewards.

    ``fit(X)`` runs ``n_iter`` iterations; each samples a prompt id from
    ``X``, draws ``group_size`` rollouts, builds the hybrid gradient and takes
    one gradient-descent step. Hyperparameters mirror :class:`HybridConfig`.

    Parameters
    ----------
    teacher : TabularPolicy or list of TabularPolicy
    teacher_weights : sequence of float, optional
        One weight per teacher (default all ones).
    reward_specs : list of RewardSpec, optional
    student_init : TabularPolicy, optional
        Starting student; a uniform policy shaped like the teacher if omitted.
    track_exact : bool
        Record exact KL and expected reward per iteration by enumeration.
    record_wall_clock : bool
        Store per-iteration wall time; disable for byte-reproducible metrics.

    Attributes
    ----------
    student_ : TabularPolicy
    metrics_ : list of dict
        One record per iteration, describing the policy that generated that
        iteration's rollouts.
    final_metrics_ : dict
        Exact KL / reward of the final policy (when ``track_exact``).
    """

    def __init__(self, teacher=None, teacher_weights=None, reward_specs=None, *,
                 lambda0=0.0, alpha=0.0, gamma=1.0, group_size=8, topk="full",
                 learning_rate=0.1, baseline=False, use_dense=True, n_iter=100,
                 student_init=None, track_exact=True, record_wall_clock=True,
                 threads=1, random_state=0, callback: Callable[[dict], None] | None = None):
        self.teacher = teacher
        self.teacher_weights = teacher_weights
        self.reward_specs = reward_specs
        self.lambda0 = lambda0
        self.alpha = alpha
        self.gamma = gamma
        self.group_size = group_size
        self.topk = topk
        self.learning_rate = learning_rate
        self.baseline = baseline
        self.use_dense = use_dense
        self.n_iter = n_iter
        self.student_init = student_init
        self.track_exact = track_exact
        self.record_wall_clock = record_wall_clock
        self.threads = threads
        self.random_state = random_state
        self.callback = callback

    @classmethod
    def from_preset(cls, name: str, teacher=None, **params) -> "HybridDistiller":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
        return cls(teacher=teacher, **{**PRESETS[name], **params})

    def _teachers(self) -> list[TabularPolicy]:
        if self.teacher is None:
            raise ConfigError("a teacher policy is required")
        return [self.teacher] if isinstance(self.teacher, TabularPolicy) else list(self.teacher)

    def _config(self, n_teachers: int, vocab_size: int) -> HybridConfig:
        weights = (1.0,) * n_teachers if self.teacher_weights is None else tuple(self.teacher_weights)
        return HybridConfig(
            lambda0=self.lambda0, alpha=self.alpha, gamma=self.gamma, group_size=self.group_size,
            topk=self.topk, learning_rate=self.learning_rate, baseline=self.baseline,
            teacher_weights=weights, seed=self.random_state, use_dense=self.use_dense,
        ).validate(vocab_size, n_teachers)

    def _exact(self, policy: TabularPolicy, prompts: Sequence[int]) -> tuple[float, float | None]:
        teachers = self._teachers()
        w = self.config_.teacher_weights
        kl = float(np.mean([exact_objective(policy, teachers, (), p, 0.0, teacher_weights=w)
                            for p in prompts]))
        reward = None
        if self.reward_specs:
            reward = float(np.mean([exact_expected_reward(policy, self.reward_specs, p) for p in prompts]))
        return kl, reward

    def fit(self, X, y=None):
        prompts = check_prompts(X)
        teachers = self._teachers()
        first = teachers[0]
        for t in teachers[1:]:
            if not first.compatible_with(t):
                raise ConfigError("teachers disagree on vocabulary/horizon/eos")
        self.config_ = self._config(len(teachers), first.vocab_size)
        n_iter = check_scalar(self.n_iter, "n_iter", lo=0, integer=True, exc=ConfigError)
        student = (TabularPolicy.uniform(first.vocab_size, first.horizon, first.eos_token)
                   if self.student_init is None else self.student_init.copy())
        if not student.compatible_with(first):
            raise ConfigError("student_init is incompatible with the teacher")
        specs = list(self.reward_specs or [])
        distinct = sorted(set(int(p) for p in prompts))
        rng = np.random.default_rng(self.config_.seed)

        self.metrics_ = []
        for it in range(n_iter):
            t0 = time.perf_counter()
            pid = int(prompts[rng.integers(prompts.shape[0])]) if prompts.shape[0] > 1 else int(prompts[0])
            res = hybrid_step(student, teachers, self.config_.teacher_weights, specs, pid,
                              self.config_, rng, step=it, threads=self.threads)
            record = {
                "iteration": it,
                "prompt_id": pid,
                "lambda": res.lam,
                "exact_kl": None,
                "exact_reward": None,
                "mean_reward": float(res.rewards.mean()) if specs else None,
                "grad_norm_dense": res.dense.norm(),
                "grad_norm_sparse": res.sparse.norm(),
                "grad_norm_total": res.grad.norm(),
            }
            if self.track_exact:
                record["exact_kl"], record["exact_reward"] = self._exact(student, distinct)
            student = apply_update(student, res.grad, self.config_.learning_rate)
            record["wall_ms"] = (time.perf_counter() - t0) * 1e3 if self.record_wall_clock else None
            self.metrics_.append(record)
            if self.callback is not None:
                self.callback(record)

        self.student_ = student
        self.n_iter_ = n_iter
        self.final_metrics_ = {"exact_kl": None, "exact_reward": None}
        if self.track_exact:
            kl, reward = self._exact(student, distinct)
            self.final_metrics_ = {"exact_kl": kl, "exact_reward": reward}
        return self

    def predict_proba(self, contexts) -> np.ndarray:
        """Next-token distributions of the trained student, one row per context.

        A context is a ``(prompt_id, prefix)`` pair; a bare prompt id means the
        empty prefix.
        """
        check_is_fitted(self, "student_")
        rows = []
        for c in contexts:
            if isinstance(c, (int, np.integer)):
                c = ContextKey(int(c))
            rows.append(self.student_.probs(self.student_.check_context(c)))
        return np.array(rows)

    def predict(self, contexts) -> np.ndarray:
        """Most likely next token per context."""
        return np.argmax(self.predict_proba(contexts), axis=1)

    def sample(self, prompt_id: int, n: int = 1, random_state=None) -> list[Trajectory]:
        check_is_fitted(self, "student_")
        rng = np.random.default_rng(random_state)
        return [sample_trajectory(self.student_, prompt_id, rng) for _ in range(n)]

    def score(self, X, y=None) -> float:
        """Negative mean exact objective at the initial reward weight (higher is better)."""
        check_is_fitted(self, "student_")
        prompts = sorted(set(int(p) for p in check_prompts(X)))
        teachers = self._teachers()
        specs = list(self.reward_specs or [])
        vals = [exact_objective(self.student_, teachers, specs, p, self.lambda0,
                                teacher_weights=self.config_.teacher_weights) for p in prompts]
        return -float(np.mean(vals))


__all__ = ["HybridDistiller", "check_prompts", "ContextKey", "RewardSpec"]
