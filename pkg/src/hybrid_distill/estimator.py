"""Hybrid imitation/reinforcement gradient estimator.

Each sampled step contributes an analytic *dense* block (the token-level KL
gradient at the visited context, summed over the vocabulary) and a sampled
*sparse* block (score of the sampled token times the future return).
:func:`hybrid_step` averages both over a group of rollouts and
:func:`apply_update` takes a plain gradient-descent step.
"""
from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import ConfigError
from .kernels import _dense_grad, _dense_grad_topk
from .policy import ParamGrad, TabularPolicy, sample_trajectory
from .returns import RewardSpec, annotate
from .trajectory import ContextKey, Trajectory
from .validation import check_scalar, check_weights

__all__ = [
    "HybridConfig",
    "GradAccumulator",
    "StepResult",
    "PRESETS",
    "preset",
    "lambda_schedule",
    "dense_term",
    "sparse_term",
    "hybrid_step",
    "hybrid_gradient",
    "apply_update",
]

DenseKernel = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class HybridConfig:
    """Knobs of the hybrid update.

    ``lambda0``/``alpha`` define the reward-weight schedule
    ``lambda(t) = lambda0 * (1 + alpha * t)``. ``topk`` is ``"full"`` or the
    number of student tokens kept by the dense kernel. ``use_dense=False``
    drops the imitation term entirely (pure RL).
    """

    lambda0: float = 0.0
    alpha: float = 0.0
    gamma: float = 1.0
    group_size: int = 8
    topk: int | str = "full"
    learning_rate: float = 0.1
    baseline: bool = False
    teacher_weights: tuple[float, ...] = (1.0,)
    seed: int = 0
    use_dense: bool = True

    def validate(self, vocab_size: int | None = None, n_teachers: int | None = None) -> "HybridConfig":
        check_scalar(self.lambda0, "lambda0", lo=0.0, exc=ConfigError)
        check_scalar(self.alpha, "alpha", lo=0.0, exc=ConfigError)
        check_scalar(self.gamma, "gamma", lo=0.0, hi=1.0, exc=ConfigError)
        check_scalar(self.group_size, "group_size", lo=1, integer=True, exc=ConfigError)
        check_scalar(self.learning_rate, "learning_rate", lo=0.0, lo_open=True, exc=ConfigError)
        check_scalar(self.seed, "seed", lo=0, integer=True, exc=ConfigError)
        if self.topk != "full":
            hi = vocab_size if vocab_size is not None else None
            check_scalar(self.topk, "topk", lo=1, hi=hi, integer=True, exc=ConfigError)
        n = len(self.teacher_weights) if n_teachers is None else n_teachers
        check_weights(self.teacher_weights, n, "teacher_weights")
        return self

    def replace(self, **changes) -> "HybridConfig":
        return dataclasses.replace(self, **changes)


PRESETS: dict[str, dict] = {
    # gamma, lambda, which terms are active
    "kd": dict(gamma=0.0, lambda0=0.0, use_dense=True),
    "onpolicy_kd_reward": dict(gamma=0.0, lambda0=1.0, use_dense=True),
    "full_hybrid": dict(gamma=1.0, lambda0=1.0, use_dense=True),
    # no KL anywhere: dense term off, gamma=0 keeps KL costs out of the return
    "pure_rl": dict(gamma=0.0, lambda0=1.0, use_dense=False),
}


def preset(name: str, **overrides) -> HybridConfig:
    """Named configuration covering the standard special cases of the hybrid objective."""
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None
    return HybridConfig(**{**base, **overrides}).validate()


def lambda_schedule(cfg: HybridConfig, step: int) -> float:
    """Linear reward-weight curriculum ``lambda0 * (1 + alpha * step)``."""
    step = check_scalar(step, "step", lo=0, integer=True)
    return cfg.lambda0 * (1.0 + cfg.alpha * step)


def _dense_block(student: TabularPolicy, teachers: Sequence[TabularPolicy], weights: np.ndarray,
                 ctx: ContextKey, topk: int | str = "full",
                 kernel: DenseKernel | None = None) -> np.ndarray:
    zs = student.logits(ctx)
    out = np.zeros(student.vocab_size)
    for wm, teacher in zip(weights, teachers):
        if wm == 0.0:
            continue
        zt = teacher.logits(ctx)
        if kernel is not None:
            g = kernel(zs, zt)
        elif topk == "full":
            g = _dense_grad(zs, zt)
        else:
            g = _dense_grad_topk(zs, zt, int(topk)).to_dense()
        out += wm * g
    return out


def dense_term(student: TabularPolicy, teachers: Sequence[TabularPolicy], weights, ctx,
               topk: int | str = "full", kernel: DenseKernel | None = None) -> ParamGrad:
    """Weighted token-level KL gradient at ``ctx``: ``sum_m w_m grad KL(pi(.|ctx) || teacher_m(.|ctx))``.

    With tabular parameters the logit gradient is exactly the gradient of the
    ``ctx`` block, and every other block is zero.
    """
    w = check_weights(weights, len(teachers), "teacher weights")
    ctx = student.check_context(ctx)
    for teacher in teachers:
        if not student.compatible_with(teacher):
            raise ConfigError("teacher is incompatible with the student policy")
    return ParamGrad({ctx: _dense_block(student, teachers, w, ctx, topk, kernel)})


def sparse_term(score: ParamGrad, G: float) -> ParamGrad:
    """Return-weighted score, ``G * score``."""
    return score * float(G)


class GradAccumulator:
    """Running sum of per-rollout gradient contributions.

    Also tracks elementwise second moments so the Monte Carlo standard error
    of the group mean is available.
    """

    def __init__(self):
        self.grad = ParamGrad()
        self.sumsq = ParamGrad()
        self.count = 0

    def add(self, contribution: ParamGrad) -> None:
        for key in sorted(contribution.entries):
            blk = contribution.entries[key]
            self.grad.add_block(key, blk)
            self.sumsq.add_block(key, blk * blk)
        self.count += 1

    def finalize(self, k: int | None = None) -> ParamGrad:
        """Sum divided by the group size (``count`` unless given)."""
        k = self.count if k is None else k
        if k < 1:
            raise ConfigError("cannot finalize an empty accumulator")
        return self.grad / k

    def stderr(self) -> ParamGrad:
        """Standard error of the mean, per coordinate (unbiased variance)."""
        n = self.count
        if n < 2:
            raise ConfigError("standard error needs at least two contributions")
        out = {}
        for key, s in self.grad.entries.items():
            mean = s / n
            var = np.maximum(self.sumsq.entries[key] / n - mean * mean, 0.0) * n / (n - 1)
            out[key] = np.sqrt(var / n)
        return ParamGrad(out)


@dataclass
class StepResult:
    """Outcome of one group rollout: averaged gradient plus diagnostics."""

    grad: ParamGrad
    dense: ParamGrad
    sparse: ParamGrad
    trajectories: list[Trajectory]
    accumulator: GradAccumulator
    lam: float
    rewards: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _check_inputs(student, teachers, weights, cfg):
    cfg.validate(student.vocab_size, len(teachers))
    for teacher in teachers:
        if not student.compatible_with(teacher):
            raise ConfigError("teacher is incompatible with the student policy")
    return check_weights(weights, len(teachers), "teacher weights")


def hybrid_step(student: TabularPolicy, teachers: Sequence[TabularPolicy], weights,
                reward_specs: Sequence[RewardSpec], prompt_id: int, cfg: HybridConfig,
                rng: np.random.Generator, *, step: int = 0, threads: int = 1,
                dense_kernel: DenseKernel | None = None) -> StepResult:
    """Sample ``cfg.group_size`` responses and build the averaged hybrid gradient.

    Every rollout gets its own generator spawned from ``rng``, so the result
    does not depend on ``threads``; reductions run in rollout order.
    """
    if isinstance(teachers, TabularPolicy):
        teachers = [teachers]
    w = _check_inputs(student, teachers, weights, cfg)
    lam = lambda_schedule(cfg, step)
    K = int(cfg.group_size)
    children = rng.spawn(K)

    logp_cache: dict[ContextKey, np.ndarray] = {}
    dense_cache: dict[ContextKey, np.ndarray] = {}

    def rollout(child: np.random.Generator) -> Trajectory:
        traj = sample_trajectory(student, prompt_id, child, cache=logp_cache)
        return annotate(traj, student, teachers, w, reward_specs, cfg.gamma, lam)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trajs = list(pool.map(rollout, children))
    else:
        trajs = [rollout(c) for c in children]

    baselines = np.zeros(K)
    if cfg.baseline and K > 1:
        # leave-one-out mean of the other rollouts' first return; independent of rollout i
        first = np.array([tr.returns[0] for tr in trajs])
        baselines = (first.sum() - first) / (K - 1)

    acc = GradAccumulator()
    dense_sum, sparse_sum = ParamGrad(), ParamGrad()
    for i, traj in enumerate(trajs):
        contrib = ParamGrad()
        for t, (ctx, tok) in enumerate(zip(traj.contexts, traj.tokens)):
            if cfg.use_dense:
                blk = dense_cache.get(ctx)
                if blk is None:
                    blk = dense_cache[ctx] = _dense_block(student, teachers, w, ctx, cfg.topk,
                                                         dense_kernel)
                contrib.add_block(ctx, blk)
                dense_sum.add_block(ctx, blk)
            g = traj.returns[t] - baselines[i]
            if g != 0.0:
                sc = -np.exp(logp_cache[ctx])
                sc[tok] += 1.0
                contrib.add_block(ctx, sc, g)
                sparse_sum.add_block(ctx, sc, g)
        acc.add(contrib)

    rewards = np.array([sum(s.weight * r for s, r in zip(reward_specs, tr.rewards)) for tr in trajs])
    return StepResult(grad=acc.finalize(K), dense=dense_sum / K, sparse=sparse_sum / K,
                      trajectories=trajs, accumulator=acc, lam=lam, rewards=rewards)


def hybrid_gradient(student: TabularPolicy, teachers: Sequence[TabularPolicy], weights,
                    reward_specs: Sequence[RewardSpec], prompt_id: int, cfg: HybridConfig,
                    rng: np.random.Generator, **kwargs) -> ParamGrad:
    """Group-averaged hybrid gradient; see :func:`hybrid_step` for diagnostics."""
    return hybrid_step(student, teachers, weights, reward_specs, prompt_id, cfg, rng, **kwargs).grad


def apply_update(student: TabularPolicy, grad: ParamGrad, eta: float) -> TabularPolicy:
    """Gradient-descent step ``logits <- logits - eta * grad`` on every touched block.

    Returns a new policy; ``student`` is left unchanged.
    """
    eta = check_scalar(eta, "eta", lo=0.0, lo_open=True)
    new = student.copy()
    for key in grad.keys():
        ctx = new.check_context(key)
        new.table[ctx] = new.logits(ctx) - eta * grad.entries[key]
    return new
