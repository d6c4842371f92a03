"""Exact ground truth by exhaustive enumeration of terminated sequences.

Everything here sums over the full (finite) response space of a small
tabular policy instead of sampling, so expectations of the estimator, the
objective gradient and the score-function identities can be checked to
rounding precision. Three gradient routes are available and they are kept
independent of each other:

* :func:`exact_gradient_analytic`: the REINFORCE identity summed over sequences,
* :func:`exact_gradient_recursive`: backward induction over the prefix tree,
* :func:`exact_gradient_fd`: central finite differences of :func:`exact_objective`.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .estimator import DenseKernel, _dense_block
from .exceptions import ConfigError, InputDomainError, ResourceError
from .kernels import _log_softmax
from .policy import ParamGrad, TabularPolicy, score_block, token_log_probs
from .returns import RewardSpec, discounted_future_returns, total_weighted_reward
from .trajectory import ContextKey
from .validation import check_scalar, check_weights

ENUMERATION_CAP = 10**6


@dataclass
class EnumerationSpace:
    """All terminated responses to one prompt with their exact probabilities."""

    vocab_size: int
    horizon: int
    eos_token: int
    prompt_id: int
    sequences: list[tuple[int, ...]]
    probs: np.ndarray

    def __len__(self) -> int:
        return len(self.sequences)

    def contexts(self, seq: tuple[int, ...]) -> list[ContextKey]:
        return [ContextKey(self.prompt_id, seq[:t]) for t in range(len(seq))]


@lru_cache(maxsize=64)
def _all_sequences(vocab_size: int, horizon: int, eos: int) -> tuple[tuple[int, ...], ...]:
    out = []

    def walk(prefix):
        for v in range(vocab_size):
            seq = prefix + (v,)
            if v == eos or len(seq) == horizon:
                out.append(seq)
            else:
                walk(seq)

    walk(())
    return tuple(out)


def _check_cap(policy: TabularPolicy, cap: int) -> None:
    if policy.vocab_size ** policy.horizon > cap:
        raise ResourceError(
            f"enumeration of |V|^T = {policy.vocab_size}^{policy.horizon} sequences "
            f"exceeds the cap of {cap}")


def enumerate_sequences(policy: TabularPolicy, prompt_id: int, cap: int = ENUMERATION_CAP) -> EnumerationSpace:
    """Every sequence ending in EOS or of length ``horizon``, with ``pi(y|x)``."""
    _check_cap(policy, cap)
    seqs = list(_all_sequences(policy.vocab_size, policy.horizon, policy.eos_token))
    probs = np.array([np.exp(token_log_probs(policy, prompt_id, s).sum()) for s in seqs])
    return EnumerationSpace(policy.vocab_size, policy.horizon, policy.eos_token, int(prompt_id),
                            seqs, probs)


def _teacher_mixture(teacher, weights) -> tuple[list[TabularPolicy], np.ndarray]:
    teachers = [teacher] if isinstance(teacher, TabularPolicy) else list(teacher)
    if weights is None:
        weights = np.ones(len(teachers))
    return teachers, check_weights(weights, len(teachers), "teacher weights")


def _seq_costs(student, teachers, weights, prompt_id, seq) -> np.ndarray:
    s = token_log_probs(student, prompt_id, seq)
    out = np.zeros(len(seq))
    for wm, t in zip(weights, teachers):
        out += wm * (s - token_log_probs(t, prompt_id, seq))
    return out


def _reward(reward_specs, prompt_id, seq) -> float:
    return total_weighted_reward(reward_specs, prompt_id, seq) if reward_specs else 0.0


def exact_objective(student: TabularPolicy, teacher, reward_specs: Sequence[RewardSpec],
                    prompt_id: int, lam: float, *, teacher_weights=None,
                    cap: int = ENUMERATION_CAP) -> float:
    """``E_y[sum_t c_t - lam * R(y)]`` by enumeration; at ``lam=0`` the trajectory KL."""
    teachers, w = _teacher_mixture(teacher, teacher_weights)
    space = enumerate_sequences(student, prompt_id, cap)
    total = 0.0
    for p, seq in zip(space.probs, space.sequences):
        total += p * (_seq_costs(student, teachers, w, prompt_id, seq).sum()
                      - lam * _reward(reward_specs, prompt_id, seq))
    return float(total)


def exact_kl(student: TabularPolicy, teacher, prompt_id: int, **kw) -> float:
    """Exact sequence-level KL(student || teacher) for one prompt."""
    return exact_objective(student, teacher, (), prompt_id, 0.0, **kw)


def exact_expected_reward(policy: TabularPolicy, reward_specs, prompt_id: int,
                          cap: int = ENUMERATION_CAP) -> float:
    space = enumerate_sequences(policy, prompt_id, cap)
    return float(sum(p * _reward(reward_specs, prompt_id, s) for p, s in zip(space.probs, space.sequences)))


def _seq_score(policy: TabularPolicy, prompt_id: int, seq, scale: float, out: ParamGrad) -> None:
    """``out += scale * grad log pi(seq)``."""
    for t in range(len(seq)):
        ctx = ContextKey(prompt_id, tuple(seq[:t]))
        out.add_block(ctx, score_block(policy, ctx, seq[t]), scale)


def reinforce_parts(student: TabularPolicy, teacher, reward_specs, prompt_id: int, lam: float, *,
                    teacher_weights=None, cap: int = ENUMERATION_CAP) -> tuple[ParamGrad, ParamGrad]:
    """The two sums of the REINFORCE identity, ``(E[grad C], E[C grad log pi])``.

    ``C(y) = sum_t c_t - lam R(y)``; only the student's log-probabilities in
    ``c_t`` depend on the parameters, so ``grad C = (sum_m w_m) grad log pi(y)``.
    """
    teachers, w = _teacher_mixture(teacher, teacher_weights)
    space = enumerate_sequences(student, prompt_id, cap)
    pathwise, score = ParamGrad(), ParamGrad()
    wsum = float(w.sum())
    for p, seq in zip(space.probs, space.sequences):
        C = _seq_costs(student, teachers, w, prompt_id, seq).sum() - lam * _reward(reward_specs, prompt_id, seq)
        _seq_score(student, prompt_id, seq, p * wsum, pathwise)
        _seq_score(student, prompt_id, seq, p * C, score)
    return pathwise, score


def exact_gradient_analytic(student: TabularPolicy, teacher, reward_specs, prompt_id: int,
                            lam: float, **kw) -> ParamGrad:
    """Exact objective gradient ``E[grad C + C grad log pi]`` by enumeration."""
    pathwise, score = reinforce_parts(student, teacher, reward_specs, prompt_id, lam, **kw)
    return pathwise + score


def exact_gradient_recursive(student: TabularPolicy, teacher, reward_specs, prompt_id: int,
                             lam: float, *, teacher_weights=None) -> ParamGrad:
    """Exact objective gradient by backward induction over the prefix tree.

    With ``W(ctx)`` the expected remaining cost from ``ctx`` and ``rho(ctx)``
    its reach probability, the block gradient is
    ``rho(ctx) * sum_v pi(v) (e_v - pi) (ell_v + U_v)`` where ``ell_v`` is the
    weighted log ratio of token ``v`` and ``U_v`` is ``W(ctx+v)``, or
    ``-lam R`` if ``ctx+v`` is terminal. No sequence-level score is formed.
    """
    teachers, w = _teacher_mixture(teacher, teacher_weights)
    V = student.vocab_size
    out = ParamGrad()

    def visit(ctx: ContextKey, reach: float) -> float:
        logp = _log_softmax(student.logits(ctx))
        p = np.exp(logp)
        ell = np.zeros(V)
        for wm, t in zip(w, teachers):
            ell += wm * (logp - _log_softmax(t.logits(ctx)))
        U = np.empty(V)
        for v in range(V):
            seq = ctx.prefix + (v,)
            if v == student.eos_token or len(seq) == student.horizon:
                U[v] = -lam * _reward(reward_specs, prompt_id, seq)
            else:
                U[v] = visit(ctx.child(v), reach * p[v])
        q = ell + U
        out.add_block(ctx, reach * p * (q - np.dot(p, q)))
        return float(np.dot(p, q))

    visit(ContextKey(int(prompt_id), ()), 1.0)
    return out


def exact_gradient_fd(student: TabularPolicy, teacher, reward_specs, prompt_id: int, lam: float,
                      h: float = 1e-5, *, teacher_weights=None) -> ParamGrad:
    """Central finite differences of :func:`exact_objective` in every reachable logit."""
    h = check_scalar(h, "h", lo=0.0, lo_open=True)
    base = student.copy().materialize(prompt_id)
    out = ParamGrad()
    for ctx in sorted(base.reachable_contexts(prompt_id)):
        z0 = base.table[ctx].copy()
        g = np.empty(base.vocab_size)
        for j in range(base.vocab_size):
            base.table[ctx] = z0.copy()
            base.table[ctx][j] += h
            fp = exact_objective(base, teacher, reward_specs, prompt_id, lam, teacher_weights=teacher_weights)
            base.table[ctx] = z0.copy()
            base.table[ctx][j] -= h
            fm = exact_objective(base, teacher, reward_specs, prompt_id, lam, teacher_weights=teacher_weights)
            g[j] = (fp - fm) / (2 * h)
        base.table[ctx] = z0
        out.entries[ctx] = g
    return out


def estimator_expectation(student: TabularPolicy, teachers, weights, reward_specs, prompt_id: int,
                          gamma: float, lam: float, topk: int | str = "full", *,
                          use_dense: bool = True, dense_kernel: DenseKernel | None = None,
                          cap: int = ENUMERATION_CAP) -> ParamGrad:
    """Exact expectation of one rollout's dense + sparse contribution.

    Sums ``pi(y) * sum_t [dense(ctx_t) + G_t * score(ctx_t, y_t)]`` over all
    sequences, the same quantity :func:`estimator.hybrid_gradient` estimates.
    """
    teachers, w = _teacher_mixture(teachers, weights)
    space = enumerate_sequences(student, prompt_id, cap)
    dense_cache: dict[ContextKey, np.ndarray] = {}
    out = ParamGrad()
    for p, seq in zip(space.probs, space.sequences):
        costs = _seq_costs(student, teachers, w, prompt_id, seq)
        G = discounted_future_returns(costs, lam * _reward(reward_specs, prompt_id, seq), gamma)
        for t, ctx in enumerate(space.contexts(seq)):
            if use_dense:
                blk = dense_cache.get(ctx)
                if blk is None:
                    blk = dense_cache[ctx] = _dense_block(student, teachers, w, ctx, topk, dense_kernel)
                out.add_block(ctx, blk, p)
            out.add_block(ctx, score_block(student, ctx, seq[t]), p * G[t])
    return out


def reach_probabilities(policy: TabularPolicy, prompt_id: int) -> dict[ContextKey, float]:
    """Probability that generation passes through each reachable context."""
    out = {}

    def visit(ctx, reach):
        out[ctx] = reach
        if len(ctx.prefix) + 1 < policy.horizon:
            p = policy.probs(ctx)
            for v in range(policy.vocab_size):
                if v != policy.eos_token:
                    visit(ctx.child(v), reach * p[v])

    visit(ContextKey(int(prompt_id), ()), 1.0)
    return out


# -- executable score identities -----------------------------------------------------


def verify_vanishing_score(policy: TabularPolicy, ctx) -> float:
    """Max-abs of ``sum_v pi(v|ctx) * score(ctx, v)``; zero up to rounding."""
    ctx = policy.check_context(ctx)
    p = policy.probs(ctx)
    total = np.zeros(policy.vocab_size)
    for v in range(policy.vocab_size):
        total += p[v] * score_block(policy, ctx, v)
    return float(np.max(np.abs(total)))


def causality_expectation(student: TabularPolicy, teacher: TabularPolicy, prompt_id: int,
                          k: int, t: int, *, strict: bool = True) -> ParamGrad:
    """``E_y[c_k * grad log pi(y_t|ctx_t)]`` over sequences that reach step ``t`` (1-indexed).

    Shorter sequences contribute nothing. ``strict=False`` allows ``k >= t``
    for negative controls.
    """
    k = check_scalar(k, "k", lo=1, integer=True)
    t = check_scalar(t, "t", lo=1, hi=student.horizon, integer=True)
    if strict and k >= t:
        raise InputDomainError(f"causality needs k < t, got k={k}, t={t}")
    space = enumerate_sequences(student, prompt_id)
    out = ParamGrad()
    for p, seq in zip(space.probs, space.sequences):
        if len(seq) < max(k, t):
            continue
        c = (token_log_probs(student, prompt_id, seq[:k])[k - 1]
             - token_log_probs(teacher, prompt_id, seq[:k])[k - 1])
        ctx = ContextKey(int(prompt_id), tuple(seq[: t - 1]))
        out.add_block(ctx, score_block(student, ctx, seq[t - 1]), p * c)
    return out


def verify_causality(student: TabularPolicy, teacher: TabularPolicy, prompt_id: int,
                     k: int, t: int, *, strict: bool = True) -> float:
    """Max-abs residual of :func:`causality_expectation`; zero up to rounding when ``k < t``."""
    return causality_expectation(student, teacher, prompt_id, k, t, strict=strict).max_abs()


def exact_reward_gradient(policy: TabularPolicy, reward_specs, prompt_id: int) -> ParamGrad:
    """``grad E_y[R(y)] = E_y[R(y) grad log pi(y)]``."""
    space = enumerate_sequences(policy, prompt_id)
    out = ParamGrad()
    for p, seq in zip(space.probs, space.sequences):
        _seq_score(policy, prompt_id, seq, p * _reward(reward_specs, prompt_id, seq), out)
    return out


def rlhf_gradient(student: TabularPolicy, teacher: TabularPolicy, reward_specs, prompt_id: int,
                  beta: float) -> ParamGrad:
    """Exact gradient of the KL-regularized RLHF loss ``beta * KL - E[r]``.

    Built from the backward-induction KL gradient and the score-function
    reward gradient, not from the hybrid objective.
    """
    beta = check_scalar(beta, "beta", lo=0.0, lo_open=True)
    kl_grad = exact_gradient_recursive(student, teacher, (), prompt_id, 0.0)
    return kl_grad * beta - exact_reward_gradient(student, reward_specs, prompt_id)


def max_abs_diff(a: ParamGrad, b: ParamGrad) -> float:
    return (a - b).max_abs()


def max_rel_diff(approx: ParamGrad, exact: ParamGrad, floor: float = 1e-300) -> float:
    """``max|approx - exact| / max|exact|`` (norm-wise relative error)."""
    return (approx - exact).max_abs() / max(exact.max_abs(), floor)
