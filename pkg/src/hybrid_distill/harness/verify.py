"""Verification suites run by the ``verify`` and ``gradcheck`` subcommands.

Each suite draws random small instances, computes a residual against an
exact or finite-difference reference and compares its maximum with a fixed
tolerance. Reports contain no timing so equal seeds give identical bytes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import oracle
from ..estimator import dense_term
from ..exceptions import ResourceError
from ..kernels import _dense_grad, _dense_grad_topk, _log_softmax, _softmax
from ..policy import TabularPolicy, score_block, token_log_probs
from ..returns import RewardSpec, discounted_future_returns
from ..trajectory import ContextKey
from .config import ExperimentConfig, VerifySettings


@dataclass
class SuiteResult:
    name: str
    max_residual: float
    tolerance: float
    cases: int

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_residual) and self.max_residual <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name:<28} max_residual={self.max_residual:.3e} "
                f"tol={self.tolerance:.0e} cases={self.cases}")


@dataclass
class VerifyReport:
    seed: int
    suites: list[SuiteResult]

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)

    def text(self) -> str:
        lines = [f"hybrid-distill verification report (seed={self.seed})"]
        lines += [s.line() for s in self.suites]
        lines.append(f"OVERALL {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def _kl_of_logits(zs, zt) -> float:
    p = _softmax(zs)
    return float(np.dot(p, _log_softmax(zs) - _log_softmax(zt)))


def fd_logit_gradient(zs: np.ndarray, zt: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``KL(softmax(zs) || softmax(zt))`` in ``zs``."""
    g = np.empty_like(zs)
    for j in range(zs.shape[0]):
        e = np.zeros_like(zs)
        e[j] = h
        g[j] = (_kl_of_logits(zs + e, zt) - _kl_of_logits(zs - e, zt)) / (2 * h)
    return g


def _random_instance(rng, s: VerifySettings):
    eos = int(rng.integers(s.vocab_size))
    student = TabularPolicy.random(s.vocab_size, s.horizon, rng, eos_token=eos)
    teacher = TabularPolicy.random(s.vocab_size, s.horizon, rng, eos_token=eos)
    spec = RewardSpec("target_token_count", {"token": int(rng.integers(s.vocab_size))})
    return student, teacher, [spec]


# -- suites ------------------------------------------------------------------


def suite_logit_gradient(rng, s: VerifySettings, kernel=_dense_grad) -> list[SuiteResult]:
    rel, zero_sum, fixed = 0.0, 0.0, 0.0
    for _ in range(s.kernel_pairs):
        n = int(rng.integers(2, 9))
        zs, zt = rng.uniform(-2, 2, n), rng.uniform(-2, 2, n)
        g = kernel(zs, zt)
        fd = fd_logit_gradient(zs, zt, s.fd_step)
        rel = max(rel, float(np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-300)))
        zero_sum = max(zero_sum, abs(float(g.sum())))
        fixed = max(fixed, float(np.max(np.abs(kernel(zs, zs + rng.normal())))))
    return [
        SuiteResult("logit_grad_vs_fd", rel, 1e-6, s.kernel_pairs),
        SuiteResult("logit_grad_zero_sum", zero_sum, 1e-10, s.kernel_pairs),
        SuiteResult("logit_grad_fixed_point", fixed, 1e-10, s.kernel_pairs),
    ]


def suite_score_fd(rng, s: VerifySettings) -> SuiteResult:
    worst = 0.0
    h = s.fd_step
    for _ in range(s.kernel_pairs // 4 or 1):
        pol = TabularPolicy.random(s.vocab_size, s.horizon, rng)
        ctx = ContextKey(0, ())
        tok = int(rng.integers(s.vocab_size))
        z0 = pol.logits(ctx).copy()
        fd = np.empty(s.vocab_size)
        for j in range(s.vocab_size):
            for sign in (1, -1):
                z = z0.copy()
                z[j] += sign * h
                pol.table[ctx] = z
                val = token_log_probs(pol, 0, (tok,))[0]
                fd[j] = val if sign == 1 else (fd[j] - val) / (2 * h)
        pol.table[ctx] = z0
        sc = score_block(pol, ctx, tok)
        worst = max(worst, float(np.max(np.abs(sc - fd)) / np.max(np.abs(fd))))
    return SuiteResult("score_function_vs_fd", worst, 1e-6, s.kernel_pairs // 4 or 1)


def suite_topk(rng) -> list[SuiteResult]:
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 65))
        zs, zt = rng.normal(size=n), rng.normal(size=n)
        worst = max(worst, float(np.max(np.abs(_dense_grad_topk(zs, zt, n).to_dense() - _dense_grad(zs, zt)))))
    zs, zt = rng.normal(size=128000), rng.normal(size=128000)
    sp = _dense_grad_topk(zs, zt, 32)
    nnz_err = float(abs(sp.nnz - 32) + abs(sp.dim / sp.nnz - 4000))
    return [
        SuiteResult("topk_full_consistency", worst, 1e-12, 50),
        SuiteResult("topk_storage_128000_32", nnz_err, 0.0, 1),
    ]


def suite_vanishing_score(rng, s: VerifySettings) -> SuiteResult:
    worst = 0.0
    for _ in range(s.score_instances):
        pol = TabularPolicy.random(s.vocab_size, s.horizon, rng, scale=float(rng.uniform(0.5, 5)))
        ctxs = list(pol.reachable_contexts(0))
        ctx = ctxs[int(rng.integers(len(ctxs)))]
        worst = max(worst, oracle.verify_vanishing_score(pol, ctx))
    return SuiteResult("vanishing_score", worst, 1e-12, s.score_instances)


def suite_causality(rng, s: VerifySettings) -> SuiteResult:
    pairs = [(k, t) for t in range(2, s.horizon + 1) for k in range(1, t)]
    worst, n = 0.0, 0
    if not pairs:
        return SuiteResult("causality", 0.0, 1e-12, 0)
    while n < s.score_instances:
        student, teacher, _ = _random_instance(rng, s)
        for k, t in pairs:
            worst = max(worst, oracle.verify_causality(student, teacher, 0, k, t))
            n += 1
    return SuiteResult("causality", worst, 1e-12, n)


def suite_decomposition(rng, s: VerifySettings, kernel=None) -> list[SuiteResult]:
    dense_dev, thm, three, fd_rel, step2, recur = 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    n_ctx = 0
    for i in range(s.instances):
        student, teacher, specs = _random_instance(rng, s)
        lam = s.lambdas[i % len(s.lambdas)]
        for ctx in student.reachable_contexts(0):
            d = dense_term(student, [teacher], [1.0], ctx, kernel=kernel)[ctx]
            p = student.probs(ctx)
            c = _log_softmax(student.logits(ctx)) - _log_softmax(teacher.logits(ctx))
            exact = sum(p[v] * c[v] * score_block(student, ctx, v) for v in range(student.vocab_size))
            dense_dev = max(dense_dev, float(np.max(np.abs(d - exact))))
            n_ctx += 1
        pathwise, score = oracle.reinforce_parts(student, teacher, specs, 0, lam)
        analytic = pathwise + score
        est = oracle.estimator_expectation(student, [teacher], [1.0], specs, 0, 1.0, lam,
                                           dense_kernel=kernel)
        rec = oracle.exact_gradient_recursive(student, teacher, specs, 0, lam)
        fd = oracle.exact_gradient_fd(student, teacher, specs, 0, lam, s.fd_step)
        step2 = max(step2, pathwise.max_abs())
        thm = max(thm, oracle.max_abs_diff(est, analytic))
        recur = max(recur, oracle.max_abs_diff(rec, analytic))
        fd_rel = max(fd_rel, oracle.max_rel_diff(fd, analytic), oracle.max_rel_diff(fd, est))
    return [
        SuiteResult("dense_equals_kl", dense_dev, 1e-12, n_ctx),
        SuiteResult("reinforce_step2_pathwise", step2, 1e-12, s.instances),
        SuiteResult("decomposition_expectation", thm, 1e-10, s.instances),
        SuiteResult("decomposition_backward_induction", recur, 1e-10, s.instances),
        SuiteResult("decomposition_finite_difference", fd_rel, 1e-5, s.instances),
    ]


def suite_rlhf(rng, s: VerifySettings) -> SuiteResult:
    worst, n = 0.0, 0
    for _ in range(max(1, s.instances // 4)):
        student, teacher, specs = _random_instance(rng, s)
        for beta in s.betas:
            lhs = oracle.rlhf_gradient(student, teacher, specs, 0, beta)
            rhs = oracle.exact_gradient_analytic(student, teacher, specs, 0, 1.0 / beta) * beta
            worst = max(worst, oracle.max_abs_diff(lhs, rhs))
            n += 1
    return SuiteResult("rlhf_beta_equivalence", worst, 1e-10, n)


def suite_returns(rng) -> list[SuiteResult]:
    g0, g1 = 0.0, 0.0
    for _ in range(100):
        T = int(rng.integers(1, 8))
        costs = rng.normal(size=T)
        R = float(rng.normal())
        g0 = max(g0, float(np.max(np.abs(discounted_future_returns(costs, R, 0.0) + R))))
        G = discounted_future_returns(costs, R, 1.0)
        if T > 1:
            g1 = max(g1, float(np.max(np.abs((G[:-1] - G[1:]) - costs[1:]))))
    return [
        SuiteResult("returns_gamma0_terminal_only", g0, 0.0, 100),
        SuiteResult("returns_gamma1_telescoping", g1, 1e-12, 100),
    ]


def run_gradcheck(config: ExperimentConfig, kernel: Callable | None = None) -> VerifyReport:
    """Finite-difference checks of the logit kernel and the score function only."""
    s = config.verify
    rng = np.random.default_rng([config.seed, 0])
    suites = suite_logit_gradient(rng, s, kernel or _dense_grad)
    suites.append(suite_score_fd(np.random.default_rng([config.seed, 1]), s))
    return VerifyReport(config.seed, suites)


def run_verify(config: ExperimentConfig, dense_kernel: Callable | None = None) -> VerifyReport:
    """Run every suite. ``dense_kernel`` replaces the logit kernel (negative controls)."""
    s = config.verify
    if s.vocab_size ** s.horizon > s.cap:
        raise ResourceError(f"verify instances need {s.vocab_size}^{s.horizon} sequences, "
                            f"above the enumeration cap {s.cap}")
    sub = lambda i: np.random.default_rng([config.seed, i])  # noqa: E731
    suites: list[SuiteResult] = []
    suites += suite_logit_gradient(sub(0), s, dense_kernel or _dense_grad)
    suites.append(suite_score_fd(sub(1), s))
    suites += suite_topk(sub(2))
    suites.append(suite_vanishing_score(sub(3), s))
    suites.append(suite_causality(sub(4), s))
    suites += suite_decomposition(sub(5), s, dense_kernel)
    suites.append(suite_rlhf(sub(6), s))
    suites += suite_returns(sub(7))
    return VerifyReport(config.seed, suites)
