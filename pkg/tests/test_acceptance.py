"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s``.
"""
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_instance
from hybrid_distill import oracle
from hybrid_distill.distiller import HybridDistiller
from hybrid_distill.estimator import HybridConfig, dense_term, hybrid_step
from hybrid_distill.kernels import (
    _log_softmax,
    dense_logit_gradient_full,
    dense_logit_gradient_topk,
    kl_divergence,
    softmax,
)
from hybrid_distill.policy import TabularPolicy, score_block
from hybrid_distill.returns import RewardSpec, discounted_future_returns

LAMBDAS = (0.0, 0.5, 2.0)


def report(tag: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture(scope="module")
def decomposition_instances():
    rng = np.random.default_rng(20240601)
    return [(random_instance(rng, 3, 3, scale=2.0), LAMBDAS[i % 3]) for i in range(21)]


def test_c1_gradient_decomposition(decomposition_instances):
    t0 = time.perf_counter()
    exact_gap, fd_rel = 0.0, 0.0
    for (student, teacher, specs), lam in decomposition_instances:
        est = oracle.estimator_expectation(student, [teacher], [1.0], specs, 0, 1.0, lam)
        exact = oracle.exact_gradient_analytic(student, teacher, specs, 0, lam)
        fd = oracle.exact_gradient_fd(student, teacher, specs, 0, lam, 1e-5)
        exact_gap = max(exact_gap, oracle.max_abs_diff(est, exact))
        fd_rel = max(fd_rel, oracle.max_rel_diff(fd, exact), oracle.max_rel_diff(fd, est))
    elapsed = time.perf_counter() - t0
    ok = exact_gap <= 1e-10 and fd_rel < 1e-5 and elapsed <= 60
    report("C1 gradient decomposition", ok, f"{len(decomposition_instances)} instances, expectation-vs-exact "
           f"{exact_gap:.2e} (<=1e-10), FD rel {fd_rel:.2e} (<1e-5), {elapsed:.1f}s (<=60s)")
    assert ok


def test_c2_dense_term_equals_vocabulary_sum(decomposition_instances):
    worst, n = 0.0, 0
    for (student, teacher, _), _ in decomposition_instances:
        for ctx in student.reachable_contexts(0):
            p = student.probs(ctx)
            c = _log_softmax(student.logits(ctx)) - _log_softmax(teacher.logits(ctx))
            exact = sum(p[v] * c[v] * score_block(student, ctx, v) for v in range(student.vocab_size))
            worst = max(worst, float(np.max(np.abs(dense_term(student, [teacher], [1.0], ctx)[ctx] - exact))))
            n += 1
    ok = worst <= 1e-12
    report("C2 dense term", ok, f"{n} contexts, max |dense - E[c score]| = {worst:.2e} (<=1e-12)")
    assert ok


def _fd(zs, zt, h=1e-5):
    g = np.empty(len(zs))
    for j in range(len(zs)):
        e = np.zeros(len(zs))
        e[j] = h
        g[j] = (kl_divergence(softmax(zs + e), softmax(zt)) - kl_divergence(softmax(zs - e), softmax(zt))) / (2 * h)
    return g


def test_c3_logit_gradient():
    rng = np.random.default_rng(3)
    rel, zsum, fixed = 0.0, 0.0, 0.0
    for _ in range(100):
        n = int(rng.integers(2, 9))
        zs, zt = rng.uniform(-2, 2, n), rng.uniform(-2, 2, n)
        g = dense_logit_gradient_full(zs, zt)
        fd = _fd(zs, zt)
        rel = max(rel, float(np.max(np.abs(g - fd)) / np.max(np.abs(fd))))
        zsum = max(zsum, abs(float(g.sum())))
        fixed = max(fixed, float(np.max(np.abs(dense_logit_gradient_full(zs, zs)))))
    ok = rel < 1e-6 and zsum <= 1e-10 and fixed == 0.0
    report("C3 logit gradient", ok, f"100 pairs, FD rel {rel:.2e} (<1e-6), |sum| {zsum:.2e} (<=1e-10), "
           f"grad at p=q {fixed:.1e}")
    assert ok


def test_c4_score_identities():
    rng = np.random.default_rng(4)
    l1 = 0.0
    for _ in range(120):
        pol = TabularPolicy.random(3, 3, rng, scale=float(rng.uniform(0.5, 5)))
        ctxs = list(pol.reachable_contexts(0))
        l1 = max(l1, oracle.verify_vanishing_score(pol, ctxs[int(rng.integers(len(ctxs)))]))
    l2, pairs = 0.0, 0
    while pairs < 120:
        s, t, _ = random_instance(rng)
        for k, tt in ((1, 2), (1, 3), (2, 3)):
            l2 = max(l2, oracle.verify_causality(s, t, 0, k, tt))
            pairs += 1
    ok = l1 <= 1e-12 and l2 <= 1e-12
    report("C4 score identities", ok, f"vanishing score {l1:.2e} over 120 contexts, causality {l2:.2e} "
           f"over {pairs} (k,t) pairs (<=1e-12)")
    assert ok


def test_c5_return_special_cases():
    rng = np.random.default_rng(5)
    g0, g1 = 0.0, 0.0
    for _ in range(200):
        T = int(rng.integers(1, 10))
        c, lam, r = rng.normal(size=T), float(rng.uniform(0, 3)), float(rng.normal())
        g0 = max(g0, float(np.max(np.abs(discounted_future_returns(c, lam * r, 0.0) + lam * r))))
        G = discounted_future_returns(c, lam * r, 1.0)
        if T > 1:
            g1 = max(g1, float(np.max(np.abs((G[:-1] - G[1:]) - c[1:]))))
    dy = np.array([0.5, -1.25, 2.0, 0.125])
    G = discounted_future_returns(dy, 0.75, 1.0)
    exact_dyadic = bool(np.array_equal(G[:-1] - G[1:], dy[1:]))
    ok = g0 == 0.0 and g1 <= 1e-12 and exact_dyadic
    report("C5 discounted returns", ok, f"gamma=0 residual {g0:.1e}, gamma=1 recurrence {g1:.2e} "
           f"(bit-exact on dyadic inputs: {exact_dyadic})")
    assert ok


def test_c6_rlhf_equivalence():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(5):
        s, t, specs = random_instance(rng)
        for beta in (0.5, 1.0, 2.0):
            lhs = oracle.rlhf_gradient(s, t, specs, 0, beta)
            rhs = oracle.exact_gradient_analytic(s, t, specs, 0, 1.0 / beta) * beta
            worst = max(worst, oracle.max_abs_diff(lhs, rhs))
    ok = worst <= 1e-10
    report("C6 RLHF beta=1/lambda", ok, f"max |rlhf(beta) - beta grad(1/beta)| = {worst:.2e} (<=1e-10)")
    assert ok


def test_c7_topk_kernel():
    rng = np.random.default_rng(7)
    worst = 0.0
    for n in (2, 3, 8, 50, 1000):
        zs, zt = rng.normal(size=n), rng.normal(size=n)
        worst = max(worst, float(np.max(np.abs(
            dense_logit_gradient_topk(zs, zt, n).to_dense() - dense_logit_gradient_full(zs, zt)))))
    zs, zt = rng.normal(size=128000), rng.normal(size=128000)
    sp = dense_logit_gradient_topk(zs, zt, 32)
    nnz = int(np.count_nonzero(sp.to_dense()))
    ok = worst <= 1e-12 and sp.nnz == 32 and nnz == 32 and sp.dim / sp.nnz == 4000
    report("C7 Top-K", ok, f"K=|V| vs full {worst:.1e} (<=1e-12); |V|=128000,K=32 -> {nnz} nonzeros, "
           f"storage ratio {sp.dim / sp.nnz:.0f}")
    assert ok


def test_c8_monte_carlo_sanity():
    rng = np.random.default_rng(8)
    student, teacher, specs = random_instance(rng)
    cfg = HybridConfig(lambda0=0.5, gamma=1.0, group_size=100_000)
    t0 = time.perf_counter()
    res = hybrid_step(student, [teacher], [1.0], specs, 0, cfg, np.random.default_rng(88))
    elapsed = time.perf_counter() - t0
    exact = oracle.estimator_expectation(student, [teacher], [1.0], specs, 0, 1.0, 0.5)
    se = res.accumulator.stderr()
    worst = 0.0
    for k in set(exact.keys()) | set(res.grad.keys()):
        dev = np.abs(res.grad.block(k, 3) - exact.block(k, 3))
        worst = max(worst, float(np.max(dev / np.maximum(4 * se.block(k, 3), 1e-12))))
    ok = worst <= 1.0 and elapsed <= 120
    report("C8 Monte Carlo", ok, f"10^5 rollouts, max |mean - E| / (4 sigma) = {worst:.2f} (<=1), "
           f"{elapsed:.1f}s (<=120s)")
    assert ok


def test_c9_training_behaviour():
    rng = np.random.default_rng(9)
    teacher = TabularPolicy.random(3, 2, rng, eos_token=2)
    kd = HybridDistiller.from_preset("kd", teacher, n_iter=500, learning_rate=0.5, group_size=8,
                                     random_state=0).fit([0])
    kl0, kl1 = kd.metrics_[0]["exact_kl"], kd.final_metrics_["exact_kl"]
    spec = [RewardSpec("target_token_count", {"token": 0})]
    rl = HybridDistiller.from_preset("pure_rl", teacher, reward_specs=spec, n_iter=500, learning_rate=0.5,
                                     group_size=8, random_state=0).fit([0])
    r0, r1 = rl.metrics_[0]["exact_reward"], rl.final_metrics_["exact_reward"]
    ok = kl1 <= 0.1 * kl0 and r1 > r0
    report("C9 training", ok, f"kd KL {kl0:.3e} -> {kl1:.3e} (x{kl0 / kl1:.0f}, need >=10); "
           f"pure_rl reward {r0:.3f} -> {r1:.3f}")
    assert ok
