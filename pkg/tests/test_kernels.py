import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hybrid_distill.exceptions import InputDomainError, ShapeError
from hybrid_distill.kernels import (
    dense_logit_gradient_full,
    dense_logit_gradient_topk,
    kl_divergence,
    softmax,
    topk_indices,
)

logit_vectors = st.integers(2, 8).flatmap(
    lambda n: arrays(np.float64, n, elements=st.floats(-5, 5, allow_nan=False)))


def fd_kl_gradient(zs, zt, h=1e-5):
    g = np.empty(len(zs))
    for j in range(len(zs)):
        e = np.zeros(len(zs))
        e[j] = h
        fp = kl_divergence(softmax(zs + e), softmax(zt))
        fm = kl_divergence(softmax(zs - e), softmax(zt))
        g[j] = (fp - fm) / (2 * h)
    return g


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax([0, 0, 0]), [1 / 3] * 3, rtol=0, atol=1e-15)
        np.testing.assert_allclose(softmax([1, 1, 1, 1]), [0.25] * 4, rtol=0, atol=1e-15)

    def test_two_element_closed_form(self):
        e = math.e
        np.testing.assert_allclose(softmax([1, 0]), [e / (e + 1), 1 / (e + 1)], rtol=1e-15)

    def test_large_logits_stable(self):
        p = softmax([1000.0, 0.0, -1000.0])
        assert np.all(np.isfinite(p)) and p[0] == 1.0

    @pytest.mark.parametrize("bad", [[np.nan, 0.0], [np.inf, 0.0], [1.0, -np.inf]])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(InputDomainError):
            softmax(bad)

    def test_too_short(self):
        with pytest.raises(ShapeError):
            softmax([1.0])

    @given(logit_vectors, st.floats(-50, 50))
    def test_shift_invariance_and_normalization(self, z, c):
        p = softmax(z)
        assert abs(p.sum() - 1) <= 1e-12
        assert np.all(p > 0)
        np.testing.assert_allclose(softmax(z + c), p, rtol=1e-9, atol=1e-15)


class TestKL:
    def test_identity(self):
        assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0
        assert kl_divergence([1 / 3] * 3, [1 / 3] * 3) == 0.0

    def test_against_extended_precision(self):
        # mpmath, 50 digits: 0.9 ln(1.8) + 0.1 ln(0.2)
        assert kl_divergence([0.9, 0.1], [0.5, 0.5]) == pytest.approx(0.36806420716849706991, abs=1e-15)

    def test_zero_mass_entries_ignored(self):
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)

    def test_teacher_floor(self):
        # q has an exact zero where p has mass: floored at 1e-12 instead of inf
        val = kl_divergence([0.5, 0.5], [1.0, 0.0])
        assert math.isfinite(val)
        assert val == pytest.approx(0.5 * math.log(0.5) + 0.5 * (math.log(0.5) - math.log(1e-12)))

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            kl_divergence([0.5, 0.5], [0.2, 0.3, 0.5])

    @given(logit_vectors, st.data())
    def test_nonnegative(self, zs, data):
        zt = data.draw(arrays(np.float64, zs.shape[0], elements=st.floats(-5, 5)))
        assert kl_divergence(softmax(zs), softmax(zt)) >= -1e-12


class TestDenseFull:
    def test_equal_inputs_give_zero(self):
        z = np.array([0.3, -1.2, 2.0, 0.0])
        assert np.all(dense_logit_gradient_full(z, z) == 0.0)

    def test_matches_finite_differences(self):
        zs, zt = np.array([1.0, 0.0, -1.0]), np.zeros(3)
        g = dense_logit_gradient_full(zs, zt)
        fd = fd_kl_gradient(zs, zt)
        assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-6
        # also agrees with the closed form evaluated in 50-digit arithmetic
        np.testing.assert_allclose(
            g, [0.28258745107944228885, -0.14077035746963012799, -0.14181709360981216086],
            rtol=0, atol=1e-15)

    def test_gradient_check_random_pairs(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(2, 9))
            zs, zt = rng.uniform(-2, 2, n), rng.uniform(-2, 2, n)
            fd = fd_kl_gradient(zs, zt)
            worst = max(worst, np.max(np.abs(dense_logit_gradient_full(zs, zt) - fd)) / np.max(np.abs(fd)))
        assert worst < 1e-6

    @given(logit_vectors, st.data())
    def test_zero_sum(self, zs, data):
        zt = data.draw(arrays(np.float64, zs.shape[0], elements=st.floats(-5, 5)))
        assert abs(dense_logit_gradient_full(zs, zt).sum()) <= 1e-10

    @given(logit_vectors, st.floats(-10, 10))
    def test_fixed_point_under_shift(self, z, c):
        # softmax(z + c) == softmax(z), so the gradient vanishes
        assert np.max(np.abs(dense_logit_gradient_full(z, z + c))) <= 1e-10

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dense_logit_gradient_full([0.0, 1.0], [0.0, 1.0, 2.0])


class TestDenseTopK:
    def test_restricted_sum_oracle(self):
        zs = [2.0, 1.0, 0.0, -1.0]
        sp = dense_logit_gradient_topk(zs, [0.0] * 4, 2)
        assert sp.indices.tolist() == [0, 1]
        Z = sum(math.exp(x) for x in zs)
        p = [math.exp(2) / Z, math.exp(1) / Z]
        kl = sum(pi * (math.log(pi) - math.log(0.25)) for pi in p)
        expected = [pi * (math.log(pi) - math.log(0.25) - kl) for pi in p]
        np.testing.assert_allclose(sp.values, expected, rtol=0, atol=1e-15)
        np.testing.assert_allclose(sp.values, [0.2251518704177751043, -0.15405407382191403109], atol=1e-15)
        dense = sp.to_dense()
        assert dense[2] == 0.0 and dense[3] == 0.0

    def test_k_equals_vocab_matches_full(self):
        rng = np.random.default_rng(0)
        for n in (2, 5, 17, 64):
            zs, zt = rng.normal(size=n), rng.normal(size=n)
            diff = dense_logit_gradient_topk(zs, zt, n).to_dense() - dense_logit_gradient_full(zs, zt)
            assert np.max(np.abs(diff)) < 1e-12

    def test_storage_at_128k(self):
        rng = np.random.default_rng(1)
        zs, zt = rng.normal(size=128000), rng.normal(size=128000)
        sp = dense_logit_gradient_topk(zs, zt, 32)
        assert sp.nnz == 32
        assert np.count_nonzero(sp.to_dense()) == 32
        assert sp.dim / sp.nnz == 4000
        # the kept positions are the 32 largest student logits
        assert set(sp.indices.tolist()) == set(np.argsort(-zs)[:32].tolist())

    def test_ties_go_to_lower_index(self):
        assert topk_indices(np.array([1.0, 3.0, 3.0, 3.0, 0.0]), 2).tolist() == [1, 2]
        assert topk_indices(np.array([0.0, 0.0, 0.0, 0.0]), 3).tolist() == [0, 1, 2]

    @pytest.mark.parametrize("k", [0, 5, -1, 2.5])
    def test_k_out_of_range(self, k):
        with pytest.raises(InputDomainError):
            dense_logit_gradient_topk([0.0, 1.0, 2.0, 3.0], [0.0] * 4, k)

    @given(st.integers(2, 30).flatmap(lambda n: st.tuples(
        arrays(np.float64, n, elements=st.floats(-3, 3)), st.integers(1, n))))
    @settings(max_examples=50)
    def test_selection_matches_stable_sort(self, args):
        z, k = args
        expected = sorted(np.lexsort((np.arange(len(z)), -z))[:k].tolist())
        assert topk_indices(z, k).tolist() == expected

    def test_bias_shrinks_with_tail_mass(self, capsys):
        # measured only: deviation from the full gradient on the kept indices
        rng = np.random.default_rng(3)
        zt = rng.normal(size=200)
        rows = []
        for sharpness in (1.0, 3.0, 6.0, 12.0):
            zs = sharpness * rng.normal(size=200)
            full = dense_logit_gradient_full(zs, zt)
            sp = dense_logit_gradient_topk(zs, zt, 16)
            tail = 1 - softmax(zs)[sp.indices].sum()
            rows.append((tail, float(np.max(np.abs(sp.values - full[sp.indices])))))
        with capsys.disabled():
            for tail, dev in sorted(rows):
                print(f"\n  top-16 tail mass {tail:.3e} -> max deviation {dev:.3e}", end="")
        assert all(np.isfinite(d) for _, d in rows)
        assert sorted(rows)[0][1] <= sorted(rows)[-1][1]
