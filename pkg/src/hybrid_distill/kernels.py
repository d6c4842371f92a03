"""Vocabulary-sized numeric kernels: softmax, KL divergence and its logit gradient.

All kernels run in float64 and are pure functions. The public functions
validate their inputs; the underscore variants skip validation and are the
ones used in inner loops.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputDomainError
from .validation import check_logits, check_probs, check_same_length, check_scalar

#: Floor applied to teacher probabilities inside ``log q``.
Q_FLOOR = 1e-12
_LOG_Q_FLOOR = float(np.log(Q_FLOOR))


@dataclass(frozen=True)
class SparseGradVec:
    """Gradient that is zero outside ``indices`` (strictly increasing)."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim, dtype=self.values.dtype)
        out[self.indices] = self.values
        return out


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max()
    return shifted - np.log(np.exp(shifted).sum())


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax(z) -> np.ndarray:
    """Numerically stable softmax of a finite logit vector."""
    return _softmax(check_logits(z, "z"))


def log_softmax(z) -> np.ndarray:
    return _log_softmax(check_logits(z, "z"))


def kl_divergence(p, q, q_floor: float = Q_FLOOR) -> float:
    """KL(p || q) = sum_i p_i (log p_i - log q_i), with ``q`` floored at ``q_floor``.

    Entries with ``p_i == 0`` contribute nothing.
    """
    p = check_probs(p, "p")
    q = check_probs(q, "q")
    check_same_length(p, q, ("p", "q"))
    mask = p > 0
    logq = np.log(np.maximum(q[mask], q_floor))
    return float(np.sum(p[mask] * (np.log(p[mask]) - logq)))


def _dense_grad(z_student: np.ndarray, z_teacher: np.ndarray) -> np.ndarray:
    logp = _log_softmax(z_student)
    logq = np.maximum(_log_softmax(z_teacher), _LOG_Q_FLOOR)
    p = np.exp(logp)
    diff = logp - logq
    kl = np.dot(p, diff)
    return p * (diff - kl)


def dense_logit_gradient_full(z_student, z_teacher) -> np.ndarray:
    """Gradient of KL(softmax(z_student) || softmax(z_teacher)) with respect to z_student.

    Closed form ``p * (log p - log q - KL)``; the result sums to zero.
    """
    zs = check_logits(z_student, "z_student")
    zt = check_logits(z_teacher, "z_teacher")
    check_same_length(zs, zt, ("z_student", "z_teacher"))
    return _dense_grad(zs, zt)


def topk_indices(z: np.ndarray, k: int) -> np.ndarray:
    """Positions of the ``k`` largest entries of ``z``, ties going to the lower index.

    Runs in O(|V|) via a partition; the result is sorted ascending.
    """
    n = z.shape[0]
    if k == n:
        return np.arange(n)
    # k-th largest value is the threshold; everything strictly above it is in.
    kth = np.partition(z, n - k)[n - k]
    above = np.flatnonzero(z > kth)
    ties = np.flatnonzero(z == kth)[: k - above.shape[0]]
    return np.sort(np.concatenate([above, ties]))


def _dense_grad_topk(z_student: np.ndarray, z_teacher: np.ndarray, k: int) -> SparseGradVec:
    idx = topk_indices(z_student, k)
    # raw (unrenormalized) probabilities restricted to the student's top-k
    logp = _log_softmax(z_student)[idx]
    logq = np.maximum(_log_softmax(z_teacher)[idx], _LOG_Q_FLOOR)
    p = np.exp(logp)
    diff = logp - logq
    kl_approx = np.dot(p, diff)
    return SparseGradVec(indices=idx, values=p * (diff - kl_approx), dim=z_student.shape[0])


def dense_logit_gradient_topk(z_student, z_teacher, k: int) -> SparseGradVec:
    """Top-K approximation of :func:`dense_logit_gradient_full`.

    Keeps the K most likely student tokens, uses their unrenormalized
    probabilities and replaces the KL constant by its restricted sum. This
    is biased whenever the top-K set misses probability mass.
    """
    zs = check_logits(z_student, "z_student")
    zt = check_logits(z_teacher, "z_teacher")
    check_same_length(zs, zt, ("z_student", "z_teacher"))
    k = check_scalar(k, "K", lo=1, hi=zs.shape[0], integer=True, exc=InputDomainError)
    return _dense_grad_topk(zs, zt, k)
