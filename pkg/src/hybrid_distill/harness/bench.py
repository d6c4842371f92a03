"""CPU benchmark of the full and Top-K dense logit kernels."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from ..exceptions import ContractBreach
from ..kernels import _dense_grad, _dense_grad_topk, topk_indices
from .config import BenchSettings


def _dense_grad_f32(zs: np.ndarray, zt: np.ndarray) -> np.ndarray:
    """Single-precision variant of the full kernel, benchmark only."""
    zs, zt = zs.astype(np.float32), zt.astype(np.float32)
    ls = zs - zs.max()
    ls -= np.log(np.exp(ls).sum())
    lt = zt - zt.max()
    lt -= np.log(np.exp(lt).sum())
    p = np.exp(ls)
    diff = ls - lt
    return p * (diff - np.dot(p, diff))


def _time_ns(fn, repeats: int) -> float:
    fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        best = min(best, time.perf_counter_ns() - t0)
    return best


@dataclass
class BenchRow:
    vocab_size: int
    k: int
    full_ns: float
    topk_ns: float
    topk_write_ns: float
    full_f32_ns: float | None
    full_nnz: int
    topk_nnz: int
    storage_ratio: float


def run_bench(settings: BenchSettings, seed: int = 0) -> list[BenchRow]:
    """Time both kernels for every (|V|, K) pair and check that Top-K stores exactly K values.

    ``topk_write_ns`` isolates the gradient-write phase (everything after
    the two log-softmax passes and the index selection).
    """
    rng = np.random.default_rng(seed)
    rows = []
    for V in settings.vocab_sizes:
        zs, zt = rng.normal(size=V), rng.normal(size=V)
        full_ns = _time_ns(lambda: _dense_grad(zs, zt), settings.repeats)
        f32_ns = _time_ns(lambda: _dense_grad_f32(zs, zt), settings.repeats) if settings.float32 else None
        full_nnz = int(np.count_nonzero(_dense_grad(zs, zt)))
        ls = zs - zs.max()
        ls -= np.log(np.exp(ls).sum())
        lt = zt - zt.max()
        lt -= np.log(np.exp(lt).sum())
        for K in settings.topk:
            if K > V:
                continue
            sp = _dense_grad_topk(zs, zt, K)
            if sp.nnz != K:
                raise ContractBreach(f"top-k kernel stored {sp.nnz} values for K={K}")
            if K == V and np.max(np.abs(sp.to_dense() - _dense_grad(zs, zt))) > 1e-12:
                raise ContractBreach("top-k with K=|V| disagrees with the full kernel")
            idx = topk_indices(zs, K)

            def write_phase(idx=idx):
                p = np.exp(ls[idx])
                diff = ls[idx] - lt[idx]
                return p * (diff - np.dot(p, diff))

            rows.append(BenchRow(
                vocab_size=V, k=K, full_ns=full_ns,
                topk_ns=_time_ns(lambda K=K: _dense_grad_topk(zs, zt, K), settings.repeats),
                topk_write_ns=_time_ns(write_phase, settings.repeats),
                full_f32_ns=f32_ns, full_nnz=full_nnz, topk_nnz=sp.nnz, storage_ratio=V / sp.nnz,
            ))
    return rows


def format_rows(rows: list[BenchRow]) -> str:
    head = f"{'|V|':>8} {'K':>5} {'full us':>10} {'f32 us':>10} {'topk us':>10} {'write us':>9} {'nnz':>6} {'ratio':>8}"
    lines = [head]
    for r in rows:
        f32 = f"{r.full_f32_ns / 1e3:10.1f}" if r.full_f32_ns is not None else f"{'-':>10}"
        lines.append(f"{r.vocab_size:>8} {r.k:>5} {r.full_ns / 1e3:10.1f} {f32} {r.topk_ns / 1e3:10.1f} "
                     f"{r.topk_write_ns / 1e3:9.2f} {r.topk_nnz:>6} {r.storage_ratio:8.1f}")
    return "\n".join(lines) + "\n"


def rows_as_dicts(rows: list[BenchRow]) -> list[dict]:
    return [asdict(r) for r in rows]
