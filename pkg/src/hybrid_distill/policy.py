"""Exactly representable autoregressive policies over a small vocabulary.

A :class:`TabularPolicy` stores one logit vector per full context
``(prompt_id, prefix)``. Missing contexts mean all-zero logits, i.e. the
uniform distribution, so every policy is defined on the whole prefix tree.
Generation stops at ``eos_token`` or after ``horizon`` tokens.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

from .exceptions import ConfigError, HorizonError, InputDomainError
from .kernels import _log_softmax, _softmax
from .trajectory import ContextKey, Trajectory
from .validation import check_logits, check_scalar

__all__ = [
    "ContextKey",
    "ParamGrad",
    "TabularPolicy",
    "token_distribution",
    "sample_trajectory",
    "log_prob",
    "score_function",
    "save_policy",
    "load_policy",
]


class ParamGrad:
    """Sparse gradient over policy parameters: one length-|V| block per context.

    Absent keys are zero blocks. Supports ``+``, ``-``, scalar ``*`` and
    in-place accumulation; iteration is in sorted key order so reductions
    are reproducible.
    """

    __slots__ = ("entries",)

    def __init__(self, entries: Mapping[ContextKey, np.ndarray] | None = None):
        self.entries: dict[ContextKey, np.ndarray] = {}
        if entries:
            for k, v in entries.items():
                self.entries[ContextKey(*k)] = np.array(v, dtype=np.float64)

    def block(self, key: ContextKey, dim: int) -> np.ndarray:
        blk = self.entries.get(key)
        return np.zeros(dim) if blk is None else blk

    def add_block(self, key: ContextKey, vec: np.ndarray, scale: float = 1.0) -> None:
        """In-place ``self[key] += scale * vec``."""
        blk = self.entries.get(key)
        if blk is None:
            self.entries[key] = scale * np.asarray(vec, dtype=np.float64)
        else:
            blk += scale * vec

    def iadd(self, other: "ParamGrad", scale: float = 1.0) -> "ParamGrad":
        for key in sorted(other.entries):
            self.add_block(key, other.entries[key], scale)
        return self

    def copy(self) -> "ParamGrad":
        return ParamGrad({k: v.copy() for k, v in self.entries.items()})

    def keys(self) -> list[ContextKey]:
        return sorted(self.entries)

    def __contains__(self, key) -> bool:
        return key in self.entries

    def __getitem__(self, key) -> np.ndarray:
        return self.entries[ContextKey(*key)]

    def __len__(self) -> int:
        return len(self.entries)

    def __add__(self, other: "ParamGrad") -> "ParamGrad":
        return self.copy().iadd(other)

    def __sub__(self, other: "ParamGrad") -> "ParamGrad":
        return self.copy().iadd(other, -1.0)

    def __neg__(self) -> "ParamGrad":
        return self * -1.0

    def __mul__(self, scalar: float) -> "ParamGrad":
        return ParamGrad({k: scalar * v for k, v in self.entries.items()})

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "ParamGrad":
        return ParamGrad({k: v / scalar for k, v in self.entries.items()})

    def max_abs(self) -> float:
        if not self.entries:
            return 0.0
        return max(float(np.max(np.abs(v))) for v in self.entries.values())

    def norm(self) -> float:
        """Euclidean norm over all blocks."""
        return float(np.sqrt(sum(float(np.dot(v, v)) for v in self.entries.values())))

    def to_array(self, keys: Iterable[ContextKey], dim: int) -> np.ndarray:
        """Stack the blocks for ``keys`` (zeros where absent) into a 2-D array."""
        return np.array([self.block(ContextKey(*k), dim) for k in keys]).reshape(-1, dim)

    def __repr__(self) -> str:
        return f"ParamGrad({len(self.entries)} blocks, max_abs={self.max_abs():.3g})"


@dataclass
class TabularPolicy:
    """Autoregressive policy with one logit vector per full context."""

    vocab_size: int
    horizon: int
    eos_token: int
    table: dict[ContextKey, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.vocab_size = check_scalar(self.vocab_size, "vocab_size", lo=2, integer=True,
                                       exc=ConfigError)
        self.horizon = check_scalar(self.horizon, "horizon", lo=1, integer=True, exc=ConfigError)
        self.eos_token = check_scalar(self.eos_token, "eos_token", lo=0, hi=self.vocab_size - 1,
                                      integer=True, exc=ConfigError)
        table, self.table = self.table, {}
        for key, z in table.items():
            self.set_logits(key, z)

    # -- construction ------------------------------------------------------

    @classmethod
    def uniform(cls, vocab_size: int, horizon: int, eos_token: int | None = None) -> "TabularPolicy":
        return cls(vocab_size, horizon, vocab_size - 1 if eos_token is None else eos_token)

    @classmethod
    def random(cls, vocab_size: int, horizon: int, rng: np.random.Generator, *,
               eos_token: int | None = None, scale: float = 2.0,
               prompt_ids: Iterable[int] = (0,)) -> "TabularPolicy":
        """Policy with i.i.d. U(-scale, scale) logits at every reachable context."""
        pol = cls.uniform(vocab_size, horizon, eos_token)
        for pid in prompt_ids:
            for ctx in pol.reachable_contexts(pid):
                pol.table[ctx] = rng.uniform(-scale, scale, size=vocab_size)
        return pol

    def copy(self) -> "TabularPolicy":
        return TabularPolicy(self.vocab_size, self.horizon, self.eos_token,
                             {k: v.copy() for k, v in self.table.items()})

    def compatible_with(self, other: "TabularPolicy") -> bool:
        return (self.vocab_size, self.horizon, self.eos_token) == (
            other.vocab_size, other.horizon, other.eos_token)

    # -- access ------------------------------------------------------------

    def check_context(self, ctx) -> ContextKey:
        ctx = ContextKey(int(ctx[0]), tuple(int(t) for t in ctx[1]))
        if len(ctx.prefix) >= self.horizon:
            raise HorizonError(
                f"prefix length {len(ctx.prefix)} is not below horizon {self.horizon}")
        if any(t < 0 or t >= self.vocab_size for t in ctx.prefix):
            raise InputDomainError(f"prefix {ctx.prefix} has tokens outside [0, {self.vocab_size})")
        return ctx

    def logits(self, ctx: ContextKey) -> np.ndarray:
        z = self.table.get(ctx)
        return np.zeros(self.vocab_size) if z is None else z

    def set_logits(self, ctx, z) -> None:
        ctx = self.check_context(ctx)
        z = check_logits(z, f"logits[{ctx}]")
        if z.shape[0] != self.vocab_size:
            raise ConfigError(f"logits for {ctx} have length {z.shape[0]}, expected {self.vocab_size}")
        self.table[ctx] = z.copy()

    def probs(self, ctx: ContextKey) -> np.ndarray:
        return _softmax(self.logits(ctx))

    def log_probs(self, ctx: ContextKey) -> np.ndarray:
        return _log_softmax(self.logits(ctx))

    def is_terminal(self, prefix: tuple[int, ...]) -> bool:
        return len(prefix) >= self.horizon or (len(prefix) > 0 and prefix[-1] == self.eos_token)

    def reachable_contexts(self, prompt_id: int) -> Iterator[ContextKey]:
        """Every context at which a token can still be generated, depth first."""
        stack = [ContextKey(int(prompt_id), ())]
        while stack:
            ctx = stack.pop()
            yield ctx
            if len(ctx.prefix) + 1 < self.horizon:
                for v in reversed(range(self.vocab_size)):
                    if v != self.eos_token:
                        stack.append(ctx.child(v))

    def materialize(self, prompt_id: int) -> "TabularPolicy":
        """Store explicit (zero) logits for every reachable context that has none."""
        for ctx in self.reachable_contexts(prompt_id):
            if ctx not in self.table:
                self.table[ctx] = np.zeros(self.vocab_size)
        return self


def token_distribution(policy: TabularPolicy, ctx) -> np.ndarray:
    """Next-token distribution at ``ctx`` (uniform when the context is not stored)."""
    return policy.probs(policy.check_context(ctx))


def sample_trajectory(policy: TabularPolicy, prompt_id: int, rng: np.random.Generator,
                      cache: dict | None = None) -> Trajectory:
    """Draw one response token by token until EOS or the horizon.

    Each step consumes exactly one uniform draw from ``rng``. ``cache`` may
    map contexts to already computed log-probabilities; it is filled as a
    side effect and must be discarded once the policy changes.
    """
    ctx = ContextKey(int(prompt_id), ())
    tokens: list[int] = []
    contexts: list[ContextKey] = []
    logps: list[float] = []
    while True:
        if cache is None:
            logp = policy.log_probs(ctx)
        else:
            logp = cache.get(ctx)
            if logp is None:
                logp = cache[ctx] = policy.log_probs(ctx)
        cdf = np.cumsum(np.exp(logp))
        tok = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")),
                  policy.vocab_size - 1)
        contexts.append(ctx)
        tokens.append(tok)
        logps.append(float(logp[tok]))
        if tok == policy.eos_token or len(tokens) >= policy.horizon:
            break
        ctx = ctx.child(tok)
    return Trajectory(prompt_id=int(prompt_id), tokens=tuple(tokens), contexts=contexts,
                      student_logp=np.array(logps))


def _contexts_for(prompt_id: int, tokens) -> list[ContextKey]:
    return [ContextKey(int(prompt_id), tuple(int(t) for t in tokens[:t])) for t in range(len(tokens))]


def token_log_probs(policy: TabularPolicy, prompt_id: int, tokens) -> np.ndarray:
    """Per-step ``log pi(y_t | x, y_<t)`` for a given token sequence."""
    if len(tokens) > policy.horizon:
        raise HorizonError(f"sequence of length {len(tokens)} exceeds horizon {policy.horizon}")
    out = np.empty(len(tokens))
    for t, ctx in enumerate(_contexts_for(prompt_id, tokens)):
        tok = int(tokens[t])
        if not 0 <= tok < policy.vocab_size:
            raise InputDomainError(f"token {tok} outside vocabulary")
        out[t] = policy.log_probs(ctx)[tok]
    return out


def log_prob(policy: TabularPolicy, traj: Trajectory) -> float:
    """Sequence log-probability, the sum of per-token log-probabilities."""
    return float(np.sum(token_log_probs(policy, traj.prompt_id, traj.tokens)))


def score_block(policy: TabularPolicy, ctx: ContextKey, token: int) -> np.ndarray:
    """``onehot(token) - pi(.|ctx)``: gradient of ``log pi(token|ctx)`` in that context's logits."""
    blk = -policy.probs(ctx)
    blk[token] += 1.0
    return blk


def score_function(policy: TabularPolicy, ctx, token: int) -> ParamGrad:
    """Parameter-space score of ``token`` at ``ctx``; nonzero only in the ``ctx`` block."""
    ctx = policy.check_context(ctx)
    token = check_scalar(token, "token", lo=0, hi=policy.vocab_size - 1, integer=True)
    return ParamGrad({ctx: score_block(policy, ctx, token)})


# -- serialization ---------------------------------------------------------
#
#   # hybrid-distill tabular policy v1
#   vocab_size <V> horizon <T> eos <e>
#   <prompt_id> <tok,tok,...|-> <z_0> ... <z_{V-1}>

_HEADER = "# hybrid-distill tabular policy v1"


def save_policy(policy: TabularPolicy, path: str | os.PathLike) -> None:
    lines = [_HEADER, f"vocab_size {policy.vocab_size} horizon {policy.horizon} eos {policy.eos_token}"]
    for ctx in sorted(policy.table):
        prefix = ",".join(str(t) for t in ctx.prefix) or "-"
        vals = " ".join(repr(float(x)) for x in policy.table[ctx])
        lines.append(f"{ctx.prompt_id} {prefix} {vals}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_policy(path: str | os.PathLike) -> TabularPolicy:
    with open(path) as fh:
        body = [(n, ln.strip()) for n, ln in enumerate(fh, 1)
                if ln.strip() and not ln.lstrip().startswith("#")]
    if not body:
        raise ConfigError(f"{path}: empty policy file")
    lineno, head_line = body[0]
    try:
        head = head_line.split()
        fields = dict(zip(head[::2], head[1::2]))
        policy = TabularPolicy(int(fields["vocab_size"]), int(fields["horizon"]), int(fields["eos"]))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}:{lineno}: bad header line {head_line!r}") from exc
    for lineno, ln in body[1:]:
        parts = ln.split()
        try:
            pid = int(parts[0])
            prefix = () if parts[1] == "-" else tuple(int(t) for t in parts[1].split(","))
            z = [float(x) for x in parts[2:]]
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"{path}:{lineno}: cannot parse {ln!r}") from exc
        policy.set_logits(ContextKey(pid, prefix), z)
    return policy
