"""Plain data carried between the policy, returns and estimator modules."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class ContextKey(NamedTuple):
    """Full conditioning context: prompt id plus the generated token prefix."""

    prompt_id: int
    prefix: tuple[int, ...] = ()

    def child(self, token: int) -> "ContextKey":
        return ContextKey(self.prompt_id, self.prefix + (int(token),))


@dataclass
class Trajectory:
    """One sampled response.

    ``teacher_logp`` has one row per teacher; ``costs`` is the weighted log
    ratio ``sum_m w_m (student_logp - teacher_logp[m])``, which for a single
    teacher of weight one is exactly ``student_logp - teacher_logp[0]``.
    Cost, reward and return fields are filled by :func:`returns.annotate`.
    """

    prompt_id: int
    tokens: tuple[int, ...]
    contexts: list[ContextKey]
    student_logp: np.ndarray
    teacher_logp: np.ndarray | None = None
    costs: np.ndarray | None = None
    rewards: list[float] = field(default_factory=list)
    returns: np.ndarray | None = None

    @property
    def length(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)
