"""Utility-ranked stochastic selection of all-fail tasks for external guidance.

A task's utility is a two-dimensional vector (difficulty = 1 - predicted
success rate, novelty = mean per-token negative log-probability of the
solver's rollouts). Utilities of recent tasks live in a fixed-capacity FIFO
buffer; a candidate's z-score against the buffer feeds a calibrated selection
probability

    p = Phi(gamma * (z + Phi^{-1}(tau) * sqrt(1 + 1/gamma^2)))

whose expectation over z ~ N(0,1) equals tau.
"""

from __future__ import annotations

import math
import random
import statistics
from collections import deque
from dataclasses import dataclass
from typing import Deque, List, Sequence, Tuple

_STD_EPS = 1e-9

_NORMAL = statistics.NormalDist()


def normal_cdf(x: float) -> float:
    """Standard normal CDF via the error function."""
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def normal_quantile(q: float) -> float:
    """Inverse standard normal CDF; q must lie strictly in (0, 1)."""
    if not (0.0 < q < 1.0):
        raise ValueError(f"quantile argument must be in (0, 1), got {q}")
    return _NORMAL.inv_cdf(q)


@dataclass(frozen=True)
class UtilityVector:
    difficulty: float  # 1 - predicted success rate, in [0, 1]
    novelty: float     # mean per-token negative logprob, >= 0

    def as_tuple(self) -> Tuple[float, float]:
        return (self.difficulty, self.novelty)


@dataclass(frozen=True)
class SelectionParams:
    tau: float
    gamma: float
    warmup_steps: int = 50

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        if self.gamma <= 0.0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.warmup_steps < 0:
            raise ValueError(f"warmup_steps must be >= 0, got {self.warmup_steps}")


class InsufficientBuffer(RuntimeError):
    """Raised when the buffer cannot yet provide normalization statistics."""


class TaskBuffer:
    """FIFO window of recent task utilities used for z-score normalization."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._entries: Deque[Tuple[str, UtilityVector]] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._entries)

    def push(self, task_id: str, utility: UtilityVector) -> None:
        self._entries.append((task_id, utility))

    def task_ids(self) -> List[str]:
        return [tid for tid, _ in self._entries]

    def utilities(self) -> List[UtilityVector]:
        return [u for _, u in self._entries]

    def stats(self) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        """Per-dimension (mean, population std) over current entries."""
        if not self._entries:
            raise InsufficientBuffer("buffer is empty")
        dims = list(zip(*(u.as_tuple() for _, u in self._entries)))
        out = []
        for values in dims:
            n = len(values)
            mean = sum(values) / n
            var = sum((v - mean) ** 2 for v in values) / n
            out.append((mean, math.sqrt(var)))
        return tuple(out)  # type: ignore[return-value]

    def snapshot(self) -> List[dict]:
        """Ordered serializable view, oldest first."""
        return [
            {"task_id": tid, "difficulty": u.difficulty, "novelty": u.novelty}
            for tid, u in self._entries
        ]

    @classmethod
    def restore(cls, capacity: int, entries: Sequence[dict]) -> "TaskBuffer":
        buf = cls(capacity)
        for e in entries:
            buf.push(e["task_id"], UtilityVector(e["difficulty"], e["novelty"]))
        return buf


def novelty(token_logprobs_per_rollout: Sequence[Sequence[float]]) -> float:
    """Mean over rollouts of the mean per-token negative log-probability."""
    if not token_logprobs_per_rollout:
        raise ValueError("novelty requires at least one rollout")
    per_rollout = []
    for lps in token_logprobs_per_rollout:
        if not lps:
            raise ValueError("novelty requires at least one token per rollout")
        per_rollout.append(sum(-lp for lp in lps) / len(lps))
    return sum(per_rollout) / len(per_rollout)


def zscore(utility: UtilityVector, buffer: TaskBuffer, min_buffer: int = 16) -> float:
    """Mean over dimensions of (value - buffer mean) / buffer population std.

    A dimension whose buffer std is below 1e-9 contributes 0.
    """
    if len(buffer) < min_buffer:
        raise InsufficientBuffer(
            f"buffer holds {len(buffer)} entries, need {min_buffer}"
        )
    stats = buffer.stats()
    values = utility.as_tuple()
    total = 0.0
    for value, (mean, std) in zip(values, stats):
        if std > _STD_EPS:
            total += (value - mean) / std
    return total / len(values)


def selection_probability(z: float, params: SelectionParams) -> float:
    """Phi(gamma * (z + Phi^{-1}(tau) * sqrt(1 + 1/gamma^2)))."""
    offset = normal_quantile(params.tau) * math.sqrt(1.0 + 1.0 / params.gamma**2)
    return normal_cdf(params.gamma * (z + offset))


def sample_indicator(p: float, rng: random.Random) -> bool:
    """Bernoulli draw; consumes exactly one uniform variate."""
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"p must be in [0, 1], got {p}")
    return rng.random() < p
