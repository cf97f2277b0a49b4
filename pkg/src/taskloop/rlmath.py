"""Clipped-surrogate batch math and training-record assembly.

The per-token objective is min(w * A, clip(w, 1-eps, 1+eps) * A) with the
advantage A constant per sequence (rewards are sequence-level), normalized to
zero mean and unit population std per role. No parameter updates happen here:
the output is a batch of records for an external trainer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

_STD_EPS = 1e-8


@dataclass(frozen=True)
class ClipParams:
    epsilon: float = 0.2

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")


@dataclass
class TrainingRecord:
    role: str                  # generator | solver
    prompt: str
    response: str
    reward: float
    advantage: float
    step: int
    behavior_source: str = "on_policy"   # on_policy | external
    behavior_logprobs: Optional[List[float]] = None
    task_id: Optional[str] = None

    def __post_init__(self):
        if self.role not in ("generator", "solver"):
            raise ValueError(f"unknown role {self.role!r}")
        if self.behavior_source not in ("on_policy", "external"):
            raise ValueError(f"unknown behavior_source {self.behavior_source!r}")
        if self.behavior_source == "external" and self.role != "solver":
            raise ValueError("external behavior source is solver-only")
        if not math.isfinite(self.advantage):
            raise ValueError("advantage must be finite")


@dataclass
class BatchItem:
    """Pre-normalization input to assemble_batch."""
    prompt: str
    response: str
    reward: float
    task_id: Optional[str] = None
    behavior_logprobs: Optional[List[float]] = None


def normalize_advantages(rewards: Sequence[float]) -> List[float]:
    """(r - mean) / population std; all zeros for a near-constant batch."""
    if not rewards:
        raise ValueError("cannot normalize an empty batch")
    n = len(rewards)
    mean = sum(rewards) / n
    std = math.sqrt(sum((r - mean) ** 2 for r in rewards) / n)
    if std <= _STD_EPS:
        return [0.0] * n
    return [(r - mean) / std for r in rewards]


def token_objective(w: float, advantage: float, params: ClipParams) -> float:
    """min(w * A, clip(w, 1-eps, 1+eps) * A)."""
    if w <= 0.0:
        raise ValueError(f"importance ratio must be positive, got {w}")
    clipped = min(max(w, 1.0 - params.epsilon), 1.0 + params.epsilon)
    return min(w * advantage, clipped * advantage)


def sequence_objective(ratios: Sequence[float], advantage: float,
                       params: ClipParams) -> float:
    """Token-mean of the clipped objective with a shared per-sequence advantage."""
    if not ratios:
        raise ValueError("sequence_objective requires at least one token")
    return sum(token_objective(w, advantage, params) for w in ratios) / len(ratios)


def assemble_batch(generator_items: Sequence[BatchItem],
                   solver_items: Sequence[BatchItem],
                   external_items: Sequence[BatchItem],
                   step: int) -> List[TrainingRecord]:
    """Build the step's training records with per-role advantage normalization.

    Generator records are normalized over generator rewards only; solver and
    external records share one solver pool. External records carry
    behavior_source="external" and no behavior logprobs (the ratio is treated
    as 1 at the first update).
    """
    records: List[TrainingRecord] = []

    if generator_items:
        advs = normalize_advantages([it.reward for it in generator_items])
        for it, adv in zip(generator_items, advs):
            records.append(TrainingRecord(
                role="generator", prompt=it.prompt, response=it.response,
                reward=it.reward, advantage=adv, step=step,
                behavior_logprobs=it.behavior_logprobs, task_id=it.task_id,
            ))

    solver_pool = list(solver_items) + list(external_items)
    if solver_pool:
        advs = normalize_advantages([it.reward for it in solver_pool])
        n_on_policy = len(solver_items)
        for i, (it, adv) in enumerate(zip(solver_pool, advs)):
            external = i >= n_on_policy
            records.append(TrainingRecord(
                role="solver", prompt=it.prompt, response=it.response,
                reward=it.reward, advantage=adv, step=step,
                behavior_source="external" if external else "on_policy",
                behavior_logprobs=None if external else it.behavior_logprobs,
                task_id=it.task_id,
            ))

    return records
