"""Scalar reward computations for the generator and solver roles.

Generator reward couples a format gate with the difficulty-prediction reward
1 - |mu_hat - mu|; solver reward couples the same gate with the binary
verification outcome. Both collapse to 0 whenever the format gate fails.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence


@dataclass
class RolloutAttempt:
    """One solver attempt on a task."""
    response_text: str
    answer: Optional[str]          # None when the response failed to parse
    verdict: bool                  # sandbox verification outcome
    format_ok: bool
    token_logprobs: List[float] = field(default_factory=list)

    @property
    def correct(self) -> bool:
        # An unparseable response cannot be correct, whatever the sandbox says.
        return self.format_ok and self.verdict


@dataclass
class RolloutSet:
    task_id: str
    attempts: List[RolloutAttempt]

    @property
    def mu_hat(self) -> float:
        return success_rate([a.correct for a in self.attempts])


def success_rate(verdicts: Sequence[bool]) -> float:
    """Fraction of true verdicts. The denominator is always the full list."""
    if not verdicts:
        raise ValueError("success_rate of an empty verdict list is undefined")
    return sum(1 for v in verdicts if v) / len(verdicts)


def dp_reward(mu: float, mu_hat: float) -> float:
    """Difficulty-prediction reward: 1 - |mu_hat - mu|."""
    if not (0.0 <= mu <= 1.0):
        raise ValueError(f"mu must be in [0, 1], got {mu}")
    if not (0.0 <= mu_hat <= 1.0):
        raise ValueError(f"mu_hat must be in [0, 1], got {mu_hat}")
    return 1.0 - abs(mu_hat - mu)


def generator_reward(format_r: int, dp_r: float) -> float:
    """format_r * dp_r + format_r, in [0, 2]."""
    if format_r not in (0, 1):
        raise ValueError(f"format_r must be 0 or 1, got {format_r}")
    if not (0.0 <= dp_r <= 1.0):
        raise ValueError(f"dp_r must be in [0, 1], got {dp_r}")
    return format_r * dp_r + format_r


def solver_reward(format_r: int, outcome_r: int) -> int:
    """format_r * outcome_r + format_r, in {0, 1, 2}."""
    if format_r not in (0, 1):
        raise ValueError(f"format_r must be 0 or 1, got {format_r}")
    if outcome_r not in (0, 1):
        raise ValueError(f"outcome_r must be 0 or 1, got {outcome_r}")
    return format_r * outcome_r + format_r
