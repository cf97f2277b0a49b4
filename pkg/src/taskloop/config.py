"""Run configuration: every tunable in one place, validated before use."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Any, Dict, Optional

import yaml


class ConfigError(ValueError):
    """Raised when a RunConfig value is out of range or inconsistent."""


@dataclass
class SyntheticParams:
    """Constants of the parametric skill model used for simulation.

    These are simulation scaffolding with documented defaults, not claims
    about any real model.
    """

    alpha: float = 1.6           # logistic steepness of success vs (skill - difficulty)
    eta: float = 0.025           # skill gain per unit informative fraction
    delta: float = 0.08          # capability-cap gain per accepted external guidance
    rho: float = 0.96            # per-step decay of difficulty-prediction noise
    skill0: float = 0.0
    cap0: float = 1.2
    predict_noise_sd0: float = 5.0   # in units of predicted count k (0..8)
    predict_noise_floor: float = 1.2
    latent_difficulty_sd: float = 1.5
    gap0: float = 2.2            # initial (skill - mean difficulty) gap: easy tasks first
    gap_final: float = 0.3
    gap_decay: float = 0.97
    external_skill_bonus: float = 3.0
    novelty_base: float = 1.0
    novelty_slope: float = 0.0
    tokens_per_rollout: int = 12


@dataclass
class RunConfig:
    steps: int = 200
    batch_size: int = 8          # tasks proposed per step (64 in full-scale runs)
    n_rollouts: int = 8          # N; the 0..8 difficulty scale maps to mu in {0, 1/8, .., 1}
    tau: float = 0.1             # target expected selection probability; 0 disables selection
    gamma: float = 5.0           # selection sharpness
    warmup_steps: int = 50       # selection disabled before this step
    buffer_capacity: int = 512
    min_buffer: int = 16
    timeout_ms: int = 10_000
    grace_ms: int = 2_000
    epsilon: float = 0.2         # clip width for the surrogate objective
    seed: int = 0
    backend: str = "synthetic"   # scripted | synthetic | http
    external_backend: str = "synthetic"
    solve_mode: str = "deduction"  # deduction | abduction
    temperature: float = 1.0
    max_tokens: int = 1024
    runner: str = "inprocess"    # inprocess | subprocess
    runner_pool_size: int = 2
    max_references: int = 3
    shuffle_z: bool = False      # ablation: decouple selection from task utility
    out_dir: str = "runs"
    synthetic: SyntheticParams = field(default_factory=SyntheticParams)
    http_base_url: Optional[str] = None
    http_model: Optional[str] = None
    http_max_retries: int = 3
    http_timeout_s: float = 60.0

    def validate(self) -> None:
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.n_rollouts < 1:
            raise ConfigError(f"n_rollouts must be >= 1, got {self.n_rollouts}")
        if not (0.0 <= self.tau < 1.0):
            raise ConfigError(f"tau must be in [0, 1), got {self.tau}")
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if self.warmup_steps < 0:
            raise ConfigError(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if self.buffer_capacity < 1:
            raise ConfigError(f"buffer_capacity must be >= 1, got {self.buffer_capacity}")
        if self.min_buffer < 1:
            raise ConfigError(f"min_buffer must be >= 1, got {self.min_buffer}")
        if self.timeout_ms <= 0:
            raise ConfigError(f"timeout_ms must be > 0, got {self.timeout_ms}")
        if not (0.0 < self.epsilon < 1.0):
            raise ConfigError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if self.backend not in ("scripted", "synthetic", "http"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.solve_mode not in ("deduction", "abduction"):
            raise ConfigError(f"unknown solve_mode {self.solve_mode!r}")
        if self.runner not in ("inprocess", "subprocess"):
            raise ConfigError(f"unknown runner {self.runner!r}")
        if self.runner_pool_size < 1:
            raise ConfigError(f"runner_pool_size must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        data = dict(data)
        synth = data.pop("synthetic", None)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        if synth is not None:
            synth_known = set(SyntheticParams.__dataclass_fields__)
            bad = set(synth) - synth_known
            if bad:
                raise ConfigError(f"unknown synthetic keys: {sorted(bad)}")
            cfg.synthetic = SyntheticParams(**synth)
        cfg.validate()
        return cfg


def load_config(path: str, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Load a YAML config file, apply flag overrides, validate."""
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(data)
