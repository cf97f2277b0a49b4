"""Desk-scale synthetic experiments over the production loop.

The simulator runs the exact same loop as a real run, only with the synthetic
backend and the in-process runner, so the qualitative dynamics it produces
(difficulty-prediction reward improving, rollout accuracy settling into a
band, selected tasks carrying higher utility z-scores, skill escaping its cap
only with external guidance) certify the production pipeline itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

from .config import RunConfig, SyntheticParams
from .looprunner import RunSummary, run_loop

SERIES_KEYS = ("dp_reward", "rollout_accuracy", "selected_fraction",
               "z_selected", "z_unselected", "skill")


@dataclass
class SimScenario:
    steps: int = 200
    batch_size: int = 8
    tau: float = 0.1
    gamma: float = 5.0
    warmup_steps: int = 50
    seed: int = 7
    shuffle_z: bool = False
    synthetic: SyntheticParams = field(default_factory=SyntheticParams)

    def to_config(self) -> RunConfig:
        cfg = RunConfig(
            steps=self.steps, batch_size=self.batch_size, tau=self.tau,
            gamma=self.gamma, warmup_steps=self.warmup_steps, seed=self.seed,
            shuffle_z=self.shuffle_z, backend="synthetic",
            external_backend="synthetic", runner="inprocess",
            synthetic=self.synthetic,
        )
        cfg.validate()
        return cfg


@dataclass
class SimResult:
    scenario: SimScenario
    series: Dict[str, List[Optional[float]]]
    summary: RunSummary

    @property
    def final_skill(self) -> Optional[float]:
        return self.summary.final_skill

    @property
    def selected_over_eligible(self) -> Optional[float]:
        if self.summary.eligible_allfail == 0:
            return None
        return self.summary.selected / self.summary.eligible_allfail


def simulate(scenario: SimScenario, run_id: Optional[str] = None,
             out_dir: Optional[str] = None) -> SimResult:
    """Run the scenario; by default nothing is persisted."""
    config = scenario.to_config()
    if out_dir is not None:
        config.out_dir = out_dir
    summary = run_loop(config, run_id=run_id, persist=out_dir is not None)
    series: Dict[str, List[Optional[float]]] = {k: [] for k in SERIES_KEYS}
    for r in summary.reports:
        series["dp_reward"].append(r.dp_reward_mean)
        series["rollout_accuracy"].append(r.rollout_accuracy)
        series["selected_fraction"].append(
            r.selected / r.eligible_allfail if r.eligible_allfail else 0.0)
        series["z_selected"].append(r.z_selected_mean)
        series["z_unselected"].append(r.z_unselected_mean)
        series["skill"].append(r.skill)
    return SimResult(scenario=scenario, series=series, summary=summary)


def compare(scenario_a: SimScenario, scenario_b: SimScenario) -> Dict:
    """Paired run of two scenarios sharing seed and horizon."""
    if scenario_a.steps != scenario_b.steps:
        raise ValueError("scenarios must share the same horizon")
    if scenario_a.seed != scenario_b.seed:
        raise ValueError("scenarios must share the same seed")
    res_a = simulate(scenario_a)
    res_b = simulate(scenario_b)

    def _final(values: List[Optional[float]]) -> Optional[float]:
        cleaned = [v for v in values if v is not None]
        return cleaned[-1] if cleaned else None

    deltas = {}
    for key in SERIES_KEYS:
        fa, fb = _final(res_a.series[key]), _final(res_b.series[key])
        deltas[key] = None if fa is None or fb is None else fa - fb
    return {
        "a": res_a, "b": res_b, "final_deltas": deltas,
        "final_skill_delta": (
            None if res_a.final_skill is None or res_b.final_skill is None
            else res_a.final_skill - res_b.final_skill),
    }


def mean_selected_z(result: SimResult) -> Optional[float]:
    values = [z for r in result.summary.reports
              for e in r.selection
              if e["selected"] and (z := e["z"]) is not None]
    if not values:
        return None
    return sum(values) / len(values)


def mean_unselected_z(result: SimResult) -> Optional[float]:
    values = [z for r in result.summary.reports
              for e in r.selection
              if not e["selected"] and (z := e["z"]) is not None]
    if not values:
        return None
    return sum(values) / len(values)
