"""The per-step pipeline: generate -> parse -> validate -> solve -> reward ->
limit-breaking selection -> external guidance -> batch assembly -> metrics.

Everything in a step is driven by seeded RNG and deterministic backends, so
two runs under the same seed write byte-identical task/rollout/batch logs.
"""

from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional, Tuple

from .agents import (Completion, HttpBackend, Sampling, ScriptedBackend,
                     SyntheticBackend, TransportError, ScoringUnsupported)
from .config import RunConfig
from .limitbreak import (InsufficientBuffer, SelectionParams, TaskBuffer,
                         UtilityVector, novelty, sample_indicator,
                         selection_probability, zscore)
from .rlmath import BatchItem, TrainingRecord, assemble_batch
from .rewards import dp_reward, generator_reward, solver_reward, success_rate
from .sandbox import (InProcessRunner, RunnerPool, RunnerUnavailable, Sandbox,
                      SEED_TASK, Task)
from .store import RunStore
from .templates import (FormatVerdict, GeneratorParse, SolverParse,
                        format_reward, parse_generator_response,
                        parse_solver_response, render_generator_prompt,
                        render_solver_prompt)

logger = logging.getLogger(__name__)

REFERENCE_POOL_CAP = 64


class StepAborted(RuntimeError):
    """An infrastructure failure aborted the step; no partial batch persisted."""


@dataclass
class StepReport:
    step: int
    tasks_proposed: int = 0
    tasks_validated: int = 0
    tasks_rejected: int = 0
    rollout_accuracy: float = 0.0
    dp_reward_mean: float = 0.0
    generator_reward_mean: float = 0.0
    solver_reward_mean: float = 0.0
    eligible_allfail: int = 0
    selected: int = 0
    external_accepted: int = 0
    z_selected_mean: Optional[float] = None
    z_unselected_mean: Optional[float] = None
    skill: Optional[float] = None
    skill_cap: Optional[float] = None
    wall_ms: int = 0
    selection: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class RunSummary:
    run_dir: Optional[str]
    steps_completed: int
    tasks_proposed: int
    tasks_validated: int
    eligible_allfail: int
    selected: int
    external_accepted: int
    final_skill: Optional[float]
    reports: List[StepReport] = field(default_factory=list)


class LoopState:
    """Mutable cross-step state: buffer, reference pool, rng, backends."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.step = 0
        self.rng = random.Random(config.seed)
        self.buffer = TaskBuffer(config.buffer_capacity)
        self.ref_pool: List[Task] = [SEED_TASK]
        self.backend = _make_backend(config, role_seed=config.seed + 1)
        self.external = _make_external(config, self.backend)
        self.sandbox = _make_sandbox(config)
        self.sampling = Sampling(temperature=config.temperature,
                                 max_tokens=config.max_tokens)

    # -- checkpointing --------------------------------------------------------

    def checkpoint(self) -> Dict[str, Any]:
        ckpt: Dict[str, Any] = {
            "step": self.step,
            "rng_state": _encode_rng(self.rng.getstate()),
            "buffer": self.buffer.snapshot(),
            "ref_pool": [_task_to_dict(t) for t in self.ref_pool],
        }
        if isinstance(self.backend, SyntheticBackend):
            ckpt["synthetic"] = self.backend.snapshot()
        return ckpt

    def restore(self, ckpt: Dict[str, Any]) -> None:
        self.step = ckpt["step"]
        self.rng.setstate(_decode_rng(ckpt["rng_state"]))
        self.buffer = TaskBuffer.restore(self.config.buffer_capacity,
                                         ckpt["buffer"])
        self.ref_pool = [_task_from_dict(d) for d in ckpt["ref_pool"]]
        if isinstance(self.backend, SyntheticBackend) and "synthetic" in ckpt:
            self.backend.restore(ckpt["synthetic"])

    def close(self) -> None:
        self.sandbox.close()


def _encode_rng(state) -> list:
    version, internal, gauss_next = state
    return [version, list(internal), gauss_next]


def _decode_rng(data) -> tuple:
    version, internal, gauss_next = data
    return (version, tuple(internal), gauss_next)


def _task_to_dict(task: Task) -> Dict[str, Any]:
    return {
        "id": task.id, "code": task.code, "input_literal": task.input_literal,
        "ground_truth_output": task.ground_truth_output,
        "predicted_mu": task.predicted_mu, "status": task.status,
        "reject_reason": task.reject_reason, "step_created": task.step_created,
        "provenance": task.provenance,
    }


def _task_from_dict(d: Dict[str, Any]) -> Task:
    return Task(**d)


def _make_backend(config: RunConfig, role_seed: int):
    if config.backend == "synthetic":
        return SyntheticBackend(config.synthetic, seed=role_seed)
    if config.backend == "http":
        import os
        return HttpBackend(
            base_url=config.http_base_url or "http://localhost:8000/v1",
            model=config.http_model or "default",
            api_key=os.environ.get("TASKLOOP_API_KEY"),
            max_retries=config.http_max_retries,
            timeout_s=config.http_timeout_s,
        )
    raise ValueError(
        "scripted backend requires explicit scripts; construct LoopState "
        "manually or pass a backend to run_loop"
    )


def _make_external(config: RunConfig, backend):
    # One shared synthetic policy plays every role; the external role simply
    # uses a higher fixed skill inside the same backend.
    if config.external_backend == "synthetic" and isinstance(backend, SyntheticBackend):
        return backend
    if config.external_backend == "http":
        import os
        return HttpBackend(
            base_url=config.http_base_url or "http://localhost:8000/v1",
            model=config.http_model or "default",
            api_key=os.environ.get("TASKLOOP_API_KEY"),
            max_retries=config.http_max_retries,
            timeout_s=config.http_timeout_s,
        )
    return backend


def _make_sandbox(config: RunConfig) -> Sandbox:
    if config.runner == "inprocess":
        return Sandbox(InProcessRunner(), timeout_ms=config.timeout_ms)
    import os
    runner_path = os.environ.get("TASKLOOP_RUNNER", "runner/pyrunner.py")
    import sys
    pool = RunnerPool([sys.executable, runner_path, "--protocol", "1"],
                      size=config.runner_pool_size)
    return Sandbox(pool, timeout_ms=config.timeout_ms)


def _rollout_logprobs(backend, prompt: str, completion: Completion) -> List[float]:
    if completion.token_logprobs:
        return completion.token_logprobs
    try:
        return backend.score(prompt, completion.text)
    except ScoringUnsupported:
        return []


def _mean(values: List[float]) -> Optional[float]:
    if not values:
        return None
    return sum(values) / len(values)


def run_step(state: LoopState, config: RunConfig
             ) -> Tuple[StepReport, List[TrainingRecord],
                        List[Dict[str, Any]], List[Dict[str, Any]]]:
    """Execute one loop step.

    Returns (report, training records, task records, rollout records). Task
    and rollout records are raw material for persistence and replay.
    """
    t0 = time.monotonic()
    step = state.step
    report = StepReport(step=step)
    gen_items: List[BatchItem] = []
    solver_items: List[BatchItem] = []
    external_items: List[BatchItem] = []
    solver_item_meta: List[Tuple[str, int]] = []   # (task_id, rollout_index)
    task_records: List[Dict[str, Any]] = []
    rollout_records: List[Dict[str, Any]] = []
    dp_values: List[float] = []
    mu_hats: List[float] = []
    informative = 0

    params = None
    if config.tau > 0:
        params = SelectionParams(tau=config.tau, gamma=config.gamma,
                                 warmup_steps=config.warmup_steps)

    for b in range(config.batch_size):
        task_id = f"s{step:05d}-t{b:03d}"
        report.tasks_proposed += 1
        refs = state.rng.sample(
            state.ref_pool, min(config.max_references, len(state.ref_pool)))
        gen_prompt = render_generator_prompt(refs, config)
        gen_completion = state.backend.complete(
            "generator", gen_prompt, 1, state.sampling)[0]
        parsed = parse_generator_response(gen_completion.text)

        if isinstance(parsed, FormatVerdict):
            report.tasks_rejected += 1
            gen_items.append(BatchItem(
                prompt=gen_prompt, response=gen_completion.text,
                reward=0.0, task_id=task_id,
                behavior_logprobs=gen_completion.token_logprobs))
            task_records.append({
                "task_id": task_id, "status": "rejected",
                "reject_reason": f"format:{parsed.reason}", "format_ok": False,
                "code": "", "input_literal": "", "ground_truth": "",
                "predicted_k": None, "predicted_mu": None,
                "utility_difficulty": None, "utility_novelty": None,
                "provenance": "generated",
            })
            continue

        task = state.sandbox.validate_task(
            parsed.answer_code, parsed.answer_input, task_id,
            predicted_mu=parsed.predicted_mu, step=step)

        if task.status != "validated":
            # Non-executable proposals earn nothing and never reach the solver.
            report.tasks_rejected += 1
            gen_items.append(BatchItem(
                prompt=gen_prompt, response=gen_completion.text,
                reward=0.0, task_id=task_id,
                behavior_logprobs=gen_completion.token_logprobs))
            task_records.append({
                "task_id": task_id, "status": "rejected",
                "reject_reason": task.reject_reason, "format_ok": True,
                "code": task.code, "input_literal": task.input_literal,
                "ground_truth": "", "predicted_k": parsed.difficulty_k,
                "predicted_mu": parsed.predicted_mu,
                "utility_difficulty": None, "utility_novelty": None,
                "provenance": "generated",
            })
            continue

        report.tasks_validated += 1
        solver_prompt = render_solver_prompt(task, config.solve_mode)
        completions = state.backend.complete(
            "solver", solver_prompt, config.n_rollouts, state.sampling)

        verdicts: List[bool] = []
        logprob_sets: List[List[float]] = []
        for idx, comp in enumerate(completions):
            sp = parse_solver_response(comp.text, config.solve_mode)
            fmt_ok = not isinstance(sp, FormatVerdict)
            verdict = False
            answer = None
            if fmt_ok:
                answer = sp.answer
                verdict = state.sandbox.verify(task, answer, config.solve_mode)
            correct = fmt_ok and verdict
            verdicts.append(correct)
            lps = _rollout_logprobs(state.backend, solver_prompt, comp)
            if lps:
                logprob_sets.append(lps)
            reward = float(solver_reward(1 if fmt_ok else 0, 1 if verdict else 0))
            solver_items.append(BatchItem(
                prompt=solver_prompt, response=comp.text, reward=reward,
                task_id=task_id, behavior_logprobs=lps or None))
            solver_item_meta.append((task_id, idx))
            rollout_records.append({
                "task_id": task_id, "rollout_index": idx, "answer": answer,
                "format_ok": fmt_ok, "verdict": verdict,
                "token_logprobs": lps,
            })

        mu_hat = success_rate(verdicts)
        mu_hats.append(mu_hat)
        if 0.0 < mu_hat < 1.0:
            informative += 1
        dp_r = dp_reward(task.predicted_mu, mu_hat)
        dp_values.append(dp_r)
        gen_items.append(BatchItem(
            prompt=gen_prompt, response=gen_completion.text,
            reward=generator_reward(1, dp_r), task_id=task_id,
            behavior_logprobs=gen_completion.token_logprobs))

        util = UtilityVector(
            difficulty=1.0 - task.predicted_mu,
            novelty=novelty(logprob_sets) if logprob_sets else 0.0)
        state.buffer.push(task_id, util)
        task_records.append({
            "task_id": task_id, "status": "validated", "reject_reason": None,
            "format_ok": True, "code": task.code,
            "input_literal": task.input_literal,
            "ground_truth": task.ground_truth_output,
            "predicted_k": parsed.difficulty_k,
            "predicted_mu": task.predicted_mu,
            "utility_difficulty": util.difficulty,
            "utility_novelty": util.novelty,
            "provenance": "generated",
        })
        state.ref_pool.append(task)
        if len(state.ref_pool) > REFERENCE_POOL_CAP:
            state.ref_pool.pop(0)

        # -- limit breaking -------------------------------------------------
        if mu_hat == 0.0:
            report.eligible_allfail += 1
            if params is None or step < config.warmup_steps:
                continue
            try:
                z = zscore(util, state.buffer, config.min_buffer)
            except InsufficientBuffer as exc:
                logger.info("selection skipped for %s: %s", task_id, exc)
                report.selection.append({
                    "task_id": task_id, "z": None, "z_used": None, "p": None,
                    "selected": False, "external_accepted": False,
                    "cause": "insufficient_buffer",
                })
                continue
            z_used = state.rng.gauss(0.0, 1.0) if config.shuffle_z else z
            p = selection_probability(z_used, params)
            chosen = sample_indicator(p, state.rng)
            accepted = False
            if chosen:
                report.selected += 1
                ext_comp = state.external.complete(
                    "external", solver_prompt, 1, state.sampling)[0]
                ext_parse = parse_solver_response(ext_comp.text, config.solve_mode)
                if not isinstance(ext_parse, FormatVerdict):
                    if state.sandbox.verify(task, ext_parse.answer,
                                            config.solve_mode):
                        accepted = True
                        report.external_accepted += 1
                        external_items.append(BatchItem(
                            prompt=solver_prompt, response=ext_comp.text,
                            reward=float(solver_reward(1, 1)), task_id=task_id))
            report.selection.append({
                "task_id": task_id, "z": z, "z_used": z_used, "p": p,
                "selected": chosen, "external_accepted": accepted,
            })

    records = assemble_batch(gen_items, solver_items, external_items, step)

    # Per-step metrics.
    report.rollout_accuracy = _mean(mu_hats) or 0.0
    report.dp_reward_mean = _mean(dp_values) or 0.0
    report.generator_reward_mean = _mean([i.reward for i in gen_items]) or 0.0
    report.solver_reward_mean = _mean(
        [i.reward for i in solver_items + external_items]) or 0.0
    z_sel = [e["z"] for e in report.selection if e["selected"] and e["z"] is not None]
    z_unsel = [e["z"] for e in report.selection
               if not e["selected"] and e["z"] is not None]
    report.z_selected_mean = _mean(z_sel)
    report.z_unselected_mean = _mean(z_unsel)

    if isinstance(state.backend, SyntheticBackend):
        frac = informative / config.batch_size if config.batch_size else 0.0
        state.backend.advance(frac, report.external_accepted)
        report.skill = state.backend.state.skill
        report.skill_cap = state.backend.state.skill_cap

    report.wall_ms = int((time.monotonic() - t0) * 1000)
    state.step += 1
    return report, records, task_records, rollout_records


def _record_to_dict(rec: TrainingRecord) -> Dict[str, Any]:
    return {
        "role": rec.role, "prompt": rec.prompt, "response": rec.response,
        "reward": rec.reward, "advantage": rec.advantage, "step": rec.step,
        "behavior_source": rec.behavior_source,
        "behavior_logprobs": rec.behavior_logprobs, "task_id": rec.task_id,
    }


def run_loop(config: RunConfig, run_id: Optional[str] = None,
             resume: bool = False, persist: bool = True) -> RunSummary:
    """Run config.steps steps, persisting every report and batch.

    With persist=False (used by the simulator) nothing touches disk and the
    summary carries the full report series.
    """
    config.validate()
    state = LoopState(config)
    store: Optional[RunStore] = None
    start_step = 0

    if persist:
        import os
        rid = run_id or f"run-seed{config.seed:04d}"
        run_dir = os.path.join(config.out_dir, rid)
        store = RunStore(run_dir)
        if resume:
            ckpt = store.read_checkpoint()
            if ckpt is not None:
                state.restore(ckpt)
                start_step = state.step
        if start_step == 0:
            store.write_manifest({
                "run_id": rid, "seed": config.seed, "config": config.to_dict(),
            })
            store.write_checkpoint(state.checkpoint())

    reports: List[StepReport] = []
    try:
        for _ in range(start_step, config.steps):
            step = state.step
            try:
                report, records, task_records, rollout_records = \
                    run_step(state, config)
            except (RunnerUnavailable, TransportError) as exc:
                if store is not None:
                    store.discard_step(step)
                raise StepAborted(f"step {step} aborted: {exc}") from exc
            reports.append(report)
            if store is not None:
                for t in task_records:
                    store.append(step, "tasks", t)
                for r in rollout_records:
                    store.append(step, "rollouts", r)
                # Solver on-policy records carry their rollout index for replay.
                solver_seen: Dict[str, int] = {}
                for rec in records:
                    d = _record_to_dict(rec)
                    if rec.role == "solver" and rec.behavior_source == "on_policy":
                        key = rec.task_id or ""
                        d["rollout_index"] = solver_seen.get(key, 0)
                        solver_seen[key] = d["rollout_index"] + 1
                    store.append(step, "batch", d)
                store.append(step, "report", report.to_dict())
                store.step_barrier(step)
                store.write_checkpoint(state.checkpoint())
    finally:
        if store is not None:
            store.close()
        state.close()

    final_skill = None
    if isinstance(state.backend, SyntheticBackend):
        final_skill = state.backend.state.skill
    return RunSummary(
        run_dir=store.run_dir if store is not None else None,
        steps_completed=state.step,
        tasks_proposed=sum(r.tasks_proposed for r in reports),
        tasks_validated=sum(r.tasks_validated for r in reports),
        eligible_allfail=sum(r.eligible_allfail for r in reports),
        selected=sum(r.selected for r in reports),
        external_accepted=sum(r.external_accepted for r in reports),
        final_skill=final_skill,
        reports=reports,
    )
