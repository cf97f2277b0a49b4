"""Append-only run persistence and replay verification.

Layout: <out_dir>/<run-id>/{manifest.json, checkpoint.json,
step-<n>.tasks, step-<n>.rollouts, step-<n>.batch, step-<n>.report}

Every record file is newline-delimited JSON headed by a schema-version line.
Floats are serialized with Python's shortest round-trip repr, so every stored
real is bit-exact on reload and replay tolerances are meaningful.

Replay recomputes rewards, z-scores, selection probabilities, and advantages
from the raw task/rollout records and reports every disagreement >= 1e-9.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from . import rewards as rw
from . import rlmath
from .limitbreak import (InsufficientBuffer, SelectionParams, TaskBuffer,
                         UtilityVector, selection_probability, zscore)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
REPLAY_TOL = 1e-9

STREAMS = ("tasks", "rollouts", "batch", "report")


class SchemaMismatch(RuntimeError):
    pass


class ManifestMismatch(RuntimeError):
    pass


def dumps(record: Dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


class RunStore:
    """Single-writer store for one run. Files for a step are opened lazily
    and committed (flushed + closed) at the step barrier."""

    def __init__(self, run_dir: str):
        self.run_dir = run_dir
        os.makedirs(run_dir, exist_ok=True)
        self._open: Dict[Tuple[int, str], Any] = {}

    # -- manifest / checkpoint ------------------------------------------------

    def write_manifest(self, manifest: Dict[str, Any]) -> None:
        manifest = dict(manifest)
        manifest["schema_version"] = SCHEMA_VERSION
        self._atomic_json("manifest.json", manifest)

    def read_manifest(self) -> Dict[str, Any]:
        with open(os.path.join(self.run_dir, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
        if manifest.get("schema_version") != SCHEMA_VERSION:
            raise SchemaMismatch(
                f"manifest schema {manifest.get('schema_version')} != {SCHEMA_VERSION}"
            )
        return manifest

    def write_checkpoint(self, checkpoint: Dict[str, Any]) -> None:
        checkpoint = dict(checkpoint)
        checkpoint["schema_version"] = SCHEMA_VERSION
        self._atomic_json("checkpoint.json", checkpoint)

    def read_checkpoint(self) -> Optional[Dict[str, Any]]:
        path = os.path.join(self.run_dir, "checkpoint.json")
        if not os.path.exists(path):
            return None
        with open(path, encoding="utf-8") as fh:
            ckpt = json.load(fh)
        if ckpt.get("schema_version") != SCHEMA_VERSION:
            raise SchemaMismatch("checkpoint schema mismatch")
        return ckpt

    def _atomic_json(self, name: str, payload: Dict[str, Any]) -> None:
        path = os.path.join(self.run_dir, name)
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(dumps(payload) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    # -- step streams ------------------------------------------------------

    def _stream_path(self, step: int, stream: str) -> str:
        return os.path.join(self.run_dir, f"step-{step:05d}.{stream}")

    def append(self, step: int, stream: str, record: Dict[str, Any]) -> None:
        if stream not in STREAMS:
            raise ValueError(f"unknown stream {stream!r}")
        key = (step, stream)
        fh = self._open.get(key)
        if fh is None:
            fh = open(self._stream_path(step, stream), "a", encoding="utf-8")
            if fh.tell() == 0:
                fh.write(dumps({"schema_version": SCHEMA_VERSION}) + "\n")
            self._open[key] = fh
        fh.write(dumps(record) + "\n")

    def step_barrier(self, step: int) -> None:
        """Make all records of this step durable; close its files."""
        for key in [k for k in self._open if k[0] == step]:
            fh = self._open.pop(key)
            fh.flush()
            os.fsync(fh.fileno())
            fh.close()

    def discard_step(self, step: int) -> None:
        """Atomic abort: drop any partially written files for the step."""
        for key in [k for k in self._open if k[0] == step]:
            self._open.pop(key).close()
        for stream in STREAMS:
            path = self._stream_path(step, stream)
            if os.path.exists(path):
                os.remove(path)

    def close(self) -> None:
        for fh in self._open.values():
            fh.close()
        self._open.clear()

    # -- reading ---------------------------------------------------------

    def steps_on_disk(self) -> List[int]:
        steps = set()
        for name in os.listdir(self.run_dir):
            if name.startswith("step-") and "." in name:
                stem, _, _ = name.partition(".")
                steps.add(int(stem[len("step-"):]))
        return sorted(steps)

    def read_stream(self, step: int, stream: str) -> List[Dict[str, Any]]:
        records, skipped = read_jsonl(self._stream_path(step, stream))
        if skipped:
            logger.warning("%s.%s: skipped %d corrupt trailing line(s)",
                           step, stream, skipped)
        return records


def read_jsonl(path: str) -> Tuple[List[Dict[str, Any]], int]:
    """Read a schema-headed JSONL file.

    Corrupt trailing lines (truncated writes) are skipped; the count of
    skipped lines is returned so callers can surface an exact warning.
    """
    records: List[Dict[str, Any]] = []
    skipped = 0
    if not os.path.exists(path):
        return records, skipped
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        return records, skipped
    header = json.loads(lines[0])
    if header.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(f"{path}: schema {header.get('schema_version')}")
    for line in lines[1:]:
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            skipped += 1
            logger.warning("%s: skipping corrupt line", path)
    return records, skipped


# ---------------------------------------------------------------------------
# Replay verification
# ---------------------------------------------------------------------------

@dataclass
class Mismatch:
    step: int
    kind: str       # reward | advantage | zscore | probability
    where: str
    expected: float
    got: float

    @property
    def delta(self) -> float:
        return abs(self.expected - self.got)


@dataclass
class ReplayReport:
    steps_checked: int = 0
    records_checked: int = 0
    mismatches: List[Mismatch] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches


def _check(report: ReplayReport, step: int, kind: str, where: str,
           expected: float, got: float) -> None:
    report.records_checked += 1
    if abs(expected - got) >= REPLAY_TOL:
        report.mismatches.append(Mismatch(step, kind, where, expected, got))


def replay(run_dir: str, expect_manifest: Optional[Dict[str, Any]] = None
           ) -> ReplayReport:
    """Recompute every derived quantity in a run log from its raw records."""
    store = RunStore(run_dir)
    manifest = store.read_manifest()
    if expect_manifest is not None:
        for key in ("seed", "config"):
            if key in expect_manifest and expect_manifest[key] != manifest.get(key):
                raise ManifestMismatch(f"manifest {key} differs from expectation")
    cfg = manifest["config"]
    report = ReplayReport()
    buffer = TaskBuffer(cfg["buffer_capacity"])
    params = None
    if cfg["tau"] > 0:
        params = SelectionParams(tau=cfg["tau"], gamma=cfg["gamma"],
                                 warmup_steps=cfg["warmup_steps"])

    for step in store.steps_on_disk():
        report.steps_checked += 1
        tasks = store.read_stream(step, "tasks")
        rollouts = store.read_stream(step, "rollouts")
        batch = store.read_stream(step, "batch")
        reports = store.read_stream(step, "report")
        step_report = reports[0] if reports else {}

        rollouts_by_task: Dict[str, List[Dict[str, Any]]] = {}
        for r in rollouts:
            rollouts_by_task.setdefault(r["task_id"], []).append(r)

        # Recompute per-task rewards from raw records.
        gen_reward: Dict[str, float] = {}
        mu_hat: Dict[str, float] = {}
        for t in tasks:
            tid = t["task_id"]
            if not t["format_ok"] or t["status"] != "validated":
                gen_reward[tid] = 0.0
                continue
            attempts = rollouts_by_task.get(tid, [])
            verdicts = [a["format_ok"] and a["verdict"] for a in attempts]
            mh = rw.success_rate(verdicts)
            mu_hat[tid] = mh
            gen_reward[tid] = rw.generator_reward(
                1, rw.dp_reward(t["predicted_mu"], mh))

        # Rewards in the batch file.
        solver_rewards: List[float] = []
        gen_rewards: List[float] = []
        for i, rec in enumerate(batch):
            where = f"batch[{i}]/{rec['task_id']}"
            if rec["role"] == "generator":
                expected = gen_reward.get(rec["task_id"])
                if expected is None:
                    report.mismatches.append(
                        Mismatch(step, "reward", where, float("nan"), rec["reward"]))
                    continue
                _check(report, step, "reward", where, expected, rec["reward"])
                gen_rewards.append(expected)
            else:
                if rec["behavior_source"] == "external":
                    expected = float(rw.solver_reward(1, 1))
                else:
                    attempts = rollouts_by_task.get(rec["task_id"], [])
                    idx = rec.get("rollout_index", 0)
                    a = attempts[idx]
                    expected = float(rw.solver_reward(
                        1 if a["format_ok"] else 0,
                        1 if a["verdict"] else 0))
                _check(report, step, "reward", where, expected, rec["reward"])
                solver_rewards.append(expected)

        # Advantages from the recomputed rewards, per role, in file order.
        gen_adv = rlmath.normalize_advantages(gen_rewards) if gen_rewards else []
        sol_adv = rlmath.normalize_advantages(solver_rewards) if solver_rewards else []
        gi = si = 0
        for i, rec in enumerate(batch):
            where = f"batch[{i}]/{rec['task_id']}"
            if rec["role"] == "generator":
                if gi < len(gen_adv):
                    _check(report, step, "advantage", where,
                           gen_adv[gi], rec["advantage"])
                gi += 1
            else:
                if si < len(sol_adv):
                    _check(report, step, "advantage", where,
                           sol_adv[si], rec["advantage"])
                si += 1

        # Selection: recompute z and p against the reconstructed buffer
        # (candidate pushed first, matching the loop's order of operations).
        selection = {e["task_id"]: e for e in step_report.get("selection", [])}
        for t in tasks:
            if t["status"] != "validated":
                continue
            utility = UtilityVector(t["utility_difficulty"], t["utility_novelty"])
            buffer.push(t["task_id"], utility)
            event = selection.get(t["task_id"])
            if event is None or event.get("z") is None or params is None:
                continue
            try:
                z = zscore(utility, buffer, cfg["min_buffer"])
            except InsufficientBuffer:
                continue
            _check(report, step, "zscore", t["task_id"], z, event["z"])
            p = selection_probability(event.get("z_used", z), params)
            _check(report, step, "probability", t["task_id"], p, event["p"])

    return report
