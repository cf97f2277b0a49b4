"""Host-side orchestration of the verifiable code environment.

Task snippets are executed by an interchangeable runner speaking a
newline-delimited JSON protocol (see docs/protocol.md). Two runner kinds are
provided: an in-process runner used by the test suite and simulation, and a
pool of external runner processes for real execution. Every runner failure
maps to a typed result; verdict paths never crash the host.
"""

from __future__ import annotations

import ast
import ctypes
import itertools
import json
import logging
import queue
import subprocess
import sys
import threading
import time
import traceback
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .templates import scan_banned_keywords

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT_MS = 10_000
GRACE_MS = 2_000


class RunnerUnavailable(RuntimeError):
    """Infrastructure failure: the runner cannot serve requests at all."""


@dataclass
class ExecutionResult:
    status: str                 # ok | error | timeout | banned | nondeterministic
    output_repr: str = ""
    stderr_excerpt: str = ""
    duration_ms: int = 0
    equal: Optional[bool] = None


@dataclass
class Task:
    id: str
    code: str
    input_literal: str
    ground_truth_output: str = ""
    predicted_mu: float = 0.0
    status: str = "proposed"     # proposed | validated | rejected
    reject_reason: Optional[str] = None  # error | timeout | nondeterministic | banned
    step_created: int = 0
    provenance: str = "generated"  # generated | seed


SEED_TASK = Task(
    id="seed-identity",
    code="def f(x):\n    return x",
    input_literal="1",
    ground_truth_output="1",
    predicted_mu=1.0,
    status="validated",
    provenance="seed",
)


# ---------------------------------------------------------------------------
# In-process runner (mock for primary tests and simulation)
# ---------------------------------------------------------------------------

def _async_kill(thread: threading.Thread) -> None:
    """Inject SystemExit into a runaway snippet thread."""
    if thread.ident is None:
        return
    ctypes.pythonapi.PyThreadState_SetAsyncExc(
        ctypes.c_ulong(thread.ident), ctypes.py_object(SystemExit)
    )


def _parse_args(input_literal: str):
    return ast.literal_eval(f"({input_literal},)")


def _call_entry(code: str, input_literal: str):
    args = _parse_args(input_literal)
    namespace: Dict[str, object] = {}
    exec(compile(code, "<task>", "exec"), namespace)
    fn = namespace.get("f")
    if not callable(fn):
        return None, "EntryError: no callable named 'f' defined"
    return fn(*args), None


def _literal_or_none(text: str):
    try:
        return ast.literal_eval(text), True
    except (ValueError, SyntaxError, MemoryError, RecursionError):
        return None, False


class InProcessRunner:
    """Executes snippets in this interpreter, one request at a time.

    Timeouts are enforced with a worker thread plus an injected SystemExit;
    this stops pure-Python loops at the next bytecode boundary. Good enough
    for self-generated desk-scale tasks, and it keeps primary tests free of
    any external process.
    """

    def request(self, req: dict) -> dict:
        op = req.get("op")
        timeout_ms = int(req.get("timeout_ms", DEFAULT_TIMEOUT_MS))
        start = time.monotonic()
        box: Dict[str, object] = {}

        def work():
            try:
                value, err = _call_entry(req["code"], req["input_literal"])
                if err is not None:
                    box["error"] = err
                else:
                    box["value"] = value
            except BaseException as exc:  # snippet errors must never escape
                box["error"] = f"{type(exc).__name__}: {exc}"
                box["trace"] = traceback.format_exc(limit=2)

        worker = threading.Thread(target=work, daemon=True)
        worker.start()
        worker.join(timeout_ms / 1000.0)
        duration_ms = int((time.monotonic() - start) * 1000)

        if worker.is_alive():
            _async_kill(worker)
            worker.join(GRACE_MS / 1000.0)
            return {
                "id": req["id"], "status": "timeout", "output_repr": "",
                "stderr_excerpt": f"execution exceeded {timeout_ms} ms",
                "duration_ms": max(duration_ms, timeout_ms),
            }

        if "error" in box:
            return {
                "id": req["id"], "status": "error", "output_repr": "",
                "stderr_excerpt": str(box["error"]),
                "duration_ms": duration_ms,
            }

        value = box.get("value")
        resp = {
            "id": req["id"], "status": "ok", "output_repr": repr(value),
            "stderr_excerpt": "", "duration_ms": duration_ms,
        }
        if op == "verify_eq":
            expected_repr = req.get("expected_repr", "")
            expected, parsed = _literal_or_none(expected_repr)
            if parsed:
                try:
                    resp["equal"] = bool(expected == value)
                except Exception:
                    resp["equal"] = False
            else:
                resp["equal"] = expected_repr.strip() == repr(value).strip()
        return resp

    def close(self) -> None:
        pass


# ---------------------------------------------------------------------------
# External runner pool
# ---------------------------------------------------------------------------

class _RunnerProcess:
    """One external runner bound to one request at a time."""

    def __init__(self, argv: List[str]):
        self.argv = argv
        self.proc: Optional[subprocess.Popen] = None
        self._lines: "queue.Queue[Optional[str]]" = queue.Queue()
        self._spawn()

    def _spawn(self) -> None:
        self.proc = subprocess.Popen(
            self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL, text=True, bufsize=1,
        )
        self._lines = queue.Queue()
        threading.Thread(target=self._pump, args=(self.proc,), daemon=True).start()
        handshake = self._read_line(5.0)
        if handshake is None:
            self.kill()
            raise RunnerUnavailable(f"runner {self.argv} failed handshake")
        try:
            hello = json.loads(handshake)
        except json.JSONDecodeError as exc:
            self.kill()
            raise RunnerUnavailable(f"bad handshake line: {handshake!r}") from exc
        if hello.get("protocol") != PROTOCOL_VERSION:
            self.kill()
            raise RunnerUnavailable(f"protocol mismatch: {hello}")

    def _pump(self, proc: subprocess.Popen) -> None:
        assert proc.stdout is not None
        for line in proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _read_line(self, timeout_s: float) -> Optional[str]:
        try:
            line = self._lines.get(timeout=timeout_s)
        except queue.Empty:
            return None
        return line

    def alive(self) -> bool:
        return self.proc is not None and self.proc.poll() is None

    def kill(self) -> None:
        if self.proc is not None and self.proc.poll() is None:
            self.proc.kill()
            self.proc.wait()

    def request(self, req: dict, deadline_s: float) -> Optional[dict]:
        """Send one request; None means the runner wedged and was killed."""
        if not self.alive():
            self._spawn()
        assert self.proc is not None and self.proc.stdin is not None
        try:
            self.proc.stdin.write(json.dumps(req) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError):
            self.kill()
            return None
        line = self._read_line(deadline_s)
        if line is None:
            self.kill()
            return None
        try:
            return json.loads(line)
        except json.JSONDecodeError:
            self.kill()
            return None


class RunnerPool:
    """Fixed pool of external runners; a wedged runner is killed and replaced
    without affecting its peers. Safe to share across concurrent callers."""

    def __init__(self, argv: List[str], size: int = 2):
        self.argv = argv
        self._free: "queue.Queue[_RunnerProcess]" = queue.Queue()
        for _ in range(size):
            self._free.put(_RunnerProcess(argv))

    def request(self, req: dict) -> dict:
        timeout_ms = int(req.get("timeout_ms", DEFAULT_TIMEOUT_MS))
        deadline_s = (timeout_ms + GRACE_MS) / 1000.0
        runner = self._free.get()
        try:
            start = time.monotonic()
            resp = runner.request(req, deadline_s)
            if resp is None:
                # Wedged or crashed: replace and report a timeout verdict.
                try:
                    runner = _RunnerProcess(self.argv)
                except RunnerUnavailable:
                    raise
                return {
                    "id": req["id"], "status": "timeout", "output_repr": "",
                    "stderr_excerpt": f"runner killed after {timeout_ms} ms budget",
                    "duration_ms": int((time.monotonic() - start) * 1000),
                }
            return resp
        finally:
            self._free.put(runner)

    def close(self) -> None:
        drained = []
        while True:
            try:
                drained.append(self._free.get_nowait())
            except queue.Empty:
                break
        for r in drained:
            r.kill()


# ---------------------------------------------------------------------------
# Sandbox API
# ---------------------------------------------------------------------------

class Sandbox:
    """Task validation and verification on top of a runner."""

    def __init__(self, runner, timeout_ms: int = DEFAULT_TIMEOUT_MS):
        self.runner = runner
        self.timeout_ms = timeout_ms
        self._ids = itertools.count()

    def _next_id(self) -> str:
        return f"req-{next(self._ids)}"

    def execute(self, code: str, input_literal: str,
                timeout_ms: Optional[int] = None) -> ExecutionResult:
        if timeout_ms is None:
            timeout_ms = self.timeout_ms
        if timeout_ms <= 0:
            raise ValueError(f"timeout_ms must be > 0, got {timeout_ms}")
        resp = self.runner.request({
            "id": self._next_id(), "op": "execute", "code": code,
            "input_literal": input_literal, "timeout_ms": timeout_ms,
        })
        return ExecutionResult(
            status=resp["status"], output_repr=resp.get("output_repr", ""),
            stderr_excerpt=resp.get("stderr_excerpt", ""),
            duration_ms=int(resp.get("duration_ms", 0)),
        )

    def _verify_eq(self, code: str, input_literal: str,
                   expected_repr: str) -> ExecutionResult:
        resp = self.runner.request({
            "id": self._next_id(), "op": "verify_eq", "code": code,
            "input_literal": input_literal, "expected_repr": expected_repr,
            "timeout_ms": self.timeout_ms,
        })
        return ExecutionResult(
            status=resp["status"], output_repr=resp.get("output_repr", ""),
            stderr_excerpt=resp.get("stderr_excerpt", ""),
            duration_ms=int(resp.get("duration_ms", 0)),
            equal=resp.get("equal"),
        )

    def validate_task(self, code: str, input_literal: str, task_id: str,
                      predicted_mu: float = 0.0, step: int = 0,
                      provenance: str = "generated") -> Task:
        """Double-execute the snippet; accept only deterministic successes.

        Determinism is approximated by requiring two independent executions
        to yield byte-identical canonical output.
        """
        task = Task(id=task_id, code=code, input_literal=input_literal,
                    predicted_mu=predicted_mu, step_created=step,
                    provenance=provenance)
        if scan_banned_keywords(code) is not None:
            task.status = "rejected"
            task.reject_reason = "banned"
            return task
        first = self.execute(code, input_literal)
        if first.status != "ok":
            task.status = "rejected"
            task.reject_reason = first.status if first.status in ("error", "timeout") else "error"
            return task
        second = self.execute(code, input_literal)
        if second.status != "ok" or second.output_repr != first.output_repr:
            task.status = "rejected"
            task.reject_reason = "nondeterministic"
            return task
        task.status = "validated"
        task.ground_truth_output = first.output_repr
        return task

    def verify_deduction(self, task: Task, predicted_output: str) -> bool:
        """True iff the predicted value equals the task's ground truth."""
        if task.status != "validated":
            raise ValueError("verify_deduction requires a validated task")
        result = self._verify_eq(task.code, task.input_literal, predicted_output)
        if result.status != "ok":
            return False
        return bool(result.equal)

    def verify_abduction(self, task: Task, predicted_input: str) -> bool:
        """True iff f(predicted_input) reproduces the ground-truth value."""
        if task.status != "validated":
            raise ValueError("verify_abduction requires a validated task")
        result = self._verify_eq(task.code, predicted_input,
                                 task.ground_truth_output)
        if result.status != "ok":
            return False
        return bool(result.equal)

    def verify(self, task: Task, answer: str, mode: str) -> bool:
        if mode == "deduction":
            return self.verify_deduction(task, answer)
        if mode == "abduction":
            return self.verify_abduction(task, answer)
        raise ValueError(f"unknown solve mode {mode!r}")

    def close(self) -> None:
        self.runner.close()
