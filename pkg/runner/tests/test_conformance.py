import json
import os
import subprocess
import sys
import time

import pytest

RUNNER_PATH = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "pyrunner.py")


# ---------------------------------------------------------------------------
# Raw protocol session helpers
# ---------------------------------------------------------------------------

class Session:
    def __init__(self, protocol="1"):
        self.proc = subprocess.Popen(
            [sys.executable, RUNNER_PATH, "--protocol", protocol],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.PIPE, text=True, bufsize=1)
        self.handshake = json.loads(self.proc.stdout.readline())

    def send(self, payload):
        if isinstance(payload, dict):
            payload = json.dumps(payload)
        self.proc.stdin.write(payload + "\n")
        self.proc.stdin.flush()
        return json.loads(self.proc.stdout.readline())

    def close(self):
        self.proc.stdin.close()
        self.proc.wait(timeout=5)


@pytest.fixture
def session():
    s = Session()
    yield s
    s.close()


def _req(op="execute", code="def f(x): return x", input_literal="1",
         req_id="r1", **extra):
    base = {"id": req_id, "op": op, "code": code,
            "input_literal": input_literal, "timeout_ms": 5000}
    base.update(extra)
    return base


class TestProtocol:
    def test_handshake_first_line(self, session):
        assert session.handshake == {"protocol": 1}

    def test_execute_response_shape(self, session):
        resp = session.send(_req(code="def f(x): return x + 1",
                                 input_literal="3", req_id="abc"))
        assert resp["id"] == "abc"
        assert resp["status"] == "ok"
        assert resp["output_repr"] == "4"
        assert resp["stderr_excerpt"] == ""
        assert isinstance(resp["duration_ms"], int)
        assert "equal" not in resp

    def test_ids_echoed_across_interleaved_requests(self, session):
        for req_id in ("z9", "a1", "m5"):
            resp = session.send(_req(req_id=req_id))
            assert resp["id"] == req_id

    def test_malformed_json_line(self, session):
        resp = session.send("{not json")
        assert resp["status"] == "error"
        assert resp["id"] is None

    def test_non_object_request(self, session):
        resp = session.send("[1, 2, 3]")
        assert resp["status"] == "error"

    def test_unknown_op_echoes_id(self, session):
        resp = session.send(_req(op="compile", req_id="x"))
        assert resp["id"] == "x"
        assert resp["status"] == "error"

    def test_survives_snippet_failures(self, session):
        bad = session.send(_req(code="def f(x): return 1 / 0"))
        assert bad["status"] == "error"
        assert "ZeroDivision" in bad["stderr_excerpt"]
        good = session.send(_req(code="def f(x): return x * 2",
                                 input_literal="5"))
        assert good["status"] == "ok"
        assert good["output_repr"] == "10"

    def test_missing_entry_function(self, session):
        resp = session.send(_req(code="def g(x): return x"))
        assert resp["status"] == "error"
        assert "f" in resp["stderr_excerpt"]

    def test_deterministic_sessions(self):
        requests = [
            _req(code="def f(x): return sorted([x, 3, 1])",
                 input_literal="2", req_id=f"r{i}") for i in range(4)
        ]
        a, b = Session(), Session()
        try:
            out_a = [a.send(dict(r)) for r in requests]
            out_b = [b.send(dict(r)) for r in requests]
            for ra, rb in zip(out_a, out_b):
                ra.pop("duration_ms"), rb.pop("duration_ms")
                assert ra == rb
        finally:
            a.close()
            b.close()

    def test_unsupported_protocol_flag_exits(self):
        proc = subprocess.run(
            [sys.executable, RUNNER_PATH, "--protocol", "2"],
            capture_output=True, text=True, timeout=10)
        assert proc.returncode != 0
        assert "unsupported protocol" in proc.stderr


# ---------------------------------------------------------------------------
# Host-side conformance through Sandbox + RunnerPool
# ---------------------------------------------------------------------------

class TestSandboxConformance:
    def test_increment_executes(self, sandbox):
        result = sandbox.execute("def f(x): return x + 1", "3")
        assert result.status == "ok"
        assert result.output_repr == "4"

    def test_original_input_passes_abduction_on_50_fixtures(self, sandbox):
        fixtures = []
        for i in range(50):
            kind = i % 5
            if kind == 0:
                fixtures.append((f"def f(x): return x + {i}", str(i)))
            elif kind == 1:
                fixtures.append((f"def f(x): return x * {i + 2} % 97", str(i)))
            elif kind == 2:
                fixtures.append(("def f(s): return s[::-1]", repr(f"w{i}")))
            elif kind == 3:
                fixtures.append(("def f(xs): return sum(xs)",
                                 repr(list(range(i + 1)))))
            else:
                fixtures.append(("def f(a, b): return divmod(a, b)",
                                 f"{i + 7}, {i % 3 + 2}"))
        for j, (code, inp) in enumerate(fixtures):
            task = sandbox.validate_task(code, inp, f"fx{j}")
            assert task.status == "validated", (j, task.reject_reason)
            assert sandbox.verify_abduction(task, inp) is True, j

    def test_infinite_loop_killed_within_budget(self, sandbox):
        start = time.monotonic()
        result = sandbox.execute(
            "def f(x):\n    while True:\n        x += 1", "0")
        wall = time.monotonic() - start
        assert result.status == "timeout"
        assert wall < 12.0

    def test_raise_in_comment_rejected(self, sandbox):
        code = "def f(x):\n    # we raise the stakes\n    return x"
        task = sandbox.validate_task(code, "1", "banned")
        assert task.status == "rejected"
        assert task.reject_reason == "banned"

    def test_clock_reader_rejected_nondeterministic(self, sandbox):
        code = ("import time\n"
                "def f(x):\n"
                "    return time.perf_counter_ns()")
        task = sandbox.validate_task(code, "1", "clock")
        assert task.status == "rejected"
        assert task.reject_reason == "nondeterministic"

    def test_list_vs_tuple_not_equal(self, sandbox):
        task = sandbox.validate_task("def f(x): return [x, x + 1]", "1", "lt")
        assert task.ground_truth_output == "[1, 2]"
        assert sandbox.verify_deduction(task, "(1, 2)") is False
        assert sandbox.verify_deduction(task, "[1, 2]") is True

    def test_error_snippet_keeps_pool_usable(self, sandbox):
        bad = sandbox.execute("def f(x): return x.undefined", "1")
        assert bad.status == "error"
        ok = sandbox.execute("def f(x): return x - 1", "10")
        assert ok.output_repr == "9"
