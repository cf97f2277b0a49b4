#!/usr/bin/env python3
"""Out-of-process snippet runner.

Serves newline-delimited JSON requests on stdin and writes one JSON response
per line on stdout (see docs/protocol.md). The first line written is the
handshake {"protocol": 1}.

Each snippet runs in a fresh namespace. Timeouts are enforced inside this
process with a worker thread plus an injected SystemExit, so a hung snippet
produces a "timeout" response and the process keeps serving. Task failures
of any kind never terminate the runner; only EOF on stdin does.
"""

import argparse
import ast
import ctypes
import json
import sys
import threading
import time
import traceback

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT_MS = 10_000
KILL_GRACE_S = 1.0
STDERR_EXCERPT_LIMIT = 400


def _async_kill(thread):
    if thread.ident is None:
        return
    ctypes.pythonapi.PyThreadState_SetAsyncExc(
        ctypes.c_ulong(thread.ident), ctypes.py_object(SystemExit))


def _call_entry(code, input_literal):
    args = ast.literal_eval(f"({input_literal},)")
    namespace = {}
    exec(compile(code, "<task>", "exec"), namespace)
    fn = namespace.get("f")
    if not callable(fn):
        raise NameError("no callable named 'f' defined")
    return fn(*args)


def _run_snippet(code, input_literal, timeout_ms):
    """Returns (status, value, stderr_excerpt, duration_ms)."""
    box = {}

    def work():
        try:
            box["value"] = _call_entry(code, input_literal)
        except BaseException as exc:  # noqa: BLE001 - report, never crash
            box["error"] = f"{type(exc).__name__}: {exc}"
            box["trace"] = traceback.format_exc(limit=2)

    start = time.monotonic()
    worker = threading.Thread(target=work, daemon=True)
    worker.start()
    worker.join(timeout_ms / 1000.0)
    duration_ms = int((time.monotonic() - start) * 1000)

    if worker.is_alive():
        _async_kill(worker)
        worker.join(KILL_GRACE_S)
        return ("timeout", None,
                f"execution exceeded {timeout_ms} ms",
                max(duration_ms, timeout_ms))
    if "error" in box:
        return ("error", None, box["error"][:STDERR_EXCERPT_LIMIT],
                duration_ms)
    return ("ok", box.get("value"), "", duration_ms)


def _check_equal(expected_repr, value):
    try:
        expected = ast.literal_eval(expected_repr)
    except (ValueError, SyntaxError, MemoryError, RecursionError):
        return expected_repr.strip() == repr(value).strip()
    try:
        return bool(expected == value)
    except Exception:
        return False


def handle(req):
    req_id = req.get("id")
    op = req.get("op")
    if op not in ("execute", "verify_eq"):
        return {"id": req_id, "status": "error", "output_repr": "",
                "stderr_excerpt": f"unknown op {op!r}", "duration_ms": 0}
    code = req.get("code")
    input_literal = req.get("input_literal")
    if not isinstance(code, str) or not isinstance(input_literal, str):
        return {"id": req_id, "status": "error", "output_repr": "",
                "stderr_excerpt": "missing code or input_literal",
                "duration_ms": 0}
    try:
        timeout_ms = int(req.get("timeout_ms", DEFAULT_TIMEOUT_MS))
    except (TypeError, ValueError):
        timeout_ms = DEFAULT_TIMEOUT_MS
    if timeout_ms <= 0:
        timeout_ms = DEFAULT_TIMEOUT_MS

    status, value, stderr_excerpt, duration_ms = _run_snippet(
        code, input_literal, timeout_ms)
    resp = {
        "id": req_id, "status": status,
        "output_repr": repr(value) if status == "ok" else "",
        "stderr_excerpt": stderr_excerpt, "duration_ms": duration_ms,
    }
    if op == "verify_eq" and status == "ok":
        resp["equal"] = _check_equal(req.get("expected_repr", ""), value)
    return resp


def serve(stdin=sys.stdin, stdout=sys.stdout):
    stdout.write(json.dumps({"protocol": PROTOCOL_VERSION}) + "\n")
    stdout.flush()
    for line in stdin:
        if not line.strip():
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            resp = {"id": None, "status": "error", "output_repr": "",
                    "stderr_excerpt": "malformed request line",
                    "duration_ms": 0}
        else:
            if isinstance(req, dict):
                resp = handle(req)
            else:
                resp = {"id": None, "status": "error", "output_repr": "",
                        "stderr_excerpt": "request must be a JSON object",
                        "duration_ms": 0}
        stdout.write(json.dumps(resp) + "\n")
        stdout.flush()


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--protocol", type=int, default=PROTOCOL_VERSION,
                        help="wire protocol version the host expects")
    args = parser.parse_args(argv)
    if args.protocol != PROTOCOL_VERSION:
        parser.error(f"unsupported protocol {args.protocol}; "
                     f"this runner speaks {PROTOCOL_VERSION}")
    serve()


if __name__ == "__main__":
    main()
