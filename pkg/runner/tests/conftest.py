import os
import sys

import pytest

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", ".."))
sys.path.insert(0, os.path.join(ROOT, "src"))

RUNNER_PATH = os.path.join(ROOT, "runner", "pyrunner.py")


@pytest.fixture(scope="module")
def runner_pool():
    from taskloop.sandbox import RunnerPool
    pool = RunnerPool([sys.executable, RUNNER_PATH, "--protocol", "1"], size=2)
    yield pool
    pool.close()


@pytest.fixture(scope="module")
def sandbox(runner_pool):
    from taskloop.sandbox import Sandbox
    return Sandbox(runner_pool, timeout_ms=10_000)
