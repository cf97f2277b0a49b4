import time

import pytest

from taskloop.sandbox import (ExecutionResult, InProcessRunner, Sandbox,
                              SEED_TASK, Task)


@pytest.fixture
def sandbox():
    return Sandbox(InProcessRunner(), timeout_ms=10_000)


class TestExecute:
    def test_arithmetic(self, sandbox):
        result = sandbox.execute("def f(x): return x + 1", "3")
        assert result.status == "ok"
        assert result.output_repr == "4"

    def test_string_reversal(self, sandbox):
        result = sandbox.execute("def f(s): return s[::-1]", "'ab'")
        assert result.status == "ok"
        assert result.output_repr == "'ba'"

    def test_runtime_error_captured(self, sandbox):
        result = sandbox.execute("def f(x): return 1 / x", "0")
        assert result.status == "error"
        assert "division" in result.stderr_excerpt

    def test_infinite_loop_times_out_within_grace(self, sandbox):
        start = time.monotonic()
        result = sandbox.execute(
            "def f(x):\n    while True:\n        x += 1", "0", timeout_ms=1000)
        wall_ms = (time.monotonic() - start) * 1000
        assert result.status == "timeout"
        assert result.duration_ms >= 1000
        assert wall_ms < 3000

    def test_multiple_arguments(self, sandbox):
        result = sandbox.execute("def f(a, b): return a * b", "3, 4")
        assert result.output_repr == "12"

    def test_bad_input_literal(self, sandbox):
        result = sandbox.execute("def f(x): return x", "open('x')")
        assert result.status == "error"

    def test_nonpositive_timeout_rejected(self, sandbox):
        with pytest.raises(ValueError):
            sandbox.execute("def f(x): return x", "1", timeout_ms=0)


class TestValidateTask:
    def test_simple_task_validates(self, sandbox):
        task = sandbox.validate_task("def f(x): return x + 1", "3", "t1")
        assert task.status == "validated"
        assert task.ground_truth_output == "4"

    def test_banned_word_in_comment(self, sandbox):
        task = sandbox.validate_task(
            "def f(x):\n    # do not raise anything\n    return x", "1", "t2")
        assert task.status == "rejected"
        assert task.reject_reason == "banned"

    def test_nondeterministic_rejected(self, sandbox):
        code = ("import time\n"
                "def f(x):\n"
                "    return time.perf_counter_ns()")
        task = sandbox.validate_task(code, "1", "t3")
        assert task.status == "rejected"
        assert task.reject_reason == "nondeterministic"

    def test_erroring_task_rejected(self, sandbox):
        task = sandbox.validate_task("def f(x): return x / 0", "1", "t4")
        assert task.status == "rejected"
        assert task.reject_reason == "error"

    def test_predicted_mu_carried(self, sandbox):
        task = sandbox.validate_task("def f(x): return x", "1", "t5",
                                     predicted_mu=5 / 8, step=7)
        assert task.predicted_mu == 5 / 8
        assert task.step_created == 7


class TestVerifyDeduction:
    def test_exact_match(self, sandbox):
        task = sandbox.validate_task("def f(x): return x + 1", "3", "t")
        assert sandbox.verify_deduction(task, "4") is True

    def test_whitespace_normalized(self, sandbox):
        task = sandbox.validate_task("def f(x): return x + 1", "3", "t")
        assert sandbox.verify_deduction(task, " 4 ") is True

    def test_wrong_value(self, sandbox):
        task = sandbox.validate_task("def f(s): return s[::-1]", "'ab'", "t")
        assert sandbox.verify_deduction(task, "'ab'") is False

    def test_unvalidated_task_rejected(self, sandbox):
        with pytest.raises(ValueError):
            sandbox.verify_deduction(Task(id="t", code="", input_literal=""), "1")

    def test_non_literal_prediction_falls_back_to_text(self, sandbox):
        task = sandbox.validate_task("def f(x): return x", "1", "t")
        assert sandbox.verify_deduction(task, "not a literal!") is False


class TestVerifyAbduction:
    def test_alternative_input_accepted(self, sandbox):
        task = sandbox.validate_task("def f(x): return x * 2", "3", "t")
        assert task.ground_truth_output == "6"
        assert sandbox.verify_abduction(task, "3") is True

    def test_wrong_input(self, sandbox):
        task = sandbox.validate_task("def f(x): return x * 2", "3", "t")
        assert sandbox.verify_abduction(task, "4") is False

    def test_diverging_input_is_false(self, sandbox):
        code = ("def f(n):\n"
                "    while n != 0:\n"
                "        n += 1\n"
                "    return 0")
        task = Task(id="t", code=code, input_literal="0",
                    ground_truth_output="0", status="validated")
        small = Sandbox(InProcessRunner(), timeout_ms=500)
        assert small.verify_abduction(task, "1") is False

    def test_original_input_reproduces_output_property(self, sandbox):
        codes = [
            ("def f(x): return x + 7", "5"),
            ("def f(s): return s.upper()", "'abc'"),
            ("def f(a, b): return a % b", "17, 5"),
            ("def f(xs): return sorted(xs)", "[3, 1, 2]"),
        ]
        for i, (code, inp) in enumerate(codes):
            task = sandbox.validate_task(code, inp, f"p{i}")
            assert task.status == "validated"
            assert sandbox.verify_abduction(task, task.input_literal) is True


class TestSeedTask:
    def test_seed_task_is_self_consistent(self, sandbox):
        revalidated = sandbox.validate_task(
            SEED_TASK.code, SEED_TASK.input_literal, "seed-check")
        assert revalidated.status == "validated"
        assert revalidated.ground_truth_output == SEED_TASK.ground_truth_output
