import pytest

from taskloop import looprunner
from taskloop.agents import ScriptedBackend, TransportError
from taskloop.config import RunConfig
from taskloop.looprunner import (LoopState, StepAborted, run_loop, run_step)
from taskloop.templates import (GeneratorParse, SolverParse,
                                render_generator_response,
                                render_solver_response)


def gen_text(code="def f(x):\n    return x + 1", input_literal="3", k=4):
    return render_generator_response(GeneratorParse(
        think="t", answer_code=code, answer_input=input_literal,
        review="r", difficulty_k=k))


def sol_text(answer):
    return render_solver_response(SolverParse(think="t", answer=answer))


def make_config(**overrides):
    base = dict(steps=1, batch_size=1, n_rollouts=2, tau=0.1, gamma=5.0,
                warmup_steps=50, min_buffer=16, seed=0, backend="synthetic",
                runner="inprocess")
    base.update(overrides)
    return RunConfig(**base)


def scripted_state(config, scripts):
    state = LoopState(config)
    backend = ScriptedBackend(scripts)
    state.backend = backend
    state.external = backend
    return state


class TestRunStepScripted:
    def test_mixed_batch_accounting(self):
        config = make_config(batch_size=2, n_rollouts=2)
        state = scripted_state(config, {
            "generator": [gen_text(k=4), "no tags at all"],
            "solver": [sol_text("4"), sol_text("99")],
        })
        report, records, task_records, rollout_records = run_step(state, config)

        assert report.tasks_proposed == 2
        assert report.tasks_validated == 1
        assert report.tasks_rejected == 1
        assert report.rollout_accuracy == 0.5

        # One generator record per proposal, n_rollouts solver records per
        # validated task, no externals.
        gens = [r for r in records if r.role == "generator"]
        sols = [r for r in records if r.role == "solver"]
        assert len(gens) == 2
        assert len(sols) == 2
        assert all(r.behavior_source == "on_policy" for r in records)

        # mu_hat = 1/2, predicted mu = 4/8: dp reward 1, generator reward 2.
        assert report.dp_reward_mean == 1.0
        valid_gen = [r for r in gens if r.reward > 0]
        assert len(valid_gen) == 1 and valid_gen[0].reward == 2.0
        # Well-formed wrong answer still earns the format term.
        assert sorted(r.reward for r in sols) == [1.0, 2.0]

        statuses = [t["status"] for t in task_records]
        assert statuses.count("validated") == 1
        assert statuses.count("rejected") == 1
        assert len(rollout_records) == 2
        assert [r["verdict"] for r in rollout_records] == [True, False]

    def test_banned_prefix_word_still_validates(self):
        # "raise_free" contains "raise" only as a prefix, not a whole word.
        config = make_config()
        state = scripted_state(config, {
            "generator": [gen_text(code="def f(x):\n    raise_free = 0"
                                        "\n    return x + raise_free")],
            "solver": [sol_text("3"), sol_text("3")],
        })
        report, _, _, _ = run_step(state, config)
        assert report.tasks_validated == 1

    def test_banned_code_rejected_with_zero_reward(self):
        config = make_config()
        code = "def f(x):\n    # never raise here\n    return x"
        state = scripted_state(config, {"generator": [gen_text(code=code)]})
        report, records, task_records, _ = run_step(state, config)
        assert report.tasks_validated == 0
        assert task_records[0]["reject_reason"] == "format:banned_keyword"
        (gen,) = [r for r in records if r.role == "generator"]
        assert gen.reward == 0.0

    def test_warmup_gates_selection(self):
        # All rollouts fail so the task is eligible, but step < warmup.
        config = make_config(warmup_steps=50, min_buffer=1)
        state = scripted_state(config, {
            "generator": [gen_text()],
            "solver": [sol_text("99"), sol_text("98")],
        })
        report, _, _, _ = run_step(state, config)
        assert report.eligible_allfail == 1
        assert report.selected == 0
        assert report.selection == []

    def test_forced_external_guidance(self):
        # tau near 1 makes the selection probability ~1 at z = 0, so the
        # one all-fail task is selected and the scripted external solves it.
        config = make_config(tau=0.99, warmup_steps=0, min_buffer=1)
        state = scripted_state(config, {
            "generator": [gen_text()],
            "solver": [sol_text("99"), sol_text("98")],
            "external": [sol_text("4")],
        })
        report, records, _, _ = run_step(state, config)
        assert report.eligible_allfail == 1
        assert report.selected == 1
        assert report.external_accepted == 1
        (event,) = report.selection
        assert event["selected"] is True
        assert event["external_accepted"] is True
        assert event["p"] > 0.99

        ext = [r for r in records if r.behavior_source == "external"]
        assert len(ext) == 1
        assert ext[0].role == "solver"
        assert ext[0].reward == 2.0
        assert ext[0].behavior_logprobs is None

    def test_external_wrong_answer_not_accepted(self):
        config = make_config(tau=0.99, warmup_steps=0, min_buffer=1)
        state = scripted_state(config, {
            "generator": [gen_text()],
            "solver": [sol_text("99"), sol_text("98")],
            "external": [sol_text("7")],
        })
        report, records, _, _ = run_step(state, config)
        assert report.selected == 1
        assert report.external_accepted == 0
        assert not [r for r in records if r.behavior_source == "external"]

    def test_tau_zero_disables_selection(self):
        config = make_config(tau=0.0, warmup_steps=0, min_buffer=1)
        state = scripted_state(config, {
            "generator": [gen_text()],
            "solver": [sol_text("99"), sol_text("98")],
        })
        report, _, _, _ = run_step(state, config)
        assert report.eligible_allfail == 1
        assert report.selected == 0

    def test_validated_task_joins_reference_pool(self):
        config = make_config()
        state = scripted_state(config, {
            "generator": [gen_text()],
            "solver": [sol_text("4"), sol_text("4")],
        })
        assert len(state.ref_pool) == 1
        run_step(state, config)
        assert len(state.ref_pool) == 2
        assert state.ref_pool[-1].code == "def f(x):\n    return x + 1"

    def test_insufficient_buffer_records_cause(self):
        config = make_config(tau=0.5, warmup_steps=0, min_buffer=16)
        state = scripted_state(config, {
            "generator": [gen_text()],
            "solver": [sol_text("99"), sol_text("98")],
        })
        report, _, _, _ = run_step(state, config)
        (event,) = report.selection
        assert event["cause"] == "insufficient_buffer"
        assert event["selected"] is False
        assert report.selected == 0


class TestRunLoopSynthetic:
    def test_accounting_identities(self):
        config = make_config(steps=5, batch_size=4, seed=3)
        summary = run_loop(config, persist=False)
        assert summary.steps_completed == 5
        assert summary.tasks_proposed == 20
        assert summary.tasks_validated <= summary.tasks_proposed
        assert summary.selected <= summary.eligible_allfail
        assert summary.external_accepted <= summary.selected
        assert summary.final_skill is not None
        assert len(summary.reports) == 5

    def test_same_seed_same_reports(self):
        config = make_config(steps=4, batch_size=4, seed=9)
        a = run_loop(make_config(steps=4, batch_size=4, seed=9), persist=False)
        b = run_loop(config, persist=False)
        for ra, rb in zip(a.reports, b.reports):
            assert ra.to_dict() == {**rb.to_dict(), "wall_ms": ra.wall_ms}

    def test_transport_error_becomes_step_aborted(self, monkeypatch):
        empty = ScriptedBackend({"generator": []})
        monkeypatch.setattr(looprunner, "_make_backend",
                            lambda config, role_seed: empty)
        monkeypatch.setattr(looprunner, "_make_external",
                            lambda config, backend: backend)
        config = make_config(steps=1)
        with pytest.raises(StepAborted):
            run_loop(config, persist=False)

    def test_checkpoint_restore_roundtrip(self):
        config = make_config(steps=3, batch_size=4, seed=1)
        state = LoopState(config)
        for _ in range(2):
            run_step(state, config)
        ckpt = state.checkpoint()

        before, _, _, _ = run_step(state, config)
        state.restore(ckpt)
        after, _, _, _ = run_step(state, config)
        assert before.to_dict() == {**after.to_dict(), "wall_ms": before.wall_ms}
