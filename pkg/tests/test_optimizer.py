import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import population_stats
from sds.dsl import parse
from sds.optimizer import (ZERO_VARIANCE, TrainingRun, checkpoint_telemetry, flag_zero_gradient, rescale_unbounded,
                           summarize, train)
from sds.sim import LOWER, UPPER, SimConfig
from sds.templates import template_program

SPAN = UPPER - LOWER


def planted(seed):
    rng = np.random.default_rng(100 + seed)
    star = LOWER + (0.1 + 0.8 * rng.random(11)) * SPAN
    return star, (lambda pop: -np.sum(((pop - star) / SPAN) ** 2, axis=1))


@pytest.mark.parametrize("seed", range(3))
def test_finds_planted_optimum(seed):
    star, objective = planted(seed)
    run = train(None, budget=300, seed=seed, objective=objective)
    assert run.iterations <= 300
    assert np.all(np.abs(run.best_params.to_vector() - star) <= 1e-2)


def test_elite_never_gets_worse():
    _, objective = planted(5)
    run = train(None, budget=120, seed=5, objective=objective)
    assert np.all(np.diff(run.best_trace) >= 0)


def test_same_seed_same_run():
    _, objective = planted(1)
    first = train(None, budget=30, seed=9, objective=objective)
    second = train(None, budget=30, seed=9, objective=objective)
    assert first.best_trace == second.best_trace and first.best_params == second.best_params


def test_patience_stops_early():
    run = train(None, budget=500, seed=0, objective=lambda pop: np.zeros(len(pop)), patience=5, min_iterations=10)
    assert run.status == "converged" and run.iterations == 10


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40))
def test_telemetry_matches_statistics_module(values):
    stats = checkpoint_telemetry([{"c": val} for val in values])["c"]
    mean, var = population_stats(values)
    assert stats["mean"] == pytest.approx(mean, rel=1e-9, abs=1e-9)
    assert stats["var"] == pytest.approx(var, rel=1e-7, abs=1e-7)


def test_rescale_rules():
    weights = {"a": 2.0, "b": 1.0, "c": 1.0, "d": 1.0}
    ups = rescale_unbounded({"a": 1.0, "b": 1.0, "c": 0.0, "d": 0.01}, {"a": 20.0, "b": 5.0, "c": 3.0, "d": 0.5},
                            weights)
    got = {update[0]: update for update in ups}
    assert set(got) == {"a", "c"}                 # b grew only 5x; d is under the absolute floor
    assert got["a"][2] == pytest.approx(0.1)       # 2.0 / 20
    assert got["c"][2] == pytest.approx(1.0 / 3.0)


def test_zero_gradient_flag():
    hist = [{"components": {"flat": {"var": 0.0}, "live": {"var": 1.0}}},
            {"components": {"flat": {"var": ZERO_VARIANCE / 2}, "live": {"var": 0.0}}}]
    assert flag_zero_gradient(hist) == ["flat"]
    assert flag_zero_gradient([]) == []


def test_training_a_template_records_telemetry(tmp_path):
    prog = template_program("trot")
    run = train(prog, SimConfig(steps=200), budget=101, seed=0, stride=50)
    assert run.ok and run.best_params is not None
    assert [entry["iteration"] for entry in run.history] == [0, 50, 100]
    assert set(run.history[0]["components"]) == set(prog.names)
    text = summarize(run)
    assert "limb_sync" in text and "best objective" in text
    run.save(tmp_path / "run.json")
    back = TrainingRun.from_json(__import__("json").loads((tmp_path / "run.json").read_text()))
    assert back.best_params == run.best_params and back.best_objective == run.best_objective


def test_constant_component_is_flagged():
    prog = parse("speed = base_lin_vel.x\nconst = 0.0 * base_height + 1.0")
    run = train(prog, SimConfig(steps=50), budget=3, seed=0, stride=1)
    assert "const" in run.flagged_uninformative
    assert "const" in summarize(run)


def test_non_finite_reward_fails_the_run():
    prog = parse("ratio = base_lin_vel.y / base_lin_vel.y")
    run = train(prog, SimConfig(steps=20), budget=5, seed=0)
    assert not run.ok and run.reason.startswith("numeric") and "ratio" in run.reason
    assert "failed" in summarize(run)


def test_budget_must_be_positive():
    with pytest.raises(ValueError):
        train(None, budget=0, objective=lambda pop: np.zeros(len(pop)))
