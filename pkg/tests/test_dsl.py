import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import GAIT_PHASES, ProgramFuzzer, match_phase_oracle, random_observation_fields, reference_evaluate
from sds.dsl import (CHECKS, Observation, evaluate, evaluate_raw, extract_candidates, match_phase, parse,
                     to_source, validate)
from sds.errors import NumericError, ParseError, UnknownFunction
from sds.gaits import GAIT_LABELS
from sds.templates import template_program

# one program per malformation class the validator can see in parsed text
MALFORMED = {
    "identifiers": "r = foo + base_height",
    "arity": "r = exp(base_height, 1.0)",
    "shapes": "r = base_height.x",
    "index_bounds": "r = joint_pos[12]",
    "templates": "r = match_phase(foot_contacts, gallop)",
    "div_zero": "r = base_height / (1.0 - 1.0)",
    "scalar_result": "r = base_lin_vel",
    "runtime_probe": "r = base_height / base_height",
}


def test_malformation_classes_cover_checks():
    assert set(MALFORMED) == set(CHECKS) - {"weights"}


@pytest.mark.parametrize("check", sorted(MALFORMED))
def test_validator_rejects_each_class(check):
    report = validate(parse(MALFORMED[check]))
    assert not report.ok
    assert report.failed(check), report.summary()
    assert report.checks[check] is False


def test_non_finite_weight_is_rejected():
    prog = parse("r = base_height").with_weights({"r": math.inf})
    assert validate(prog).failed("weights")


def test_more_shape_errors():
    for text in ("r = [1.0, 2.0] + base_lin_vel", "r = base_height[0]", "r = sum(base_height) + trot",
                 "r = match_phase(base_lin_vel, trot)"):
        assert not validate(parse(text)).ok, text


@pytest.mark.parametrize("gait", GAIT_LABELS)
def test_templates_validate(gait):
    prog = template_program(gait)
    assert validate(prog).ok
    assert prog.weights[prog.names[0]] == 1.0


def test_parse_errors_carry_positions():
    with pytest.raises(ParseError) as info:
        parse("a = 1.0\nb = base_height +\n")
    assert info.value.line == 2
    with pytest.raises(UnknownFunction):
        parse("a = bogus(1)")
    with pytest.raises(ParseError, match="duplicate"):
        parse("a = 1.0\na = 2.0")
    with pytest.raises(ParseError):
        parse("a = 1e999 * base_height")
    with pytest.raises(ParseError):
        parse("a = base_height $ 2")


def test_weight_syntax():
    prog = parse("a = 2.5 * base_height\nb = base_height * 2.0\nc = (3.0 * base_height)\nd = -0.5 * base_height")
    assert prog.weights == {"a": 2.5, "b": 1.0, "c": 3.0, "d": -0.5}


def test_fuzzed_programs_reach_print_fixpoint():
    fz = ProgramFuzzer(np.random.default_rng(7))
    for _ in range(200):
        text, _ = fz.program()
        prog = parse(text)
        printed = to_source(prog)
        again = parse(printed)
        assert again == prog
        assert to_source(again) == printed


def test_interpreter_matches_reference():
    rng = np.random.default_rng(11)
    fz = ProgramFuzzer(rng)
    worst = 0.0
    for _ in range(200):
        text, py = fz.program()
        prog = parse(text)
        fields = random_observation_fields(rng)
        want, want_total = reference_evaluate(py, fields)
        got = evaluate(prog, Observation(**fields))
        for name, value in want.items():
            worst = max(worst, abs(got.weighted[name] - value) / max(1.0, abs(value)))
        worst = max(worst, abs(got.total - want_total) / max(1.0, abs(want_total)))
    assert worst <= 1e-12


def test_batched_evaluation_equals_per_step():
    rng = np.random.default_rng(3)
    fz = ProgramFuzzer(rng)
    steps = [random_observation_fields(rng) for _ in range(5)]
    batch = Observation(**{key: np.stack([step[key] for step in steps]) for key in steps[0]})
    for _ in range(20):
        prog = parse(fz.program()[0])
        raw = evaluate_raw(prog, batch)
        for key, step in enumerate(steps):
            single = evaluate_raw(prog, Observation(**step))
            for name in prog.names:
                assert np.broadcast_to(raw[name], (5,))[key] == pytest.approx(float(single[name]), rel=1e-12, abs=1e-12)


@given(st.lists(st.integers(0, 1), min_size=4, max_size=4), st.sampled_from(sorted(GAIT_PHASES)))
def test_match_phase_matches_oracle(contacts, gait):
    want = match_phase_oracle(contacts, GAIT_PHASES[gait])
    assert match_phase(np.array(contacts, float), gait) == pytest.approx(want)


def test_match_phase_is_one_on_template_pattern():
    assert match_phase(np.array([1, 0, 0, 1.0]), "trot") == 1.0
    assert match_phase(np.array([1, 0, 1, 0.0]), "pace") == 1.0
    assert match_phase(np.ones(4), "pronk") == 1.0


def test_numeric_error_names_component():
    prog = parse("ok = base_height\nbad = exp(1000.0 * (1.0 + base_height))")
    with pytest.raises(NumericError) as info:
        evaluate(prog, Observation.zeros())
    assert info.value.component == "bad"


def test_zero_observation_is_upright():
    obs = Observation.zeros((2, 3)).check()
    np.testing.assert_allclose(np.linalg.norm(obs.gravity_proj, axis=-1), 1.0)
    np.testing.assert_array_equal(obs.gravity_proj[..., :2], 0.0)


def test_extract_candidates():
    text = "intro\n```python\na = 1.0\n```\nmiddle\n```\nb = 2.0\n```\n"
    assert extract_candidates(text) == ["a = 1.0\n", "b = 2.0\n"]
    assert extract_candidates("no code here") == []
