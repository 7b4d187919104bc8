import json

import numpy as np
import pytest
from PIL import Image

from sds.errors import InputError, IterationFailed, PipelineFailed
from sds.evolution import (EvolutionState, Pipeline, RunConfig, evaluate_candidate, generate_candidates,
                           run_pipeline, screen_response, select_rf_star)
from sds.sim import GaitParameters, Push, rollout
from sds.templates import component_source, template_source
from sds.vlm import ProceduralMock, ScriptedMock, role_tag
from sds.vlm.prompts import build_generation_prompt


def fenced(*programs):
    return "Here are the candidates.\n" + "".join(f"```python\n{prog}```\n" for prog in programs)


VALID = [template_source(gait) for gait in ("trot", "pace", "bound", "hop")] + [
    f"a{idx} = {component_source(fam)}\n" for idx, fam in enumerate(("vel", "height", "orient", "smooth"))]


def test_screen_keeps_all_valid_programs():
    programs, discards = screen_response(fenced(*VALID), 8)
    assert len(programs) == 8 and not discards
    assert [prog.name for prog, _ in programs][:2] == ["cand0", "cand1"]


def test_screen_discards_syntax_and_validation_errors():
    replies = VALID[:6] + ["a = base_height +\n", "b = exp(\n"]
    programs, discards = screen_response(fenced(*replies), 8)
    assert len(programs) == 6 and len(discards) == 2
    assert {disc["stage"] for disc in discards} == {"parse"} and [disc["slot"] for disc in discards] == [6, 7]
    programs, discards = screen_response(fenced(VALID[0], "a = joint_pos[40]\n"), 8)
    assert len(programs) == 1 and discards[0]["stage"] == "validate" and "index_bounds" in discards[0]["error"]


def test_screen_honours_the_candidate_count():
    programs, _ = screen_response(fenced(*VALID), 3)
    assert len(programs) == 3


def test_prose_reply_is_retried_with_tip_then_fails():
    seen = []
    mock = ScriptedMock(["I would reward speed.", "Still only prose."])
    with pytest.raises(IterationFailed):
        generate_candidates(mock, lambda tip: seen.append(tip) or build_generation_prompt("s", [], tip=tip))
    assert seen == [False, True]
    assert "fenced code block" in mock.requests[1][1].text  # the retry carries the output-format tip
    assert "fenced code block" not in mock.requests[0][1].text


def test_retry_success_is_marked():
    mock = ScriptedMock(["prose", fenced(VALID[0])])
    result = generate_candidates(mock, lambda tip: build_generation_prompt("s", [], tip=tip))
    assert result.retried and len(result.programs) == 1 and len(result.responses) == 2


@pytest.fixture
def scoring_setup(tmp_path):
    gv = tmp_path / "gv.png"
    Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(gv)
    trace = rollout(GaitParameters(), steps=100)
    return trace, str(gv), RunConfig(), {"velocity": 0.5, "target": "Trot"}, tmp_path / "out"


def test_evaluation_sums_the_score_vector(scoring_setup):
    trace, gv, cfg, demo, out = scoring_setup
    score, rec = evaluate_candidate(ScriptedMock(["[7, 8, 9] solid trot"]), trace, gv, cfg, demo, out, "c0")
    assert score.aggregate == 24 and rec["status"] == "scored"
    assert rec["match_percent"] == 100.0 and rec["resets"] == 0
    assert (out / "c0_gs.png").exists() and (out / "c0_cp.png").exists()


def test_unparseable_evaluation_retries_then_scores_zero(scoring_setup):
    trace, gv, cfg, demo, out = scoring_setup
    mock = ScriptedMock(["looks good", "really good"])
    score, rec = evaluate_candidate(mock, trace, gv, cfg, demo, out, "c0")
    assert score.aggregate == 0 and rec["status"] == "unparseable" and len(mock.requests) == 2
    assert [msg.role for msg in mock.requests[1]] == ["system", "user", "assistant", "user"]
    score, rec = evaluate_candidate(ScriptedMock(["hm", "[1, 2, 3]"]), trace, gv, cfg, demo, out, "c1")
    assert score.aggregate == 6 and rec["status"] == "scored_on_retry"


def test_resets_zero_the_stability_score(scoring_setup):
    _, gv, cfg, demo, out = scoring_setup
    trace = rollout(GaitParameters(), steps=200, disturbance=[Push(1.0, 2.0, 400.0)])
    score, _ = evaluate_candidate(ScriptedMock(["[9, 8, 7]"]), trace, gv, cfg, demo, out, "c0")
    assert score.scores == [0, 8, 7] and score.aggregate == 15


def test_cp_ablation_drops_the_contact_plot(scoring_setup):
    trace, gv, _, demo, out = scoring_setup
    mock = ScriptedMock(["[5, 5, 5]"])
    evaluate_candidate(mock, trace, gv, RunConfig(ablate=["cp"]), demo, out, "c0")
    names = [part.source for msg in mock.requests[0] for part in msg.images]
    assert names == ["c0_gs.png", "gv.png"]


def test_rf_star_selection_rules():
    assert select_rf_star([(0, 20, 1.0), (1, 24, 0.5), (2, 24, 0.5)]) == (1, False)
    assert select_rf_star([(0, 24, 0.1), (1, 24, 0.9)]) == (1, False)
    assert select_rf_star([(0, 24, None), (1, 24, float("-inf")), (2, 24, -5.0)]) == (2, False)
    assert select_rf_star([(0, 0, 1.0), (1, 0, 2.0)]) == (1, True)
    with pytest.raises(ValueError):
        select_rf_star([])


def test_config_validation_and_round_trip(tmp_path):
    for bad in ({"n_candidates": 0}, {"client": "psychic"}, {"ablate": ["everything"]}, {"skill": "gallop"}):
        with pytest.raises(InputError):
            RunConfig(**bad)
    cfg = RunConfig(skill="pronk", ablate=["cp", "gs", "cp"])
    assert cfg.skill == "Hop" and cfg.ablate == ["cp", "gs"]
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_json()))
    assert RunConfig.load(path) == cfg
    path.write_text(json.dumps({"n_iterations": 2, "colour": "red"}))
    with pytest.raises(InputError, match="colour"):
        RunConfig.load(path)


def test_state_round_trip(tmp_path):
    st = EvolutionState({"a": 1}, history=[3, 5], training_cache={"h": {"x": 1}})
    st.save(tmp_path / "s.json")
    assert EvolutionState.load(tmp_path / "s.json") == st
    assert st.iteration == 3


def small_config(tmp_path, demo, **kw):
    base = dict(demo=str(demo), run_dir=str(tmp_path), run_id="r", n_candidates=3, n_iterations=2, budget=15,
                patience=5, min_iterations=5, steps=200)
    base.update(kw)
    return RunConfig(**base)


class Interrupt(Exception):
    pass


def test_pipeline_runs_and_resumes_identically(tmp_path, trot_demo):
    path, _, _ = trot_demo
    clean = small_config(tmp_path / "a", path)
    rf, params, root = run_pipeline(clean)
    report = (root / "report.json").read_bytes()
    doc = json.loads(report)
    hist = doc["score_history"]
    assert len(hist) == 2 and hist[1] >= hist[0]
    assert doc["demo"]["keypoint_label"] == "Trot"
    for stem in ("contacts", "base_height", "sts", "score_history", "training", "trajectories"):
        assert (root / "final" / f"{stem}.png").exists() and (root / "final" / f"{stem}.svg").exists()
    assert isinstance(params, GaitParameters) and rf["aggregate"] == hist[-1]
    assert (root / "transcripts" / "sus.json").exists()

    broken = small_config(tmp_path / "b", path)
    count = {"n": 0}

    def stop(step):
        count["n"] += 1
        if step == "train" and count["n"] > 8:
            raise Interrupt

    with pytest.raises(Interrupt):
        run_pipeline(broken, on_step=stop)
    assert not (broken.root / "report.json").exists()
    run_pipeline(broken)
    assert (broken.root / "report.json").read_bytes() == report
    # a finished run is a no-op
    run_pipeline(broken)
    assert (broken.root / "report.json").read_bytes() == report


def test_pipeline_rejects_a_foreign_state(tmp_path, trot_demo):
    cfg = small_config(tmp_path, trot_demo[0])
    cfg.root.mkdir(parents=True)
    from sds.evolution import EvolutionState as S

    S({"different": True}).save(cfg.root / "state.json")
    with pytest.raises(InputError, match="different configuration"):
        Pipeline(cfg)


def test_all_iterations_failing(tmp_path, trot_demo):
    cfg = small_config(tmp_path, trot_demo[0], ablate=["sus"], n_iterations=1)
    mock = ScriptedMock(["prose only", "more prose"])
    with pytest.raises(PipelineFailed):
        run_pipeline(cfg, client=mock)
    state = json.loads((cfg.root / "state.json").read_text())
    assert state["iterations"][0]["status"] == "failed" and state["history"] == [None]
    # without SUS the generator sees the keypoint hint directly
    assert "Target gait: Trot" in mock.requests[0][1].text
    assert all(role_tag(req) == "reward_generator" for req in mock.requests)


def test_grid_ablation_writes_individual_frames(tmp_path, trot_demo):
    cfg = small_config(tmp_path, trot_demo[0], ablate=["grid", "sus"], n_iterations=1, n_candidates=2)
    pipe = Pipeline(cfg, client=ProceduralMock(n_candidates=2))
    pipe.ingest()
    gv = pipe.state.demo["gv"]
    assert isinstance(gv, list) and len(gv) == pipe.state.demo["grid"]["n"]
    assert all(pth.endswith(".png") and "frame" in pth for pth in gv)
