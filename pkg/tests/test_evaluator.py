import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import angle_error, dtw_all_paths, random_rotation, sts_oracle
from sds.errors import (DegenerateGeometry, InvalidInput, InvalidWindow, NoCommonKeypoints, ScoreOutOfRange,
                        ScoreParseError)
from sds.evaluator import (classify_gait, contact_match, dominant_period, dtw_distance, gait_report, icp_align,
                           moving_average, parse_score_vector, sts_score, template_sequence, trajectory_distance)
from sds.gaits import GAIT_LABELS, reference_gait
from sds.ingest import KeypointTrajectory
from sds.sim import ContactSequence, GaitParameters, rollout

finite = st.floats(-3.0, 3.0, allow_nan=False)


@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_sts_matches_oracle(com, omega):
    assert sts_score(com, omega) == sts_oracle(com, omega)


@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_sts_is_monotone(com, omega, dc, dw):
    assert sts_score(com + dc, omega) <= sts_score(com, omega)
    assert sts_score(com, omega + dw) <= sts_score(com, omega)
    assert 0.0 <= sts_score(com, omega) <= 2.0


def test_sts_vectorised_and_validated():
    np.testing.assert_array_equal(sts_score([0.0, 0.5, 2.0], [0.0, 0.25, 0.1]),
                                  [2.0, 2.0 - (0.5 + 0.25), 2.0 - (1.0 + 0.1)])
    for com, omega in ((-0.1, 0.0), (0.0, float("nan")), (float("inf"), 0.0)):
        with pytest.raises(InvalidInput):
            sts_score(com, omega)


@given(st.lists(finite, min_size=1, max_size=30), st.integers(1, 9))
def test_moving_average_matches_truncated_windows(xs, window):
    got = moving_average(xs, window)
    left, right = (window - 1) // 2, window // 2
    for idx in range(len(xs)):
        seg = xs[max(0, idx - left):idx + right + 1]
        assert got[idx] == pytest.approx(sum(seg) / len(seg), abs=1e-12)


@given(finite, st.integers(1, 40), st.integers(1, 15))
def test_moving_average_keeps_constants_exact(const, length, window):
    assert np.all(moving_average([const] * length, window) == const)


def test_moving_average_rejects_bad_window():
    with pytest.raises(InvalidWindow):
        moving_average([1.0, 2.0], 0)


@given(st.lists(finite, min_size=1, max_size=6), st.lists(finite, min_size=1, max_size=6))
def test_dtw_matches_all_paths_scalar(seq_a, seq_b):
    value, total, length = dtw_distance(seq_a, seq_b, return_cost=True)
    want = dtw_all_paths(seq_a, seq_b)
    assert value == pytest.approx(want[0], abs=1e-9)
    assert total == pytest.approx(want[1], abs=1e-9)


def test_dtw_matches_all_paths_keypoints():
    rng = np.random.default_rng(5)
    for _ in range(15):
        seq_a = rng.normal(size=(int(rng.integers(1, 7)), 3, 2))
        seq_b = rng.normal(size=(int(rng.integers(1, 7)), 3, 2))
        assert dtw_distance(seq_a, seq_b) == pytest.approx(dtw_all_paths(seq_a, seq_b)[0], abs=1e-9)


def test_dtw_identity_and_symmetry():
    rng = np.random.default_rng(2)
    seq_a, seq_b = rng.normal(size=(12, 4, 2)), rng.normal(size=(9, 4, 2))
    assert dtw_distance(seq_a, seq_a) == 0.0
    assert dtw_distance(seq_a, seq_b) == pytest.approx(dtw_distance(seq_b, seq_a), abs=1e-12)


def test_dtw_needs_shared_joints():
    base = dict(times=[0.0, 0.1], conf=np.ones((2, 5)))
    names = ("base", "front-left-foot", "front-right-foot", "rear-left-foot", "rear-right-foot")
    traj_a = KeypointTrajectory(names, xy=np.zeros((2, 5, 2)), **base)
    traj_b = KeypointTrajectory(names[::-1], xy=np.zeros((2, 5, 2)), **base)
    assert dtw_distance(traj_a, traj_b) == 0.0
    with pytest.raises(InvalidInput):
        dtw_distance(np.zeros((0, 2)), np.zeros((3, 2)))


def test_icp_recovers_rigid_transforms():
    rng = np.random.default_rng(8)
    for _ in range(20):
        src = rng.normal(size=(15, 6, 2))
        rot, angle = random_rotation(rng)
        shift = rng.normal(size=2)
        res = icp_align(src, src @ rot.T + shift)
        assert angle_error(res.rotation, angle) <= 1e-4
        np.testing.assert_allclose(res.translation, shift, atol=1e-6)
        assert res.residual < 1e-6


def test_icp_with_unpaired_clouds_and_degenerate_input():
    rng = np.random.default_rng(1)
    dst = rng.uniform(-1, 1, size=(200, 2))
    rot, angle = random_rotation(rng, max_angle=0.2)
    src = (dst - 0.05) @ rot          # rotate back and shift
    res = icp_align(src[:150], dst)  # different sizes: starts from centroids
    assert res.residual < 0.05
    with pytest.raises(DegenerateGeometry):
        icp_align(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]), dst)


@pytest.mark.parametrize("gait", GAIT_LABELS)
def test_template_sequence_matches_itself(gait):
    tpl = reference_gait(gait)
    seq = ContactSequence(template_sequence(tpl, 2.0, tpl.duty, 500, shift=0.3), 0.02)
    rep = contact_match(seq, tpl, duty=tpl.duty)
    assert rep.percent == 100.0
    assert rep.frequency == pytest.approx(2.0, rel=1e-6)
    label, margin, _ = classify_gait(seq)
    assert label == gait and margin > 0


def test_contact_match_penalises_flipped_leg():
    tpl = reference_gait("trot")
    matrix = template_sequence(tpl, 2.0, 0.5, 400)
    matrix[1] = ~matrix[1]
    assert contact_match(ContactSequence(matrix), tpl, duty=0.5).percent < 100.0


def test_flat_sequence_has_no_period():
    matrix = np.ones((4, 100), dtype=bool)
    assert dominant_period(matrix) is None
    assert contact_match(ContactSequence(matrix), "hop").percent == 100.0


@pytest.mark.parametrize("text,scores", [("[7, 8, 9] good", [7, 8, 9]), ("scores: [0,10,5,]", [0, 10, 5]),
                                         ("first [1, 2, 3] then [9, 9, 9]", [1, 2, 3])])
def test_score_vector_parsing(text, scores):
    sv = parse_score_vector(text)
    assert sv.scores == scores and sv.aggregate == sum(scores)


@pytest.mark.parametrize("text,err", [("no list", ScoreParseError), ("[1, 2]", ScoreParseError),
                                      ("[1, 2, 11]", ScoreOutOfRange), ("[1, -2, 3]", ScoreOutOfRange),
                                      ("[1.5, 2, 3]", ScoreParseError), (None, ScoreParseError)])
def test_score_vector_errors(text, err):
    with pytest.raises(err):
        parse_score_vector(text)


def test_gait_report_of_a_rollout_against_its_own_keypoints():
    params = GaitParameters.from_template(reference_gait("pace"), frequency=1.5, forward_speed=0.2)
    tr = rollout(params, steps=300, command=(0.2, 0.0, 0.0))
    rep = gait_report(tr, demo=tr.keypoints, demo_scale=2.0, target="Pace")
    assert rep["label"] == "Pace" and rep["match_percent"] == 100.0
    assert rep["dtw"] == pytest.approx(0.0, abs=1e-9)
    assert rep["reset_count"] == 0 and 0.0 <= rep["sts"] <= 2.0
    value, icp = trajectory_distance(tr.keypoints, tr.keypoints, 2.0, 2.0)
    assert value == pytest.approx(0.0, abs=1e-9) and icp.angle == pytest.approx(0.0, abs=1e-9)


def test_trajectory_distance_requires_common_joints():
    names_a = ("base", "front-left-foot", "front-right-foot", "rear-left-foot", "rear-right-foot")
    traj_a = KeypointTrajectory(names_a, [0.0], np.zeros((1, 5, 2)), np.ones((1, 5)))
    traj_b = KeypointTrajectory(names_a + ("tail",), [0.0], np.zeros((1, 6, 2)), np.ones((1, 6)))
    traj_b.skeleton = ("x1", "x2", "x3", "x4", "x5", "x6")
    with pytest.raises(NoCommonKeypoints):
        trajectory_distance(traj_a, traj_b, 1.0, 1.0)
