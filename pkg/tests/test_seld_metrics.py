import math

import numpy as np
import pytest

from ambisonics import SeldTarget
from seld_metrics import (
    REFERENCE_RESULTS, Event, FrameEvents, LocationCounts, MetricAccumulator,
    class_sensitive_localization, decode_predictions, evaluate, location_counts,
    location_sensitive_detection, scores, target_to_frame_events,
)
from seld_model import SeldOutput
from utils import SeldValidationError


def frames_of(*frames):
    return FrameEvents(frames=[list(frame) for frame in frames])


REF = frames_of(
    [Event(0, (1.0, 0.0, 0.0)), Event(3, (0.0, 2.0, 0.0))],
    [],
    [Event(3, (0.0, 2.0, 0.0)), Event(3, (0.0, 0.0, -3.0))],
)


# =========================
# 解码
# =========================

def test_decode_below_threshold_is_empty():
    sed = np.full((4, 42), 0.2)
    decoded = decode_predictions(sed, np.zeros((4, 126)))
    assert decoded.n_frames == 4
    assert decoded.n_events == 0


def test_decode_single_activation():
    sed = np.zeros((2, 42))
    doa = np.zeros((2, 126))
    column = 5 * 3 + 1
    sed[1, column] = 0.9
    doa[1, 3 * column:3 * column + 3] = (1.0, -2.0, 0.5)
    decoded = decode_predictions(sed, doa, 0.5)
    assert decoded.frames[0] == []
    assert decoded.frames[1] == [Event(5, (1.0, -2.0, 0.5))]


def test_decode_lower_threshold_never_loses_events():
    rng = np.random.default_rng(0)
    sed, doa = rng.uniform(size=(10, 42)), rng.normal(size=(10, 126))
    counts = [decode_predictions(sed, doa, t).n_events for t in (0.9, 0.7, 0.5, 0.3, 0.1)]
    assert counts == sorted(counts)


def test_decode_rejects_bad_threshold_and_shape():
    with pytest.raises(SeldValidationError):
        decode_predictions(np.zeros((1, 42)), np.zeros((1, 126)), 1.0)
    with pytest.raises(SeldValidationError):
        decode_predictions(np.zeros((1, 42)), np.zeros((1, 125)))


def test_decode_accepts_network_output():
    sed = np.zeros((3, 42))
    doa = np.zeros((3, 126))
    column = 2 * 3
    sed[2, column] = 0.7
    doa[2, 3 * column:3 * column + 3] = (0.5, 1.5, -1.0)
    times = np.array([0.008, 0.016, 0.024])
    output = SeldOutput(sed=sed, doa=doa, frame_times=times)

    decoded = decode_predictions(output)
    assert decoded.frames == decode_predictions(sed, doa, 0.5, times).frames
    np.testing.assert_array_equal(decoded.frame_times, times)
    assert decode_predictions(output, 0.8).n_events == 0

    batched = SeldOutput(sed=sed[None], doa=doa[None])
    assert decode_predictions(batched).frames[2] == [Event(2, (0.5, 1.5, -1.0))]
    with pytest.raises(SeldValidationError) as info:
        decode_predictions(SeldOutput(sed=np.stack([sed, sed]), doa=np.stack([doa, doa])))
    assert info.value.field == "shape"
    with pytest.raises(SeldValidationError) as info:
        decode_predictions(sed)
    assert info.value.field == "doa"


def test_target_roundtrip_to_events():
    sed = np.zeros((3, 42))
    doa = np.zeros((3, 126))
    sed[1, 7] = 1.0
    doa[1, 21:24] = (0.5, 0.5, 0.0)
    target = SeldTarget(sed=sed, doa=doa, frame_times=np.arange(3) * 0.1)
    events = target_to_frame_events(target)
    assert events.frames[1] == [Event(2, (0.5, 0.5, 0.0))]


def test_frame_events_validation():
    with pytest.raises(SeldValidationError):
        frames_of([Event(14, (0.0, 0.0, 1.0))])
    with pytest.raises(SeldValidationError):
        frames_of([Event(1, (math.nan, 0.0, 1.0))])


# =========================
# 位置敏感检测
# =========================

def test_perfect_detection():
    assert location_sensitive_detection(REF, REF) == (0.0, 1.0)


def test_empty_predictions_are_all_deletions():
    er, f = location_sensitive_detection(frames_of([], [], []), REF)
    assert er == 1.0
    assert f == 0.0


def test_far_prediction_is_a_substitution():
    ref = frames_of([Event(2, (1.0, 0.0, 0.0))])
    pred = frames_of([Event(2, (4.0, 0.0, 0.0))])
    counts = location_counts(pred, ref, dist_threshold=2.0)
    assert (counts.tp, counts.fp, counts.fn, counts.substitutions) == (0, 1, 1, 1)
    assert location_sensitive_detection(pred, ref, 2.0) == (1.0, 0.0)
    # 距离阈值为无穷时退化为只看类别
    assert location_sensitive_detection(pred, ref, math.inf) == (0.0, 1.0)


def test_insertions_can_push_error_rate_above_one():
    ref = frames_of([Event(0, (1.0, 0.0, 0.0))])
    pred = frames_of([Event(1, (1.0, 0.0, 0.0)), Event(2, (1.0, 0.0, 0.0)), Event(3, (1.0, 0.0, 0.0))])
    er, _ = location_sensitive_detection(pred, ref)
    assert er == 3.0


def test_frame_count_mismatch():
    with pytest.raises(SeldValidationError) as info:
        location_sensitive_detection(frames_of([]), REF)
    assert info.value.field == "n_frames"


def test_counts_add_up_across_samples():
    a = LocationCounts(tp=1, fp=2, fn=0, substitutions=0, deletions=0, insertions=2, n_ref=1)
    b = LocationCounts(tp=3, fp=0, fn=1, substitutions=0, deletions=1, insertions=0, n_ref=4)
    total = a + b
    assert total == LocationCounts(4, 2, 1, 0, 1, 2, 5)
    assert total.er == pytest.approx(3 / 5)
    assert total.f == pytest.approx(8 / 11)


# =========================
# 类别敏感定位
# =========================

def test_perfect_localization():
    assert class_sensitive_localization(REF, REF) == (0.0, 1.0)


def test_antipodal_predictions():
    ref = frames_of([Event(0, (1.0, 0.0, 0.0)), Event(3, (0.0, 2.0, 0.0))], [Event(5, (0.0, 0.0, -3.0))])
    pred = FrameEvents(frames=[[Event(e.class_id, tuple(-v for v in e.position)) for e in frame]
                               for frame in ref.frames])
    le, lr = class_sensitive_localization(pred, ref)
    assert le == pytest.approx(180.0)
    assert lr == 1.0


def test_no_predictions_localization():
    assert class_sensitive_localization(frames_of([], [], []), REF) == (180.0, 0.0)
    assert class_sensitive_localization(frames_of([]), frames_of([])) == (0.0, 1.0)


def test_zero_vector_counts_as_worst_angle():
    ref = frames_of([Event(1, (1.0, 0.0, 0.0))])
    pred = frames_of([Event(1, (0.0, 0.0, 0.0))])
    assert class_sensitive_localization(pred, ref) == (180.0, 1.0)


def test_greedy_pairs_nearest_first():
    ref = frames_of([Event(4, (1.0, 0.0, 0.0)), Event(4, (0.0, 1.0, 0.0))])
    pred = frames_of([Event(4, (0.0, 1.0, 0.1)), Event(4, (1.0, 0.1, 0.0))])
    le, lr = class_sensitive_localization(pred, ref)
    assert lr == 1.0
    assert le == pytest.approx(math.degrees(math.atan(0.1)))


@pytest.mark.parametrize("matching", ["greedy", "hungarian"])
def test_metrics_are_permutation_invariant(matching):
    shuffled = FrameEvents(frames=[list(reversed(frame)) for frame in REF.frames])
    pred = frames_of(
        [Event(3, (0.0, 1.5, 0.0)), Event(0, (1.0, 1.0, 0.0))],
        [Event(7, (1.0, 1.0, 1.0))],
        [Event(3, (0.0, -1.0, 2.0))],
    )
    assert evaluate(pred, REF, matching=matching) == evaluate(pred, shuffled, matching=matching)


def test_unknown_matching_mode():
    with pytest.raises(SeldValidationError) as info:
        evaluate(REF, REF, matching="random")
    assert info.value.field == "matching"


# =========================
# 组合分数
# =========================

def test_scores_examples():
    assert scores(0.0, 1.0, 0.0, 1.0) == (0.0, 0.0, 0.0)
    assert scores(1.0, 0.0, 180.0, 0.0) == (1.0, 1.0, 1.0)


def test_reference_rows_average_within_rounding():
    assert len(REFERENCE_RESULTS) == 6
    for row in REFERENCE_RESULTS:
        assert abs((row["lsd"] + row["csl"]) / 2 - row["gseld"]) <= 0.0006, row


def test_evaluate_score_invariants():
    rng = np.random.default_rng(1)
    sed, doa = rng.uniform(size=(20, 42)), rng.normal(size=(20, 126))
    ref_sed = (rng.uniform(size=(20, 42)) > 0.8).astype(float)
    ref = decode_predictions(ref_sed, rng.normal(size=(20, 126)))
    result = evaluate(decode_predictions(sed, doa), ref)
    assert 0.0 <= result.f <= 1.0
    assert 0.0 <= result.lr <= 1.0
    assert 0.0 <= result.le_degrees <= 180.0
    assert result.gseld == (result.lsd + result.csl) / 2
    assert set(result.to_dict()) == {"er", "f", "le_degrees", "lr", "lsd", "csl", "gseld"}


def test_accumulator_matches_concatenated_evaluation():
    first = frames_of([Event(0, (1.0, 0.0, 0.0))], [Event(1, (0.0, 1.0, 0.0))])
    second = frames_of([Event(0, (0.0, 0.0, 1.0))])
    pred_a = frames_of([Event(0, (1.0, 0.2, 0.0))], [])
    pred_b = frames_of([Event(0, (0.0, 0.5, 1.0))])
    accumulator = MetricAccumulator()
    accumulator.update(pred_a, first)
    accumulator.update(pred_b, second)
    joined = evaluate(FrameEvents(frames=pred_a.frames + pred_b.frames),
                      FrameEvents(frames=first.frames + second.frames))
    assert accumulator.result() == joined
