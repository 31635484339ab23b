"""Tests for the ground-truth oracle and the manual-labeling cost model."""

import pytest

from tracklabeler.active import AnnotationQuery, Candidate
from tracklabeler.annotator import OracleAnnotator, full_manual_cost
from tracklabeler.core import Box, Detection, LabelEntry, LabelSet, Sequence


def gt_entry(frame, track, x, y=100.0, evaluable=True):
    return LabelEntry(frame, track, Box(x, y, 20.0, 40.0), evaluable=evaluable)


def det(det_id, frame, x, y=100.0):
    return Detection(det_id, frame, Box(x, y, 20.0, 40.0), 0.9)


def test_full_manual_cost_two_contiguous_tracks():
    entries = [gt_entry(f, t, 100.0 * t) for t in (1, 2) for f in range(1, 11)]
    gt = LabelSet("s", tuple(entries))
    # 20 boxes at 2 clicks each, plus 9 linking clicks per track
    assert full_manual_cost(gt) == 58


def test_full_manual_cost_counts_only_consecutive_links():
    entries = [gt_entry(f, 1, 100.0) for f in (1, 2, 3, 7, 8)]
    gt = LabelSet("s", tuple(entries))
    assert full_manual_cost(gt) == 2 * 5 + 3


def test_full_manual_cost_ignores_non_evaluable_rows():
    entries = [gt_entry(f, 1, 100.0) for f in (1, 2)]
    entries.append(gt_entry(1, 9, 500.0, evaluable=False))
    gt = LabelSet("s", tuple(entries))
    assert full_manual_cost(gt) == 2 * 2 + 1


def test_oracle_requires_ground_truth():
    seq = Sequence("s", 4, 1920, 1080, detections=(det(1, 1, 100.0),))
    with pytest.raises(ValueError):
        OracleAnnotator(seq)


def make_world():
    """Two GT tracks on frames 1..4 plus detections: ids 1..4 follow track 1,
    ids 11..14 follow track 2, id 99 overlaps nothing."""
    entries = [gt_entry(f, 1, 100.0) for f in range(1, 5)]
    entries += [gt_entry(f, 2, 300.0) for f in range(1, 5)]
    dets = [det(i, i, 100.0) for i in range(1, 5)]
    dets += [det(10 + i, i, 300.0) for i in range(1, 5)]
    dets.append(det(99, 2, 700.0))
    return Sequence("s", 4, 1920, 1080, detections=tuple(dets),
                    ground_truth=LabelSet("s", tuple(entries)))


def test_oracle_detection_identities():
    oracle = OracleAnnotator(make_world())
    assert oracle.identity_of(1) == 1
    assert oracle.identity_of(13) == 2
    assert oracle.identity_of(99) is None


def test_oracle_identity_tie_prefers_lower_track():
    entries = [gt_entry(1, 7, 100.0), gt_entry(1, 3, 100.0)]
    seq = Sequence("s", 1, 1920, 1080, detections=(det(1, 1, 100.0),),
                   ground_truth=LabelSet("s", tuple(entries)))
    assert OracleAnnotator(seq).identity_of(1) == 3


def test_oracle_validate_majority_rule():
    oracle = OracleAnnotator(make_world())

    def ask(dets):
        q = AnnotationQuery("q1", "validate-node", 1, 0, dets[0], tuple(dets), 0.5, cost=1)
        return oracle.answer(q).action

    assert ask([1, 2, 99]) == "accept"   # 2 of 3 matched
    assert ask([1, 99]) == "reject"      # exact tie rejects
    assert ask([99]) == "reject"
    assert ask([1, 2, 3]) == "accept"


def test_oracle_associate_prefers_matching_identity():
    oracle = OracleAnnotator(make_world())
    q = AnnotationQuery(
        "q2", "associate", 1, 0, 500, (1, 2), 0.5, cost=1,
        candidates=(
            Candidate(601, 0.9, (13, 14)),  # track 2
            Candidate(602, 0.4, (3, 4)),    # track 1, same as subject
        ),
    )
    r = oracle.answer(q)
    assert r.action == "choose" and r.choice == 602


def test_oracle_associate_temporal_then_id_tiebreak():
    oracle = OracleAnnotator(make_world())
    # two candidates carry the right identity; frames 3.. starts closer to the
    # subject's last frame (2) than frames 4..
    q = AnnotationQuery(
        "q3", "associate", 1, 0, 500, (1, 2), 0.5, cost=1,
        candidates=(Candidate(610, 0.5, (4,)), Candidate(611, 0.5, (3, 4))),
    )
    assert oracle.answer(q).choice == 611
    # identical temporal distance: lower cluster id wins
    q2 = AnnotationQuery(
        "q4", "associate", 1, 0, 500, (1,), 0.5, cost=1,
        candidates=(Candidate(622, 0.5, (2,)), Candidate(621, 0.5, (2,))),
    )
    assert oracle.answer(q2).choice == 621


def test_oracle_associate_none_when_no_identity_match():
    oracle = OracleAnnotator(make_world())
    q = AnnotationQuery(
        "q5", "associate", 1, 0, 500, (1, 2), 0.5, cost=1,
        candidates=(Candidate(601, 0.9, (13, 14)),),
    )
    assert oracle.answer(q).action == "none"
    # an all-spurious subject has no identity to continue
    q2 = AnnotationQuery(
        "q6", "associate", 1, 0, 500, (99,), 0.5, cost=1,
        candidates=(Candidate(602, 0.4, (3, 4)),),
    )
    assert oracle.answer(q2).action == "none"


def test_oracle_subject_majority_vote_with_tie():
    oracle = OracleAnnotator(make_world())
    # subject mixes tracks 1 and 2 evenly; the tie goes to track 1, so the
    # track-1 candidate wins
    q = AnnotationQuery(
        "q7", "associate", 1, 0, 500, (1, 11), 0.5, cost=1,
        candidates=(Candidate(601, 0.9, (13, 14)), Candidate(602, 0.4, (3, 4))),
    )
    assert oracle.answer(q).choice == 602


def test_oracle_refine_snaps_to_ground_truth():
    entries = [gt_entry(1, 1, 100.0)]
    offset = det(1, 1, 104.0)  # overlaps well but not exactly
    stray = det(2, 1, 700.0)
    seq = Sequence("s", 1, 1920, 1080, detections=(offset, stray),
                   ground_truth=LabelSet("s", tuple(entries)))
    oracle = OracleAnnotator(seq)
    good = AnnotationQuery("q8", "refine-box", 6, 0, 1, (1,), 0.0, cost=2)
    r = oracle.answer(good)
    assert r.action == "box"
    assert tuple(r.box) == (100.0, 100.0, 20.0, 40.0)
    bad = AnnotationQuery("q9", "refine-box", 6, 0, 2, (2,), 0.0, cost=2)
    assert oracle.answer(bad).action == "reject"
