import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radarlcd.errors import InvalidInputError, SplitMismatchError
from radarlcd.evaluation import (ClosureRecord, ScoredPair, build_report, descriptor_similarity,
                                 map_over_thresholds, pose_errors, pr_at_threshold,
                                 scancontext_similarity, threshold_grid)
from radarlcd.geometry import Pose2


def scored(scores, labels):
    return [ScoredPair(f"s{k}", f"t{k}", float(s), bool(y)) for k, (s, y) in enumerate(zip(scores, labels))]


def brute_force_map(scores, labels, t_start=0.25, t_step=0.05, t_count=13):
    """Plain-loop reference for the recall-weighted summation."""
    n_pos = 0
    for y in labels:
        if y:
            n_pos += 1
    ap = 0.0
    prev = 0.0
    for k in range(t_count - 1, -1, -1):
        t = t_start + k * t_step
        tp = fp = 0
        for s, y in zip(scores, labels):
            if s >= t:
                if y:
                    tp += 1
                else:
                    fp += 1
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / n_pos
        ap += (recall - prev) * precision
        prev = recall
    return ap


scored_sets = st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=40).filter(
    lambda xs: any(y for _, y in xs))


# -- precision and recall ---------------------------------------------------------

def test_perfect_scorer_pr():
    assert pr_at_threshold(scored([1, 1, 0, 0], [1, 1, 0, 0]), 0.5) == (1.0, 1.0)


def test_empty_prediction_convention():
    assert pr_at_threshold(scored([0.2, 0.3], [1, 0]), 0.9) == (1.0, 0.0)


def test_hand_counted_pr():
    assert pr_at_threshold(scored([0.9, 0.8, 0.3], [1, 1, 0]), 0.85) == (1.0, 0.5)


def test_no_positives_rejected():
    with pytest.raises(InvalidInputError):
        pr_at_threshold(scored([0.5], [0]), 0.5)
    with pytest.raises(InvalidInputError):
        map_over_thresholds(scored([0.5], [0]))


def test_score_range_enforced():
    with pytest.raises(InvalidInputError):
        ScoredPair("a", "b", 1.5, True)
    with pytest.raises(InvalidInputError):
        ScoredPair("a", "b", math.nan, True)


def test_similarity_normalisation():
    assert descriptor_similarity(0.0) == 1.0 and descriptor_similarity(2.0) == 0.0
    assert descriptor_similarity(1.0) == 0.5
    assert scancontext_similarity(0.25) == 0.75


@settings(max_examples=60)
@given(scored_sets)
def test_recall_non_increasing_in_threshold(xs):
    pairs = scored(*zip(*xs))
    _, table = map_over_thresholds(pairs)
    assert all(a >= b for a, b in zip(table.recall, table.recall[1:]))
    assert all(0 <= v <= 1 for v in table.precision + table.recall)


# -- mAP ----------------------------------------------------------------------------

def test_default_grid_has_thirteen_thresholds():
    grid = threshold_grid()
    assert len(grid) == 13 and grid[0] == 0.25 and grid[-1] == pytest.approx(0.85)
    assert len(threshold_grid(t_count=14)) == 14


def test_perfect_scorer_map():
    assert map_over_thresholds(scored([1, 0.95, 0, 0.1], [1, 1, 0, 0]))[0] == 1.0


def test_constant_low_score_map_zero():
    assert map_over_thresholds(scored([0.1] * 6, [1, 0, 1, 0, 1, 0]))[0] == 0.0


def test_six_pair_hand_case():
    s = [0.9, 0.8, 0.7, 0.6, 0.4, 0.2]
    y = [1, 1, 0, 1, 0, 0]
    got = map_over_thresholds(scored(s, y))[0]
    assert got == brute_force_map(s, [bool(v) for v in y])
    # recall 2/3 at precision 1 from t >= 0.8, then 1/3 more at precision 3/4 by t = 0.6
    assert got == pytest.approx(2 / 3 + 1 / 3 * 3 / 4, abs=1e-12)


@settings(max_examples=200)
@given(scored_sets)
def test_map_matches_brute_force_exactly(xs):
    s, y = zip(*xs)
    assert map_over_thresholds(scored(s, y))[0] == brute_force_map(s, y)


@settings(max_examples=60)
@given(scored_sets)
def test_map_in_unit_interval(xs):
    assert 0.0 <= map_over_thresholds(scored(*zip(*xs)))[0] <= 1.0 + 1e-12


@pytest.mark.xfail(strict=True, reason="recall-weighted AP is not monotone in positive scores")
def test_raising_positive_score_never_lowers_map():
    labels = [True, False, True]
    before = map_over_thresholds(scored([0.41, 0.87, 0.44], labels))[0]
    after = map_over_thresholds(scored([0.54, 0.87, 0.44], labels))[0]
    assert after >= before


@pytest.mark.xfail(strict=True, reason="the sweep stops at 0.85 and never reaches recall 1, so "
                                       "a random scorer sits near 0.375")
def test_random_scorer_map_near_half():
    rng = np.random.default_rng(0)
    labels = [True] * 50 + [False] * 50
    maps = [map_over_thresholds(scored(rng.random(100), labels))[0] for _ in range(1000)]
    assert abs(np.mean(maps) - 0.5) <= 0.1


def test_random_scorer_expected_value():
    rng = np.random.default_rng(1)
    labels = [True] * 50 + [False] * 50
    maps = [map_over_thresholds(scored(rng.random(100), labels))[0] for _ in range(1000)]
    # recall reaches 1 - 0.25 at precision near 1/2; small counts bias the ratio upward
    assert np.mean(maps) == pytest.approx(0.375, abs=0.02)


# -- pose errors ------------------------------------------------------------------------

def test_pose_errors_zero():
    p = Pose2(1, 2, 0.3)
    assert pose_errors([(p, p)]) == (0.0, 0.0)


def test_pose_errors_three_four_five():
    r, t = pose_errors([(Pose2(3, 4, -0.1), Pose2(0, 0, 0.1))])
    assert t == pytest.approx(5.0, abs=1e-12)
    assert r == pytest.approx(11.459, abs=1e-3)


def test_pose_errors_wrap():
    r, _ = pose_errors([(Pose2(0, 0, -math.pi + 0.05), Pose2(0, 0, math.pi - 0.05))])
    assert r == pytest.approx(math.degrees(0.1), abs=1e-9)


def test_pose_errors_empty():
    with pytest.raises(InvalidInputError):
        pose_errors([])


poses = st.builds(Pose2, st.floats(-50, 50), st.floats(-50, 50), st.floats(-3.14, 3.14))


@given(st.lists(st.tuples(poses, poses), min_size=1, max_size=8))
def test_pose_errors_symmetric(rs):
    a = pose_errors(rs)
    b = pose_errors([(t, e) for e, t in rs])
    assert a == pytest.approx(b, abs=1e-12)
    assert a[0] >= 0 and a[1] >= 0


# -- report ---------------------------------------------------------------------------------

def test_report_without_closures():
    pairs = scored([0.9, 0.1], [1, 0])
    rep = build_report(pairs, [], "h")
    assert rep.map == map_over_thresholds(pairs)[0]
    assert rep.r_eps_deg is None and rep.t_eps_m is None and rep.n_closures == 0


def test_report_fields_and_determinism():
    pairs = scored([0.9, 0.6, 0.3, 0.2], [1, 1, 0, 0])
    closures = [ClosureRecord("s0", "t0", Pose2(1, 0, 0.1), Pose2(1.1, 0, 0.1)),
                ClosureRecord("s1", "t1", Pose2(), Pose2(5, 5, 1), converged=False)]
    a = build_report(pairs, closures, "abc")
    b = build_report(pairs, closures, "abc")
    assert a.to_json() == b.to_json() and a.table_csv() == b.table_csv()
    d = json.loads(a.to_json())
    for key in ("map", "thresholds", "precision", "recall", "r_eps_deg", "t_eps_m", "n_pairs",
                "n_closures", "config_hash"):
        assert key in d
    assert d["n_closures"] == 1 and d["n_closures_attempted"] == 2
    assert d["t_eps_m"] == pytest.approx(0.1)
    assert a.table_csv().splitlines()[0] == "threshold,precision,recall"
    assert len(a.table_csv().splitlines()) == 14


def test_report_split_mismatch():
    with pytest.raises(SplitMismatchError):
        build_report(scored([0.9], [1]), [ClosureRecord("x", "y", Pose2(), Pose2())], "h")
