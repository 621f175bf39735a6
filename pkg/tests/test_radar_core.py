import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radarlcd.dataset import (DatasetManifest, LoopLabel, ManifestEntry, balance_pairs, label_loops,
                              label_pair, read_labels, read_manifest, sample_triplets, write_labels,
                              write_manifest)
from radarlcd.errors import InvalidInputError, NonFiniteError, SingleClassError
from radarlcd.geometry import Pose2, planar_distance, wrap_angle
from radarlcd.radar import (CartesianImage, PolarScan, polar_to_cartesian, read_polar_scan,
                            uniform_azimuths, write_polar_scan)
from radarlcd.simulation import SceneModel, make_trajectory, render_scan, simulate_scene


def polar(power, res=0.5):
    power = np.asarray(power, dtype=float)
    return PolarScan("s", uniform_azimuths(power.shape[0]), power, res)


# -- geometry ---------------------------------------------------------------

@given(st.floats(-50, 50, allow_nan=False))
def test_wrap_angle_range(theta):
    w = wrap_angle(theta)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(theta), abs_tol=1e-9)


def test_wrap_angle_pi_maps_to_pi():
    assert wrap_angle(-math.pi) == math.pi
    assert np.all(wrap_angle(np.array([math.pi, -math.pi, 3 * math.pi])) == math.pi)


poses = st.builds(Pose2, st.floats(-100, 100), st.floats(-100, 100), st.floats(-4, 4))


@given(poses, poses)
def test_between_composes_back(a, b):
    c = a.compose(a.between(b))
    assert c.x == pytest.approx(b.x, abs=1e-9)
    assert c.y == pytest.approx(b.y, abs=1e-9)
    assert wrap_angle(c.theta - b.theta) == pytest.approx(0.0, abs=1e-9)


@given(poses)
def test_inverse_is_identity(p):
    q = p.compose(p.inverse())
    assert np.allclose(q.as_tuple(), 0.0, atol=1e-9)


# -- polar scans and projection ---------------------------------------------

def test_polar_scan_rejects_nonfinite():
    power = np.zeros((8, 8))
    power[1, 1] = np.nan
    with pytest.raises(NonFiniteError):
        polar(power)


def test_polar_scan_rejects_zero_azimuths():
    with pytest.raises(InvalidInputError):
        PolarScan("s", np.zeros(0), np.zeros((0, 8)), 0.5)


def test_constant_power_projects_constant():
    img = polar_to_cartesian(polar(np.full((64, 40), 0.37)), 41, 41, 0.4)
    X, Y = img.metric_grid()
    r = np.hypot(X, Y)
    inside = r <= 39 * 0.5  # last bin centre; beyond it range is clamped
    assert np.allclose(img.pixels[inside], 0.37, atol=1e-6)


def test_impulse_lands_at_its_metric_offset():
    A, R, res, mpp = 360, 60, 0.5, 0.25
    power = np.zeros((A, R))
    power[0, 40] = 1.0
    img = polar_to_cartesian(polar(power, res), 201, 201, mpp)
    row, col = np.unravel_index(np.argmax(img.pixels), img.pixels.shape)
    cx, cy = img.center
    # brute-force argmax location vs. expected (r, 0)
    assert abs((col - cx) * mpp - 40 * res) <= mpp
    assert abs((row - cy) * mpp) <= mpp


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_out_of_range_pixels_are_exactly_zero(seed):
    rng = np.random.default_rng(seed)
    scan = polar(rng.random((32, 16)), 0.5)
    img = polar_to_cartesian(scan, 48, 40, 0.3)
    X, Y = img.metric_grid()
    assert np.all(img.pixels[np.hypot(X, Y) > scan.max_range] == 0.0)
    assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0


def test_image_rejects_small_size():
    with pytest.raises(InvalidInputError):
        polar_to_cartesian(polar(np.zeros((8, 8))), 4, 16, 0.5)


def test_polar_file_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    scan = PolarScan("abc", uniform_azimuths(16), rng.random((16, 12)), 0.25, 1234)
    write_polar_scan(scan, tmp_path / "abc.json")
    back = read_polar_scan(tmp_path / "abc.json")
    assert back.scan_id == "abc" and back.timestamp == 1234
    assert np.array_equal(back.power, scan.power.astype("<f4").astype(float))
    assert np.allclose(back.azimuths, scan.azimuths)


# -- simulation -------------------------------------------------------------

def test_scene_is_deterministic():
    a, b = simulate_scene(7, 50, 100.0), simulate_scene(7, 50, 100.0)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.reflectivity, b.reflectivity)


def test_single_landmark_scene():
    s = simulate_scene(0, 1, 10.0)
    assert len(s) == 1
    assert 0 < s.reflectivity[0] <= 1


def test_scenes_differ_across_seeds():
    assert not np.array_equal(simulate_scene(1, 20, 50.0).positions,
                              simulate_scene(2, 20, 50.0).positions)


@given(st.integers(0, 1000), st.integers(1, 200), st.floats(1.0, 500.0))
def test_scene_bounds(seed, n, extent):
    s = simulate_scene(seed, n, extent)
    assert np.all(np.abs(s.positions) <= extent / 2)
    assert np.all((s.reflectivity > 0) & (s.reflectivity <= 1))


def test_districts_and_walls_keep_bounds():
    s = simulate_scene(4, 300, 200.0, segments=40, districts=9)
    assert len(s) >= 1
    assert np.all((s.reflectivity > 0) & (s.reflectivity <= 1))


def test_empty_scene_renders_zero():
    scan = render_scan(SceneModel(np.zeros((0, 2)), np.zeros(0)), Pose2(), 32, 16, 0.5, 0.0, 0)
    assert np.all(scan.power == 0.0)


def test_landmark_ahead_peaks_at_zero_azimuth():
    scene = SceneModel(np.array([[12.3, 0.0]]), np.array([0.9]))
    scan = render_scan(scene, Pose2(), 400, 60, 0.5, 0.0, 0)
    a, r = np.unravel_index(np.argmax(scan.power), scan.power.shape)
    assert a == 0 and r == round(12.3 / 0.5)


@pytest.mark.parametrize("k", [1, 7, 50, 133])
def test_yaw_offset_is_circular_shift(k):
    A = 400
    phi = 2 * math.pi * k / A
    scene = simulate_scene(11, 40, 60.0)
    base = render_scan(scene, Pose2(1.0, -2.0, 0.3), A, 100, 0.4, 0.0, 0).power
    turned = render_scan(scene, Pose2(1.0, -2.0, 0.3 + phi), A, 100, 0.4, 0.0, 0).power
    # turning the sensor left moves bearings right by k bins
    assert np.allclose(np.roll(turned, k, axis=0), base, atol=1e-9)


def test_trajectory_revisits_produce_loops():
    poses = make_trajectory(0, 120, 3, 8)
    entries = [ManifestEntry(f"s{i}", f"s{i}.json", i, p) for i, p in enumerate(poses)]
    labels = label_loops(DatasetManifest(entries), 4.0, 30)
    assert sum(lb.is_loop for lb in labels) > 0


def test_no_revisits_no_loops():
    poses = make_trajectory(0, 100, 0, 8)
    entries = [ManifestEntry(f"s{i}", f"s{i}.json", i, p) for i, p in enumerate(poses)]
    assert not any(lb.is_loop for lb in label_loops(DatasetManifest(entries), 4.0, 10))


# -- labels, balancing, triplets ----------------------------------------------

def entry(i, x, y, th=0.0):
    return ManifestEntry(f"s{i}", f"s{i}.json", i, Pose2(x, y, th))


def manifest_line(xs):
    return DatasetManifest([entry(i, x, 0.0) for i, x in enumerate(xs)])


def test_three_metres_is_a_loop():
    m = DatasetManifest([entry(0, 0, 0), entry(1, 50, 0), entry(2, 3.0, 0)])
    lb = [x for x in label_loops(m, 4.0, 1) if (x.id_i, x.id_j) == ("s0", "s2")][0]
    assert lb.is_loop


def test_five_metres_is_not_a_loop():
    m = DatasetManifest([entry(0, 0, 0), entry(1, 50, 0), entry(2, 5.0, 0)])
    assert not label_loops(m, 4.0, 1)[0].is_loop


def test_identical_poses_give_identity_relative_pose():
    lb = label_pair(entry(0, 2, 3, 0.4), entry(9, 2, 3, 0.4))
    assert lb.relative_pose.as_tuple() == (0.0, 0.0, 0.0)


def test_exclusion_window_suppresses_near_pairs():
    labels = label_loops(manifest_line(np.zeros(10)), 4.0, 3)
    gaps = {int(lb.id_j[1:]) - int(lb.id_i[1:]) for lb in labels}
    assert min(gaps) == 4


def test_empty_manifest_rejected():
    with pytest.raises(InvalidInputError):
        label_loops(DatasetManifest([]))


@given(poses, poses)
def test_labels_symmetric(a, b):
    ea, eb = ManifestEntry("a", "a", 0, a), ManifestEntry("b", "b", 1, b)
    assert label_pair(ea, eb).is_loop == label_pair(eb, ea).is_loop


@settings(max_examples=30)
@given(st.lists(st.tuples(st.floats(-20, 20), st.floats(-20, 20), st.floats(-3, 3)),
                min_size=3, max_size=12))
def test_relative_pose_composes_to_target(raw):
    m = DatasetManifest([entry(i, *p) for i, p in enumerate(raw)])
    byid = m.by_id()
    for lb in label_loops(m, 1e9, 1):
        pj = byid[lb.id_i].pose.compose(lb.relative_pose)
        tj = byid[lb.id_j].pose
        assert planar_distance(pj, tj) < 1e-9
        assert abs(wrap_angle(pj.theta - tj.theta)) < 1e-9


def make_labels(n_pos, n_neg):
    return ([LoopLabel(f"p{i}", f"q{i}", True, Pose2()) for i in range(n_pos)]
            + [LoopLabel(f"p{i}", f"n{i}", False) for i in range(n_neg)])


def test_balance_downsamples_majority():
    out = balance_pairs(make_labels(10, 30), 0)
    assert sum(lb.is_loop for lb in out) == 10
    assert sum(not lb.is_loop for lb in out) == 10


def test_balance_keeps_balanced_input():
    labels = make_labels(5, 5)
    assert set(balance_pairs(labels, 1)) == set(labels)


def test_balance_deterministic():
    labels = make_labels(7, 40)
    assert balance_pairs(labels, 5) == balance_pairs(labels, 5)


def test_balance_single_class_rejected():
    with pytest.raises(SingleClassError):
        balance_pairs(make_labels(3, 0), 0)


@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 99))
def test_balance_counts_equal(n_pos, n_neg, seed):
    out = balance_pairs(make_labels(n_pos, n_neg), seed)
    n = sum(lb.is_loop for lb in out)
    assert n == len(out) - n == min(n_pos, n_neg)


def test_triplets_forced_choice():
    labels = [LoopLabel("a", "b", True, Pose2()), LoopLabel("a", "c", False)]
    assert set(sample_triplets(labels, 0, 20)) == {("a", "b", "c")}


def test_triplets_zero_count():
    assert sample_triplets(make_labels(2, 2), 0, 0) == []


def test_triplets_need_positives():
    with pytest.raises(InvalidInputError):
        sample_triplets(make_labels(0, 3), 0, 5)


@settings(max_examples=30)
@given(st.integers(0, 2**16), st.integers(4, 12))
def test_triplets_respect_membership(seed, n):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, 12, size=(n, 2))
    m = DatasetManifest([entry(i, *p) for i, p in enumerate(xy)])
    labels = label_loops(m, 4.0, 1)
    pos = {frozenset((lb.id_i, lb.id_j)) for lb in labels if lb.is_loop}
    neg = {frozenset((lb.id_i, lb.id_j)) for lb in labels if not lb.is_loop}
    if not pos or not neg:
        return
    try:
        triples = sample_triplets(labels, seed, 25)
    except InvalidInputError:
        return  # no anchor with both a positive and a negative partner
    for a, p, q in triples:
        assert frozenset((a, p)) in pos and frozenset((a, q)) in neg
    assert triples == sample_triplets(labels, seed, 25)


def test_manifest_and_label_roundtrip(tmp_path):
    m = DatasetManifest([entry(0, 0.1, 0.2, 0.3), entry(1, 1.5, -2.0, -3.0)])
    write_manifest(m, tmp_path / "m.csv")
    assert read_manifest(tmp_path / "m.csv") == m
    labels = [LoopLabel("s0", "s1", True, Pose2(0.5, 0.25, 0.1)), LoopLabel("s0", "s2", False)]
    write_labels(labels, tmp_path / "l.csv")
    assert read_labels(tmp_path / "l.csv") == labels


def test_manifest_rejects_duplicate_ids():
    with pytest.raises(InvalidInputError):
        DatasetManifest([entry(0, 0, 0), ManifestEntry("s0", "x", 1, Pose2())])


def test_cartesian_rejects_nonfinite():
    with pytest.raises(NonFiniteError):
        CartesianImage(np.array([[np.inf, 0.0]]), 1.0)
