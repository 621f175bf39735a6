import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from radarlcd.errors import DegenerateDescriptorError, DimensionMismatchError, EmptyMaskError, \
    InvalidInputError
from radarlcd.geometry import Pose2
from radarlcd.losses import LossWeights, bce_loss, closure_loss, cosine_distance, dmtl_total_loss, \
    triplet_loss
from radarlcd.netvlad import GlobalDescriptor

vec3 = hnp.arrays(np.float64, 3, elements=st.floats(-10, 10)).filter(
    lambda v: np.linalg.norm(v) > 1e-3)


# -- detection loss -----------------------------------------------------------

def test_bce_perfect_prediction():
    assert bce_loss([1.0], [1]) <= 1e-6


def test_bce_half_is_ln2():
    assert abs(bce_loss([0.5], [1]) - math.log(2)) < 1e-6


def test_bce_clamped_zero():
    assert abs(bce_loss([0.0], [1]) - (-math.log(1e-7))) < 1e-3


def test_bce_rejects_bad_labels():
    with pytest.raises(InvalidInputError):
        bce_loss([0.3], [2])
    with pytest.raises(DimensionMismatchError):
        bce_loss([0.3, 0.2], [1])


@given(st.lists(st.tuples(st.floats(0, 1), st.sampled_from([0, 1])), min_size=1, max_size=20))
def test_bce_nonnegative(pairs):
    p, y = zip(*pairs)
    assert bce_loss(p, y) >= 0.0


@given(st.lists(st.sampled_from([0, 1]), min_size=1, max_size=20))
def test_bce_zero_only_when_clamped_perfect(y):
    assert bce_loss([float(v) for v in y], y) == pytest.approx(-math.log1p(-1e-7), abs=1e-12)
    flipped = [1.0 - v for v in y]
    assert bce_loss(flipped, y) > 1.0


# -- closure loss -------------------------------------------------------------

def test_closure_zero_on_truth():
    p = [Pose2(1, 2, 0.3)]
    assert closure_loss(p, p, [True]) == 0.0


def test_closure_three_four_five():
    got = closure_loss([Pose2(0, 0, 0)], [Pose2(3, 4, 0.5)], [True], LossWeights())
    assert abs(got - 5.5) < 1e-9


def test_closure_masks_negatives():
    pred = [Pose2(0, 0, 0), Pose2(100, -7, 2.0)]
    truth = [Pose2(3, 4, 0.5), Pose2(0, 0, -1.0)]
    assert abs(closure_loss(pred, truth, [True, False]) - 5.5) < 1e-9


def test_closure_empty_mask():
    with pytest.raises(EmptyMaskError):
        closure_loss([Pose2()], [Pose2()], [False])


def test_closure_wraps_heading():
    got = closure_loss([Pose2(0, 0, math.pi - 0.1)], [Pose2(0, 0, -math.pi + 0.1)], [True])
    assert got == pytest.approx(0.2, abs=1e-12)


pose = st.builds(Pose2, st.floats(-50, 50), st.floats(-50, 50), st.floats(-3, 3))


@settings(max_examples=50)
@given(st.lists(st.tuples(pose, pose), min_size=1, max_size=6),
       st.lists(st.tuples(pose, pose), max_size=6))
def test_closure_invariant_to_masked_out_samples(pos, neg):
    base = closure_loss([a for a, _ in pos], [b for _, b in pos], [True] * len(pos))
    pred = [a for a, _ in pos] + [a for a, _ in neg]
    truth = [b for _, b in pos] + [b for _, b in neg]
    mask = [True] * len(pos) + [False] * len(neg)
    assert closure_loss(pred, truth, mask) == pytest.approx(base, rel=1e-12, abs=1e-12)


# -- total loss ---------------------------------------------------------------

def test_total_loss_examples():
    assert dmtl_total_loss(0.2, 0.3, LossWeights()) == pytest.approx(0.5)
    assert dmtl_total_loss(0.7, 9.0, LossWeights(alpha=1.0, beta=0.0)) == 0.7
    assert dmtl_total_loss(1.0, 4.0, LossWeights(alpha=2.0, beta=0.5)) == 4.0


def test_weights_reject_negative_margin():
    with pytest.raises(InvalidInputError):
        LossWeights(delta=-0.1)


# -- cosine distance and triplet loss -----------------------------------------

def test_cosine_exact_values():
    assert cosine_distance([1, 0], [1, 0]) == 0.0
    assert cosine_distance([1, 0], [0, 1]) == 1.0
    assert cosine_distance([1, 0], [-1, 0]) == 2.0


def test_cosine_zero_norm():
    with pytest.raises(DegenerateDescriptorError):
        cosine_distance([0, 0], [1, 0])


@given(vec3, vec3, st.floats(1e-3, 1e3))
def test_cosine_scale_invariant(u, v, c):
    assert abs(cosine_distance(c * u, v) - cosine_distance(u, v)) <= 1e-9


@given(vec3, vec3)
def test_cosine_range_and_symmetry(u, v):
    d = cosine_distance(u, v)
    assert 0.0 <= d <= 2.0
    assert d == pytest.approx(cosine_distance(v, u), abs=1e-15)


def unit(theta):
    return np.array([math.cos(theta), math.sin(theta)])


def test_triplet_inactive():
    a = unit(0.0)
    p = unit(math.acos(0.8))  # d = 0.2
    n = unit(math.acos(0.1))  # d = 0.9
    assert triplet_loss(a, p, n, 0.5) == 0.0


def test_triplet_active():
    a = unit(0.0)
    n = unit(math.acos(0.7))  # d = 0.3
    assert triplet_loss(a, a, n, 0.5) == pytest.approx(0.2, abs=1e-12)


def test_triplet_all_equal_is_margin():
    g = GlobalDescriptor(unit(0.4))
    assert triplet_loss(g, g, g, 0.37) == 0.37


@given(vec3, vec3, vec3, st.floats(0, 2))
def test_triplet_zero_iff_margin_met(a, p, n, delta):
    value = triplet_loss(a, p, n, delta)
    assert value >= 0.0
    assert (value == 0.0) == (cosine_distance(a, p) + delta <= cosine_distance(a, n))
