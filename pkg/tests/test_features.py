import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from radarlcd.errors import BadMagicError, DimensionMismatchError, InvalidInputError, NonFiniteError
from radarlcd.features import (CHANNEL_NAMES, GRADIENT_CHANNELS, EncoderConfig, FeatureMap,
                               extract_features, first_moment, guidance_map, load_feature_map,
                               reference_encoder, reference_kernels, save_feature_map)
from radarlcd.radar import CartesianImage

finite = st.floats(-10, 10, allow_nan=False, width=32)


def fmaps(shape=(3, 4, 5)):
    return hnp.arrays(np.float64, shape, elements=finite).map(lambda a: FeatureMap(a, 4))


def test_eight_documented_channels():
    assert len(reference_kernels()) == len(CHANNEL_NAMES) == 8


def test_gradient_kernels_sum_to_zero():
    for c in GRADIENT_CHANNELS + (5,):
        assert abs(reference_kernels()[c].sum()) < 1e-12


def test_gradient_moments_cancel():
    total = sum(first_moment(reference_kernels()[c]) for c in GRADIENT_CHANNELS)
    assert np.allclose(total, 0.0, atol=1e-12)


def test_zero_image_zero_features():
    f = reference_encoder(np.zeros((32, 40)))
    assert f.data.shape == (8, 8, 10) and f.stride == 4
    assert np.all(f.data == 0.0)


def test_encoder_is_deterministic():
    img = np.random.default_rng(0).random((48, 48))
    assert np.array_equal(reference_encoder(img).data, reference_encoder(img).data)


def test_bright_pixel_gradient_channels_sum_to_zero():
    img = np.zeros((64, 64))
    img[30, 33] = 1.0
    f = reference_encoder(img)
    for c in GRADIENT_CHANNELS:
        assert abs(f.data[c].sum()) < 1e-6


def test_small_image_rejected():
    with pytest.raises(InvalidInputError):
        reference_encoder(np.zeros((6, 32)))


def test_translation_equivariance_by_stride():
    rng = np.random.default_rng(1)
    img = np.zeros((96, 96))
    img[20:76, 20:76] = rng.random((56, 56))
    shifted = np.roll(img, (4, 8), axis=(0, 1))
    a, b = reference_encoder(img).data, reference_encoder(shifted).data
    # interior cells only; the border feels the zero padding
    assert np.allclose(b[:, 4:-4, 4:-4], a[:, 3:-5, 2:-6], atol=1e-6)


def test_guidance_of_identical_channels():
    M = np.arange(12.0).reshape(3, 4)
    g = guidance_map(FeatureMap(np.stack([M, M, M]), 4))
    assert np.allclose(g.values, M)


def test_guidance_cancellation():
    a = np.random.default_rng(2).normal(size=(5, 6))
    assert np.all(guidance_map(FeatureMap(np.stack([a, -a]), 4)).values == 0.0)


def test_guidance_matches_loop_oracle():
    data = np.random.default_rng(3).normal(size=(3, 4, 5))
    g = guidance_map(FeatureMap(data, 4)).values
    for h in range(4):
        for w in range(5):
            s = 0.0
            for c in range(3):
                s += float(np.float32(data[c, h, w]))
            assert abs(g[h, w] - s / 3) < 1e-7


@settings(max_examples=40, deadline=None)
@given(fmaps(), fmaps(), st.floats(-3, 3), st.floats(-3, 3))
def test_guidance_linear(F, G, a, b):
    lhs = guidance_map(FeatureMap(a * F.data.astype(float) + b * G.data.astype(float), 4)).values
    rhs = a * guidance_map(F).values + b * guidance_map(G).values
    assert np.allclose(lhs, rhs, atol=1e-5)


@settings(max_examples=30, deadline=None)
@given(fmaps((2, 3, 7)))
def test_file_roundtrip(tmp_path_factory, F):
    p = tmp_path_factory.mktemp("rfm") / "f.rfm"
    save_feature_map(F, p)
    back = load_feature_map(p)
    assert back.stride == F.stride
    assert np.array_equal(back.data, F.data)


def test_truncated_payload(tmp_path):
    save_feature_map(FeatureMap(np.ones((2, 3, 3)), 4), tmp_path / "f.rfm")
    raw = (tmp_path / "f.rfm").read_bytes()
    (tmp_path / "f.rfm").write_bytes(raw[:-4])
    with pytest.raises(DimensionMismatchError):
        load_feature_map(tmp_path / "f.rfm")


def test_nan_payload(tmp_path):
    save_feature_map(FeatureMap(np.ones((1, 2, 2)), 4), tmp_path / "f.rfm")
    raw = bytearray((tmp_path / "f.rfm").read_bytes())
    raw[20:24] = np.float32(np.nan).tobytes()
    (tmp_path / "f.rfm").write_bytes(bytes(raw))
    with pytest.raises(NonFiniteError):
        load_feature_map(tmp_path / "f.rfm")


def test_bad_magic(tmp_path):
    (tmp_path / "f.rfm").write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(BadMagicError):
        load_feature_map(tmp_path / "f.rfm")


def test_external_encoder_reads_maps(tmp_path):
    F = FeatureMap(np.random.default_rng(4).random((8, 4, 4)), 4)
    save_feature_map(F, tmp_path / "scan1.rfm")
    img = CartesianImage(np.zeros((16, 16)), 1.0)
    got = extract_features(img, EncoderConfig("external", str(tmp_path)), "scan1")
    assert np.array_equal(got.data, F.data)
    with pytest.raises(DimensionMismatchError):
        extract_features(CartesianImage(np.zeros((8, 8)), 1.0),
                         EncoderConfig("external", str(tmp_path)), "scan1")
