import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dvit.heatmap import (
    decode,
    encode_gaussian,
    heatmap_to_image,
    image_to_heatmap,
    make_grid,
    normalize_heatmap,
    soft_argmax,
)
from dvit.numerics import Tensor


def test_grid_is_column_then_row():
    g = make_grid(2, 3)
    np.testing.assert_array_equal(g, [[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1]])
    assert not g.flags.writeable


def test_one_hot_recovery_exact(rng):
    for _ in range(50):
        h, w = int(rng.integers(1, 12)), int(rng.integers(1, 12))
        r, c = int(rng.integers(h)), int(rng.integers(w))
        hm = np.zeros((1, h, w))
        hm[0, r, c] = 1.0
        assert soft_argmax(Tensor(hm)).data.tolist() == [[float(c), float(r)]]


def test_gaussian_round_trip_interior(rng):
    worst = 0.0
    for _ in range(100):
        y = rng.uniform(4.0, 12.0 - 1e-9, size=(1, 2))
        worst = max(worst, float(np.abs(soft_argmax(Tensor(encode_gaussian(y, 16, 16, 1.5))).data - y).max()))
    assert worst <= 0.1


def test_targets_are_normalized(rng):
    z = encode_gaussian(rng.uniform(0, 7, size=(4, 3, 2)), 8, 8, 1.5)
    np.testing.assert_allclose(z.sum(axis=(-2, -1)), 1.0, atol=1e-12)


def test_off_grid_landmarks_are_clamped_with_warning():
    with pytest.warns(UserWarning, match="clamped"):
        z, flags = encode_gaussian(np.array([[-3.0, 2.0], [3.0, 3.0]]), 8, 8, 1.5, return_flags=True)
    assert flags.tolist() == [True, False]
    assert np.unravel_index(z[0].argmax(), z[0].shape) == (2, 0)


def test_soft_argmax_rejects_unnormalized():
    with pytest.raises(ValueError):
        soft_argmax(Tensor(np.ones((1, 4, 4))))


def test_normalizers():
    raw = Tensor(np.random.default_rng(0).uniform(0.1, 2.0, size=(2, 3, 5, 5)))
    for mode in ("softmax", "sum"):
        np.testing.assert_allclose(normalize_heatmap(raw, mode=mode).data.sum(axis=(-2, -1)), 1.0, atol=1e-12)


def test_temperature_sharpens_decoding():
    raw = np.zeros((1, 5, 5))
    raw[0, 1, 3] = 1.0
    soft = decode(Tensor(raw), temperature=1.0).data
    sharp = decode(Tensor(raw), temperature=0.01).data
    assert np.abs(sharp - [[3.0, 1.0]]).max() < 1e-6 < np.abs(soft - [[3.0, 1.0]]).max()


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.49, 63.49), st.sampled_from([(64, 16), (256, 32), (16, 8)]))
def test_image_heatmap_mapping_inverts(v, sizes):
    r, h = sizes
    assert heatmap_to_image(image_to_heatmap(np.array(v), r, h), r, h) == pytest.approx(v, abs=1e-12)


def test_pixel_centres_align():
    # heatmap pixel 0 covers image pixels 0..3 at 4x downsampling; its centre is image coordinate 1.5
    assert heatmap_to_image(np.array(0.0), 64, 16) == pytest.approx(1.5)
