import numpy as np
import pytest

from dvit.config import ConfigError
from dvit.data import (
    AugmentRecipe,
    DatasetError,
    Sample,
    augment,
    blob_sigma,
    face_template,
    generate_dataset,
    generate_synthetic,
    hflip,
    load_dataset,
    render_blob,
    render_sample,
    rotate,
    sample_landmarks,
    sample_rng,
    save_dataset,
    split_by_parity,
    transform_points,
    translate,
    warp,
)


def test_generation_is_bitwise_deterministic():
    a = generate_synthetic(6, 32, 5, seed=3)
    b = generate_synthetic(6, 32, 5, seed=3)
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.image, sb.image) and np.array_equal(sa.landmarks, sb.landmarks)
    c = generate_synthetic(6, 32, 5, seed=4)
    assert not np.array_equal(a[0].image, c[0].image)


def test_sample_streams_are_independent_of_n():
    assert np.array_equal(generate_synthetic(3, 32, 5, 0)[2].image, generate_synthetic(5, 32, 5, 0)[2].image)


def test_too_few_landmarks():
    with pytest.raises(ConfigError):
        generate_synthetic(1, 32, 1, 0)


def test_landmark_is_blob_argmax():
    for k in range(10):
        rng = sample_rng(0, k)
        lm = sample_landmarks(rng, 64, 5)
        _, layers = render_sample(lm, rng, 64, noise=False, return_layers=True)
        for i, layer in enumerate(layers):
            r, c = np.unravel_index(layer.argmax(), layer.shape)
            assert abs(c - lm[i, 0]) <= 0.5 and abs(r - lm[i, 1]) <= 0.5


def test_landmarks_inside_image():
    for s in generate_synthetic(20, 64, 7, 1):
        assert s.landmarks.min() >= 0 and s.landmarks.max() <= 63


def test_face_template_swap_is_involution():
    for m in range(2, 12):
        pts, swap = face_template(m)
        assert sorted(swap) == list(range(m))
        assert [swap[swap[i]] for i in range(m)] == list(range(m))
        np.testing.assert_allclose(pts[swap] * [-1, 1], pts, atol=1e-12)


def test_identity_recipe_leaves_sample_unchanged():
    s = generate_synthetic(1, 32, 5, 0)[0]
    out = augment(s, AugmentRecipe.parse("none"), seed=9)
    assert np.array_equal(out.image, s.image) and np.array_equal(out.landmarks, s.landmarks)


def test_full_rotation_returns_landmarks():
    s = generate_synthetic(1, 64, 5, 0)[0]
    np.testing.assert_allclose(rotate(s, 360.0).landmarks, s.landmarks, atol=1e-6)


def test_translation_shifts_landmarks_exactly():
    s = generate_synthetic(1, 64, 5, 0)[0]
    out = translate(s, 2.5, -1.25)
    assert np.array_equal(out.landmarks, s.landmarks + [2.5, -1.25])


def test_out_of_bounds_is_clamped_and_flagged():
    s = generate_synthetic(1, 32, 5, 0)[0]
    out = translate(s, 40.0, 0.0)
    assert out.clamped and out.landmarks[:, 0].max() == 31.0


@pytest.mark.parametrize("angle,shift", [(0.0, (3.0, -2.0)), (17.0, (0.0, 0.0)), (-9.0, (1.5, 2.5))])
def test_warp_commutes_with_blob_rendering(angle, shift):
    r = 64
    y = np.array([30.0, 36.0])
    image = np.stack([render_blob(y, r, blob_sigma(r))] * 3)
    # one resampling, as augment applies rotation and shift together
    moved = warp(image, angle, shift)
    expected = render_blob(transform_points(y[None], r, angle, shift)[0], r, blob_sigma(r))
    assert np.abs(moved[0] - expected).max() <= 2 / 255


def test_hflip_mirrors_and_swaps():
    s = generate_synthetic(1, 32, 5, 0)[0]
    f = hflip(s)
    _, swap = face_template(5)
    np.testing.assert_allclose(f.landmarks[:, 0], 31 - s.landmarks[swap, 0])
    assert np.array_equal(hflip(f).image, s.image)


def test_augment_deterministic_in_seed():
    s = generate_synthetic(1, 32, 5, 0)[0]
    recipe = AugmentRecipe.parse("default")
    a, b = augment(s, recipe, 5), augment(s, recipe, 5)
    assert np.array_equal(a.image, b.image) and np.array_equal(a.landmarks, b.landmarks)


def test_recipe_parse_rejects_unknown():
    with pytest.raises(ConfigError):
        AugmentRecipe.parse("swirl=1")
    assert AugmentRecipe.parse("rotation=5,flip=0.5").rotation == 5.0


def test_save_load_round_trip(tmp_path):
    samples = generate_synthetic(4, 32, 5, 0)
    save_dataset(samples, tmp_path / "d", seed=0)
    loaded, manifest = load_dataset(tmp_path / "d")
    assert manifest.count == 4 and manifest.resolution == 32 and manifest.landmarks == 5
    for a, b in zip(samples, loaded):
        assert np.array_equal(a.landmarks, b.landmarks) and a.id == b.id
        assert np.abs(a.image - b.image).max() <= 0.5 / 255 + 1e-12


def test_tampered_dataset_rejected(tmp_path):
    save_dataset(generate_synthetic(2, 16, 3, 0), tmp_path / "d")
    img = next((tmp_path / "d" / "images").iterdir())
    raw = bytearray(img.read_bytes())
    raw[-1] ^= 0xFF
    img.write_bytes(bytes(raw))
    with pytest.raises(DatasetError, match="content hash mismatch"):
        load_dataset(tmp_path / "d")


def test_missing_and_empty_directories(tmp_path):
    with pytest.raises(DatasetError, match="does not exist"):
        load_dataset(tmp_path / "nope")
    (tmp_path / "empty").mkdir()
    with pytest.raises(DatasetError, match="empty"):
        load_dataset(tmp_path / "empty")


def test_zero_samples_gives_valid_manifest(tmp_path):
    save_dataset([], tmp_path / "z", resolution=32, landmarks=5)
    samples, manifest = load_dataset(tmp_path / "z")
    assert samples == [] and manifest.count == 0


def test_generate_dataset_splits_by_parity(tmp_path):
    tr, te = generate_dataset(tmp_path, 7, 16, 3, 0)
    assert (tr.count, te.count) == (4, 3)
    train, _ = load_dataset(tmp_path / "train")
    assert all(s.id % 2 == 0 for s in train)
    evens, odds = split_by_parity(generate_synthetic(5, 16, 3, 0))
    assert [s.id for s in evens] == [0, 2, 4] and [s.id for s in odds] == [1, 3]


def test_warp_zero_fills_outside():
    img = np.ones((3, 16, 16))
    out = warp(img, 0.0, (5.0, 0.0))
    assert np.all(out[:, :, :5] == 0.0) and np.all(out[:, :, 5:] == 1.0)
