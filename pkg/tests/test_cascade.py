import numpy as np
import pytest

from dvit.cascade import build_model, connect_denc, connect_lsc, connect_rescbsp
from dvit.config import preset
from dvit.layers import count_parameters
from dvit.numerics import DimensionError, Tensor, no_grad


@pytest.fixture
def image(rng):
    return Tensor(rng.uniform(0, 1, size=(2, 3, 16, 16)))


@pytest.mark.parametrize("connection", ["LSC", "ResCBSP", "DenC"])
def test_cascade_emits_one_heatmap_per_block(connection, image):
    model = build_model(preset("toy", connection=connection, blocks=3))
    with no_grad():
        out = model(image)
    assert len(out.heatmaps) == 3
    assert all(h.shape == (2, 3, 8, 8) for h in out.heatmaps)
    assert out.low.shape == (2, 8, 8, 8)


def test_connection_wiring(image):
    with no_grad():
        res = build_model(preset("toy", connection="ResCBSP", blocks=3))(image)
        np.testing.assert_allclose(res.inputs[2].data, res.inputs[1].data + res.outputs[1].data, atol=1e-12)
        den = build_model(preset("toy", connection="DenC", blocks=3))(image)
        np.testing.assert_allclose(
            den.inputs[2].data, den.outputs[0].data + den.outputs[1].data + den.low.data, atol=1e-12
        )
        lsc = build_model(preset("toy", connection="LSC", blocks=3))(image)
        np.testing.assert_array_equal(lsc.inputs[0].data, lsc.low.data)


def test_lsc_input_depends_on_low_level_features(rng):
    model = build_model(preset("toy", connection="LSC", blocks=2))
    prev = Tensor(rng.normal(size=(8, 8, 8)))
    a = connect_lsc(Tensor(rng.normal(size=(8, 8, 8))), prev, model.lsc_proj[0]).data
    b = connect_lsc(Tensor(rng.normal(size=(8, 8, 8))), prev, model.lsc_proj[0]).data
    assert not np.allclose(a, b)


def test_connections_reject_shape_mismatch():
    a, b = Tensor(np.ones((8, 4, 4))), Tensor(np.ones((8, 2, 2)))
    with pytest.raises(DimensionError):
        connect_rescbsp(a, b)
    with pytest.raises(DimensionError):
        connect_denc([a], b)


@pytest.mark.parametrize("connection", ["LSC", "ResCBSP", "DenC"])
def test_parameter_count_affine_in_blocks(connection):
    counts = [count_parameters(build_model(preset("toy", connection=connection, blocks=b)))[0] for b in range(1, 9)]
    diffs = np.diff(counts)
    assert np.all(diffs == diffs[0]) and diffs[0] > 0


def test_same_seed_same_weights():
    a = build_model(preset("toy", seed=5)).state_dict()
    b = build_model(preset("toy", seed=5)).state_dict()
    assert a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def test_state_dict_round_trip():
    m1, m2 = build_model(preset("toy", seed=1)), build_model(preset("toy", seed=2))
    m2.load_state_dict(m1.state_dict())
    s1, s2 = m1.state_dict(), m2.state_dict()
    assert all(np.array_equal(s1[k], s2[k]) for k in s1)
    with pytest.raises(KeyError):
        m2.load_state_dict({k: v for k, v in list(s1.items())[1:]})


def test_rescbsp_and_denc_coincide_at_two_blocks(image):
    # with two blocks both wirings feed low + out_1 to block 2; LSC differs only by its projection
    with no_grad():
        res = build_model(preset("toy", connection="ResCBSP", blocks=2))(image)
        den = build_model(preset("toy", connection="DenC", blocks=2))(image)
    for a, b in zip(res.heatmaps, den.heatmaps):
        np.testing.assert_array_equal(a.data, b.data)


def test_desk_parameter_count_golden():
    total, breakdown = count_parameters(build_model(preset("desk")))
    assert total == 587_042
    assert breakdown["backbone"] == 12_088 and breakdown["blocks.0"] == breakdown["blocks.1"] == 286_437
