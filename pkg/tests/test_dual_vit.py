import numpy as np
import pytest

from dvit.config import ConfigError, preset
from dvit.dual_vit import (
    ChannelSplitViT,
    PredictionBlock,
    ResidualConvBlock,
    SpatialSplitViT,
    SupervisionHead,
    dvit_fuse,
    supervision_head,
)
from dvit.gradcheck import module_checks
from dvit.numerics import DimensionError, Tensor


def test_supervision_head_is_channel_combination(rng):
    worst = 0.0
    for _ in range(100):
        c, m = int(rng.integers(1, 9)), int(rng.integers(1, 6))
        h, w = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        head = SupervisionHead(c, m, rng)
        head.conv.bias.data[:] = rng.normal(size=m)
        f = rng.normal(size=(c, h, w))
        alpha, b = head.alpha.data, head.conv.bias.data
        explicit = np.stack([sum(alpha[i, k] * f[k] for k in range(c)) + b[i] for i in range(m)])
        worst = max(worst, float(np.abs(supervision_head(Tensor(f), head).data - explicit).max()))
    assert worst <= 1e-9


def test_spatial_branch_shapes(rng):
    sp = SpatialSplitViT(8, 8, 8, 4, 16, 1, 2, rng)
    assert sp.n_tokens == 4
    assert sp(Tensor(rng.normal(size=(8, 8, 8)))).shape == (4, 8, 8)
    assert sp(Tensor(rng.normal(size=(3, 8, 8, 8)))).shape == (3, 4, 8, 8)


def test_spatial_branch_rejects_indivisible_patch(rng):
    with pytest.raises(ConfigError):
        SpatialSplitViT(8, 10, 10, 4, 16, 1, 2, rng)


def test_channel_branch_shapes(rng):
    ch = ChannelSplitViT(8, 8, 8, 16, 1, 2, rng)
    x = Tensor(rng.normal(size=(2, 8, 8, 8)))
    assert ch.tokens(x).shape == (2, 8, 16)
    assert ch(x).shape == (2, 2, 8, 8)


def test_channel_branch_needs_even_grid(rng):
    with pytest.raises(ConfigError):
        ChannelSplitViT(8, 7, 8, 16, 1, 2, rng)


def test_channel_tokens_permutation_equivariant(rng):
    # positional table is zero at init, so the channel encoder commutes with channel permutations
    ch = ChannelSplitViT(8, 8, 8, 16, 2, 4, rng)
    tokens = rng.normal(size=(8, 16))
    perm = rng.permutation(8)
    y = ch.encode_tokens(Tensor(tokens)).data
    np.testing.assert_allclose(ch.encode_tokens(Tensor(tokens[perm])).data, y[perm], atol=1e-10)


def test_fuse_concatenates_then_convolves(rng):
    fuse = ResidualConvBlock(6, 8, rng)
    s, c = rng.normal(size=(4, 8, 8)), rng.normal(size=(2, 8, 8))
    np.testing.assert_allclose(
        dvit_fuse(Tensor(s), Tensor(c), fuse).data, fuse(Tensor(np.concatenate([s, c]))).data, atol=1e-12
    )


def test_fuse_rejects_mismatched_maps(rng):
    with pytest.raises(DimensionError):
        dvit_fuse(Tensor(np.ones((4, 8, 8))), Tensor(np.ones((2, 4, 4))), ResidualConvBlock(6, 8, rng))


@pytest.mark.parametrize("kind", ["dvit", "spatial", "channel"])
def test_prediction_block_output_shapes(kind, rng):
    cfg = preset("toy")
    blk = PredictionBlock(cfg, rng, kind)
    f, h = blk(Tensor(rng.normal(size=(2, 8, 8, 8))))
    assert f.shape == (2, 8, 8, 8) and h.shape == (2, 3, 8, 8)


def test_prediction_block_checks_input(rng):
    blk = PredictionBlock(preset("toy"), rng)
    with pytest.raises(DimensionError):
        blk(Tensor(np.ones((2, 4, 8, 8))))


def test_unknown_block_kind(rng):
    with pytest.raises(ConfigError):
        PredictionBlock(preset("toy"), rng, "hourglass")


def test_module_gradients():
    for name, rep in module_checks(3).items():
        assert rep.passed, f"{name}: {rep}"
