import numpy as np
import pytest

from dvit.config import ConfigError
from dvit.gradcheck import _weighted
from dvit.losses import (
    LossConfig,
    adaptive_wing,
    awing_constants,
    awing_derivative,
    awing_value,
    smooth_l1,
    stage_loss,
    stage_weights,
    total_loss,
)
from dvit.numerics import DimensionError, Tensor, grad_check


@pytest.mark.parametrize("e,expected", [(0.0, 0.0), (1.0, 0.5), (3.0, 2.5), (-3.0, 2.5), (0.5, 0.125)])
def test_smooth_l1_values(e, expected):
    assert float(smooth_l1(Tensor([e]), [0.0], 1.0).data) == pytest.approx(expected, abs=1e-15)


def test_smooth_l1_shape_check():
    with pytest.raises(DimensionError):
        smooth_l1(Tensor(np.zeros(3)), np.zeros(2))


@pytest.mark.parametrize("y", [0.0, 0.5, 1.0])
def test_awing_c1_at_knot(y):
    cfg = LossConfig()
    yy = np.array([y])
    below = np.nextafter(cfg.theta, 0.0)
    assert abs(awing_value(np.array([below]), yy, cfg)[0] - awing_value(np.array([cfg.theta]), yy, cfg)[0]) <= 1e-9
    assert abs(awing_derivative(np.array([below]), yy, cfg)[0] - awing_derivative(np.array([cfg.theta]), yy, cfg)[0]) <= 1e-6


def test_awing_constants_closed_form():
    cfg = LossConfig()
    a, c = awing_constants(np.array([0.0]), cfg)
    # y=0: p = 2.1, theta/eps = 0.5
    p, r = 2.1, 0.5
    a_ref = 14.0 * p * r ** (p - 1) / (1 + r**p)
    assert a[0] == pytest.approx(a_ref, rel=1e-12)
    assert c[0] == pytest.approx(0.5 * a_ref - 14.0 * np.log1p(r**p), rel=1e-12)


def test_awing_zero_at_perfect_prediction(rng):
    z = rng.uniform(0, 1, size=(3, 4, 4))
    assert float(adaptive_wing(Tensor(z), z).data) == 0.0


def test_awing_target_range_checked():
    with pytest.raises(ValueError):
        adaptive_wing(Tensor(np.zeros(2)), np.array([0.5, 1.5]))


def test_awing_gradient_across_both_branches(rng):
    z = rng.uniform(0, 1, size=(20,))
    e = np.linspace(-2.0, 2.0, 20)
    e[np.isclose(np.abs(e), 0.5, atol=1e-3)] += 0.01
    x = Tensor(z + e)
    assert grad_check(lambda t: adaptive_wing(t, z), x, 1e-4).passed


def test_stage_weights_b8():
    w = stage_weights(8, 1.2)
    direct = np.array([1.2 ** (j - 8) for j in range(1, 9)])
    assert np.max(np.abs(w - direct)) <= 1e-12
    assert w[-1] == 1.0
    assert w[0] / w[-1] == pytest.approx(0.279082, abs=5e-7)


def test_stage_weights_validation():
    with pytest.raises(ConfigError):
        stage_weights(0, 1.2)
    with pytest.raises(ConfigError):
        stage_weights(3, 0.9)


def test_total_loss_weighted_sum():
    losses = [Tensor(2.0), Tensor(3.0), Tensor(5.0)]
    assert float(total_loss(losses, 1.5).data) == pytest.approx(2.0 / 2.25 + 3.0 / 1.5 + 5.0)


def test_stage_loss_batch_average(rng):
    cfg = LossConfig(beta=0.5)
    y = rng.uniform(1, 5, size=(4, 3, 2))
    mu = Tensor(y + rng.normal(size=y.shape))
    z = rng.uniform(0, 0.2, size=(4, 3, 6, 6))
    h = Tensor(rng.uniform(0, 0.2, size=z.shape))
    rep = stage_loss(mu, y, h, z, cfg)
    per = [stage_loss(Tensor(mu.data[i]), y[i], Tensor(h.data[i]), z[i], cfg).floats()[0] for i in range(4)]
    assert float(rep.total.data) == pytest.approx(np.mean(per), rel=1e-12)
    assert float(rep.total.data) == pytest.approx(float(rep.coord.data) + 0.5 * float(rep.heat.data), rel=1e-12)
