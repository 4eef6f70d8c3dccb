"""Autograd core: forward values, finite-difference gradients, shape rules."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dvit import numerics as nx
from dvit.gradcheck import primitive_checks
from dvit.numerics import DimensionError, Tensor, grad_check, grad_check_params, no_grad


def test_matmul_small_example():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0], [6.0]])
    np.testing.assert_array_equal(nx.matmul(a, b).data, [[17.0], [39.0]])


def test_matmul_shape_mismatch_raises():
    with pytest.raises(DimensionError):
        nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


@pytest.mark.parametrize("seed", range(100))
def test_primitive_gradients_over_seeds(seed):
    for name, rep in primitive_checks(seed).items():
        assert rep.passed, f"{name}: {rep}"


def test_softmax_rows_sum_to_one(rng):
    x = Tensor(rng.normal(scale=30.0, size=(7, 11)))
    p = nx.softmax(x, axis=-1).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(p >= 0)


def test_softmax_is_shift_invariant(rng):
    x = rng.normal(size=(3, 5))
    np.testing.assert_allclose(nx.softmax(Tensor(x)).data, nx.softmax(Tensor(x + 100.0)).data, atol=1e-12)


def test_layer_norm_statistics(rng):
    x = Tensor(rng.normal(3.0, 2.0, size=(4, 16)))
    y = nx.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, rtol=1e-4)


def test_gelu_known_values():
    y = nx.gelu(Tensor([0.0, 1.0, -1.0])).data
    np.testing.assert_allclose(y, [0.0, 0.841192, -0.158808], atol=1e-6)


def test_conv1x1_equals_per_pixel_matmul(rng):
    x = rng.normal(size=(2, 5, 4, 3))
    k = rng.normal(size=(6, 5, 1, 1))
    y = nx.conv2d(Tensor(x), Tensor(k)).data
    ref = np.einsum("oc,nchw->nohw", k[:, :, 0, 0], x)
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_conv2d_matches_direct_loop(rng):
    x = rng.normal(size=(1, 2, 5, 5))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    y = nx.conv2d(Tensor(x), Tensor(k), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 3, 3))
    for o in range(3):
        for i in range(3):
            for j in range(3):
                ref[0, o, i, j] = (xp[0, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * k[o]).sum() + b[o]
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_conv2d_accepts_unbatched(rng):
    x = rng.normal(size=(2, 4, 4))
    k = rng.normal(size=(3, 2, 3, 3))
    y3 = nx.conv2d(Tensor(x), Tensor(k), padding=1).data
    y4 = nx.conv2d(Tensor(x[None]), Tensor(k), padding=1).data
    np.testing.assert_array_equal(y3, y4[0])


def test_pixel_shuffle_layout():
    # channel c*r*r + i*r + j lands at (c, h*r + i, w*r + j)
    x = np.arange(8 * 2 * 3, dtype=np.float64).reshape(8, 2, 3)
    y = nx.pixel_shuffle(Tensor(x), 2).data
    assert y.shape == (2, 4, 6)
    for c in range(2):
        for i in range(2):
            for j in range(2):
                np.testing.assert_array_equal(y[c, i::2, j::2], x[c * 4 + i * 2 + j])


def test_pixel_shuffle_rejects_bad_channels():
    with pytest.raises(DimensionError):
        nx.pixel_shuffle(Tensor(np.ones((5, 2, 2))), 2)


@settings(max_examples=60, deadline=None)
@given(c=st.integers(1, 4), r=st.integers(1, 4), h=st.integers(1, 5), w=st.integers(1, 5), batched=st.booleans())
def test_pixel_shuffle_round_trip(c, r, h, w, batched):
    shape = ((2,) if batched else ()) + (c * r * r, h, w)
    x = np.random.default_rng(c * 1000 + r * 100 + h * 10 + w).normal(size=shape)
    back = nx.pixel_unshuffle(nx.pixel_shuffle(Tensor(x), r), r).data
    assert np.array_equal(back, x)


def test_gradients_accumulate_until_zeroed():
    x = Tensor([2.0], requires_grad=True)
    (x * x).sum().backward()
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, [8.0])
    x.zero_grad()
    assert x.grad is None


def test_shared_subexpression_gradient():
    x = Tensor([3.0], requires_grad=True)
    y = x * x
    (y + y * x).sum().backward()  # d/dx (x^2 + x^3) = 2x + 3x^2
    np.testing.assert_allclose(x.grad, [6.0 + 27.0])


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        Tensor(np.ones(3), requires_grad=True).backward()


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert y._backward is None and not y.requires_grad


def test_grad_check_catches_a_wrong_gradient():
    x = Tensor(np.array([0.3, -0.7]), requires_grad=True)
    wrong = nx.elementwise(x, np.sin(x.data), np.cos(x.data) * 1.01)
    rep = grad_check(lambda t: nx.elementwise(t, np.sin(t.data), np.cos(t.data) * 1.01).sum(), x, 1e-4)
    assert not rep.passed
    assert wrong.shape == x.shape


def test_grad_check_params_structural_zero_is_not_failure():
    # softmax ignores a constant shift, so b has an exactly-zero gradient
    a = Tensor(np.array([0.2, -0.4, 1.0]), requires_grad=True)
    b = Tensor(np.array([0.5]), requires_grad=True)
    c = Tensor(np.array([1.0, 2.0, 3.0]))
    rep = grad_check_params(lambda: (nx.softmax(a + b) * c).sum(), [("a", a), ("b", b)], 1e-4)
    assert rep.passed, str(rep)


def test_grad_check_reports_nonfinite():
    x = Tensor(np.array([-1.0]), requires_grad=True)
    with np.errstate(invalid="ignore"):
        rep = grad_check(lambda t: nx.log(t).sum(), x, 1e-4)
    assert rep.nonfinite and not rep.passed
