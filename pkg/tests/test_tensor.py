import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mstn import tensor as T
from mstn.gradcheck import finite_diff_gradcheck
from mstn.tensor import ConfigError, ShapeError, Tensor

from oracles import conv2d_loops, conv_transpose2d_loops


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- conv2d ----------------------------------------------------------------

def test_conv2d_all_ones():
    out = T.conv2d(t64(np.ones((1, 1, 3, 3))), t64(np.ones((1, 1, 3, 3))))
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == 9.0


def test_conv2d_dirac_is_identity(rng):
    x = rng.normal(size=(2, 3, 6, 5))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    out = T.conv2d(t64(x), t64(w), stride=1, padding=1)
    np.testing.assert_array_equal(out.data, x)


def test_conv2d_matches_loops_random(rng):
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    got = T.conv2d(t64(x), t64(w), t64(b), stride=1, padding=1).data
    assert np.max(np.abs(got - conv2d_loops(x, w, b, 1, 1))) < 1e-10


@pytest.mark.parametrize("k,s,p", [(1, 1, 0), (3, 1, 1), (3, 2, 1), (4, 2, 1), (4, 1, 0), (3, 2, 0)])
def test_conv2d_geometries(rng, k, s, p):
    x = rng.normal(size=(2, 2, 9, 7))
    w = rng.normal(size=(3, 2, k, k))
    got = T.conv2d(t64(x), t64(w), stride=s, padding=p).data
    assert np.max(np.abs(got - conv2d_loops(x, w, None, s, p))) < 1e-10


def test_conv2d_channel_mismatch():
    with pytest.raises(ShapeError, match="channels"):
        T.conv2d(t64(np.ones((1, 2, 4, 4))), t64(np.ones((1, 3, 3, 3))))


def test_conv2d_empty_output():
    with pytest.raises(ConfigError):
        T.conv2d(t64(np.ones((1, 1, 2, 2))), t64(np.ones((1, 1, 3, 3))))


# --- conv_transpose2d ------------------------------------------------------

def test_deconv_single_tap():
    v = 0.7
    out = T.conv_transpose2d(t64([[[[v]]]]), t64(np.ones((1, 1, 2, 2))), stride=2)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), v))


def test_deconv_shape_doubles():
    out = T.conv_transpose2d(t64(np.ones((1, 2, 15, 15))), t64(np.ones((2, 3, 4, 4))), stride=2, padding=1)
    assert out.shape == (1, 3, 30, 30)


def test_deconv_matches_scatter_loops(rng):
    x = rng.normal(size=(2, 3, 5, 4))
    w = rng.normal(size=(3, 2, 4, 4))
    b = rng.normal(size=2)
    got = T.conv_transpose2d(t64(x), t64(w), t64(b), stride=2, padding=1).data
    assert np.max(np.abs(got - conv_transpose2d_loops(x, w, b, 2, 1))) < 1e-10


@pytest.mark.parametrize("k,s,p", [(3, 1, 1), (4, 2, 1), (3, 2, 1), (1, 1, 0)])
def test_deconv_is_adjoint(rng, k, s, p):
    # choose H so that (H + 2p - k) is divisible by s: the geometries then pair exactly
    h = 8 + (8 + 2 * p - k) % s
    x = rng.normal(size=(2, 3, h, h))
    w = rng.normal(size=(4, 3, k, k))
    y = rng.normal(size=T.conv2d(t64(x), t64(w), stride=s, padding=p).shape)
    lhs = np.sum(T.conv2d(t64(x), t64(w), stride=s, padding=p).data * y)
    xt = T.conv_transpose2d(t64(y), t64(w), stride=s, padding=p).data
    assert xt.shape == x.shape
    rhs = np.sum(x * xt)
    assert abs(lhs - rhs) / abs(lhs) < 1e-10


# --- pooling / softmax / loss ---------------------------------------------

def test_gap_constant_and_values():
    assert T.global_avg_pool(t64(np.full((1, 2, 3, 3), 4.25))).data.ravel().tolist() == [4.25, 4.25]
    assert T.global_avg_pool(t64(np.array([1.0, 2, 3, 4]).reshape(1, 1, 2, 2))).data.item() == 2.5
    assert T.global_avg_pool(t64(np.zeros((3, 16, 7, 5)))).shape == (3, 16, 1, 1)


def test_softmax_pair_examples():
    a, b = T.softmax_pair(t64(np.full((1, 3, 1, 1), 0.3)), t64(np.full((1, 3, 1, 1), 0.3)))
    np.testing.assert_array_equal(a.data, 0.5)
    np.testing.assert_array_equal(b.data, 0.5)
    a, b = T.softmax_pair(t64([[[[math.log(3.0)]]]]), t64([[[[0.0]]]]))
    assert a.data.item() == pytest.approx(0.75, abs=1e-15)
    assert b.data.item() == pytest.approx(0.25, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-700, 700), min_size=2, max_size=2))
def test_softmax_pair_normalised(pair):
    a, b = T.softmax_pair(t64([[[[pair[0]]]]]), t64([[[[pair[1]]]]]))
    assert abs(a.data.item() + b.data.item() - 1.0) < 1e-12
    assert 0.0 <= a.data.item() <= 1.0


def test_softmax_pair_open_interval_for_moderate_logits(rng):
    la, lb = rng.normal(scale=5, size=(2, 4, 8, 1, 1))
    a, b = T.softmax_pair(t64(la), t64(lb))
    assert np.all((a.data > 0) & (a.data < 1) & (b.data > 0) & (b.data < 1))
    assert np.max(np.abs(a.data + b.data - 1)) < 1e-12


def test_l1_loss_cases(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    assert T.l1_loss(t64(x), t64(x)).data.item() == 0.0
    assert T.l1_loss(t64(x + 0.125), t64(x)).data.item() == pytest.approx(0.125, abs=1e-15)
    y = rng.normal(size=x.shape)
    direct = sum(abs(p - q) for p, q in zip(x.ravel(), y.ravel())) / x.size
    assert abs(T.l1_loss(t64(x), t64(y)).data.item() - direct) < 1e-12
    with pytest.raises(ShapeError):
        T.l1_loss(t64(x), t64(y[:1]))


def test_l1_subgradient_zero_at_tie():
    x = t64(np.ones((1, 1, 2, 2)), grad=True)
    T.backward(T.l1_loss(x, t64(np.ones((1, 1, 2, 2)))))
    np.testing.assert_array_equal(x.grad, 0.0)


# --- backward --------------------------------------------------------------

def test_backward_relu_linear_region(rng):
    x = t64(rng.uniform(0.1, 1.0, size=(2, 3, 4, 4)), grad=True)
    T.backward(T.sum_all(T.relu(x)))
    np.testing.assert_array_equal(x.grad, 1.0)


def test_backward_square(rng):
    xv = rng.normal(size=(1, 2, 3, 3))
    x = t64(xv, grad=True)
    T.backward(T.sum_all(T.mul(x, x)))
    np.testing.assert_allclose(x.grad, 2 * xv, rtol=0, atol=1e-15)


def test_backward_accumulates_across_calls(rng):
    x = t64(rng.normal(size=(1, 1, 2, 2)), grad=True)
    T.backward(T.sum_all(T.scale(x, 3.0)))
    T.backward(T.sum_all(T.scale(x, 3.0)))
    np.testing.assert_array_equal(x.grad, 6.0)


def test_backward_two_consumers(rng):
    xv = rng.normal(size=(1, 2, 3, 3))
    x = t64(xv, grad=True)
    # f = sum(x*x) + sum(relu(x)) * 2 -> 2x + 2*[x>0]
    f = T.add(T.sum_all(T.mul(x, x)), T.scale(T.sum_all(T.relu(x)), 2.0))
    T.backward(f)
    np.testing.assert_allclose(x.grad, 2 * xv + 2 * (xv > 0), atol=1e-15)


def test_backward_rejects_non_scalar():
    with pytest.raises(ValueError, match="scalar"):
        T.backward(t64(np.ones((1, 1, 2, 2)), grad=True))


# --- gradient checks -------------------------------------------------------

def _gc(f, x):
    return finite_diff_gradcheck(f, x, eps=1e-4)


def test_gradcheck_l1(rng):
    target = t64(rng.normal(size=(2, 3, 4, 4)))
    # offset keeps every residual far from the kink at zero
    x = t64(target.data + np.sign(rng.normal(size=target.shape)) * rng.uniform(0.1, 1, size=target.shape))
    assert _gc(lambda: T.l1_loss(x, target), x) < 1e-4


@pytest.mark.parametrize("k,s,p", [(3, 1, 1), (3, 2, 1), (4, 2, 1), (1, 1, 0)])
def test_gradcheck_conv2d(rng, k, s, p):
    x = t64(rng.normal(size=(2, 3, 8, 8)))
    w = t64(rng.normal(size=(4, 3, k, k)))
    b = t64(rng.normal(size=4))
    r = t64(rng.normal(size=T.conv2d(x, w, b, s, p).shape))

    def f():
        return T.sum_all(T.mul(T.conv2d(x, w, b, s, p), r))

    for v in (x, w, b):
        assert _gc(f, v) < 1e-4


def test_gradcheck_conv_transpose2d(rng):
    x = t64(rng.normal(size=(2, 3, 5, 5)))
    w = t64(rng.normal(size=(3, 4, 4, 4)))
    b = t64(rng.normal(size=4))
    r = t64(rng.normal(size=(2, 4, 10, 10)))

    def f():
        return T.sum_all(T.mul(T.conv_transpose2d(x, w, b, 2, 1), r))

    for v in (x, w, b):
        assert _gc(f, v) < 1e-4


def test_gradcheck_pool_fc_softmax(rng):
    x = t64(rng.normal(size=(2, 6, 5, 4)))
    w = t64(rng.normal(size=(4, 6)))
    bias = t64(rng.normal(size=4))
    ga = t64(rng.normal(size=(6, 4)))
    gb = t64(rng.normal(size=(6, 4)))
    r = t64(rng.normal(size=(2, 6, 1, 1)))

    def f():
        z = T.fully_connected(T.global_avg_pool(x), w, bias)
        a, b = T.softmax_pair(T.fully_connected(z, ga), T.fully_connected(z, gb))
        return T.sum_all(T.mul(T.sub(T.scale(a, 2.0), b), r))

    for v in (x, w, bias, ga, gb):
        assert _gc(f, v) < 1e-4


def test_gradcheck_elementwise(rng):
    x = t64(rng.normal(size=(2, 3, 4, 4)))
    y = t64(rng.normal(size=(2, 3, 4, 4)))
    g = t64(rng.normal(size=(2, 3, 1, 1)))

    def f():
        h = T.mul(T.relu(T.add(x, y)), g)
        return T.sum_all(T.mul(T.sub(h, T.scale(y, 0.5)), x))

    for v in (x, y, g):
        assert _gc(f, v) < 1e-4


def test_float32_stays_float32(rng):
    x = Tensor(rng.normal(size=(1, 2, 4, 4)).astype(np.float32), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2, 3, 3)).astype(np.float32), requires_grad=True)
    out = T.conv2d(x, w, padding=1)
    assert out.dtype == np.float32
    T.backward(T.sum_all(out))
    assert x.grad.dtype == np.float32 and w.grad.dtype == np.float32


def _sweep_cases():
    for n, c, h, k, s in itertools.product((1, 4), (1, 4), (4, 9), (1, 3, 4), (1, 2)):
        if h >= k:
            yield n, c, h, k, s


@pytest.mark.parametrize("n,c,h,k,s", list(_sweep_cases()))
def test_conv_sweep(n, c, h, k, s):
    rng = np.random.default_rng(n * 1000 + c * 100 + h * 10 + k + s)
    w_ = h if h == 9 else h + 1
    p = k // 2
    x = rng.normal(size=(n, c, h, w_))
    w = rng.normal(size=(c, c, k, k))
    got = T.conv2d(t64(x), t64(w), stride=s, padding=p).data
    assert np.max(np.abs(got - conv2d_loops(x, w, None, s, p))) < 1e-10
    y = rng.normal(size=got.shape)
    wt = rng.normal(size=(c, c, k, k))
    got_t = T.conv_transpose2d(t64(y), t64(wt), stride=s, padding=p).data if (got.shape[2] - 1) * s - 2 * p + k >= 1 else None
    if got_t is not None:
        assert np.max(np.abs(got_t - conv_transpose2d_loops(y, wt, None, s, p))) < 1e-10
