import math

import numpy as np
import pytest

from mstn import tensor as T
from mstn.gradcheck import finite_diff_gradcheck
from mstn.layers import (
    ConvLayer,
    DeconvLayer,
    ResidualBlock,
    downsample,
    downsample_layer,
    init_bound,
    init_parameters,
    upsample,
)
from mstn.tensor import ConfigError, ShapeError, Tensor

F64 = np.float64


def _zero_convs(rb):
    for conv in (rb.conv1, rb.conv2):
        conv.weight.data[:] = 0
        conv.bias.data[:] = 0


def test_residual_identity_with_zero_convs():
    rng = np.random.default_rng(0)
    rb = ResidualBlock(6, 6, rng, F64)
    _zero_convs(rb)
    x = Tensor(rng.normal(size=(2, 6, 5, 7)))
    np.testing.assert_array_equal(rb(x).data, x.data)


def test_residual_projection_path():
    rng = np.random.default_rng(1)
    rb = ResidualBlock(3, 8, rng, F64)
    _zero_convs(rb)
    assert rb.projection is not None
    x = Tensor(rng.normal(size=(1, 3, 6, 6)))
    np.testing.assert_array_equal(rb(x).data, rb.projection(x).data)
    assert rb(x).shape == (1, 8, 6, 6)


def test_residual_matches_composed_primitives():
    rng = np.random.default_rng(2)
    rb = ResidualBlock(4, 4, rng, F64)
    for c in (rb.conv1, rb.conv2):
        c.bias.data = rng.normal(size=c.bias.shape)
    xv = rng.normal(size=(2, 4, 6, 6))
    h = T.conv2d(Tensor(xv), rb.conv1.weight, rb.conv1.bias, 1, 1).data
    h = np.maximum(h, 0)
    h = T.conv2d(Tensor(h), rb.conv2.weight, rb.conv2.bias, 1, 1).data
    assert np.max(np.abs(rb(Tensor(xv)).data - (xv + h))) < 1e-10


def test_residual_channel_mismatch():
    rb = ResidualBlock(4, 4)
    with pytest.raises(ShapeError):
        rb(Tensor(np.zeros((1, 3, 4, 4), dtype=np.float32)))


def test_downsample_shapes_and_constant_interior():
    layer = downsample_layer(5, 2, dtype=F64)
    assert downsample(Tensor(np.zeros((1, 5, 64, 64))), layer).shape == (1, 2, 32, 32)
    layer.weight.data[:] = 1.0
    c = 0.3
    out = downsample(Tensor(np.full((1, 5, 8, 8), c)), layer).data
    # output (i,j) centred on input (2i, 2j); interior taps see a full 3x3 window
    np.testing.assert_allclose(out[:, :, 1:, 1:], 9 * c * 5, rtol=1e-14)


def test_downsample_rejects_odd():
    with pytest.raises(ConfigError, match="pad"):
        downsample(Tensor(np.zeros((1, 2, 7, 8))), downsample_layer(2, 2))


def test_downsample_gradcheck():
    rng = np.random.default_rng(3)
    layer = downsample_layer(3, 4, rng, F64)
    x = Tensor(rng.normal(size=(2, 3, 8, 8)))
    r = Tensor(rng.normal(size=(2, 4, 4, 4)))

    def f():
        return T.sum_all(T.mul(downsample(x, layer), r))

    for v in (x, layer.weight, layer.bias):
        assert finite_diff_gradcheck(f, v) < 1e-4


def test_upsample_shape_and_bias():
    layer = DeconvLayer(4, 2, dtype=F64)
    assert upsample(Tensor(np.ones((1, 4, 15, 15))), layer).shape == (1, 2, 30, 30)
    layer.weight.data[:] = 0
    layer.bias.data = np.array([0.5, -1.0])
    out = upsample(Tensor(np.ones((1, 4, 3, 3))), layer).data
    np.testing.assert_array_equal(out[0, 0], 0.5)
    np.testing.assert_array_equal(out[0, 1], -1.0)


def test_upsample_adjoint_of_downsample_geometry():
    rng = np.random.default_rng(4)
    w = rng.normal(size=(3, 2, 4, 4))
    x = rng.normal(size=(1, 3, 8, 8))
    y = rng.normal(size=(1, 2, 16, 16))
    # conv2d with (k=4,s=2,p=1) maps 16 -> 8; its adjoint is the x2 deconv
    lhs = np.sum(T.conv2d(Tensor(y), Tensor(w), stride=2, padding=1).data * x)
    rhs = np.sum(T.conv_transpose2d(Tensor(x), Tensor(w), stride=2, padding=1).data * y)
    assert abs(lhs - rhs) / abs(lhs) < 1e-10


def test_down_then_up_preserves_shape():
    for h, w in [(8, 8), (6, 10), (32, 4)]:
        d = downsample(Tensor(np.zeros((1, 3, h, w))), downsample_layer(3, 6, dtype=F64))
        u = upsample(d, DeconvLayer(6, 3, dtype=F64))
        assert u.shape == (1, 3, h, w)


def test_init_bound_value():
    assert init_bound(8 * 9) == pytest.approx(math.sqrt(6 / 72))
    assert init_bound(72) == pytest.approx(0.288675, abs=1e-6)


def test_init_parameters_deterministic_and_bounded():
    a, b = ConvLayer(8, 5, 3), ConvLayer(8, 5, 3)
    init_parameters(a, 11)
    init_parameters(b, 11)
    assert a.weight.data.tobytes() == b.weight.data.tobytes()
    bound = math.sqrt(6 / 72)
    assert np.all(np.abs(a.weight.data) < bound)
    np.testing.assert_array_equal(a.bias.data, 0.0)
    init_parameters(b, 12)
    assert a.weight.data.tobytes() != b.weight.data.tobytes()


def test_registry_unique_and_complete():
    rb = ResidualBlock(3, 8)
    names = [n for n, _ in rb.named_parameters()]
    assert len(names) == len(set(names)) == 6
    assert len({id(p) for p in rb.parameters()}) == 6
    assert names == [
        "conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "projection.weight", "projection.bias",
    ]
