import numpy as np
import pytest

import oracles
from fadnet import ops
from fadnet.exceptions import ContractError, ShapeError
from fadnet.ops import ConvSpec, CorrelationSpec
from fadnet.tensor import Tensor

N_RANDOM = 20


def make_conv(rng, cin, cout, k, stride=1, pad=None, transposed=False):
    spec = ConvSpec.create(cin, cout, k, stride, pad, transposed=transposed, rng=rng)
    spec.bias = Tensor(rng.normal(size=cout), requires_grad=True)
    return spec


def identity_pre_conv(c):
    w = np.zeros((c, c, 3, 3))
    for i in range(c):
        w[i, i, 1, 1] = 1.0
    return ConvSpec(c, c, 3, 1, 1, weight=Tensor(w))


# -- conv2d ------------------------------------------------------------

def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(2, 3, 5, 4))
    w = np.eye(3).reshape(3, 3, 1, 1)
    out = ops.conv2d(Tensor(x), ConvSpec(3, 3, 1, weight=Tensor(w)))
    np.testing.assert_array_equal(out.data, x)


def test_conv_counts_taps():
    spec = ConvSpec(1, 1, 3, 1, 1, weight=Tensor(np.ones((1, 1, 3, 3))))
    out = ops.conv2d(Tensor(np.ones((1, 1, 5, 5))), spec).data[0, 0]
    assert out[2, 2] == 9 and out[0, 0] == 4 and out[0, 4] == 4 and out[0, 2] == 6


def test_conv_matches_loop_oracle_on_random_instances():
    rng = np.random.default_rng(10)
    for trial in range(N_RANDOM):
        k = int(rng.choice([1, 3, 4, 5]))
        stride = int(rng.choice([1, 2]))
        pad = int(rng.integers(0, k))
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        h, w = int(rng.integers(k, 9)), int(rng.integers(k, 9))
        x = rng.normal(size=(int(rng.integers(1, 3)), cin, h, w))
        spec = make_conv(rng, cin, cout, k, stride, pad)
        got = ops.conv2d(Tensor(x), spec).data
        want = oracles.conv2d(x, spec.weight.data, spec.bias.data, stride, pad)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-9, err_msg=f"trial {trial}")


def test_conv_channel_mismatch():
    spec = ConvSpec(3, 2, 3, 1, 1)
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.zeros((1, 2, 5, 5))), spec)


def test_conv_extent_law():
    rng = np.random.default_rng(1)
    for h in range(3, 12):
        for k, s, p in [(3, 1, 1), (3, 2, 1), (1, 2, 0), (5, 2, 2)]:
            spec = ConvSpec(1, 1, k, s, p)
            out = ops.conv2d(Tensor(rng.normal(size=(1, 1, h, h))), spec)
            assert out.shape[2] == (h + 2 * p - k) // s + 1


# -- transposed conv ---------------------------------------------------

def test_tconv_doubles_extent():
    spec = ConvSpec.create(1, 5, 4, 2, 1, transposed=True, rng=np.random.default_rng(0))
    assert ops.transposed_conv2d(Tensor(np.ones((1, 1, 4, 4))), spec).shape == (1, 5, 8, 8)


def test_tconv_matches_loop_oracle_on_random_instances():
    rng = np.random.default_rng(11)
    for trial in range(N_RANDOM):
        k = int(rng.choice([1, 2, 3, 4]))
        stride = int(rng.choice([1, 2]))
        pad = int(rng.integers(0, k))
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        h, w = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        if (h - 1) * stride - 2 * pad + k < 1 or (w - 1) * stride - 2 * pad + k < 1:
            continue
        x = rng.normal(size=(1, cin, h, w))
        spec = make_conv(rng, cin, cout, k, stride, pad, transposed=True)
        got = ops.transposed_conv2d(Tensor(x), spec).data
        want = oracles.transposed_conv2d(x, spec.weight.data, spec.bias.data, stride, pad)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-9, err_msg=f"trial {trial}")


def test_tconv_equals_input_gradient_of_forward_conv():
    rng = np.random.default_rng(2)
    w = rng.normal(size=(3, 2, 4, 4))  # forward conv: 2 -> 3 channels
    x = Tensor(rng.normal(size=(1, 2, 8, 8)), requires_grad=True)
    fwd = ConvSpec(2, 3, 4, 2, 1, weight=Tensor(w))
    y = rng.normal(size=(1, 3, 4, 4))
    (ops.conv2d(x, fwd) * Tensor(y)).sum().backward()
    tconv = ConvSpec(3, 2, 4, 2, 1, transposed=True, weight=Tensor(w))
    np.testing.assert_allclose(ops.transposed_conv2d(Tensor(y), tconv).data, x.grad, atol=1e-12)


def test_adjoint_identity_on_random_instances():
    rng = np.random.default_rng(3)
    for _ in range(N_RANDOM):
        k, s = int(rng.choice([3, 4])), int(rng.choice([1, 2]))
        p = 1
        w = rng.normal(size=(2, 3, k, k))
        x = rng.normal(size=(1, 3, 8, 8))
        cx = ops.conv2d(Tensor(x), ConvSpec(3, 2, k, s, p, weight=Tensor(w))).data
        y = rng.normal(size=cx.shape)
        spec_t = ConvSpec(2, 3, k, s, p, transposed=True, weight=Tensor(w))
        ty = ops.conv_input_grad(y, w, s, p, (8, 8))
        lhs, rhs = float(np.sum(cx * y)), float(np.sum(x * ty))
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))
        if ops.transposed_out_extent(cx.shape[2], k, s, p) == 8:
            np.testing.assert_allclose(ops.transposed_conv2d(Tensor(y), spec_t).data, ty, atol=1e-12)


def test_tconv_of_zero_is_bias():
    rng = np.random.default_rng(4)
    spec = make_conv(rng, 2, 3, 4, 2, 1, transposed=True)
    out = ops.transposed_conv2d(Tensor(np.zeros((1, 2, 3, 3))), spec).data
    np.testing.assert_array_equal(out, np.broadcast_to(spec.bias.data[None, :, None, None], out.shape))


def test_spec_contracts():
    with pytest.raises(ContractError):
        ConvSpec(1, 1, 3, stride=3)
    with pytest.raises(ShapeError):
        ConvSpec(2, 1, 3, weight=Tensor(np.zeros((1, 1, 3, 3))))
    with pytest.raises(ContractError):
        ops.conv2d(Tensor(np.zeros((1, 1, 4, 4))), ConvSpec(1, 1, 4, 2, 1, transposed=True))


# -- leaky relu --------------------------------------------------------

def test_leaky_relu_values():
    np.testing.assert_array_equal(ops.leaky_relu(Tensor([2.0, -2.0]), 0.1).data, [2.0, -0.2])
    x = np.random.default_rng(5).normal(size=20)
    np.testing.assert_array_equal(ops.leaky_relu(Tensor(x), 0.0).data, np.maximum(x, 0.0))


def test_leaky_relu_gradient_on_negative_side():
    x = Tensor([-3.0], requires_grad=True)
    ops.leaky_relu(x, 0.1).sum().backward()
    assert x.grad[0] == pytest.approx(0.1)


# -- correlation -------------------------------------------------------

def test_self_correlation_at_zero_shift():
    f = np.random.default_rng(6).normal(size=(1, 4, 5, 6))
    out = ops.correlation_patch(Tensor(f), Tensor(f), CorrelationSpec(3, 0)).data
    np.testing.assert_allclose(out[0, 0], (f[0] ** 2).sum(axis=0), atol=1e-12)
    assert out.shape == (1, 3, 5, 6)


def test_shifted_pair_argmax():
    rng = np.random.default_rng(7)
    f2 = rng.normal(size=(1, 64, 6, 20))
    f1 = np.zeros_like(f2)
    f1[..., 3:] = f2[..., :-3]  # content of f1 at x is f2 at x - 3 (stereo geometry)
    out = ops.correlation_patch(Tensor(f1), Tensor(f2), CorrelationSpec(6, 1)).data
    want = oracles.correlation(f1, f2, 6, 1)
    for y in range(1, 5):
        for x in range(9, 19):
            assert int(np.argmax(want[0, :, y, x])) == 3
            assert int(np.argmax(out[0, :, y, x])) == 3


def test_patch_correlation_matches_loop_oracle():
    rng = np.random.default_rng(8)
    for trial in range(N_RANDOM):
        shape = (1, 3, 5, 8) if trial == 0 else (int(rng.integers(1, 3)), int(rng.integers(1, 4)),
                                                 int(rng.integers(2, 6)), int(rng.integers(2, 9)))
        d, k = int(rng.integers(1, 6)), int(rng.integers(0, 3))
        f1, f2 = rng.normal(size=shape), rng.normal(size=shape)
        got = ops.correlation_patch(Tensor(f1), Tensor(f2), CorrelationSpec(d, k)).data
        np.testing.assert_allclose(got, oracles.correlation(f1, f2, d, k), rtol=0, atol=1e-9,
                                   err_msg=f"trial {trial}")


def test_displacement_set():
    spec = CorrelationSpec(5)
    assert spec.displacement_set == [0, 1, 2, 3, 4]
    with pytest.raises(ContractError):
        CorrelationSpec(0)


def test_mirror_swap_symmetry():
    # corr(f1, f2)[j] at x equals corr(flip f2, flip f1)[j] at the mirrored position w-1-x+j
    rng = np.random.default_rng(9)
    for k in (0, 1):
        f1, f2 = rng.normal(size=(1, 2, 4, 7)), rng.normal(size=(1, 2, 4, 7))
        spec = CorrelationSpec(4, k)
        a = ops.correlation_patch(Tensor(f1), Tensor(f2), spec).data
        b = ops.correlation_patch(Tensor(f2[..., ::-1]), Tensor(f1[..., ::-1]), spec).data
        w = f1.shape[3]
        for j in range(4):
            for x in range(j + k, w - k):
                np.testing.assert_allclose(a[0, j, :, x], b[0, j, :, w - 1 - x + j], atol=1e-12)


def test_correlation_shape_mismatch():
    with pytest.raises(ShapeError):
        ops.correlation_patch(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 4, 4))),
                              CorrelationSpec(2))


def test_pointwise_with_identity_pre_conv_equals_patch():
    rng = np.random.default_rng(12)
    f1, f2 = rng.normal(size=(2, 3, 5, 7)), rng.normal(size=(2, 3, 5, 7))
    spec = CorrelationSpec(4)
    a = ops.correlation_pointwise(Tensor(f1), Tensor(f2), spec, identity_pre_conv(3)).data
    b = ops.correlation_patch(Tensor(f1), Tensor(f2), spec).data
    np.testing.assert_array_equal(a, b)


def test_pointwise_self_correlation_is_non_negative():
    rng = np.random.default_rng(13)
    f = rng.normal(size=(1, 3, 5, 5))
    pre = make_conv(rng, 3, 3, 3)
    out = ops.correlation_pointwise(Tensor(f), Tensor(f), CorrelationSpec(1), pre).data
    assert out.shape == (1, 1, 5, 5) and out.min() >= 0.0


def test_pointwise_matches_two_step_oracle():
    rng = np.random.default_rng(14)
    for trial in range(N_RANDOM):
        c = int(rng.integers(1, 4))
        shape = (1, c, int(rng.integers(3, 6)), int(rng.integers(3, 8)))
        f1, f2 = rng.normal(size=shape), rng.normal(size=shape)
        pre = make_conv(rng, c, c, 3)
        d = int(rng.integers(1, 5))
        got = ops.correlation_pointwise(Tensor(f1), Tensor(f2), CorrelationSpec(d), pre).data
        g1 = oracles.conv2d(f1, pre.weight.data, pre.bias.data, 1, 1)
        g2 = oracles.conv2d(f2, pre.weight.data, pre.bias.data, 1, 1)
        np.testing.assert_allclose(got, oracles.correlation(g1, g2, d, 0), rtol=0, atol=1e-9,
                                   err_msg=f"trial {trial}")


def test_pointwise_rejects_bad_pre_conv():
    rng = np.random.default_rng(15)
    f = Tensor(np.zeros((1, 2, 4, 4)))
    with pytest.raises(ContractError):
        ops.correlation_pointwise(f, f, CorrelationSpec(2), make_conv(rng, 2, 2, 1))
    with pytest.raises(ContractError):
        ops.correlation_pointwise(f, f, CorrelationSpec(2, 1), make_conv(rng, 2, 2, 3))


# -- warp --------------------------------------------------------------

def ramp(b=1, c=1, h=3, w=8):
    return np.broadcast_to(np.arange(w, dtype=np.float64), (b, c, h, w)).copy()


def test_zero_disparity_is_identity():
    right = np.random.default_rng(16).normal(size=(2, 3, 4, 6))
    out = ops.warp_right_to_left(Tensor(right), Tensor(np.zeros((2, 1, 4, 6)))).data
    np.testing.assert_array_equal(out, right)


def test_integer_shift_of_ramp():
    out = ops.warp_right_to_left(Tensor(ramp()), Tensor(np.full((1, 1, 3, 8), 2.0))).data[0, 0]
    np.testing.assert_array_equal(out[:, 2:], ramp()[0, 0, :, 2:] - 2)
    np.testing.assert_array_equal(out[:, :2], 0.0)


def test_half_pixel_shift_of_ramp():
    out = ops.warp_right_to_left(Tensor(ramp()), Tensor(np.full((1, 1, 3, 8), 0.5))).data[0, 0]
    # manual bilinear interpolation: halfway between x-1 and x
    np.testing.assert_allclose(out[:, 1:], ramp()[0, 0, :, 1:] - 0.5, atol=1e-15)


def test_warp_matches_loop_oracle():
    rng = np.random.default_rng(17)
    for trial in range(N_RANDOM):
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(2, 6)), int(rng.integers(3, 9)))
        right = rng.normal(size=shape)
        disp = rng.uniform(-2, shape[3] + 1, size=(shape[0], 1) + shape[2:])
        if trial % 4 == 0:
            disp = np.round(disp)
        got = ops.warp_right_to_left(Tensor(right), Tensor(disp)).data
        np.testing.assert_allclose(got, oracles.warp(right, disp), rtol=0, atol=1e-9, err_msg=f"trial {trial}")


def test_warp_extent_mismatch():
    with pytest.raises(ShapeError):
        ops.warp_right_to_left(Tensor(np.zeros((1, 3, 4, 6))), Tensor(np.zeros((1, 1, 4, 5))))


# -- resample ----------------------------------------------------------

def test_downsample_constant_disparity_units():
    out = ops.resample(Tensor(np.full((1, 1, 8, 8), 8.0)), 2, "down-average", 0.5).data
    assert out.shape == (1, 1, 4, 4)
    np.testing.assert_array_equal(out, 4.0)


def test_upsample_constant_stays_constant():
    out = ops.resample(Tensor(np.full((2, 3, 4, 5), 1.7)), 4, "up-bilinear").data
    assert out.shape == (2, 3, 16, 20)
    np.testing.assert_allclose(out, 1.7, atol=1e-15)


def test_block_mean_times_value_scale():
    x = np.array([[0.0, 2.0], [4.0, 6.0]]).reshape(1, 1, 2, 2)
    assert ops.resample(Tensor(x), 2, "down-average", 0.25).data.item() == pytest.approx(0.75)


def test_resample_errors():
    with pytest.raises(ShapeError):
        ops.resample(Tensor(np.zeros((1, 1, 6, 5))), 2, "down-average")
    with pytest.raises(ContractError):
        ops.resample(Tensor(np.zeros((1, 1, 6, 6))), 3)
    with pytest.raises(ContractError):
        ops.resample(Tensor(np.zeros((1, 1, 6, 6))), 2, "nearest")
