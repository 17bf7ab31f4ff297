"""Differentiable stereo operators.

All operators take and return (batch, channel, height, width) tensors and
use zero padding at image borders.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError, ShapeError
from .tensor import Tensor, as_tensor, make_result

LEAKY_SLOPE = 0.1


# ---------------------------------------------------------------------------
# convolution kernels (plain numpy, direct tap accumulation)

def conv_out_extent(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def transposed_out_extent(n: int, k: int, stride: int, pad: int) -> int:
    return (n - 1) * stride - 2 * pad + k


def _tap(ref: np.ndarray, i: int, j: int, stride: int, ho: int, wo: int):
    return ref[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]


def conv_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Cross-correlation of x (b,c,H,W) with w (o,c,k,k)."""
    b, _, h, wd = x.shape
    o, _, k, _ = w.shape
    ho, wo = conv_out_extent(h, k, stride, pad), conv_out_extent(wd, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    acc = np.zeros((o, b, ho, wo))
    for i in range(k):
        for j in range(k):
            acc += np.tensordot(w[:, :, i, j], _tap(xp, i, j, stride, ho, wo), axes=([1], [1]))
    return np.ascontiguousarray(acc.transpose(1, 0, 2, 3))


def conv_input_grad(gy: np.ndarray, w: np.ndarray, stride: int, pad: int,
                    in_hw: tuple[int, int]) -> np.ndarray:
    """Adjoint of :func:`conv_forward` with respect to its input."""
    b, _, ho, wo = gy.shape
    _, c, k, _ = w.shape
    h, wd = in_hw
    hp = max(h + 2 * pad, stride * (ho - 1) + k)
    wp = max(wd + 2 * pad, stride * (wo - 1) + k)
    acc = np.zeros((c, b, hp, wp))
    for i in range(k):
        for j in range(k):
            _tap(acc, i, j, stride, ho, wo)[...] += np.tensordot(
                w[:, :, i, j], gy, axes=([0], [1]))
    acc = acc[:, :, pad:pad + h, pad:pad + wd]
    return np.ascontiguousarray(acc.transpose(1, 0, 2, 3))


def conv_weight_grad(x: np.ndarray, gy: np.ndarray, stride: int, pad: int, k: int) -> np.ndarray:
    """Gradient of :func:`conv_forward` with respect to its (o,c,k,k) weight."""
    _, _, ho, wo = gy.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    gw = np.empty((gy.shape[1], x.shape[1], k, k))
    for i in range(k):
        for j in range(k):
            gw[:, :, i, j] = np.tensordot(gy, _tap(xp, i, j, stride, ho, wo),
                                          axes=([0, 2, 3], [0, 2, 3]))
    return gw


# ---------------------------------------------------------------------------
# convolution layers

@dataclass
class ConvSpec:
    """Hyper-parameters and parameters of one (transposed) convolution.

    ``weight`` is (out, in, k, k) for a forward convolution and
    (in, out, k, k) when ``transposed`` is set.
    """

    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    transposed: bool = False
    weight: Tensor | None = None
    bias: Tensor | None = None
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.stride not in (1, 2):
            raise ContractError(f"stride must be 1 or 2, got {self.stride}")
        if self.in_channels < 1 or self.out_channels < 1 or self.kernel < 1:
            raise ContractError("channel counts and kernel extent must be positive")
        expected = self.weight_shape
        if self.weight is None:
            self.weight = Tensor(np.zeros(expected), requires_grad=True)
        elif tuple(self.weight.shape) != expected:
            raise ShapeError(f"weight shape {self.weight.shape} != expected {expected}")
        if self.bias is not None and tuple(self.bias.shape) != (self.out_channels,):
            raise ShapeError(f"bias shape {self.bias.shape} != ({self.out_channels},)")

    @property
    def weight_shape(self) -> tuple:
        k = self.kernel
        if self.transposed:
            return (self.in_channels, self.out_channels, k, k)
        return (self.out_channels, self.in_channels, k, k)

    @property
    def fan_in(self) -> int:
        taps = self.kernel * self.kernel
        if self.transposed:
            return max(1, self.in_channels * taps // (self.stride * self.stride))
        return self.in_channels * taps

    @classmethod
    def create(cls, in_channels, out_channels, kernel, stride=1, padding=None,
               transposed=False, rng=None, zero=False, bias=True, gain=1.0, name=""):
        """Build a spec with weights ~ N(0, gain^2 / fan_in) and zero bias."""
        if padding is None:
            padding = (kernel - 1) // 2
        spec = cls(in_channels, out_channels, kernel, stride, padding, transposed, name=name)
        if not zero:
            if rng is None:
                raise ContractError("an rng is required for random initialisation")
            std = gain / np.sqrt(spec.fan_in)
            spec.weight = Tensor(rng.standard_normal(spec.weight_shape) * std,
                                 requires_grad=True)
        if bias:
            spec.bias = Tensor(np.zeros(out_channels), requires_grad=True)
        return spec

    def parameters(self) -> list[Tensor]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        f = transposed_out_extent if self.transposed else conv_out_extent
        return (f(h, self.kernel, self.stride, self.padding),
                f(w, self.kernel, self.stride, self.padding))


def _check_input(x: Tensor, spec: ConvSpec) -> None:
    if x.ndim != 4:
        raise ShapeError(f"expected a (b,c,h,w) tensor, got shape {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, layer expects {spec.in_channels}")


def _add_bias(out: np.ndarray, bias: Tensor | None) -> np.ndarray:
    if bias is not None:
        out += bias.data[None, :, None, None]
    return out


def conv2d(x, spec: ConvSpec) -> Tensor:
    x = as_tensor(x)
    if spec.transposed:
        raise ContractError("conv2d called with a transposed spec")
    _check_input(x, spec)
    if min(spec.output_hw(x.shape[2], x.shape[3])) < 1:
        raise ShapeError(f"input {x.shape[2:]} too small for kernel {spec.kernel}")
    w, s, p = spec.weight, spec.stride, spec.padding
    out = _add_bias(conv_forward(x.data, w.data, s, p), spec.bias)
    in_hw = x.shape[2:]

    def bw(g):
        gx = conv_input_grad(g, w.data, s, p, in_hw) if x.requires_grad else None
        gw = conv_weight_grad(x.data, g, s, p, spec.kernel) if w.requires_grad else None
        grads = [gx, gw]
        if spec.bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, w) if spec.bias is None else (x, w, spec.bias)
    return make_result(out, parents, bw, "conv2d")


def transposed_conv2d(x, spec: ConvSpec) -> Tensor:
    """Adjoint of a forward convolution; k=4, stride 2, pad 1 doubles H and W."""
    x = as_tensor(x)
    if not spec.transposed:
        raise ContractError("transposed_conv2d needs a spec with transposed=True")
    _check_input(x, spec)
    w, s, p = spec.weight, spec.stride, spec.padding
    out_hw = spec.output_hw(x.shape[2], x.shape[3])
    if min(out_hw) < 1:
        raise ShapeError(f"transposed convolution of {x.shape[2:]} yields empty output")
    out = _add_bias(conv_input_grad(x.data, w.data, s, p, out_hw), spec.bias)

    def bw(g):
        gx = conv_forward(g, w.data, s, p) if x.requires_grad else None
        gw = conv_weight_grad(g, x.data, s, p, spec.kernel) if w.requires_grad else None
        grads = [gx, gw]
        if spec.bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, w) if spec.bias is None else (x, w, spec.bias)
    return make_result(out, parents, bw, "transposed_conv2d")


def leaky_relu(x, slope: float = LEAKY_SLOPE) -> Tensor:
    x = as_tensor(x)
    positive = x.data >= 0
    out = np.where(positive, x.data, slope * x.data)
    return make_result(out, (x,), lambda g: (np.where(positive, g, slope * g),), "leaky_relu")


# ---------------------------------------------------------------------------
# correlation

@dataclass(frozen=True)
class CorrelationSpec:
    """Search range ``max_displacement`` (D) and patch half-width ``kernel`` (k).

    Candidate shifts are 0..D-1 pixels along negative x: channel j pairs
    f1 at x with f2 at x - j.
    """

    max_displacement: int
    kernel: int = 0

    def __post_init__(self):
        if self.max_displacement < 1:
            raise ContractError("max_displacement must be at least 1")
        if self.kernel < 0:
            raise ContractError("kernel half-width must be non-negative")

    @property
    def displacement_set(self) -> list[int]:
        return list(range(self.max_displacement))


def _pair_shapes(f1: Tensor, f2: Tensor) -> None:
    if f1.shape != f2.shape or f1.ndim != 4:
        raise ShapeError(f"correlation inputs must share a (b,c,h,w) shape, got {f1.shape} and {f2.shape}")


def _shift_products(f1: Tensor, f2: Tensor, d: int) -> Tensor:
    """out[:, j, y, x] = sum_c f1[:, c, y, x] * f2[:, c, y, x - j] (zero outside)."""
    b, _, h, w = f1.shape
    a, c = f1.data, f2.data
    out = np.zeros((b, d, h, w))
    for j in range(min(d, w)):
        out[:, j, :, j:] = np.einsum("bchw,bchw->bhw", a[:, :, :, j:], c[:, :, :, :w - j])

    def bw(g):
        g1 = np.zeros_like(a) if f1.requires_grad else None
        g2 = np.zeros_like(c) if f2.requires_grad else None
        for j in range(min(d, w)):
            gj = g[:, j:j + 1, :, j:]
            if g1 is not None:
                g1[:, :, :, j:] += gj * c[:, :, :, :w - j]
            if g2 is not None:
                g2[:, :, :, :w - j] += gj * a[:, :, :, j:]
        return g1, g2

    return make_result(out, (f1, f2), bw, "correlation")


def _box_sum_np(x: np.ndarray, k: int) -> np.ndarray:
    if k == 0:
        return x.copy()
    h, w = x.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (k, k), (k, k)))
    out = np.zeros_like(x)
    for dy in range(2 * k + 1):
        for dx in range(2 * k + 1):
            out += xp[:, :, dy:dy + h, dx:dx + w]
    return out


def box_sum(x, k: int) -> Tensor:
    """Sum over a (2k+1)^2 window with zero padding. Self-adjoint."""
    x = as_tensor(x)
    return make_result(_box_sum_np(x.data, k), (x,), lambda g: (_box_sum_np(g, k),), "box_sum")


def correlation_patch(f1, f2, spec: CorrelationSpec) -> Tensor:
    """Patch correlation cost volume with D output channels."""
    f1, f2 = as_tensor(f1), as_tensor(f2)
    _pair_shapes(f1, f2)
    products = _shift_products(f1, f2, spec.max_displacement)
    return products if spec.kernel == 0 else box_sum(products, spec.kernel)


def correlation_pointwise(f1, f2, spec: CorrelationSpec, pre_conv: ConvSpec) -> Tensor:
    """Shared 3x3 stride-1 convolution on both inputs, then 1x1 correlation."""
    f1, f2 = as_tensor(f1), as_tensor(f2)
    _pair_shapes(f1, f2)
    if (pre_conv.kernel != 3 or pre_conv.stride != 1 or pre_conv.transposed
            or pre_conv.in_channels != pre_conv.out_channels):
        raise ContractError("point-wise correlation needs a 3x3, stride-1, channel-preserving pre-convolution")
    if spec.kernel != 0:
        raise ContractError("point-wise correlation uses kernel half-width 0")
    return correlation_patch(conv2d(f1, pre_conv), conv2d(f2, pre_conv), spec)


# ---------------------------------------------------------------------------
# warping and resampling

def warp_right_to_left(right, disparity) -> Tensor:
    """Sample ``right`` at (x - d(x, y), y) with bilinear weights and zero padding."""
    right, disparity = as_tensor(right), as_tensor(disparity)
    if right.ndim != 4 or disparity.ndim != 4 or disparity.shape[1] != 1:
        raise ShapeError(f"expected right (b,c,h,w) and disparity (b,1,h,w), got {right.shape} and {disparity.shape}")
    b, c, h, w = right.shape
    if disparity.shape[0] != b or disparity.shape[2:] != (h, w):
        raise ShapeError(f"disparity extent {disparity.shape} does not match image {right.shape}")

    xs = np.arange(w, dtype=np.float64)[None, None, None, :] - disparity.data
    x0f = np.floor(xs)
    frac = xs - x0f
    x0 = x0f.astype(np.int64)
    x1 = x0 + 1
    in0 = (x0 >= 0) & (x0 <= w - 1)
    in1 = (x1 >= 0) & (x1 <= w - 1)
    i0 = np.broadcast_to(np.clip(x0, 0, w - 1), right.shape)
    i1 = np.broadcast_to(np.clip(x1, 0, w - 1), right.shape)
    r0 = np.take_along_axis(right.data, i0, axis=3) * in0
    r1 = np.take_along_axis(right.data, i1, axis=3) * in1
    w0, w1 = 1.0 - frac, frac
    out = w0 * r0 + w1 * r1

    def bw(g):
        g_right = g_disp = None
        if right.requires_grad:
            rows = (np.arange(b * c * h) * w).reshape(b, c, h, 1)
            idx = np.concatenate([(rows + i0).ravel(), (rows + i1).ravel()])
            wts = np.concatenate([(g * w0 * in0).ravel(), (g * w1 * in1).ravel()])
            g_right = np.bincount(idx, weights=wts, minlength=b * c * h * w).reshape(b, c, h, w)
        if disparity.requires_grad:
            # d out / d xs = r1 - r0 and d xs / d d = -1
            g_disp = -(g * (r1 - r0)).sum(axis=1, keepdims=True)
        return g_right, g_disp

    return make_result(out, (right, disparity), bw, "warp")


@functools.lru_cache(maxsize=64)
def _resample_matrix(n: int, factor: int, mode: str) -> np.ndarray:
    if mode == "down-average":
        m = np.zeros((n // factor, n))
        for i in range(n // factor):
            m[i, i * factor:(i + 1) * factor] = 1.0 / factor
        return m
    # half-pixel centres, edge clamped
    m = np.zeros((n * factor, n))
    for i in range(n * factor):
        src = min(max((i + 0.5) / factor - 0.5, 0.0), n - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n - 1)
        t = src - lo
        m[i, lo] += 1.0 - t
        m[i, hi] += t
    return m


def resample(x, factor: int, mode: str = "down-average", value_scale: float = 1.0) -> Tensor:
    """Change spatial resolution by a power-of-two ``factor`` and multiply values by ``value_scale``.

    ``mode`` is ``"down-average"`` (block mean) or ``"up-bilinear"``.
    """
    x = as_tensor(x)
    if mode not in ("down-average", "up-bilinear"):
        raise ContractError(f"unknown resample mode {mode!r}")
    factor = int(factor)
    if factor < 1 or factor & (factor - 1):
        raise ContractError(f"factor must be a power of two, got {factor}")
    if x.ndim != 4:
        raise ShapeError(f"expected a (b,c,h,w) tensor, got shape {x.shape}")
    h, w = x.shape[2:]
    if mode == "down-average" and (h % factor or w % factor):
        raise ShapeError(f"extent {(h, w)} is not divisible by {factor}")
    if factor == 1:
        mh, mw = np.eye(h), np.eye(w)
    else:
        mh, mw = _resample_matrix(h, factor, mode), _resample_matrix(w, factor, mode)
    vs = float(value_scale)
    out = np.einsum("ih,bchw,jw->bcij", mh, x.data, mw, optimize=True) * vs
    return make_result(
        out, (x,),
        lambda g: (np.einsum("ih,bcij,jw->bchw", mh, g, mw, optimize=True) * vs,),
        "resample")
