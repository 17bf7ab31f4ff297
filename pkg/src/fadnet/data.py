"""Synthetic stereo pairs with exact ground-truth disparity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError, ShapeError
from .tensor import Tensor

LEVELS = 255.0


@dataclass
class StereoSample:
    """One rectified pair: images (3,H,W) in [0,1], disparity and validity (1,H,W)."""

    left: np.ndarray
    right: np.ndarray
    disparity: np.ndarray
    valid: np.ndarray
    name: str = ""

    def __post_init__(self):
        if self.left.shape != self.right.shape or self.left.ndim != 3:
            raise ShapeError(f"left/right must be equal (c,h,w) arrays, got {self.left.shape} and {self.right.shape}")
        expected = (1,) + self.left.shape[1:]
        if self.disparity.shape != expected or self.valid.shape != expected:
            raise ShapeError(f"disparity and mask must be {expected}")
        self.valid = self.valid.astype(bool)

    @property
    def shape(self) -> tuple[int, int]:
        return self.left.shape[1:]


@dataclass
class _Layer:
    disparity: float
    texture: np.ndarray  # (3, H, Wext), indexed in left-image coordinates
    box: tuple | None  # (y0, y1, x0, x1); None covers the whole frame

    def covers(self, ys, xs):
        if self.box is None:
            return np.ones(np.broadcast(ys, xs).shape, dtype=bool)
        y0, y1, x0, x1 = self.box
        return (ys >= y0) & (ys < y1) & (xs >= x0) & (xs < x1)

    def sample(self, xs):
        """Linear interpolation of the texture along x at (possibly fractional) ``xs``."""
        width = self.texture.shape[2]
        xs = np.clip(xs, 0, width - 1)
        lo = np.floor(xs).astype(np.int64)
        hi = np.minimum(lo + 1, width - 1)
        t = xs - lo
        rows = np.arange(self.texture.shape[1])[:, None]
        lo_v = self.texture[:, rows, lo]
        hi_v = self.texture[:, rows, hi]
        return np.where(t == 0, lo_v, (1 - t) * lo_v + t * hi_v)


def _texture(rng, mode, h, w):
    if mode == "dots":
        base = rng.random((h, w))
        tint = rng.uniform(0.6, 1.0, size=(3, 1, 1))
        tex = base[None] * tint
    else:
        # smooth blobs plus fine grain, so flat boxes still carry matchable detail
        coarse = rng.random((3, h // 8 + 2, w // 8 + 2))
        ys = np.linspace(0, coarse.shape[1] - 1.001, h)
        xs = np.linspace(0, coarse.shape[2] - 1.001, w)
        y0, x0 = ys.astype(int), xs.astype(int)
        ty, tx = (ys - y0)[:, None], (xs - x0)[None, :]
        c = coarse
        smooth = ((1 - ty) * (1 - tx) * c[:, y0][:, :, x0] + ty * (1 - tx) * c[:, y0 + 1][:, :, x0]
                  + (1 - ty) * tx * c[:, y0][:, :, x0 + 1] + ty * tx * c[:, y0 + 1][:, :, x0 + 1])
        tex = 0.7 * smooth + 0.3 * rng.random((1, h, w))
    return np.round(np.clip(tex, 0.0, 1.0) * LEVELS) / LEVELS


def generate_synthetic_pair(rng_seed: int, height: int, width: int, max_disparity: float,
                            mode: str = "dots", subpixel: bool = False,
                            n_objects: int | None = None) -> StereoSample:
    """Random textured background plus rectangles at piecewise-constant disparities.

    Disparities are integers in [0, max_disparity] unless ``subpixel`` is set.
    The right view is rendered by shifting every layer by its disparity;
    left pixels hidden in the right view, or shifted off its left border, are
    marked invalid. With integer disparities, warping the right view by the
    ground truth reproduces the left view exactly on valid pixels.
    """
    if mode not in ("dots", "boxes"):
        raise ContractError(f"mode must be 'dots' or 'boxes', got {mode!r}")
    if max_disparity < 0 or not max_disparity < width / 4:
        raise ContractError(f"max_disparity must lie in [0, width/4), got {max_disparity} for width {width}")
    rng = np.random.default_rng(rng_seed)
    ext = width + int(np.ceil(max_disparity)) + 2

    def draw_disparity(low, high):
        if subpixel:
            return float(rng.uniform(low, high))
        return float(rng.integers(int(np.ceil(low)), int(high) + 1))

    # the background is the farthest surface; every object sits in front of it
    background = draw_disparity(0.0, max_disparity / 2)
    layers = [_Layer(background, _texture(rng, mode, height, ext), None)]
    count = int(rng.integers(2, 5)) if n_objects is None else n_objects
    for _ in range(count):
        bh = int(rng.integers(max(2, height // 8), max(3, height // 2) + 1))
        bw = int(rng.integers(max(2, width // 8), max(3, width // 2) + 1))
        y0 = int(rng.integers(0, height - bh + 1))
        x0 = int(rng.integers(0, width - bw + 1))
        layers.append(_Layer(draw_disparity(background, max_disparity), _texture(rng, mode, height, ext),
                             (y0, y0 + bh, x0, x0 + bw)))
    # painter order: nearer (larger disparity) layers are drawn last
    layers.sort(key=lambda layer: layer.disparity)

    ys = np.arange(height)[:, None]
    xs = np.arange(width, dtype=np.float64)[None, :]
    left = np.zeros((3, height, width))
    right = np.zeros((3, height, width))
    disparity = np.zeros((height, width))
    left_id = np.zeros((height, width), dtype=np.int64)
    right_id = np.zeros((height, width), dtype=np.int64)
    for idx, layer in enumerate(layers):
        hit = layer.covers(ys, xs)
        left = np.where(hit[None], layer.texture[:, :, :width], left)
        disparity = np.where(hit, layer.disparity, disparity)
        left_id = np.where(hit, idx, left_id)
        src = xs + layer.disparity
        hit_r = layer.covers(ys, src)
        right = np.where(hit_r[None], layer.sample(np.broadcast_to(src, (height, width))), right)
        right_id = np.where(hit_r, idx, right_id)

    # a left pixel is valid when its surface is the one seen at x - d in the right view
    target = xs - disparity
    lo = np.floor(target).astype(np.int64)
    hi = np.ceil(target).astype(np.int64)
    inside = lo >= 0
    rows = np.broadcast_to(ys, (height, width))
    lo_c, hi_c = np.clip(lo, 0, width - 1), np.clip(hi, 0, width - 1)
    valid = inside & (right_id[rows, lo_c] == left_id) & (right_id[rows, hi_c] == left_id)
    return StereoSample(left, right, disparity[None], valid[None])


def generate_dataset(count: int, height: int, width: int, max_disparity: float,
                     seed: int = 0, mode: str = "dots", subpixel: bool = False) -> list[StereoSample]:
    """``count`` pairs with per-sample seeds ``seed + i``."""
    out = []
    for i in range(count):
        sample = generate_synthetic_pair(seed + i, height, width, max_disparity, mode, subpixel)
        sample.name = f"{i:06d}"
        out.append(sample)
    return out


def augment(sample: StereoSample, rng: np.random.Generator) -> StereoSample:
    """Random vertical flip and colour-channel permutation, applied to both views.

    Neither changes the epipolar geometry, so disparity and validity carry over.
    """
    rows = slice(None, None, -1) if rng.random() < 0.5 else slice(None)
    perm = rng.permutation(sample.left.shape[0])
    return StereoSample(sample.left[perm][:, rows], sample.right[perm][:, rows],
                        sample.disparity[:, rows], sample.valid[:, rows], sample.name)


def stack(samples: list[StereoSample]) -> tuple[Tensor, Tensor, np.ndarray, np.ndarray]:
    """Batch samples into (left, right) tensors plus disparity and mask arrays."""
    left = Tensor(np.stack([s.left for s in samples]))
    right = Tensor(np.stack([s.right for s in samples]))
    disp = np.stack([s.disparity for s in samples])
    valid = np.stack([s.valid for s in samples])
    return left, right, disp, valid
