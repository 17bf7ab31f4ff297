"""Input checks and padding helpers shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeError


def check_image(image, name: str = "image") -> np.ndarray:
    """Return ``image`` as a finite float64 (3, h, w) array."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"{name} must be a (3, h, w) array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_stereo_batch(X) -> np.ndarray:
    """Validate a batch of pairs stored as (n, 6, h, w): left channels, then right.

    A single (6, h, w) pair is promoted to a batch of one.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1] != 6:
        raise ShapeError(f"stereo input must be (n, 6, h, w), got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ShapeError("stereo input holds no pairs")
    if not np.isfinite(arr).all():
        raise ValueError("stereo input contains non-finite values")
    return arr


def check_disparity_targets(y, n: int, hw: tuple) -> tuple[np.ndarray, np.ndarray]:
    """Targets as (n, 1, h, w) values plus validity; non-finite entries are invalid."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[:, None]
    expected = (n, 1) + tuple(hw)
    if arr.shape != expected:
        raise ShapeError(f"disparity targets must be {expected} or {(n,) + tuple(hw)}, got {arr.shape}")
    valid = np.isfinite(arr)
    return np.where(valid, arr, 0.0), valid


def padded_extent(n: int, multiple: int) -> int:
    return -(-n // multiple) * multiple


def pad_to_multiple(x: np.ndarray, multiple: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad the last two axes at the bottom and right up to ``multiple``.

    Returns the padded array and the original (h, w) for :func:`crop`.
    """
    h, w = x.shape[-2:]
    ph, pw = padded_extent(h, multiple) - h, padded_extent(w, multiple) - w
    if ph == 0 and pw == 0:
        return x, (h, w)
    widths = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
    mode = "reflect" if min(h, w) > 1 else "edge"
    return np.pad(x, widths, mode=mode), (h, w)


def crop(x: np.ndarray, hw: tuple[int, int]) -> np.ndarray:
    return x[..., :hw[0], :hw[1]]
