"""Disparity maps, accuracy metrics and distribution histograms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateError, ShapeError

D1_PIXELS = 3.0
D1_RELATIVE = 0.05
DEFAULT_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)


@dataclass
class DisparityMap:
    """Per-pixel disparity with a validity mask; ``valid`` defaults to finiteness."""

    values: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ShapeError(f"disparity map must be (h, w), got {self.values.shape}")
        if self.valid is None:
            self.valid = np.isfinite(self.values)
        else:
            self.valid = np.asarray(self.valid, dtype=bool) & np.isfinite(self.values)
        if self.valid.shape != self.values.shape:
            raise ShapeError("validity mask must match the value extent")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _as_map(x) -> DisparityMap:
    return x if isinstance(x, DisparityMap) else DisparityMap(np.asarray(x, dtype=np.float64))


def _errors(pred, gt, mask=None):
    pred, gt = _as_map(pred), _as_map(gt)
    if pred.values.shape != gt.values.shape:
        raise ShapeError(f"prediction {pred.values.shape} and ground truth {gt.values.shape} differ")
    joint = pred.valid & gt.valid
    if mask is not None:
        joint &= np.asarray(mask, dtype=bool)
    if not joint.any():
        raise DegenerateError("no jointly valid pixels")
    p = pred.values[joint].astype(np.float64)
    g = gt.values[joint].astype(np.float64)
    return np.abs(p - g), g


def epe(pred, gt, mask=None) -> float:
    """Mean absolute disparity error over jointly valid pixels."""
    err, _ = _errors(pred, gt, mask)
    return float(err.mean())


def threshold_metrics(pred, gt, thresholds=DEFAULT_THRESHOLDS, mask=None) -> dict:
    """D1-all, bad-n fractions, rms and average error.

    A pixel counts toward D1 when its error exceeds both 3 px and 5% of the
    ground truth; bad-n counts errors strictly above n pixels.
    """
    err, g = _errors(pred, gt, mask)
    out = {
        "d1_all": float(np.mean((err > D1_PIXELS) & (err > D1_RELATIVE * np.abs(g)))),
        "rms": float(np.sqrt(np.mean(err * err))),
        "avg_error": float(err.mean()),
    }
    for t in thresholds:
        out[f"bad_{float(t):g}"] = float(np.mean(err > t))
    return out


@dataclass
class Histogram:
    bin_width: float
    bins: list  # (low, high, count), non-empty bins only, ascending

    @property
    def total(self) -> int:
        return sum(c for _, _, c in self.bins)

    def to_text(self) -> str:
        lines = ["# low high count"]
        lines += [f"{lo:g} {hi:g} {c}" for lo, hi, c in self.bins]
        return "\n".join(lines) + "\n"


def disparity_histogram(maps, bin_width: float) -> Histogram:
    """Counts of valid, non-zero disparities in bins [k*w, (k+1)*w)."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    counts: dict[int, int] = {}
    for m in maps:
        m = _as_map(m)
        v = m.values[m.valid].astype(np.float64)
        v = v[v != 0]
        if v.size == 0:
            continue
        keys, n = np.unique(np.floor(v / bin_width).astype(np.int64), return_counts=True)
        for k, c in zip(keys.tolist(), n.tolist()):
            counts[k] = counts.get(k, 0) + c
    bins = [(k * bin_width, (k + 1) * bin_width, counts[k]) for k in sorted(counts)]
    return Histogram(bin_width, bins)


def format_table(rows: list[dict], columns: list[str]) -> str:
    """Whitespace-aligned plain-text table."""
    cells = [[str(r.get(c, "")) if not isinstance(r.get(c), float) else f"{r[c]:.6f}"
              for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"
