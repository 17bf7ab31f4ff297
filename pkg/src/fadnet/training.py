"""Multi-scale smooth-L1 training with round-based loss-weight scheduling."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import data as data_mod
from .exceptions import ConfigError, DegenerateError, DivergenceError
from .metrics import epe as epe_metric
from .network import DisparityPyramid, RBNet, forward_fadnet
from .tensor import Tensor, as_tensor, backward, make_result, mul, no_grad, scale, sum_

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# losses

def smooth_l1(x) -> Tensor:
    """0.5 x^2 where |x| < 1, |x| - 0.5 elsewhere."""
    x = as_tensor(x)
    a = np.abs(x.data)
    inner = a < 1.0
    out = np.where(inner, 0.5 * x.data * x.data, a - 0.5)
    return make_result(out, (x,), lambda g: (g * np.where(inner, x.data, np.sign(x.data)),),
                       "smooth_l1")


def scale_loss(d_gt, d_hat, mask) -> Tensor:
    """Mean smooth-L1 error over valid pixels. Ground truth carries no gradient."""
    d_hat = as_tensor(d_hat)
    gt = d_gt.data if isinstance(d_gt, Tensor) else np.asarray(d_gt, dtype=np.float64)
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask).astype(bool)
    if gt.shape != d_hat.shape or mask.shape != d_hat.shape:
        raise ConfigError(f"scale_loss shapes differ: gt {gt.shape}, pred {d_hat.shape}, mask {mask.shape}")
    count = int(mask.sum())
    if count == 0:
        raise DegenerateError("scale_loss has no valid pixels")
    clean = np.where(mask, gt, 0.0)
    per_pixel = smooth_l1(Tensor(clean) - d_hat)
    return scale(sum_(mul(per_pixel, Tensor(mask.astype(np.float64)))), 1.0 / count)


def ground_truth_pyramid(disparity: np.ndarray, valid: np.ndarray, scales: int):
    """Per-scale targets in scale-local pixel units.

    Each coarse pixel is the mean of the valid fine pixels it covers, divided
    by 2^s; it is valid when at least one of them is. With a fully valid map
    this is plain average pooling.
    """
    valid = np.asarray(valid, dtype=bool)
    disparity = np.where(valid, disparity, 0.0)
    gts, masks = [], []
    b, c, h, w = disparity.shape
    for s in range(scales):
        f = 2 ** s
        if h % f or w % f:
            raise ConfigError(f"extent {(h, w)} not divisible by {f}")
        total = disparity.reshape(b, c, h // f, f, w // f, f).sum(axis=(3, 5))
        count = valid.reshape(b, c, h // f, f, w // f, f).sum(axis=(3, 5))
        gts.append(np.where(count > 0, total / np.maximum(count, 1), 0.0) / f)
        masks.append(count > 0)
    return gts, masks


def total_loss(pyramid, gt_pyramid: Sequence, masks: Sequence, weights: Sequence[float]) -> Tensor:
    """Weighted sum of per-scale losses; zero-weight scales are skipped entirely."""
    preds = pyramid.d_hat if isinstance(pyramid, DisparityPyramid) else list(pyramid)
    if len(weights) != len(preds) or len(gt_pyramid) != len(preds) or len(masks) != len(preds):
        raise ConfigError(f"{len(weights)} weights, {len(gt_pyramid)} targets and {len(masks)} masks "
                          f"for {len(preds)} scales")
    total = None
    for w, pred, gt, mask in zip(weights, preds, gt_pyramid, masks):
        if w == 0:
            continue
        term = scale(scale_loss(gt, pred, mask), w)
        total = term if total is None else total + term
    return Tensor(0.0) if total is None else total


# ---------------------------------------------------------------------------
# schedule

@dataclass(frozen=True)
class Round:
    weights: tuple
    epochs: int


@dataclass
class LossSchedule:
    rounds: list

    @classmethod
    def default(cls) -> "LossSchedule":
        """Four coarse-to-fine rounds of 20, 20, 20 and 30 epochs."""
        return cls([
            Round((0.32, 0.16, 0.08, 0.04, 0.02, 0.01, 0.005), 20),
            Round((0.6, 0.32, 0.08, 0.04, 0.02, 0.01, 0.005), 20),
            Round((0.8, 0.16, 0.04, 0.02, 0.01, 0.005, 0.0025), 20),
            Round((1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0), 30),
        ])

    @property
    def total_epochs(self) -> int:
        return sum(r.epochs for r in self.rounds)

    def boundaries(self) -> list[int]:
        """Cumulative epoch at which each round ends."""
        return list(np.cumsum([r.epochs for r in self.rounds]).tolist())

    def round_of(self, epoch: int) -> int:
        """1-based round index containing 1-based ``epoch``."""
        for i, end in enumerate(self.boundaries(), 1):
            if epoch <= end:
                return i
        raise ConfigError(f"epoch {epoch} is past the schedule ({self.total_epochs} epochs)")

    def with_epochs(self, epochs: Sequence[int]) -> "LossSchedule":
        if len(epochs) != len(self.rounds):
            raise ConfigError("one epoch count per round is required")
        return LossSchedule([Round(r.weights, int(e)) for r, e in zip(self.rounds, epochs)])


# ---------------------------------------------------------------------------
# optimiser

@dataclass
class OptimizerConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4


class Adam:
    """Adaptive-moment updates; gradients are cleared by the caller."""

    def __init__(self, params: Sequence[Tensor], cfg: OptimizerConfig):
        self.params = list(params)
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p.data = p.data - c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# log

COLUMNS = ("epoch", "round", "train_loss", "train_epe", "test_epe", "boundary")


@dataclass
class EpochRecord:
    epoch: int
    round: int
    train_loss: float
    train_epe: float
    test_epe: float
    boundary: bool


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def boundary_records(self) -> list[EpochRecord]:
        return [r for r in self.records if r.boundary]

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]

    def to_text(self) -> str:
        lines = ["# fadnet training log v1", "# " + " ".join(COLUMNS)]
        for r in self.records:
            lines.append(f"{r.epoch} {r.round} {r.train_loss!r} {r.train_epe!r} "
                         f"{r.test_epe!r} {int(r.boundary)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainingLog":
        out = cls()
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            e, rd, loss, tr, te, bd = line.split()
            out.append(EpochRecord(int(e), int(rd), float(loss), float(tr), float(te), bd == "1"))
        return out

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())


# ---------------------------------------------------------------------------
# loop

def predict(net_c: RBNet, net_s: RBNet | None, left: Tensor, right: Tensor) -> np.ndarray:
    """Full-resolution disparity, clamped at zero, as float32 (the on-disk precision)."""
    with no_grad():
        pyramid = forward_fadnet(left, right, net_c, net_s)
    return np.maximum(pyramid.d_hat[0].data, 0.0).astype(np.float32)


def evaluate(net_c: RBNet, net_s: RBNet | None, samples: Sequence, batch_size: int = 8) -> float:
    """Unweighted mean of per-sample full-resolution EPE."""
    if not samples:
        return float("nan")
    values = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        left, right, _, _ = data_mod.stack(chunk)
        pred = predict(net_c, net_s, left, right)
        for k, sample in enumerate(chunk):
            values.append(epe_metric(pred[k, 0], sample.disparity[0], sample.valid[0]))
    return float(np.mean(values))


def train(net_c: RBNet, net_s: RBNet | None, dataset: Sequence, schedule: LossSchedule | None = None,
          optimizer_cfg: OptimizerConfig | None = None, seed: int = 0, test_set: Sequence = (),
          callback: Callable[[EpochRecord], None] | None = None, augment: bool = False) -> TrainingLog:
    """Run every schedule round in order and log EPE after each epoch.

    ``net_s=None`` trains RB-NetC alone. Batches are drawn from a per-run
    permutation seeded by ``seed``; ``augment`` applies random vertical flips
    and channel permutations to each drawn sample.
    """
    if not dataset:
        raise ConfigError("training needs a non-empty dataset")
    schedule = schedule or LossSchedule.default()
    optimizer_cfg = optimizer_cfg or OptimizerConfig()
    divisor = net_c.cfg.divisor
    for s in dataset:
        if s.shape[0] % divisor or s.shape[1] % divisor:
            raise ConfigError(f"sample extent {s.shape} must be divisible by {divisor}")
    nets = [net_c] if net_s is None else [net_c, net_s]
    params = [p for net in nets for p in net.parameters()]
    opt = Adam(params, optimizer_cfg)
    rng = np.random.default_rng(seed)
    scales = net_c.cfg.scales
    bs = max(1, int(optimizer_cfg.batch_size))
    boundaries = set(schedule.boundaries())
    out = TrainingLog()

    for epoch in range(1, schedule.total_epochs + 1):
        rnd = schedule.round_of(epoch)
        weights = schedule.rounds[rnd - 1].weights
        if len(weights) != scales:
            raise ConfigError(f"round {rnd} has {len(weights)} weights for {scales} scales")
        order = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            batch = [dataset[i] for i in idx]
            if augment:
                batch = [data_mod.augment(b, rng) for b in batch]
            left, right, disp, valid = data_mod.stack(batch)
            gts, masks = ground_truth_pyramid(disp, valid, scales)
            pyramid = forward_fadnet(left, right, net_c, net_s)
            loss = total_loss(pyramid, gts, masks, weights)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch starting with sample {int(idx[0])}",
                    epoch=epoch, sample_index=int(idx[0]))
            opt.zero_grad()
            backward(loss)
            opt.step()
            opt.zero_grad()
            losses.append(value)
        record = EpochRecord(epoch, rnd, float(np.mean(losses)),
                             evaluate(net_c, net_s, dataset), evaluate(net_c, net_s, test_set),
                             epoch in boundaries)
        out.append(record)
        log.info("epoch %d round %d loss %.5f train_epe %.4f test_epe %.4f", epoch, rnd,
                 record.train_loss, record.train_epe, record.test_epe)
        if callback is not None:
            callback(record)
    return out
