"""scikit-learn style wrapper around network construction, training and inference."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .data import StereoSample
from .metrics import epe
from .network import build_fadnet, variant
from .tensor import Tensor
from .training import LossSchedule, OptimizerConfig, predict, train
from .validation import check_disparity_targets, check_stereo_batch, crop, pad_to_multiple


class FADNetRegressor(BaseEstimator, RegressorMixin):
    """Two-stage disparity regressor.

    ``X`` holds stereo pairs as (n, 6, h, w) arrays, left RGB then right RGB,
    in [0, 1]. ``y`` holds (n, h, w) disparities; non-finite entries are
    treated as invalid pixels. Training extents must be divisible by 64;
    prediction pads and crops any extent.
    """

    def __init__(self, variant="tiny", search_range=5, corr_stage=1, epochs=(20, 20, 20, 30),
                 lr=1e-3, batch_size=4, augment=False, refine=True, random_state=0):
        self.variant = variant
        self.search_range = search_range
        self.corr_stage = corr_stage
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.augment = augment
        self.refine = refine
        self.random_state = random_state

    def _config(self):
        return variant(self.variant, search_range=int(self.search_range),
                       corr_stage=int(self.corr_stage), seed=int(self.random_state))

    def fit(self, X, y):
        X = check_stereo_batch(X)
        disp, valid = check_disparity_targets(y, X.shape[0], X.shape[2:])
        cfg = self._config()
        net_c, net_s = build_fadnet(cfg)
        if not self.refine:
            net_s = None
        samples = [StereoSample(x[:3], x[3:], d, v, f"{i:06d}")
                   for i, (x, d, v) in enumerate(zip(X, disp, valid))]
        schedule = LossSchedule.default().with_epochs(list(self.epochs))
        self.log_ = train(net_c, net_s, samples, schedule,
                          OptimizerConfig(lr=self.lr, batch_size=self.batch_size),
                          seed=int(self.random_state), augment=self.augment)
        self.config_ = cfg
        self.net_c_, self.net_s_ = net_c, net_s
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "net_c_"):
            raise NotFittedError("call fit before predict")
        X = check_stereo_batch(X)
        padded, hw = pad_to_multiple(X, self.config_.divisor)
        pred = predict(self.net_c_, self.net_s_, Tensor(padded[:, :3]), Tensor(padded[:, 3:]))
        return crop(pred[:, 0], hw)

    def score(self, X, y, sample_weight=None) -> float:
        """Negative mean per-pair EPE, so larger is better."""
        pred = self.predict(X)
        disp, valid = check_disparity_targets(y, pred.shape[0], pred.shape[1:])
        values = [epe(p, d[0], v[0]) for p, d, v in zip(pred, disp, valid)]
        return -float(np.average(values, weights=sample_weight))
