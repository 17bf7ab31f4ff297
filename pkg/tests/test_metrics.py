import numpy as np
import pytest

import oracles
from fadnet.exceptions import DegenerateError, ShapeError
from fadnet.metrics import DisparityMap, disparity_histogram, epe, format_table, threshold_metrics

N_RANDOM = 20


def test_epe_examples():
    gt = np.random.default_rng(0).uniform(0, 50, (8, 8))
    assert epe(gt, gt) == 0.0
    assert epe(gt + 1.83, gt) == pytest.approx(1.83, abs=1e-12)


def test_epe_matches_oracle():
    rng = np.random.default_rng(1)
    for _ in range(N_RANDOM):
        pred, gt = rng.uniform(0, 10, (4, 4)), rng.uniform(0, 10, (4, 4))
        valid = rng.random((4, 4)) > 0.3
        valid[0, 0] = True
        got = epe(DisparityMap(pred), DisparityMap(gt, valid))
        assert abs(got - oracles.epe(pred, gt, valid)) <= 1e-12


def test_threshold_metrics_match_oracle():
    rng = np.random.default_rng(2)
    thresholds = (0.5, 1.0, 2.0, 4.0)
    for _ in range(N_RANDOM):
        shape = (int(rng.integers(1, 9)), int(rng.integers(1, 9)))
        gt = rng.uniform(0, 120, shape)
        pred = gt + rng.normal(0, 4, shape)
        valid = rng.random(shape) > 0.2
        valid.flat[0] = True
        got = threshold_metrics(DisparityMap(pred), DisparityMap(gt, valid), thresholds)
        want = oracles.threshold_metrics(pred, gt, valid, thresholds)
        assert got.keys() == want.keys()
        for k in want:
            assert abs(got[k] - want[k]) <= 1e-12, k


def test_perfect_prediction_zeroes_every_metric():
    gt = np.random.default_rng(3).uniform(1, 9, (5, 5))
    assert all(v == 0.0 for v in threshold_metrics(gt, gt).values())


@pytest.mark.parametrize("pred,expected", [
    (103.5, 0.0),  # above 3 px, below 5%
    (104.0, 0.0),  # above 3 px, below 5%
    (105.0, 0.0),  # exactly 5% is not an outlier
    (105.5, 1.0),
    (94.0, 1.0),
])
def test_d1_rule_boundaries(pred, expected):
    assert threshold_metrics(np.array([[pred]]), np.array([[100.0]]))["d1_all"] == expected


def test_d1_needs_both_conditions_at_small_disparity():
    # at gt 10 the 3 px condition is the binding one
    assert threshold_metrics(np.array([[13.5]]), np.array([[10.0]]))["d1_all"] == 1.0
    assert threshold_metrics(np.array([[12.9]]), np.array([[10.0]]))["d1_all"] == 0.0


def test_bad_n_is_strict():
    m = threshold_metrics(np.array([[2.0, 3.0]]), np.array([[1.0, 1.0]]), thresholds=(1.0, 2.0))
    assert m["bad_1"] == 0.5 and m["bad_2"] == 0.0


def test_symmetry_and_power_mean():
    rng = np.random.default_rng(4)
    for _ in range(N_RANDOM):
        a, b = rng.uniform(0, 20, (6, 7)), rng.uniform(0, 20, (6, 7))
        assert epe(a, b) == epe(b, a)
        m = threshold_metrics(a, b)
        assert m["rms"] >= m["avg_error"]


def test_invalid_pixels_ignored():
    gt = DisparityMap(np.array([[1.0, 1000.0]]), np.array([[True, False]]))
    assert epe(np.array([[2.0, 0.0]]), gt) == 1.0
    assert epe(np.array([[2.0, np.nan]]), np.array([[1.0, 5.0]])) == 1.0


def test_metric_errors():
    with pytest.raises(DegenerateError):
        epe(np.array([[1.0]]), DisparityMap(np.array([[1.0]]), np.array([[False]])))
    with pytest.raises(ShapeError):
        epe(np.zeros((2, 2)), np.zeros((2, 3)))


def test_histogram_excludes_zeros():
    assert disparity_histogram([np.zeros((4, 4))], 1.0).bins == []
    h = disparity_histogram([np.full((3, 3), 5.0)], 2.0)
    assert h.bins == [(4.0, 6.0, 9)]


def test_histogram_accumulates_and_skips_invalid():
    a = DisparityMap(np.array([[0.5, 1.5, 0.0]]), np.array([[True, True, True]]))
    b = DisparityMap(np.array([[1.2, 7.0]]), np.array([[True, False]]))
    h = disparity_histogram([a, b], 1.0)
    assert h.bins == [(0.0, 1.0, 1), (1.0, 2.0, 2)]
    assert h.to_text().splitlines()[1:] == ["0 1 1", "1 2 2"]


def test_format_table_alignment():
    text = format_table([{"name": "a", "epe": 1.5}, {"name": "bbbb", "epe": 0.25}], ["name", "epe"])
    lines = text.splitlines()
    assert lines[0].split() == ["name", "epe"]
    assert lines[1].split() == ["a", "1.500000"]
    assert len({line.index(line.split()[1]) for line in lines}) == 1
