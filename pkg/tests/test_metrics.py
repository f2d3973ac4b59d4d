import csv
import json
import math

import numpy as np
import pytest

from forestreg.bsr import read_raster
from forestreg.errors import InsufficientStandsError, UndefinedMetricError
from forestreg.metrics import (
    emit_artifacts,
    ioa,
    mae,
    pixel_metrics,
    r2,
    rmse,
    rrmse,
    stand_means,
    stand_metrics,
)


# ---------------------------------------------------------------------------
# Scalar-loop oracles: plain Python arithmetic, no numpy reductions.
# ---------------------------------------------------------------------------

def oracle_rmse(p, r):
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(p, r)) / len(p))


def oracle_mae(p, r):
    return sum(abs(a - b) for a, b in zip(p, r)) / len(p)


def oracle_rrmse(p, r):
    return 100.0 * oracle_rmse(p, r) / (sum(r) / len(r))


def oracle_r2(p, r):
    mean_r = sum(r) / len(r)
    sse = sum((a - b) ** 2 for a, b in zip(p, r))
    tot = sum((b - mean_r) ** 2 for b in r)
    return 1.0 - sse / tot


def oracle_ioa(p, r):
    mean_r = sum(r) / len(r)
    sse = sum((a - b) ** 2 for a, b in zip(p, r))
    den = sum((abs(a - mean_r) + abs(b - mean_r)) ** 2 for a, b in zip(p, r))
    return 100.0 * (1.0 - sse / den)


def random_vectors(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 1001))
    ref = rng.uniform(1.0, 30.0, n)
    pred = ref + rng.normal(0, 3.0, n)
    return pred, ref


class TestScalarOracles:
    @pytest.mark.parametrize("seed", range(50))
    def test_all_five_match_loops(self, seed):
        pred, ref = random_vectors(seed)
        p, r = pred.tolist(), ref.tolist()
        assert rmse(pred, ref) == pytest.approx(oracle_rmse(p, r), rel=1e-12)
        assert mae(pred, ref) == pytest.approx(oracle_mae(p, r), rel=1e-12)
        assert rrmse(pred, ref) == pytest.approx(oracle_rrmse(p, r), rel=1e-12)
        assert r2(pred, ref) == pytest.approx(oracle_r2(p, r), rel=1e-12, abs=1e-12)
        assert ioa(pred, ref) == pytest.approx(oracle_ioa(p, r), rel=1e-12)

    def test_hand_case(self):
        pred, ref = np.array([1.0, 3.0]), np.array([2.0, 2.0])
        assert rmse(pred, ref) == pytest.approx(1.0, abs=1e-15)
        assert rrmse(pred, ref) == pytest.approx(50.0, abs=1e-12)
        assert mae(pred, ref) == pytest.approx(1.0, abs=1e-15)


class TestPixelMetrics:
    def _maps(self, seed=0, n=3, size=8):
        rng = np.random.default_rng(seed)
        refs = [rng.uniform(2, 28, (size, size)) for _ in range(n)]
        preds = [r + rng.normal(0, 2, r.shape) for r in refs]
        masks = [rng.random((size, size)) > 0.3 for _ in range(n)]
        return preds, refs, masks

    def test_perfect_prediction(self):
        _, refs, masks = self._maps()
        report = pixel_metrics(refs, refs, masks)
        assert report.rmse == 0.0 and report.mae == 0.0
        assert report.r2 == 1.0 and report.ioa == 100.0

    def test_null_model_r2_zero(self):
        _, refs, masks = self._maps()
        valid = np.concatenate([r[m] for r, m in zip(refs, masks)])
        preds = [np.full_like(r, valid.mean()) for r in refs]
        report = pixel_metrics(preds, refs, masks)
        assert report.r2 == pytest.approx(0.0, abs=1e-12)

    def test_nonvalid_pixels_ignored(self):
        preds, refs, masks = self._maps(seed=1)
        base = pixel_metrics(preds, refs, masks)
        noisy_preds = [p.copy() for p in preds]
        for p, m in zip(noisy_preds, masks):
            p[~m] = 1e9
        for r, m in zip(refs, masks):
            r[~m] = np.nan
        assert pixel_metrics(noisy_preds, refs, masks) == base

    def test_constant_reference_raises(self):
        ref = np.full((4, 4), 7.0)
        mask = np.ones((4, 4), bool)
        with pytest.raises(UndefinedMetricError):
            pixel_metrics([ref + 1], [ref], [mask])

    def test_zero_mean_reference_raises(self):
        ref = np.array([[1.0, -1.0], [2.0, -2.0]])
        mask = np.ones((2, 2), bool)
        with pytest.raises(UndefinedMetricError):
            pixel_metrics([ref + 1], [ref], [mask])

    def test_permutation_invariance(self):
        preds, refs, masks = self._maps(seed=2, n=1)
        base = pixel_metrics(preds, refs, masks)
        rng = np.random.default_rng(0)
        perm = rng.permutation(preds[0].size)
        shuffled = pixel_metrics(
            [preds[0].ravel()[perm].reshape(preds[0].shape)],
            [refs[0].ravel()[perm].reshape(refs[0].shape)],
            [masks[0].ravel()[perm].reshape(masks[0].shape)],
        )
        for key in ("rmse", "rrmse", "mae", "r2", "ioa"):
            assert getattr(shuffled, key) == pytest.approx(getattr(base, key), rel=1e-12)

    def test_scale_covariance(self):
        preds, refs, masks = self._maps(seed=3, n=1)
        base = pixel_metrics(preds, refs, masks)
        c = 3.7
        scaled = pixel_metrics([c * preds[0]], [c * refs[0]], masks)
        assert scaled.rmse == pytest.approx(c * base.rmse, rel=1e-12)
        assert scaled.mae == pytest.approx(c * base.mae, rel=1e-12)
        assert scaled.rrmse == pytest.approx(base.rrmse, rel=1e-12)
        assert scaled.r2 == pytest.approx(base.r2, rel=1e-12)
        assert scaled.ioa == pytest.approx(base.ioa, rel=1e-12)

    def test_invariant_rmse_at_least_mae(self):
        for seed in range(10):
            pred, ref = random_vectors(seed)
            report = pixel_metrics([pred], [ref], [np.ones_like(pred, bool)])
            assert report.rmse >= report.mae >= 0.0
            assert report.r2 <= 1.0
            assert 0.0 <= report.ioa <= 100.0


class TestStandMetrics:
    def test_hand_case_two_stands(self):
        # stand means: pred (10, 20) vs ref (12, 18) -> rmse 2.0
        pred = np.array([[10.0, 10.0], [20.0, 20.0]])
        ref = np.array([[12.0, 12.0], [18.0, 18.0]])
        stands = np.array([[1, 1], [2, 2]], dtype=np.int32)
        mask = np.ones((2, 2), bool)
        report = stand_metrics([pred], [ref], [stands], [mask])
        assert report.rmse == pytest.approx(2.0, abs=1e-12)
        assert report.n == 2

    def test_constant_stands_match_pixel_metrics(self):
        rng = np.random.default_rng(4)
        ref = np.repeat(rng.uniform(5, 25, 4), 4).reshape(4, 4)
        stands = np.repeat(np.arange(1, 5), 4).reshape(4, 4).astype(np.int32)
        mask = np.ones((4, 4), bool)
        report = stand_metrics([ref], [ref], [stands], [mask])
        assert report.rmse == 0.0 and report.r2 == 1.0 and report.ioa == 100.0

    def test_zero_mean_noise_averages_out(self):
        rng = np.random.default_rng(5)
        ref = np.repeat(rng.uniform(5, 25, 8), 16).reshape(8, 16)
        stands = np.repeat(np.arange(1, 9), 16).reshape(8, 16).astype(np.int32)
        mask = np.ones((8, 16), bool)
        noise = rng.normal(0, 2, ref.shape)
        noise -= noise.mean(axis=1, keepdims=True)  # zero-mean within each stand
        pred = ref + noise
        stand_report = stand_metrics([pred], [ref], [stands], [mask])
        pixel_report = pixel_metrics([pred], [ref], [mask])
        assert stand_report.rmse < pixel_report.rmse
        assert stand_report.rmse == pytest.approx(0.0, abs=1e-9)

    def test_stand_zero_and_empty_stands_dropped(self):
        pred = np.array([[1.0, 2.0], [3.0, 4.0]])
        ref = pred + 1
        stands = np.array([[0, 1], [2, 3]], dtype=np.int32)
        mask = np.array([[True, True], [True, False]])
        ids, p_means, r_means, counts = stand_means([pred], [ref], [stands], [mask])
        assert ids.tolist() == [1, 2]
        assert counts.tolist() == [1, 1]

    def test_single_stand_raises(self):
        pred = np.ones((2, 2)) * 2
        ref = np.ones((2, 2))
        stands = np.ones((2, 2), dtype=np.int32)
        with pytest.raises(InsufficientStandsError):
            stand_metrics([pred], [ref], [stands], [np.ones((2, 2), bool)])


class TestEmitArtifacts:
    def _data(self):
        rng = np.random.default_rng(6)
        refs = [rng.uniform(5, 25, (8, 8)) for _ in range(2)]
        preds = [r + rng.normal(0, 1, r.shape) for r in refs]
        stands = [rng.integers(0, 4, (8, 8)).astype(np.int32) for _ in range(2)]
        masks = [rng.random((8, 8)) > 0.2 for _ in range(2)]
        return preds, refs, stands, masks

    def test_csv_rows_equal_valid_stands(self, tmp_path):
        preds, refs, stands, masks = self._data()
        paths = emit_artifacts(preds, refs, stands, masks, tmp_path)
        ids, _, _, _ = stand_means(preds, refs, stands, masks)
        with open(paths["scatter_csv"]) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(ids)
        assert set(int(r["stand_id"]) for r in rows) == set(ids.tolist())

    def test_prediction_maps_round_trip(self, tmp_path):
        preds, refs, stands, masks = self._data()
        paths = emit_artifacts(
            preds, refs, stands, masks, tmp_path, names=["a", "b"], nodata=-9999.0
        )
        back = read_raster(paths["prediction_maps"][0])
        valid = masks[0]
        assert np.allclose(back.values[0][valid], preds[0][valid].astype(np.float32))
        assert np.all(back.values[0][~valid] == -9999.0)

    def test_metrics_json_single_source_of_truth(self, tmp_path):
        preds, refs, stands, masks = self._data()
        paths = emit_artifacts(preds, refs, stands, masks, tmp_path)
        summary = json.loads(paths["metrics_json"].read_text())
        assert summary["pixel"] == pixel_metrics(preds, refs, masks).to_dict()
        assert summary["stand"] == stand_metrics(preds, refs, stands, masks).to_dict()
