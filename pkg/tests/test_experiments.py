import numpy as np
import pytest

from pcaudio.data import FeatureConfig, FeatureSet, ToySpec, featurize_for, synth_dataset
from pcaudio.errors import ParameterError
from pcaudio.experiments import (
    block_macs,
    cost_table,
    degradations,
    linear_fit_r2,
    loglog_slope,
    sweep_repr,
    sweep_subsample,
    train_subsampled,
)
from pcaudio.models import ModelSpec, build_model, preset
from pcaudio.pointcloud import PointCloud
from pcaudio.train import TrainConfig

BANDS = [[300, 1500], [2500, 3700]]


@pytest.fixture(scope="module")
def clips():
    return synth_dataset(ToySpec(bands=BANDS, clips_per_class=6, duration=0.1, sample_rate=8000))


def small_fst():
    return build_model(ModelSpec(kind="FST", n_classes=2, hidden=4, heads=2, inducing=4))


def small_fb(bins=65):
    return build_model(ModelSpec(kind="FB", n_classes=2, fb_input=bins, fb_hidden=(4,), fb_dropout=0.0))


class TestSweepRepr:
    def test_grid_and_unsupported_cells(self, clips):
        fc = FeatureConfig(n_fft=128, max_examples_per_clip=1)
        rows = sweep_repr(small_fb(), clips[1], fc, [64, 128, 256], [8000, 16000])
        assert [(r["n_fft"], r["sample_rate"]) for r in rows] == [
            (64, 8000), (128, 8000), (256, 8000), (64, 16000), (128, 16000), (256, 16000)]
        assert [r["status"] for r in rows] == ["ok", "ok", "unsupported"] * 2
        assert all(r["accuracy"] is None for r in rows if r["status"] == "unsupported")

    def test_cloud_model_supports_every_cell(self, clips):
        rows = sweep_repr(small_fst(), clips[1], FeatureConfig(n_fft=128, max_examples_per_clip=1), [64, 256],
                          [8000, 16000])
        assert all(r["status"] == "ok" and r["n_examples"] == len(clips[1]) for r in rows)

    def test_degradations(self):
        rows = [
            {"n_fft": 1, "sample_rate": 1, "status": "ok", "accuracy": 0.9},
            {"n_fft": 2, "sample_rate": 1, "status": "ok", "accuracy": 0.7},
            {"n_fft": 3, "sample_rate": 1, "status": "unsupported", "accuracy": None},
        ]
        assert degradations(rows, (1, 1)) == pytest.approx({(1, 1): 0.0, (2, 1): 0.2})


class TestSweepSubsample:
    def test_rows_and_deterministic_std(self, clips):
        model = small_fst()
        data = featurize_for(model, clips[1], FeatureConfig(n_fft=64, max_examples_per_clip=1))
        rows = sweep_subsample(model, data, [0.25, 1.0], ["topk", "random"], repeats=3)
        assert [(r["strategy"], r["fraction"], r["repeats"]) for r in rows] == [
            ("topk", 0.25, 1), ("topk", 1.0, 1), ("random", 0.25, 3), ("random", 1.0, 3)]
        assert rows[0]["std"] == 0.0
        assert rows[1]["mean"] == rows[3]["mean"] and rows[3]["std"] == 0.0

    def test_seeded(self, clips):
        model = small_fst()
        data = featurize_for(model, clips[1], FeatureConfig(n_fft=64, max_examples_per_clip=1))
        assert sweep_subsample(model, data, [0.2], ["random"], 4, seed=1) == \
            sweep_subsample(model, data, [0.2], ["random"], 4, seed=1)

    def test_baseline_gets_zeroed_bins(self, clips):
        model = small_fb(33)
        data = featurize_for(model, clips[1], FeatureConfig(n_fft=64, max_examples_per_clip=1))
        rows = sweep_subsample(model, data, [0.1, 1.0], ["topk"], 1)
        assert len(rows) == 2 and all(0.0 <= r["mean"] <= 1.0 for r in rows)

    def test_gradient_needs_3d(self, clips):
        model = small_fst()
        data = featurize_for(model, clips[1], FeatureConfig(n_fft=64, max_examples_per_clip=1))
        with pytest.raises(ParameterError, match="3-D"):
            sweep_subsample(model, data, [0.5], ["gradient"])
        with pytest.raises(ParameterError):
            sweep_subsample(model, data, [0.5], ["median"])


class TestTrainSubsampled:
    def test_both_runs_reported(self):
        r = np.random.default_rng(0)
        labels = np.arange(16) % 2
        clouds = [PointCloud(r.normal(size=(32, 2)) + [0, 2 * lab], int(lab)) for lab in labels]
        data = FeatureSet("cloud", clouds, labels, np.arange(16))
        res = train_subsampled(ModelSpec(kind="FST", n_classes=2, hidden=4, heads=2, inducing=4), data, data,
                               TrainConfig(epochs=2, batch_size=8), fraction=0.25)
        assert set(res) == {"full", "subsampled"}
        assert all(set(v) == {"accuracy", "final_loss", "epoch_seconds", "model"} for v in res.values())

    def test_rejects_vectors(self):
        data = FeatureSet("vector", np.zeros((4, 3)), np.array([0, 1, 0, 1]), np.arange(4))
        with pytest.raises(ParameterError):
            train_subsampled(ModelSpec(kind="FB", n_classes=2, fb_input=3), data, data, TrainConfig(epochs=1))


class TestCost:
    def test_isab_linear_sab_quadratic(self):
        sizes = [64, 128, 256, 512]
        assert linear_fit_r2(sizes, block_macs("isab", sizes)) > 0.999
        assert abs(loglog_slope(sizes, block_macs("sab", sizes)) - 2.0) < 0.1

    def test_fit_helpers(self):
        x = np.array([1.0, 2.0, 4.0, 8.0])
        assert linear_fit_r2(x, 3 * x + 1) == pytest.approx(1.0)
        assert loglog_slope(x, 5 * x ** 2) == pytest.approx(2.0)
        assert linear_fit_r2(x, np.ones(4)) == 1.0

    def test_unknown_block(self):
        with pytest.raises(ParameterError):
            block_macs("mlp", [4])

    def test_cost_table(self):
        rows = cost_table({"fst": build_model(preset("fst-toy")), "fb": build_model(preset("fb-toy"))},
                          {"fst": 64})
        by = {r["model"]: r for r in rows}
        assert by["fb"]["params"] == 538 and by["fb"]["n_points"] is None
        assert by["fst"]["training_macs"] > by["fst"]["inference_macs"] > 0
