"""Evaluation sweeps: analysis settings, inference-time subsampling, training-time
subsampling, and how block cost scales with cloud size."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .data import FeatureConfig, FeatureSet, featurize_for
from .errors import ParameterError, UnsupportedInput
from .models import ISAB, SAB, Classifier, ModelSpec, build_model, zero_out
from .pointcloud import PointCloud, subsample
from .signal import resample
from .train import TrainConfig, evaluate, predict, report_from, train

logger = logging.getLogger(__name__)

STRATEGIES = ("topk", "random", "gradient")


# ---------------------------------------------------------------------------
# Window size / sample rate sweep
# ---------------------------------------------------------------------------


def _repr_cell(model, clips, fc, n_fft, sr, train_n_fft):
    row = {"n_fft": int(n_fft), "sample_rate": int(sr)}
    cell_fc = replace(fc, n_fft=int(n_fft), hop=None)
    try:
        if model.input_kind != "cloud" and n_fft > train_n_fft:
            raise UnsupportedInput(f"window {n_fft} exceeds training window {train_n_fft}")
        cell_clips = [resample(c, sr) for c in clips]
        data = featurize_for(model, cell_clips, cell_fc, train_n_fft)
    except UnsupportedInput:
        row.update(status="unsupported", accuracy=None, n_examples=0)
        return row
    rep = evaluate(model, data)
    row.update(status="ok", accuracy=rep.accuracy, n_examples=rep.n_examples)
    return row


def sweep_repr(
    model: Classifier,
    clips,
    fc: FeatureConfig,
    window_sizes: Sequence[int],
    sample_rates: Sequence[int],
    jobs: int = 1,
) -> list[dict]:
    """Accuracy of a trained model over every (window size, sample rate) cell.

    Test clips are resampled to each rate and re-analyzed with each window.
    ``fc`` holds the training analysis settings.  Fixed-input baselines get
    shorter windows zero-padded to the training size; longer windows are
    reported as ``"unsupported"``.
    """
    cells = [(n, sr) for sr in sample_rates for n in window_sizes]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_repr_cell, model, clips, fc, n, sr, fc.n_fft) for n, sr in cells]
            return [f.result() for f in futures]
    return [_repr_cell(model, clips, fc, n, sr, fc.n_fft) for n, sr in cells]


def degradations(rows: list[dict], identity: tuple[int, int]) -> dict:
    """Accuracy drop of each supported cell relative to the ``(n_fft, sample_rate)`` identity cell."""
    base = next(r["accuracy"] for r in rows if (r["n_fft"], r["sample_rate"]) == tuple(identity))
    return {(r["n_fft"], r["sample_rate"]): base - r["accuracy"] for r in rows if r["status"] == "ok"}


# ---------------------------------------------------------------------------
# Inference-time subsampling
# ---------------------------------------------------------------------------


def _proxy_cloud(x: np.ndarray) -> PointCloud:
    """Index-space cloud over a fixed feature array, used to pick which bins survive."""
    if x.ndim == 1:
        return PointCloud(np.stack([np.arange(x.size, dtype=np.float64), x], axis=1))
    ti, fi = np.meshgrid(np.arange(x.shape[0]), np.arange(x.shape[1]), indexing="ij")
    pts = np.stack([ti.ravel(), fi.ravel(), x.ravel()], axis=1).astype(np.float64)
    return PointCloud(pts, grid=x, grid_index=np.stack([ti.ravel(), fi.ravel()], axis=1))


def _kept_bins(x: np.ndarray, strategy: str, fraction: float, rng) -> np.ndarray:
    cloud = _proxy_cloud(x)
    kept = subsample(cloud, strategy, fraction, rng).points
    if x.ndim == 1:
        return kept[:, 0].astype(np.int64)
    return (kept[:, 0] * x.shape[1] + kept[:, 1]).astype(np.int64)


def _subsampled_accuracy(model, data: FeatureSet, strategy, fraction, rng) -> float:
    if data.kind == "cloud":
        clouds = [subsample(c, strategy, fraction, rng) for c in data.inputs]
        preds = predict(model, FeatureSet("cloud", clouds, data.labels, data.clip_ids))
    else:
        def transform(x, idx):
            out = np.empty_like(x)
            for j in range(x.shape[0]):
                keep = _kept_bins(x[j], strategy, fraction, rng)
                out[j] = zero_out(x[j].ravel(), keep).reshape(x[j].shape)
            return out
        preds = predict(model, data, transform=transform)
    return report_from(preds, data.labels, model.spec.n_classes).accuracy


def sweep_subsample(
    model: Classifier,
    data: FeatureSet,
    fractions: Sequence[float],
    strategies: Sequence[str] = ("topk", "random"),
    repeats: int = 10,
    seed: int = 0,
) -> list[dict]:
    """Accuracy when only a fraction of each input's points (or bins) is kept.

    Clouds lose points; fixed-input baselines get the dropped bins set to
    zero instead.  Random subsampling is repeated ``repeats`` times with
    seeds derived from ``seed``; the deterministic strategies run once and
    report a standard deviation of exactly 0.
    """
    dim = data.inputs[0].dim if data.kind == "cloud" else (2 if data.kind == "vector" else 3)
    rows = []
    for strategy in strategies:
        if strategy not in STRATEGIES:
            raise ParameterError(f"unknown subsampling strategy {strategy!r}")
        if strategy == "gradient" and dim != 3:
            raise ParameterError("gradient subsampling needs spectro-temporal (3-D) inputs")
        for fraction in fractions:
            n_rep = repeats if strategy == "random" else 1
            accs = np.array([
                _subsampled_accuracy(model, data, strategy, fraction, np.random.default_rng([seed, r]))
                for r in range(n_rep)
            ])
            rows.append({
                "strategy": strategy,
                "fraction": float(fraction),
                "repeats": n_rep,
                "mean": float(accs.mean()),
                "std": float(accs.std(ddof=1)) if n_rep > 1 else 0.0,
                "min": float(accs.min()),
                "max": float(accs.max()),
            })
    return rows


# ---------------------------------------------------------------------------
# Training-time subsampling
# ---------------------------------------------------------------------------


def train_subsampled(
    spec: ModelSpec,
    train_data: FeatureSet,
    test_data: FeatureSet,
    cfg: TrainConfig,
    fraction: float = 1.0 / 16.0,
    strategy: str = "random",
) -> dict:
    """Train the same model twice, on full clouds and on subsampled clouds.

    Both runs start from identical weights and see identical batches;
    evaluation always uses the full clouds.  Wall-clock figures are returned
    separately from the accuracies so callers can keep them out of files
    that must be reproducible.
    """
    if train_data.kind != "cloud":
        raise ParameterError("training-time subsampling applies to point-cloud models")
    results = {}
    for mode, strat, frac in (("full", None, 1.0), ("subsampled", strategy, fraction)):
        model = build_model(spec)
        hist = train(model, train_data, replace(cfg, subsample_strategy=strat, subsample_fraction=frac))
        results[mode] = {
            "accuracy": evaluate(model, test_data).accuracy,
            "final_loss": hist.final_loss,
            "epoch_seconds": hist.mean_epoch_seconds,
            "model": model,
        }
    return results


# ---------------------------------------------------------------------------
# Cost scaling
# ---------------------------------------------------------------------------


def block_macs(block: str, sizes: Sequence[int], dim: int = 8, heads: int = 1, inducing: int = 16,
               seed: int = 0) -> np.ndarray:
    """Forward multiply-accumulates of one SAB or ISAB block for clouds of each size."""
    rng = np.random.default_rng(seed)
    if block == "sab":
        layer = SAB(dim, dim, heads, rng)
    elif block == "isab":
        layer = ISAB(dim, dim, heads, inducing, rng)
    else:
        raise ParameterError(f"unknown block {block!r}")
    out = []
    for n in sizes:
        x = np.zeros((1, int(n), dim))
        with T.count_ops() as counter, T.no_grad():
            layer(x)
        out.append(counter.forward)
    return np.array(out, dtype=np.float64)


def linear_fit_r2(x, y) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    total = np.sum((y - y.mean()) ** 2)
    return float(1.0 - np.sum(resid ** 2) / total) if total > 0 else 1.0


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, dtype=np.float64)), np.log(np.asarray(y, dtype=np.float64)), 1)[0])


def cost_table(models: dict, n_points: dict) -> list[dict]:
    """Parameter and MAC counts for named models; ``n_points`` gives cloud sizes."""
    from .train import count_macs, count_params

    rows = []
    for name, model in models.items():
        n = n_points.get(name) if model.input_kind == "cloud" else None
        inf = count_macs(model, n, training=False)
        trn = count_macs(model, n, training=True)
        rows.append({
            "model": name,
            "kind": model.spec.kind,
            "params": count_params(model),
            "n_points": n,
            "inference_macs": inf.forward,
            "training_macs": trn.total,
        })
    return rows
