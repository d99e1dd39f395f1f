"""Adam training loop, evaluation, and parameter / multiply-accumulate counting."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .data import FeatureSet
from .errors import ParameterError, ShapeError, TrainingDiverged
from .models import Classifier
from .pointcloud import batch, subsample

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 500
    l2_lambda: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    subsample_strategy: Optional[str] = None  # per-example subsampling of training clouds
    subsample_fraction: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch_size must be at least 1")
        if self.l2_lambda < 0:
            raise ParameterError(f"l2_lambda must be non-negative, got {self.l2_lambda}")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ParameterError(f"subsample_fraction must lie in (0, 1], got {self.subsample_fraction}")
        if self.subsample_strategy not in (None, "topk", "random", "gradient"):
            raise ParameterError(f"unknown subsampling strategy {self.subsample_strategy!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Adam with an L2 penalty lambda * ||W||^2 folded into the gradient.

    Only parameters flagged for decay (weight matrices and kernels) get the
    extra ``2 * lambda * W`` term.
    """

    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, l2_lambda=0.0):
        self.params = [(p, decay) for _, p, decay in named_params]
        self.lr, (self.b1, self.b2), self.eps, self.l2 = lr, betas, eps, l2_lambda
        self.m = [np.zeros_like(p.data) for p, _ in self.params]
        self.v = [np.zeros_like(p.data) for p, _ in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for (p, decay), m, v in zip(self.params, self.m, self.v):
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if decay and self.l2:
                g = g + 2.0 * self.l2 * p.data
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def l2_penalty(model: Classifier) -> float:
    return float(sum(np.sum(p.data ** 2) for _, p, decay in model.named_parameters() if decay))


def model_inputs(data: FeatureSet, idx, rng=None, strategy=None, fraction=1.0):
    """Batch inputs for ``data[idx]``, optionally subsampling each cloud."""
    if data.kind == "cloud":
        clouds = [data.inputs[i] for i in idx]
        if strategy is not None and fraction < 1.0:
            clouds = [subsample(c, strategy, fraction, rng) for c in clouds]
        b = batch(clouds)
        return b.coords, b.mask
    return data.inputs[idx], None


def _check_compatible(model: Classifier, data: FeatureSet) -> None:
    if model.input_kind != data.kind:
        raise ShapeError(f"{model.spec.kind} takes {model.input_kind} inputs, data holds {data.kind}")
    if len(data) == 0:
        raise ParameterError("empty dataset")


@dataclass
class History:
    rows: list = field(default_factory=list)  # epoch, loss, train_accuracy[, test_accuracy]
    epoch_seconds: list = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.rows[-1]["loss"]

    @property
    def mean_epoch_seconds(self) -> float:
        return float(np.mean(self.epoch_seconds)) if self.epoch_seconds else 0.0


def train(
    model: Classifier,
    data: FeatureSet,
    cfg: TrainConfig = TrainConfig(),
    eval_data: Optional[FeatureSet] = None,
    eval_every: int = 0,
    callback: Optional[Callable[[dict], None]] = None,
) -> History:
    """Minibatch Adam on cross-entropy.

    Every random choice (shuffling, per-example subsampling, dropout) comes
    from ``cfg.seed``, so equal configs give bitwise-equal weights.
    """
    _check_compatible(model, data)
    if data.labels.min() < 0 or data.labels.max() >= model.spec.n_classes:
        raise ParameterError(f"labels must lie in [0, {model.spec.n_classes})")
    rng = np.random.default_rng(cfg.seed)
    if hasattr(model, "dropout_rng"):
        model.dropout_rng = np.random.default_rng([cfg.seed, 1])
    if cfg.subsample_strategy == "gradient" and data.kind == "cloud" and data.inputs[0].dim != 3:
        raise ParameterError("gradient subsampling needs 3-D (t, f, m) clouds")
    opt = Adam(model.named_parameters(), cfg.learning_rate, (cfg.beta1, cfg.beta2), cfg.adam_eps, cfg.l2_lambda)
    history = History()
    n = len(data)
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            x, mask = model_inputs(data, idx, rng, cfg.subsample_strategy, cfg.subsample_fraction)
            labels = data.labels[idx]
            logits = model(x, mask)
            loss = T.cross_entropy(logits, labels)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}, batch starting {s}")
            model.zero_grad()
            T.backward(loss)
            opt.step()
            loss_sum += value * len(idx)
            correct += int((logits.data.argmax(axis=1) == labels).sum())
        history.epoch_seconds.append(time.perf_counter() - start)
        row = {"epoch": epoch, "loss": loss_sum / n, "train_accuracy": correct / n}
        if eval_data is not None and eval_every and (epoch % eval_every == 0 or epoch == cfg.epochs):
            row["test_accuracy"] = evaluate(model, eval_data).accuracy
            model.train()
        history.rows.append(row)
        if callback is not None:
            callback(row)
    model.zero_grad()
    model.eval()
    return history


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # [true, predicted]
    predictions: np.ndarray
    labels: np.ndarray

    @property
    def n_examples(self) -> int:
        return int(self.labels.size)

    def per_class_accuracy(self) -> np.ndarray:
        totals = self.confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(totals > 0, np.diag(self.confusion) / np.maximum(totals, 1), np.nan)


def predict(model: Classifier, data: FeatureSet, batch_size: int = 256, transform=None) -> np.ndarray:
    """Argmax predictions in eval mode; ``transform(x, idx)`` may alter each input batch."""
    _check_compatible(model, data)
    was_training = model.training
    model.eval()
    preds = []
    try:
        with T.no_grad():
            for s in range(0, len(data), batch_size):
                idx = np.arange(s, min(len(data), s + batch_size))
                x, mask = model_inputs(data, idx)
                if transform is not None:
                    x = transform(x, idx)
                preds.append(model(x, mask).data.argmax(axis=1))
    finally:
        model.train(was_training)
    return np.concatenate(preds)


def evaluate(model: Classifier, data: FeatureSet, batch_size: int = 256) -> EvalReport:
    preds = predict(model, data, batch_size)
    return report_from(preds, data.labels, model.spec.n_classes)


def report_from(preds: np.ndarray, labels: np.ndarray, n_classes: int) -> EvalReport:
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    return EvalReport(float(np.mean(preds == labels)), confusion, preds, labels)


# ---------------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------------


def count_params(model: Classifier) -> int:
    return int(sum(p.data.size for p in model.parameters()))


def dummy_input(model: Classifier, n_points: Optional[int] = None):
    s = model.spec
    if model.input_kind == "cloud":
        if n_points is None:
            raise ParameterError("cloud models need n_points to count operations")
        return np.zeros((1, n_points, s.d_in)), np.ones((1, n_points), dtype=bool)
    if model.input_kind == "vector":
        return np.zeros((1, s.fb_input)), None
    return np.zeros((1, s.cnn_frames, s.cnn_bins)), None


def count_macs(model: Classifier, n_points: Optional[int] = None, training: bool = False) -> T.OpCounter:
    """Multiply-accumulates for one input, counted from the shapes the ops see.

    With ``training=True`` the backward pass of a cross-entropy step is
    included (``counter.backward``); otherwise only inference is run.
    """
    x, mask = dummy_input(model, n_points)
    was_training = model.training
    model.train(training)
    try:
        with T.count_ops() as counter:
            if training:
                model.zero_grad()
                T.backward(T.cross_entropy(model(x, mask), np.array([0])))
                model.zero_grad()
            else:
                with T.no_grad():
                    model(x, mask)
    finally:
        model.train(was_training)
    return counter
