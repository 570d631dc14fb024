"""Loss, Adam, the early-stopping training loop, percentage-error metrics and
head-only transfer fine-tuning."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gradcore as G
from .datagen import Normalizer, Sample
from .errors import (
    BadConfig,
    ConfigMismatch,
    EmptyDataset,
    EmptyFineTuneSet,
    LengthMismatch,
    ShapeMismatch,
    ZeroTrueValue,
)
from .gradcore import Tensor
from .model import HEAD_PREFIX, ModelConfig, ParamSet, check_batch, copy_params, features, forward, head, make_batch, predict

log = logging.getLogger(__name__)

REPORT_FORMAT = "irnet-metrics"
REPORT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 16
    max_epochs: int = 500
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise BadConfig(f"invalid training config {self}")
        if self.patience > self.max_epochs:
            raise BadConfig("patience cannot exceed max_epochs")


def mse_loss(pred: Tensor, target) -> Tensor:
    target = G.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    diff = G.add(pred, G.scale(target, -1.0))
    return G.scale(G.sum(G.mul(diff, diff)), 1.0 / diff.data.size)


class Adam:
    """Bias-corrected Adam over a named subset of parameters."""

    def __init__(self, params: ParamSet, lr=0.001, betas=(0.9, 0.999), eps=1e-8, names=None):
        self.params = params
        self.names = list(params) if names is None else list(names)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {n: np.zeros_like(params[n].data) for n in self.names}
        self.v = {n: np.zeros_like(params[n].data) for n in self.names}

    def zero_grad(self):
        for n in self.names:
            self.params[n].grad = None

    def step(self, grads: dict[str, np.ndarray] | None = None):
        self.step_count += 1
        c1 = 1.0 - self.b1**self.step_count
        c2 = 1.0 - self.b2**self.step_count
        for n in self.names:
            p = self.params[n]
            g = p.grad if grads is None else grads.get(n)
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeMismatch(f"gradient for {n} has shape {g.shape}, parameter {p.data.shape}")
            self.m[n] = self.b1 * self.m[n] + (1 - self.b1) * g
            self.v[n] = self.b2 * self.v[n] + (1 - self.b2) * g * g
            m_hat = self.m[n] / c1
            v_hat = self.v[n] / c2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _check_pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.size != y_hat.size or y.size == 0:
        raise LengthMismatch(f"need equal non-empty lengths, got {y.size} and {y_hat.size}")
    if (y == 0).any():
        raise ZeroTrueValue("true speeds must be non-zero")
    return y, y_hat


def rmspe(y, y_hat) -> float:
    y, y_hat = _check_pair(y, y_hat)
    return float(np.sqrt(np.mean(((y - y_hat) / y) ** 2)) * 100.0)


def mape(y, y_hat) -> float:
    y, y_hat = _check_pair(y, y_hat)
    return float(np.mean(np.abs((y - y_hat) / y)) * 100.0)


@dataclass
class MetricsReport:
    rmspe: list[float]
    mape: list[float]
    count: int
    y_true: np.ndarray | None = None  # (N, P) raw mph
    y_pred: np.ndarray | None = None
    t: list[int] = field(default_factory=list)

    @property
    def horizons(self) -> int:
        return len(self.rmspe)

    def to_json(self, include_arrays: bool = True) -> dict:
        doc = {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "count": self.count,
            "horizons": list(range(1, self.horizons + 1)),
            "rmspe": self.rmspe,
            "mape": self.mape,
        }
        if include_arrays and self.y_true is not None:
            doc["t"] = list(self.t)
            doc["y_true"] = self.y_true.T.tolist()
            doc["y_pred"] = self.y_pred.T.tolist()
        return doc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")


def predict_mph(params, samples, config, normalizer: Normalizer, target: int) -> np.ndarray:
    return normalizer.invert(target, predict(samples, params, config))


def evaluate(params: ParamSet, samples: Sequence[Sample], normalizer: Normalizer, config: ModelConfig, target: int) -> MetricsReport:
    if not samples:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    y_pred = predict_mph(params, samples, config, normalizer, target)
    y_true = np.stack([s.labels for s in samples])
    return MetricsReport(
        [rmspe(y_true[:, p], y_pred[:, p]) for p in range(config.P)],
        [mape(y_true[:, p], y_pred[:, p]) for p in range(config.P)],
        len(samples),
        y_true,
        y_pred,
        [s.t for s in samples],
    )


@dataclass
class History:
    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_rmspe_p1: list[float] = field(default_factory=list)
    best_epoch: int = 0

    def save_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["epoch", "train_loss", "val_rmspe_p1"])
            for row in zip(self.epoch, self.train_loss, self.val_rmspe_p1):
                out.writerow([row[0], repr(row[1]), repr(row[2])])

    @classmethod
    def load_csv(cls, path) -> "History":
        hist = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                hist.epoch.append(int(row["epoch"]))
                hist.train_loss.append(float(row["train_loss"]))
                hist.val_rmspe_p1.append(float(row["val_rmspe_p1"]))
        if hist.val_rmspe_p1:
            hist.best_epoch = hist.epoch[int(np.argmin(hist.val_rmspe_p1))]
        return hist


def normalized_labels(samples: Sequence[Sample], normalizer: Normalizer, target: int) -> np.ndarray:
    return normalizer.apply(target, np.stack([s.labels for s in samples]))


def train(
    params: ParamSet,
    config: ModelConfig,
    train_set: Sequence[Sample],
    val_set: Sequence[Sample],
    normalizer: Normalizer,
    target: int,
    tc: TrainConfig = TrainConfig(),
) -> tuple[ParamSet, History]:
    """Mini-batch Adam on MSE with early stopping on validation RMSPE at
    horizon 1. Returns the best-validation parameters (a copy) and history."""
    if not train_set or not val_set:
        raise EmptyDataset("training needs non-empty train and validation sets")
    check_batch(make_batch(train_set[:1]), config)
    params = copy_params(params)
    opt = Adam(params, lr=tc.lr)
    rng = np.random.default_rng(tc.seed)
    y_all = normalized_labels(train_set, normalizer, target)
    val_true = np.stack([s.labels for s in val_set])[:, 0]

    history = History()
    best_score, best_params, stale = math.inf, copy_params(params), 0
    for epoch in range(1, tc.max_epochs + 1):
        order = rng.permutation(len(train_set))
        total = 0.0
        for i in range(0, len(order), tc.batch_size):
            idx = order[i : i + tc.batch_size]
            batch = make_batch([train_set[j] for j in idx])
            opt.zero_grad()
            loss = mse_loss(forward(batch, params, config), y_all[idx])
            G.backward(loss)
            opt.step()
            total += loss.item() * len(idx)
        val_pred = predict_mph(params, val_set, config, normalizer, target)[:, 0]
        score = rmspe(val_true, val_pred)
        history.epoch.append(epoch)
        history.train_loss.append(total / len(train_set))
        history.val_rmspe_p1.append(score)
        log.debug("epoch %d loss %.6f val rmspe@1 %.4f", epoch, total / len(train_set), score)
        if score < best_score:
            best_score, best_params, stale = score, copy_params(params), 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= tc.patience:
                break
    return best_params, history


def fine_tune_transfer(
    params: ParamSet,
    config: ModelConfig,
    samples: Sequence[Sample],
    normalizer: Normalizer,
    target: int,
    steps: int = 200,
    lr: float = 0.001,
    patience: int = 20,
) -> ParamSet:
    """Full-batch Adam on the regression head only; every other tensor is
    returned bit-identical. Keeps the head with the lowest fine-tune loss."""
    if not samples:
        raise EmptyFineTuneSet("fine-tuning needs at least one sample")
    batch = make_batch(samples)
    try:
        check_batch(batch, config)
    except ShapeMismatch as exc:
        raise ConfigMismatch(f"fine-tune samples do not match the checkpoint config: {exc}") from None
    adapted = copy_params(params)
    head_names = [n for n in adapted if n.startswith(HEAD_PREFIX)]
    frozen = {n: Tensor(t.data) for n, t in adapted.items()}
    feats = features(batch, frozen, config)  # backbone is fixed, compute once
    y = normalized_labels(samples, normalizer, target)

    opt = Adam(adapted, lr=lr, names=head_names)
    best_loss, best_head, stale = math.inf, {n: adapted[n].data.copy() for n in head_names}, 0
    for _ in range(steps):
        opt.zero_grad()
        loss = mse_loss(head(feats, adapted), y)
        if loss.item() < best_loss:
            best_loss, stale = loss.item(), 0
            best_head = {n: adapted[n].data.copy() for n in head_names}
        else:
            stale += 1
            if stale >= patience:
                break
        G.backward(loss)
        opt.step()
    else:
        final = mse_loss(head(feats, {n: Tensor(t.data) for n, t in adapted.items()}), y).item()
        if final < best_loss:
            best_head = {n: adapted[n].data.copy() for n in head_names}
    for n in head_names:
        adapted[n].data = best_head[n]
    return adapted
