"""Adam, the training loop, evaluation reports and the end-point error metric."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, EvalError, NumericError, UndefinedMetricError
from .featurize import MaskConfig, build_sequence_tensor, sample_indices, training_view
from .ingest import Dataset, SequenceRecord
from .pose_core import HandPose2D
from .transformer import Model, forward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    augment_hflip_p: float = 0.5
    augment_crop_p: float = 0.5
    crop_mode: str = "spatial"
    min_scale: float = 0.7
    mask: MaskConfig = MaskConfig()

    def __post_init__(self):
        if not self.lr >= 0:
            # lr=0 is allowed as a null-update probe
            raise ConfigError(f"train.lr must be >= 0, got {self.lr}")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError(f"train.betas must lie in [0, 1), got {self.betas}")
        if not self.eps > 0:
            raise ConfigError(f"train.eps must be > 0, got {self.eps}")
        for name in ("augment_hflip_p", "augment_crop_p"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"train.{name} must lie in [0, 1]")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("train.batch_size must be >= 1 and train.epochs >= 0")
        if self.crop_mode not in ("spatial", "temporal"):
            raise ConfigError(f"train.crop_mode must be spatial or temporal, got {self.crop_mode!r}")
        if not 0 < self.min_scale <= 1:
            raise ConfigError(f"train.min_scale must lie in (0, 1], got {self.min_scale}")


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig, t: int) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    b1, b2 = cfg.betas
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        if cfg.weight_decay:
            g = g + cfg.weight_decay * theta
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        theta -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params, state


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # rows: true class, columns: predicted class
    per_class_accuracy: np.ndarray  # NaN for classes with no samples
    n_samples: int

    @classmethod
    def from_predictions(cls, y_true, y_pred, num_classes: int) -> EvalReport:
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(confusion, (y_true, y_pred), 1)
        support = confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            per_class = np.where(support > 0, np.diag(confusion) / np.maximum(support, 1), np.nan)
        n = int(len(y_true))
        return cls(float(np.trace(confusion) / n), confusion, per_class, n)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "n_samples": self.n_samples,
            "per_class_accuracy": [None if math.isnan(a) else float(a) for a in self.per_class_accuracy],
            "confusion": self.confusion.tolist(),
        }

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def _records(data: Dataset | Sequence[SequenceRecord], split: str | None) -> list[SequenceRecord]:
    if isinstance(data, Dataset):
        return data.split(split)
    return list(data)


def evaluation_inputs(model: Model, records: Sequence[SequenceRecord], mask: MaskConfig) -> np.ndarray:
    n = model.cfg.seq_len
    return np.stack([
        build_sequence_tensor(r, sample_indices(len(r), n, "equal"), mask, model.cfg.num_object_classes).rows
        for r in records
    ])


def predict_batch(model: Model, X: np.ndarray, batch_size: int = 64) -> np.ndarray:
    preds = [np.argmax(forward(model, X[i:i + batch_size]).data, axis=-1) for i in range(0, len(X), batch_size)]
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(model: Model, data: Dataset | Sequence[SequenceRecord], split: str | None = "test",
             mask: MaskConfig = MaskConfig()) -> EvalReport:
    """Equal-mode sampling, no augmentation, dropout off."""
    records = _records(data, split)
    if not records:
        raise EvalError(f"split {split!r} is empty")
    C = model.cfg.num_classes
    y_true = np.array([r.action_id for r in records])
    if y_true.min() < 0 or y_true.max() >= C:
        raise EvalError(f"action ids must lie in [0, {C}) for this model")
    y_pred = predict_batch(model, evaluation_inputs(model, records, mask))
    return EvalReport.from_predictions(y_true, y_pred, C)


def epe(pred: HandPose2D, gt: HandPose2D) -> float:
    if not (pred.valid and gt.valid):
        raise UndefinedMetricError("EPE is undefined for an absent hand")
    return float(np.linalg.norm(pred.joints - gt.joints, axis=1).mean())


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    model: Model
    best_model: Model | None
    history: list[tuple[int, float, float | None]]
    best_val_accuracy: float | None = None


def _seed(*parts: int) -> np.random.Generator:
    return np.random.default_rng([int(p) for p in parts])


def train_inputs(records: Sequence[SequenceRecord], idx: Sequence[int], epoch: int, model: Model,
                 cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Augmented, randomly sampled batch; each sample draws from its own (seed, epoch, index) stream."""
    rows, labels = [], []
    for i in idx:
        rng = _seed(cfg.seed, epoch, i, 1)
        view = training_view(records[i], rng, hflip_p=cfg.augment_hflip_p, crop_p=cfg.augment_crop_p,
                             crop_mode=cfg.crop_mode, min_scale=cfg.min_scale, n=model.cfg.seq_len)
        tensor = build_sequence_tensor(view, np.arange(len(view)), cfg.mask, model.cfg.num_object_classes)
        rows.append(tensor.rows)
        labels.append(records[i].action_id)
    return np.stack(rows), np.array(labels)


def train(model: Model, dataset: Dataset, cfg: TrainConfig,
          on_epoch: Callable[[int, float, float | None], None] | None = None) -> TrainResult:
    """Train ``model`` in place. With a validation split the best-val weights are kept aside."""
    records = dataset.split("train")
    if not records:
        raise ConfigError("dataset has no training records")
    if any(r.action_id >= model.cfg.num_classes for r in records):
        raise ConfigError(f"training labels exceed model num_classes={model.cfg.num_classes}")
    val = dataset.split("val")
    params = {k: t.data for k, t in model.params.items()}
    state = AdamState()
    step = 0
    history = []
    best, best_acc = None, None
    for epoch in range(1, cfg.epochs + 1):
        order = _seed(cfg.seed, epoch).permutation(len(records))
        total = 0.0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            X, y = train_inputs(records, idx, epoch, model, cfg)
            model.zero_grad()
            with ad.Tape() as tape:
                loss = ad.cross_entropy(forward(model, X, train=True, rng=_seed(cfg.seed, epoch, b, 2)), y)
            tape.backward(loss)
            step += 1
            grads = {k: t.grad for k, t in model.params.items() if t.grad is not None}
            adam_step(params, grads, state, cfg, step)
            total += loss.item() * len(idx)
        model.zero_grad()
        train_loss = total / len(records)
        val_acc = evaluate(model, val, None, cfg.mask).accuracy if val else None
        if val_acc is not None and (best_acc is None or val_acc > best_acc):
            best, best_acc = model.copy(), val_acc
        history.append((epoch, train_loss, val_acc))
        log.info("epoch %d train_loss %.6f val_accuracy %s", epoch, train_loss, val_acc)
        if on_epoch:
            on_epoch(epoch, train_loss, val_acc)
    return TrainResult(model, best, history, best_acc)


def write_history(history, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,train_loss,val_accuracy\n")
        for epoch, loss, acc in history:
            fh.write(f"{epoch},{loss!r},{'' if acc is None else repr(acc)}\n")
