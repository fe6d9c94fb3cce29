"""Loss, Adadelta, the epoch loop with best-validation snapshotting, and evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, InvalidInputError
from .layers import apply_dropout  # noqa: F401  (re-exported)
from .model import Model, forward_batch, is_weight, make_batch, predict
from .rng import make_rng

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 50
    dropout_rate: float = 0.5
    weight_decay: float = 0.0005
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-6
    batch_size: int = 1
    early_stopping: bool = True
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 < self.adadelta_rho < 1.0 or self.adadelta_eps <= 0:
            raise ConfigError("adadelta_rho must be in (0, 1) and adadelta_eps > 0")
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d).validate()


def cross_entropy(posterior, label):
    """``-log(max(posterior[label], 1e-12))``; ``label`` is a 0-based class index.

    A ``(B, N)`` posterior with a label vector gives the batch mean.
    """
    pv = ad.value(posterior)
    labels = np.atleast_1d(np.asarray(label))
    n = pv.shape[-1]
    if labels.dtype.kind not in "iu" or np.any(labels < 0) or np.any(labels >= n):
        raise InvalidInputError(f"label {label!r} outside 0..{n - 1}")
    if pv.ndim == 1:
        return ad.mul(ad.log(ad.index(posterior, int(labels[0])), PROB_FLOOR), -1.0)
    picked = ad.index(posterior, (np.arange(pv.shape[0]), labels))
    return ad.mul(ad.mean(ad.log(picked, PROB_FLOOR)), -1.0)


@dataclass
class AdadeltaState:
    sq_grad: dict[str, np.ndarray]
    sq_update: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdadeltaState":
        return cls(
            {k: np.zeros_like(v) for k, v in params.items()},
            {k: np.zeros_like(v) for k, v in params.items()},
        )


def adadelta_update(state: AdadeltaState, grads: Mapping[str, np.ndarray], rho: float = 0.95, eps: float = 1e-6):
    """Advance the accumulators in place and return the parameter deltas."""
    deltas = {}
    for name, g in grads.items():
        eg = state.sq_grad[name]
        if eg.shape != g.shape:
            raise InvalidInputError(f"gradient shape mismatch for {name}")
        eg *= rho
        eg += (1.0 - rho) * g * g
        ex = state.sq_update[name]
        delta = -np.sqrt(ex + eps) / np.sqrt(eg + eps) * g
        ex *= rho
        ex += (1.0 - rho) * delta * delta
        deltas[name] = delta
    return deltas


def regularized_loss(config, nodes, batch, cfg: TrainConfig, rng):
    """Mean cross-entropy plus ``weight_decay * 0.5 * sum ||W||^2`` on the tape."""
    out = forward_batch(config, nodes, batch, "train", rng, cfg.dropout_rate)
    data_loss = cross_entropy(out.posterior, batch.labels)
    loss = data_loss
    if cfg.weight_decay > 0:
        penalty = None
        for name, node in nodes.items():
            if is_weight(name):
                term = ad.sum_(ad.mul(node, node))
                penalty = term if penalty is None else ad.add(penalty, term)
        if penalty is not None:
            loss = ad.add(loss, ad.mul(penalty, 0.5 * cfg.weight_decay))
    return loss, float(ad.value(data_loss))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0  # 0: the returned model is the initial one
    orders: list[list[str]] = field(default_factory=list)  # clip ids per epoch, in visit order

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_accuracy"]
        lines += [f"{r.epoch},{r.train_loss!r},{r.val_accuracy!r}" for r in self.epochs]
        return "\n".join(lines) + "\n"


def accuracy(model: Model, clips) -> float:
    _, pred = predict(model, clips)
    labels = np.array([c.label - 1 for c in clips])
    return float(np.mean(pred == labels))


def train(model: Model, train_clips: Sequence, val_clips: Sequence, cfg: TrainConfig, log_every: int = 0):
    """Train a copy of ``model`` and return ``(trained model, history)``.

    With early stopping the returned parameters are the snapshot with the best
    validation accuracy (earliest epoch on ties); otherwise the final ones.
    """
    cfg.validate()
    if not train_clips or not val_clips:
        raise InvalidInputError("training needs nonempty train and validation splits")
    model = model.copy()
    history = History()
    if cfg.max_epochs == 0:
        return model, history
    config = model.config
    state = AdadeltaState.zeros_like(model.params)
    shuffle_rng = make_rng(cfg.seed, "shuffle")
    dropout_rng = make_rng(cfg.seed, "dropout")
    best_acc, best_params = -1.0, None
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_clips))
        history.orders.append([train_clips[i].clip_id for i in order])
        losses, weights = [], []
        for start in range(0, len(order), cfg.batch_size):
            clips = [train_clips[i] for i in order[start : start + cfg.batch_size]]
            batch = make_batch(clips, config)
            tape = ad.Tape()
            nodes = tape.params_from(model.params)
            loss, data_loss = regularized_loss(config, nodes, batch, cfg, dropout_rng)
            grads = ad.backward(tape, loss)
            deltas = adadelta_update(state, grads, cfg.adadelta_rho, cfg.adadelta_eps)
            for name, delta in deltas.items():
                model.params[name] += delta
            losses.append(data_loss)
            weights.append(len(clips))
        train_loss = float(np.average(losses, weights=weights))
        val_acc = accuracy(model, val_clips)
        history.epochs.append(EpochRecord(epoch, train_loss, val_acc))
        if log_every and epoch % log_every == 0:
            log.info("epoch %d loss %.4f val %.4f", epoch, train_loss, val_acc)
        if val_acc > best_acc:
            best_acc = val_acc
            history.best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
    if cfg.early_stopping and best_params is not None:
        model.params = best_params
    else:
        history.best_epoch = cfg.max_epochs
    return model, history


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # (N, N) counts, rows = true class
    recall: np.ndarray  # (N,) NaN for classes absent from the split

    def row_percentages(self) -> np.ndarray:
        totals = self.confusion.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(totals > 0, 100.0 * self.confusion / np.maximum(totals, 1), 0.0)

    def render(self, class_names: Sequence[str] | None = None) -> str:
        """Row-normalized percentage table, two decimals per cell."""
        n = self.confusion.shape[0]
        names = list(class_names or [str(i + 1) for i in range(n)])
        width = max(8, max(len(s) for s in names) + 1)
        pct = self.row_percentages()
        lines = [" " * width + "".join(f"{s:>{width}}" for s in names)]
        for i in range(n):
            lines.append(f"{names[i]:<{width}}" + "".join(f"{pct[i, j]:>{width}.2f}" for j in range(n)))
        lines.append(f"accuracy {100 * self.accuracy:.2f}")
        return "\n".join(lines)

    def confusion_csv(self) -> str:
        n = self.confusion.shape[0]
        lines = ["true," + ",".join(f"pred{j + 1}" for j in range(n))]
        for i in range(n):
            lines.append(f"{i + 1}," + ",".join(str(int(c)) for c in self.confusion[i]))
        return "\n".join(lines) + "\n"


def report_from_predictions(labels, predictions, n_classes: int) -> EvalReport:
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    totals = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(totals > 0, np.diag(confusion) / np.maximum(totals, 1), np.nan)
    acc = float(np.trace(confusion) / confusion.sum()) if confusion.sum() else 0.0
    return EvalReport(acc, confusion, recall)


def evaluate(model: Model, clips) -> EvalReport:
    if not clips:
        raise InvalidInputError("cannot evaluate an empty split")
    _, pred = predict(model, clips)
    labels = [c.label - 1 for c in clips]
    return report_from_predictions(labels, pred, model.config.n_classes)
