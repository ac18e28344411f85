"""Fit loop: epochs over the augmented stream, per-epoch validation,
early stopping on validation loss, best-weight restoration."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import model as _model
from . import nn
from .augment import augmented_stream, fit_stats, plain_batches
from .errors import ConfigError, DataError, TrainingDivergedError
from .optim import make_optimizer


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    optimizer: str = "adam"
    lr: float = 1e-4
    decay: float = 0.0
    rho: float = 0.9  # rmsprop only
    patience: int = 0
    seed: int = 1234

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 0:
            raise ConfigError(f"patience must be >= 0, got {self.patience}")

    def build_optimizer(self):
        if self.optimizer == "adam":
            return make_optimizer("adam", lr=self.lr, decay=self.decay)
        return make_optimizer(self.optimizer, lr=self.lr, rho=self.rho)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class History:
    records: list = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0
    restored_best: bool = False
    seed: int = 0

    def log_lines(self):
        lines = ["epoch,train_loss,train_acc,val_loss,val_acc"]
        for r in self.records:
            lines.append(
                f"{r.epoch},{r.train_loss:.6f},{r.train_acc:.6f},{r.val_loss:.6f},{r.val_acc:.6f}"
            )
        return lines

    def to_json(self):
        return {
            "seed": self.seed,
            "stop_reason": self.stop_reason,
            "best_epoch": self.best_epoch,
            "restored_best": self.restored_best,
            "epochs": [
                {"epoch": r.epoch, "train_loss": r.train_loss, "train_acc": r.train_acc,
                 "val_loss": r.val_loss, "val_acc": r.val_acc}
                for r in self.records
            ],
        }


class EarlyStopper:
    """Stop when validation loss has not improved for more than `patience`
    consecutive epochs; a NaN loss stops immediately with its own reason."""

    def __init__(self, patience=0):
        if patience < 0:
            raise ConfigError(f"patience must be >= 0, got {patience}")
        self.patience = int(patience)
        self.best = math.inf
        self.waits = 0
        self.stopped = False
        self.reason = None

    def update(self, val_loss):
        """Feed one validation loss; returns True when training should stop."""
        if math.isnan(val_loss):
            self.stopped = True
            self.reason = "nan_loss"
            return True
        if val_loss < self.best:
            self.best = val_loss
            self.waits = 0
        else:
            self.waits += 1
        if self.waits > self.patience:
            self.stopped = True
            self.reason = "early_stop"
            return True
        return False


def evaluate_epoch(graph, samples, stats, batch_size=32):
    """(mean BCE, accuracy at the 0.5 threshold) on un-augmented samples."""
    if not samples:
        raise DataError("evaluate_epoch needs a non-empty sample set")
    loss_sum = 0.0
    hits = 0
    for xb, yb in plain_batches(samples, stats, batch_size):
        out = _model.forward(graph, xb, mode="infer")
        scores = out.data.reshape(-1)
        loss_sum += float(nn.binary_crossentropy(out, yb).item()) * len(yb)
        hits += int(np.sum((scores > 0.5) == (yb > 0.5)))
    n = len(samples)
    return loss_sum / n, hits / n


def fit(graph, train_samples, valid_samples, cfg, augment_cfg, stats=None, rng=None):
    """Train the graph in place; returns (graph, History).

    Each epoch consumes one full pass of the augmented stream, then
    evaluates the un-augmented validation set. Training stops early when
    validation loss rises past patience, and the weights that scored the
    best validation loss are restored at the end. A NaN loss aborts.
    """
    if not train_samples:
        raise DataError("fit needs a non-empty training set")
    if not valid_samples:
        raise DataError("fit needs a non-empty validation set")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if stats is None:
        stats = fit_stats(train_samples)

    opt = cfg.build_optimizer()
    stopper = EarlyStopper(patience=cfg.patience)
    history = History(seed=cfg.seed)
    best_snap = graph.store.snapshot()
    best_epoch = 0

    for epoch in range(1, cfg.epochs + 1):
        loss_sum = 0.0
        hits = 0
        seen = 0
        for xb, yb in augmented_stream(train_samples, augment_cfg, stats, cfg.batch_size, rng):
            out = _model.forward(graph, xb, mode="train", rng=rng)
            loss = nn.binary_crossentropy(out, yb)
            reg = _model.regularization_loss(graph)
            total = nn.add(loss, reg) if reg is not None else loss
            if total.requires_grad:
                graph.store.zero_grad()
                total.backward()
                opt.step(graph.store.params())
            bsz = len(yb)
            loss_sum += float(total.item()) * bsz
            hits += int(np.sum((out.data.reshape(-1) > 0.5) == (yb > 0.5)))
            seen += bsz
        train_loss = loss_sum / seen
        train_acc = hits / seen

        val_loss, val_acc = evaluate_epoch(graph, valid_samples, stats, cfg.batch_size)
        if math.isnan(train_loss) or math.isnan(val_loss):
            raise TrainingDivergedError(
                f"loss became NaN at epoch {epoch} (train {train_loss}, val {val_loss})"
            )
        history.records.append(EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc))

        improved = val_loss < stopper.best
        should_stop = stopper.update(val_loss)
        if improved:
            best_snap = graph.store.snapshot()
            best_epoch = epoch
        if should_stop:
            history.stop_reason = "early_stop"
            break
    else:
        history.stop_reason = "completed"

    graph.store.restore(best_snap)
    history.best_epoch = best_epoch
    history.restored_best = True
    return graph, history
