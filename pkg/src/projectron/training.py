"""Mini-batch Adam training with early stopping, and the evaluation protocols."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset, split_off
from .models import ArchitectureConfig, build_mlp, build_projectron, halving_chain
from .nn import AdamState, Model, adam_step
from .radon import AngleSet, batch_features

log = logging.getLogger(__name__)

STOP_PATIENCE = "patience_exhausted"
STOP_MAX_EPOCHS = "max_epochs"


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 3
    min_delta: float = 1e-6
    seed: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle: bool = True
    holdout_fraction: float = 0.1

    def validate(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")

    def optimizer(self) -> AdamState:
        return AdamState(self.learning_rate, self.beta1, self.beta2, self.eps)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    holdout_loss: float
    holdout_acc: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "train_acc", "holdout_loss", "holdout_acc"])
            for r in self.records:
                w.writerow([r.epoch] + [f"{v:.9g}" for v in
                                        (r.train_loss, r.train_acc, r.holdout_loss, r.holdout_acc)])


class EarlyStopping:
    """Tracks the best monitored loss and keeps a copy of the parameters that achieved it."""

    def __init__(self, patience: int = 3, min_delta: float = 1e-6):
        self.patience = patience
        self.min_delta = min_delta
        self.best_loss = np.inf
        self.best_epoch = 0
        self.best_params = None
        self.stale = 0

    def update(self, epoch: int, loss: float, params: np.ndarray) -> bool:
        """Record an epoch; returns True when training should stop."""
        if loss < self.best_loss - self.min_delta:
            self.best_loss = loss
            self.best_epoch = epoch
            self.best_params = params.copy()
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def _batches(n, size):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def holdout_monitor(holdout: Dataset) -> Callable[[Model], tuple[float, float]]:
    x, y = holdout.flat(), holdout.y

    def monitor(model):
        probs = _predict_proba(model, x)
        picked = probs[np.arange(len(y)), y]
        loss = float(-np.log(np.maximum(picked, 1e-12)).mean())
        return loss, float(np.mean(np.argmax(probs, axis=1) == y))

    return monitor


def train(model: Model, train_set: Dataset, holdout: Dataset | None, cfg: TrainConfig,
          monitor: Callable[[Model], tuple[float, float]] | None = None):
    """Train ``model`` in place and return it with its history.

    After each epoch ``monitor`` (by default the loss and accuracy on
    ``holdout``) is evaluated.  Training ends once the monitored loss has not
    improved by more than ``cfg.min_delta`` for ``cfg.patience`` consecutive
    epochs, or after ``cfg.max_epochs``; either way the parameters from the
    best epoch are restored.  Without a holdout set a seeded slice of
    ``cfg.holdout_fraction`` of the training data is held out.
    """
    cfg.validate()
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    if train_set.width != model.input_width:
        raise ValueError(
            f"training inputs have width {train_set.width}, model expects {model.input_width}"
        )
    if monitor is None:
        if holdout is None:
            train_set, holdout = split_off(train_set, cfg.holdout_fraction, cfg.seed)
            if len(holdout) == 0:
                holdout = train_set
        if len(holdout) == 0:
            raise ValueError("holdout set is empty")
        if holdout.width != model.input_width:
            raise ValueError(
                f"holdout inputs have width {holdout.width}, model expects {model.input_width}"
            )
        monitor = holdout_monitor(holdout)

    x, y = train_set.flat(), train_set.y
    n = len(y)
    rng = np.random.default_rng(cfg.seed)
    state = cfg.optimizer()
    stopper = EarlyStopping(cfg.patience, cfg.min_delta)
    history = TrainHistory()

    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total_loss, correct = 0.0, 0
        for sl in _batches(n, cfg.batch_size):
            idx = order[sl]
            xb, yb = x[idx], y[idx]
            loss, grads, probs = model.loss_and_grads(xb, yb)
            total_loss += loss * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == yb))
            adam_step(model, grads, state)
        h_loss, h_acc = monitor(model)
        history.records.append(EpochRecord(epoch, total_loss / n, correct / n, h_loss, h_acc))
        log.info("epoch %d  train_loss %.4f  train_acc %.4f  holdout_loss %.4f  "
                 "holdout_acc %.4f  (%.1fs)", epoch, total_loss / n, correct / n,
                 h_loss, h_acc, time.perf_counter() - started)
        if stopper.update(epoch, h_loss, model.flat):
            history.stop_reason = STOP_PATIENCE
            break
    else:
        history.stop_reason = STOP_MAX_EPOCHS

    if stopper.best_params is not None:
        model.flat[...] = stopper.best_params
    history.best_epoch = stopper.best_epoch
    return model, history


def _predict_proba(model: Model, x, chunk: int = 4096):
    return np.concatenate([model.forward(x[s]) for s in _batches(len(x), chunk)])


def predictions(model: Model, dataset: Dataset) -> np.ndarray:
    if dataset.width != model.input_width:
        raise ValueError(
            f"dataset inputs have width {dataset.width}, model expects {model.input_width}"
        )
    return np.argmax(_predict_proba(model, dataset.flat()), axis=1)


def evaluate(model: Model, test_set: Dataset) -> float:
    """Fraction of items whose predicted class equals the label."""
    if len(test_set) == 0:
        raise ValueError("test set is empty")
    return float(np.mean(predictions(model, test_set) == test_set.y))


def _canonical_order(dataset: Dataset) -> np.ndarray:
    # labels first, then raw input bytes, so fold k names the same item
    # whatever order the caller supplied
    keys = [row.tobytes() for row in dataset.flat()]
    return np.array(sorted(range(len(dataset)), key=lambda i: (int(dataset.y[i]), keys[i])),
                    dtype=np.intp)


def leave_one_out(dataset: Dataset, cfg: TrainConfig,
                  build: Callable[[int, int, int], Model]) -> float:
    """Train one model per item, excluding it, and score the excluded item.

    ``build(input_width, classes, seed)`` makes a fresh model.  Fold ``k``
    uses seed ``cfg.seed + k``; when the fold is too small to hold out
    ``cfg.holdout_fraction`` of an item, early stopping watches the training
    fold itself.
    """
    n = len(dataset)
    if n < 2:
        raise ValueError("leave-one-out needs at least two items")
    ordered = dataset.take(_canonical_order(dataset))
    correct = 0
    for k in range(n):
        keep = np.delete(np.arange(n), k)
        fold = ordered.take(keep)
        fold_cfg = TrainConfig(**{**cfg.__dict__, "seed": cfg.seed + k})
        fit, held = split_off(fold, fold_cfg.holdout_fraction, fold_cfg.seed)
        if len(held) == 0:
            fit, held = fold, fold
        model = build(dataset.width, dataset.classes, fold_cfg.seed)
        train(model, fit, held, fold_cfg)
        correct += int(predictions(model, ordered.take([k]))[0] == ordered.y[k])
    return correct / n


METHODS = ("projectron", "mlp-raw", "mlp-radon", "mlp-deep")
METHOD_LABELS = {"projectron": "Projectron", "mlp-raw": "MLP+Raw",
                 "mlp-radon": "MLP+Radon", "mlp-deep": "Deep MLP+Radon"}
DEEP_DEPTH = 7


def method_input(method: str) -> str:
    return "raw" if method == "mlp-raw" else "radon"


def build_method(method: str, input_width: int, arch: ArchitectureConfig, seed: int) -> Model:
    """Model for one arm of the comparison.

    Baseline MLPs default to one hidden layer of half the input width;
    ``arch.mlp_hidden_widths`` overrides that.  The deep variant halves the
    width through seven hidden layers.
    """
    if method == "projectron":
        return build_projectron(input_width, arch, seed)
    if method in ("mlp-raw", "mlp-radon"):
        hidden = arch.mlp_hidden_widths or [input_width // 2]
        return build_mlp(input_width, hidden, arch.classes, seed)
    if method == "mlp-deep":
        return build_mlp(input_width, halving_chain(input_width, DEEP_DEPTH), arch.classes, seed)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def featurize(images: Dataset, kind: str, angles: AngleSet, scale: bool = False) -> Dataset:
    if kind == "raw":
        return images.with_inputs(images.flat())
    if kind == "radon":
        return images.with_inputs(batch_features(images.x, angles, scale=scale))
    raise ValueError(f"unknown input kind {kind!r}")


@dataclass
class ComparisonRow:
    method: str
    accuracy: float
    params: int
    epochs: int
    seconds: float
    model: Model | None = field(default=None, repr=False)
    history: TrainHistory | None = field(default=None, repr=False)

    @property
    def label(self) -> str:
        return METHOD_LABELS[self.method]


def compare_experiment(train_images: Dataset, test_images: Dataset, cfg: TrainConfig,
                       arch: ArchitectureConfig, angles: AngleSet = AngleSet(),
                       methods=("mlp-raw", "mlp-radon", "projectron"),
                       scale: bool = False) -> list[ComparisonRow]:
    """Train every method under one seed and score it on the test images."""
    inputs = {}
    rows = []
    for method in methods:
        kind = method_input(method)
        if kind not in inputs:
            inputs[kind] = (featurize(train_images, kind, angles, scale),
                            featurize(test_images, kind, angles, scale))
        train_set, test_set = inputs[kind]
        model = build_method(method, train_set.width, arch, cfg.seed)
        started = time.perf_counter()
        model, history = train(model, train_set, None, cfg)
        seconds = time.perf_counter() - started
        acc = evaluate(model, test_set)
        log.info("%s: accuracy %.4f, %d parameters, %d epochs, %.1fs",
                 METHOD_LABELS[method], acc, model.param_count, len(history.records), seconds)
        rows.append(ComparisonRow(method, acc, model.param_count, len(history.records),
                                  seconds, model, history))
    return rows


def format_report(rows: list[ComparisonRow]) -> str:
    table = [("Method", "Accuracy", "|h|")]
    for r in rows:
        table.append((r.label, f"{100 * r.accuracy:.2f}%", f"{r.params:,}"))
    widths = [max(len(t[c]) for t in table) for c in range(3)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(t, widths)).rstrip() for t in table]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines)
