"""Loss, Adam, the epoch loop with early stopping, and evaluation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import metrics

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
HISTORY_FIELDS = ("epoch", "train_loss", "valid_loss", "valid_auc", "valid_micro_f1", "valid_macro_f1")


class TrainingError(RuntimeError):
    """Training cannot continue (e.g. the loss became non-finite)."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 50
    patience: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")
        if self.patience < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("patience, batch_size and epochs must all be >= 1")


def nll_loss(probs, label):
    """-log p(label), with p floored at 1e-12."""
    if not 0 <= label < probs.size:
        raise ValueError(f"label {label} outside 0..{probs.size - 1}")
    return ad.scale(ad.log(ad.pick(probs, label), floor=PROB_FLOOR), -1.0)


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update, in place on ``params`` (name -> array)."""
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, value in params.items():
        g = grads[name]
        if g.shape != value.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {value.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        value -= config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return params, state


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalReport:
    auc: float
    micro_f1: float
    macro_f1: float
    precision: list
    recall: list
    loss: float
    count: int
    per_task: dict = field(default_factory=dict)

    def summary(self):
        return (
            f"n={self.count} loss={self.loss:.4f} auc={self.auc:.4f} "
            f"micro_f1={self.micro_f1:.4f} macro_f1={self.macro_f1:.4f}"
        )


def _report(probs, labels, n_classes):
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=int)
    if n_classes == 2:
        preds = metrics.threshold_predictions(probs[:, 1])
    else:
        preds = probs.argmax(axis=1)
    precision, recall, _ = metrics.precision_recall_f1(labels, preds, n_classes)
    true_p = probs[np.arange(len(labels)), labels]
    return EvalReport(
        auc=metrics.average_auc(probs, labels, n_classes),
        micro_f1=metrics.micro_f1(labels, preds, n_classes),
        macro_f1=metrics.macro_f1(labels, preds, n_classes),
        precision=precision,
        recall=recall,
        loss=float(np.mean(-np.log(np.maximum(true_p, PROB_FLOOR)))),
        count=len(labels),
    )


def predict(model, data):
    return np.array([model.predict_proba(inst) for inst in data])


def evaluate(model, data) -> EvalReport:
    """Metrics over ``data``; task-query datasets also get a per-task breakdown."""
    if not data:
        raise ValueError("cannot evaluate on an empty dataset")
    n_classes = model.config.n_classes
    probs = predict(model, data)
    labels = np.array([inst.label for inst in data])
    report = _report(probs, labels, n_classes)
    if data[0].is_task_query:
        tasks = np.array([inst.query for inst in data])
        for task in np.unique(tasks):
            sel = tasks == task
            report.per_task[int(task)] = _report(probs[sel], labels[sel], n_classes)
    return report


# ---------------------------------------------------------------- training loop


def train(model, train_data, valid_data, config: TrainConfig, on_epoch=None):
    """Minibatch Adam with early stopping on validation loss.

    A batch accumulates per-instance gradients (each instance has its own
    tape) and averages them before one optimizer step. Returns
    ``(best_values, history)`` and leaves the best values loaded in
    ``model``.
    """
    if not train_data or not valid_data:
        raise ValueError("train() needs non-empty training and validation data")
    rng = np.random.default_rng(config.seed)
    params = model.params
    values = {k: p.value for k, p in params.items()}
    state = AdamState()
    history = []
    best_loss, best_values, since_best = math.inf, model.get_values(), 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_data))
        total = 0.0
        for b, start in enumerate(range(0, len(order), config.batch_size), start=1):
            batch = order[start : start + config.batch_size]
            model.zero_grad()
            batch_loss = 0.0
            for idx in batch:
                inst = train_data[idx]
                with ad.Tape() as tape:
                    probs, _ = model.forward(inst, training=True, rng=rng)
                    loss = nll_loss(probs, inst.label)
                    tape.backward(loss)
                batch_loss += loss.item()
            if not math.isfinite(batch_loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}, batch {b}")
            total += batch_loss
            grads = {k: p.grad / len(batch) for k, p in params.items()}
            adam_step(values, grads, state, config)

        report = evaluate(model, valid_data)
        if not math.isfinite(report.loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        row = {
            "epoch": epoch,
            "train_loss": total / len(train_data),
            "valid_loss": report.loss,
            "valid_auc": report.auc,
            "valid_micro_f1": report.micro_f1,
            "valid_macro_f1": report.macro_f1,
        }
        history.append(row)
        log.info("epoch %d train_loss=%.4f %s", epoch, row["train_loss"], report.summary())
        if on_epoch is not None:
            on_epoch(row)
        if report.loss < best_loss:
            best_loss, best_values, since_best = report.loss, model.get_values(), 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    model.set_values(best_values)
    return best_values, history


def write_history(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
