"""Resampling, splitting, mini-batch training and evaluation."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .autodiff import Adam, Tensor, no_grad, one_hot, softmax_nll
from .autodiff.checkpoint import _atomic_write
from .errors import ConfigurationError, InputError, StateError
from .representation import STSSequence, assemble_batch

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("epoch", "train_loss", "train_acc", "test_acc")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 32
    epochs: int = 30
    length: int = 32
    train_fraction: float = 0.7
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigurationError("train_fraction must lie strictly between 0 and 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.length < 2:
            raise ConfigurationError("temporal length must be >= 2")


@dataclass
class TensorDataset:
    """Stream inputs and labels for a set of equal-length sequences."""

    tdf: np.ndarray
    dtf: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx: np.ndarray) -> "TensorDataset":
        return TensorDataset(self.tdf[idx], self.dtf[idx], self.labels[idx])


@dataclass
class RunReport:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    test_acc_history: list[float | None] = field(default_factory=list)
    test_acc: float | None = None
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path: str | Path) -> None:
        payload = (json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n").encode("utf-8")
        _atomic_write(Path(path), lambda fh: fh.write(payload))

    def write_csv(self, path: str | Path) -> None:
        rows = [
            (i + 1, self.train_loss[i], self.train_acc[i], "" if self.test_acc_history[i] is None else self.test_acc_history[i])
            for i in range(len(self.train_loss))
        ]

        def write(fh):
            text = io.StringIO(newline="")
            writer = csv.writer(text, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            writer.writerows(rows)
            fh.write(text.getvalue().encode("utf-8"))

        _atomic_write(Path(path), write)


class Classifier(Protocol):
    training: bool

    def __call__(self, x_tdf, x_dtf) -> Tensor: ...
    def parameters(self) -> list[Tensor]: ...
    def train(self): ...
    def eval(self): ...


# preprocessing ---------------------------------------------------------------

def resample_time(sequence: STSSequence, length: int) -> STSSequence:
    """Linearly interpolate every coordinate onto ``length`` evenly spaced steps."""
    n = sequence.length
    if n < 2:
        raise InputError("resampling needs at least two frames")
    if length < 1:
        raise ConfigurationError(f"target length must be positive, got {length}")
    pos = np.linspace(0.0, n - 1, length)
    lo = np.minimum(np.floor(pos).astype(np.int64), n - 2)
    frac = (pos - lo)[:, None, None]
    frames = sequence.frames
    # frac of exactly 0 or 1 reproduces the frame bit for bit
    out = frames[lo] * (1.0 - frac) + frames[lo + 1] * frac
    return STSSequence(out, sequence.label, sequence.topology)


def split_dataset(
    dataset: Sequence[STSSequence], fraction: float, seed: int
) -> tuple[list[STSSequence], list[STSSequence]]:
    """Stratified shuffle split; class ``c`` puts ``round(fraction * M_c)`` items in train."""
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError("fraction must lie strictly between 0 and 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 2])))
    by_class: dict[int, list[int]] = {}
    for i, seq in enumerate(dataset):
        by_class.setdefault(seq.label, []).append(i)
    train_idx, test_idx = [], []
    for label in sorted(by_class):
        members = np.array(by_class[label])
        if len(members) < 2:
            raise InputError(f"class {label} has fewer than two instances")
        members = members[rng.permutation(len(members))]
        cut = int(math.floor(fraction * len(members) + 0.5))
        train_idx.extend(members[:cut].tolist())
        test_idx.extend(members[cut:].tolist())
    return [dataset[i] for i in sorted(train_idx)], [dataset[i] for i in sorted(test_idx)]


def prepare(sequences: Sequence[STSSequence], length: int) -> TensorDataset:
    """Resample to ``length`` frames, then build both stream tensors."""
    if not sequences:
        raise InputError("no sequences to prepare")
    tdf, dtf, labels = assemble_batch([resample_time(s, length) for s in sequences])
    return TensorDataset(tdf, dtf, labels)


# training --------------------------------------------------------------------

def predict_logits(model: Classifier, data: TensorDataset, batch_size: int = 64) -> np.ndarray:
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            parts = [
                model(data.tdf[i : i + batch_size], data.dtf[i : i + batch_size]).data
                for i in range(0, len(data), batch_size)
            ]
    finally:
        if was_training:
            model.train()
    return np.concatenate(parts)


def accuracy_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def evaluate(model: Classifier, data: TensorDataset) -> float:
    if len(data) == 0:
        raise InputError("cannot evaluate on an empty test set")
    return accuracy_from_logits(predict_logits(model, data), data.labels)


def _check_finite(model: Classifier, epoch: int) -> None:
    for p in model.parameters():
        if not np.isfinite(p.data).all():
            raise StateError(f"non-finite parameter {p.name} after epoch {epoch}")


def train(
    model: Classifier,
    train_data: TensorDataset,
    config: TrainConfig,
    n_classes: int,
    test_data: TensorDataset | None = None,
    on_epoch: Callable[[int, RunReport], None] | None = None,
) -> RunReport:
    """Mini-batch Adam on the softmax NLL, reshuffling every epoch.

    Leaves the model in eval mode.
    """
    if len(train_data) == 0:
        raise InputError("empty training set")
    start = time.perf_counter()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 3])))
    opt = Adam(model.parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    targets = one_hot(train_data.labels, n_classes)
    report = RunReport(seed=config.seed)
    n = len(train_data)
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for i in range(0, n, config.batch_size):
            idx = order[i : i + config.batch_size]
            opt.zero_grad()
            logits = model(train_data.tdf[idx], train_data.dtf[idx])
            loss = softmax_nll(logits, targets[idx])
            loss.backward()
            opt.step()
            total_loss += loss.item() * len(idx)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == train_data.labels[idx]))
        _check_finite(model, epoch)
        report.train_loss.append(total_loss / n)
        report.train_acc.append(correct / n)
        test_acc = evaluate(model, test_data) if test_data is not None and len(test_data) else None
        report.test_acc_history.append(test_acc)
        logger.info("epoch %d loss %.4f train_acc %.3f test_acc %s", epoch, total_loss / n, correct / n, test_acc)
        if on_epoch is not None:
            on_epoch(epoch, report)
    model.eval()
    if test_data is not None and len(test_data):
        report.test_acc = report.test_acc_history[-1] if report.test_acc_history else evaluate(model, test_data)
    report.wall_time = time.perf_counter() - start
    return report
