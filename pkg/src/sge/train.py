"""SGD training loop, evaluation and the per-epoch report."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DivergedLoss, NonFiniteInput, ShapeIncompatible

log = logging.getLogger(__name__)

_STREAMS = {"weights": 0, "data": 1, "shuffle": 2}


def substream_seed(seed: int, name: str) -> int:
    """Derive an independent seed for a named random stream from the run seed."""
    ss = np.random.SeedSequence(seed, spawn_key=(_STREAMS[name],))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    lr_decay: float = 0.1
    decay_epochs: tuple | None = None  # None: one drop at two thirds of training
    momentum: float = 0.9
    weight_decay: float = 1e-4
    decay_sge: bool = False
    batch_size: int = 32
    epochs: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.decay_epochs is not None:
            self.decay_epochs = tuple(self.decay_epochs)
        for name in ("learning_rate", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("momentum and weight_decay must be non-negative")

    @property
    def milestones(self) -> tuple:
        if self.decay_epochs is not None:
            return self.decay_epochs
        return ((2 * self.epochs) // 3,) if self.epochs > 1 else ()

    def lr_at(self, epoch: int) -> float:
        """Learning rate used during (0-based) ``epoch``."""
        drops = sum(1 for e in self.milestones if epoch >= e)
        return self.learning_rate * self.lr_decay**drops


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)  # (epoch, split, loss, accuracy)
    metadata: dict = field(default_factory=dict)

    def add(self, epoch, split, loss, accuracy):
        self.rows.append((epoch, split, loss, accuracy))

    def final(self, split="test"):
        return [r for r in self.rows if r[1] == split][-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k, v in self.metadata.items():
            buf.write(f"# {k}={v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "split", "loss", "accuracy"])
        for epoch, split, loss, acc in self.rows:
            w.writerow([epoch, split, repr(float(loss)), repr(float(acc))])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write(self.to_csv())


def evaluate(model, dataset, batch_size=256):
    """Accuracy and mean cross-entropy over ``dataset``; parameters untouched."""
    if dataset.images.shape[1:] != model.input_shape:
        raise ShapeIncompatible(f"dataset images {dataset.images.shape[1:]} vs model input {model.input_shape}")
    n = len(dataset)
    total_loss = 0.0
    correct = 0
    for start in range(0, n, batch_size):
        x = dataset.images[start:start + batch_size]
        y = dataset.labels[start:start + batch_size]
        logits = model.forward(x)
        total_loss += model.head.loss(logits, y) * len(y)
        correct += int((logits.argmax(axis=1) == y).sum())
    return correct / n, total_loss / n


class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient."""

    def __init__(self, model, config: TrainConfig):
        self.model = model
        self.config = config
        self.velocity = {name: np.zeros_like(p) for name, p in model.named_parameters()}
        self.no_decay = set()
        if not config.decay_sge:
            for i in model.sge_layers():
                self.no_decay |= {f"{i}.gamma", f"{i}.beta"}

    def step(self, lr):
        cfg = self.config
        for (name, p), (_, g) in zip(self.model.named_parameters(), self.model.named_grads()):
            if cfg.weight_decay and name not in self.no_decay:
                g = g + cfg.weight_decay * p
            v = self.velocity[name]
            v *= cfg.momentum
            v += g
            p -= lr * v


def train(model, train_set, config: TrainConfig, test_set=None, frozen=()):
    """Train ``model`` in place and return a :class:`TrainReport`.

    Epoch 0 rows are the evaluation before any update. Parameter names in
    ``frozen`` (e.g. ``"5.gamma"``) are never updated.
    """
    if train_set.images.shape[1:] != model.input_shape:
        raise ShapeIncompatible(f"dataset images {train_set.images.shape[1:]} vs model input {model.input_shape}")
    report = TrainReport(metadata={"seed": config.seed, "model_seed": model.seed, **{
        f"train.{k}": v for k, v in asdict(config).items()}})
    splits = [("train", train_set)] + ([("test", test_set)] if test_set is not None else [])

    def record(epoch):
        for split, ds in splits:
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    acc, loss = evaluate(model, ds)
            except NonFiniteInput:
                acc, loss = 0.0, float("nan")
            if not np.isfinite(loss):
                raise DivergedLoss(step, loss)
            report.add(epoch, split, loss, acc)
        log.info("epoch %d %s", epoch, " ".join(f"{r[1]}:loss={r[2]:.4f},acc={r[3]:.4f}" for r in report.rows[-len(splits):]))

    step = 0
    record(0)
    opt = SGD(model, config)
    frozen_params = {name: p.copy() for name, p in model.named_parameters() if name in frozen}
    shuffle = np.random.default_rng(substream_seed(config.seed, "shuffle"))
    n = len(train_set)
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = shuffle.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss = model.loss(train_set.images[idx], train_set.labels[idx])
            except NonFiniteInput:
                loss = float("nan")
            if not np.isfinite(loss):
                raise DivergedLoss(step, loss)
            model.backward()
            opt.step(lr)
            for name, p in model.named_parameters():
                if name in frozen_params:
                    p[...] = frozen_params[name]
            step += 1
        record(epoch + 1)
    return report
