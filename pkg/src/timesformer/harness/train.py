"""Mini-batch SGD with momentum and step decay, plus evaluation."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from ..config import ModelConfig
from ..errors import ConfigurationError, NumericError, TrainingError
from ..model import ModelParams, forward, init_params, predict
from ..numeric import Tape, cross_entropy, new_rng
from .data import SyntheticDataset, make_task

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSpec:
    epochs: int = 10
    lr: float = 0.02
    decay_epochs: tuple[int, ...] = (7, 9)
    decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 32
    seed: int = 0
    train_size: int = 2000
    eval_size: int = 400
    init_std: float = 0.2
    warmup_epochs: float = 1.0
    clip_norm: float | None = 1.0

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(self.decay_epochs))
        if self.epochs < 1 or self.batch_size < 1 or self.train_size < 1 or self.eval_size < 0:
            raise ConfigurationError("epochs, batch_size and train_size must be positive")
        if self.lr < 0 or self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ConfigurationError("lr and weight_decay must be >= 0, momentum in [0, 1)")
        if self.warmup_epochs < 0 or (self.clip_norm is not None and self.clip_norm <= 0):
            raise ConfigurationError("warmup_epochs must be >= 0 and clip_norm positive")
        if any(not 0 < e < self.epochs for e in self.decay_epochs):
            raise ConfigurationError(f"decay epochs {self.decay_epochs} outside (0, {self.epochs})")

    def lr_at(self, epoch: float) -> float:
        """Learning rate at a (fractional) epoch: linear warmup, then step decay."""
        drops = sum(epoch >= e for e in self.decay_epochs)
        lr = self.lr * self.decay_factor ** drops
        if epoch < self.warmup_epochs:
            lr *= (epoch + 1e-12) / self.warmup_epochs
        return lr

    @classmethod
    def from_dict(cls, data: dict) -> "TrainSpec":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown train spec keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, source: str | Path) -> "TrainSpec":
        text = str(source)
        data = json.loads(text if text.lstrip().startswith("{") else Path(source).read_text())
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decay_epochs"] = list(self.decay_epochs)
        return d


@dataclass
class TrainLog:
    initial_loss: float = float("nan")
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    eval_acc: list[float] = field(default_factory=list)
    wall_time: float = 0.0

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,train_acc,eval_acc"]
        for i, (l, a, e) in enumerate(zip(self.train_loss, self.train_acc, self.eval_acc), 1):
            lines.append(f"{i},{l:.8g},{a:.6g},{e:.6g}")
        return "\n".join(lines) + "\n"


TRAIN_SEED_OFFSET = 1000
EVAL_SEED_OFFSET = 2000


def make_splits(kind: str, config: ModelConfig, spec: TrainSpec) -> tuple[SyntheticDataset, SyntheticDataset]:
    """Disjoint train and eval sets derived from ``spec.seed``."""
    dims = (config.F, config.H, config.W)
    return (make_task(kind, TRAIN_SEED_OFFSET + spec.seed, spec.train_size, dims),
            make_task(kind, EVAL_SEED_OFFSET + spec.seed, spec.eval_size, dims))


def _per_example_loss(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(labels)), labels]


def train(config: ModelConfig, dataset: SyntheticDataset, spec: TrainSpec,
          eval_dataset: SyntheticDataset | None = None, init: ModelParams | None = None,
          on_epoch: Callable[[int, TrainLog], None] | None = None) -> tuple[ModelParams, TrainLog]:
    """Softmax cross-entropy with SGD + momentum; computation runs in float32.

    Returned weights are float32 values held in float64 arrays, so a saved
    checkpoint reproduces them exactly.
    """
    if dataset.dims != (config.F, config.H, config.W):
        raise ConfigurationError(f"dataset dims {dataset.dims} do not match config "
                                 f"{(config.F, config.H, config.W)}")
    rng = new_rng(spec.seed)
    params = (init if init is not None else init_params(config, rng, spec.init_std)).astype(np.float32)
    weights = params.tensors()
    for w in weights:
        w.requires_grad = True
    velocity = [np.zeros_like(w.data) for w in weights]
    n = len(dataset)
    clips, labels = dataset.clips, dataset.labels
    tlog = TrainLog()
    start = time.perf_counter()
    tlog.initial_loss = float(_per_example_loss(predict(clips, params), labels).mean())

    wd, mu = np.float32(spec.weight_decay), np.float32(spec.momentum)
    steps = -(-n // spec.batch_size)
    for epoch in range(spec.epochs):
        order = rng.permutation(n)
        losses = np.zeros(n)
        correct = np.zeros(n, dtype=bool)
        for step, lo in enumerate(range(0, n, spec.batch_size)):
            lr = np.float32(spec.lr_at(epoch + (step + 1) / steps if epoch < spec.warmup_epochs else epoch))
            idx = order[lo:lo + spec.batch_size]
            try:
                with Tape() as tape:
                    logits = forward(clips[idx], params)
                    loss = cross_entropy(logits, labels[idx])
            except NumericError as exc:
                raise TrainingError(f"non-finite activations: {exc}", epoch + 1) from exc
            if not np.isfinite(loss.data):
                raise TrainingError("non-finite training loss", epoch + 1)
            grads = tape.backward(loss)
            scale = np.float32(1.0)
            if spec.clip_norm is not None:
                norm = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values())))
                if norm > spec.clip_norm:
                    scale = np.float32(spec.clip_norm / norm)
            for w, v in zip(weights, velocity):
                g = grads.get(w)
                if g is None:
                    continue
                g = scale * g + wd * w.data
                v *= mu
                v += g
                w.data -= lr * v
            losses[idx] = _per_example_loss(logits.data, labels[idx])
            correct[idx] = logits.data.argmax(axis=1) == labels[idx]
        tlog.train_loss.append(float(losses.mean()))
        tlog.train_acc.append(float(correct.mean()))
        tlog.eval_acc.append(evaluate(params, config, eval_dataset)[0] if eval_dataset is not None
                             else float("nan"))
        log.info("epoch %d lr %.4g loss %.4f train %.3f eval %.3f", epoch + 1, lr,
                 tlog.train_loss[-1], tlog.train_acc[-1], tlog.eval_acc[-1])
        if on_epoch is not None:
            on_epoch(epoch + 1, tlog)
    tlog.wall_time = time.perf_counter() - start

    for w in weights:
        w.requires_grad = False
    return params.astype(np.float64), tlog


def evaluate(params: ModelParams, config: ModelConfig | None, dataset: SyntheticDataset):
    """Accuracy and confusion matrix (rows: true class, columns: predicted)."""
    config = config or params.config
    pred = predict(dataset.clips, params).argmax(axis=1)
    k = config.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (dataset.labels, pred), 1)
    acc = float((pred == dataset.labels).mean()) if len(dataset) else float("nan")
    return acc, confusion
