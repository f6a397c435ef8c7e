"""Weighted-loss training loop: Adam, step learning-rate decay, early stopping."""

from __future__ import annotations

import csv
import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .dsp import PreprocessConfig, preprocess
from .errors import ConfigInvalid, EmptyDataset, MissingClass, ShapeMismatch
from .model import Head, Model, save_weights
from .signal_io import DatasetManifest, Label, Site

log = logging.getLogger(__name__)

MIN_IMPROVEMENT = 1e-6


# ------------------------------------------------------------- class weights


@dataclass(frozen=True)
class ClassWeights:
    weights: np.ndarray
    class_counts: tuple[int, ...]

    @property
    def N(self) -> int:
        return sum(self.class_counts)

    @property
    def K(self) -> int:
        return len(self.class_counts)


def class_weights(labels: Sequence, num_classes: int = 2) -> ClassWeights:
    """Inverse-frequency weights ``W_i = N / (K * count_i)``.

    ``labels`` holds class indices or :class:`Label` members.
    """
    idx = np.array([lab.index if isinstance(lab, Label) else int(lab) for lab in labels], dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    counts = np.bincount(idx, minlength=num_classes)
    if np.any(counts == 0):
        missing = [int(k) for k in np.flatnonzero(counts == 0)]
        raise MissingClass(f"no samples for class(es) {missing}")
    n = int(counts.sum())
    weights = n / (num_classes * counts.astype(np.float64))
    return ClassWeights(weights, tuple(int(c) for c in counts))


# -------------------------------------------------------------------- config


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    decay_factor: float = 0.5
    decay_every: int = 10
    early_stop_patience: int = 15
    max_epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    # stop as soon as validation accuracy reaches this value (0 disables)
    stop_at_accuracy: float = 0.0
    class_weighting: bool = True

    def __post_init__(self):
        positive = ("learning_rate", "adam_eps", "decay_factor", "decay_every",
                    "early_stop_patience", "max_epochs", "batch_size")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigInvalid(f"{name} must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigInvalid("Adam betas must lie in [0, 1)")
        if self.early_stop_patience > self.max_epochs:
            raise ConfigInvalid("early_stop_patience must not exceed max_epochs")
        if not 0 <= self.stop_at_accuracy <= 1:
            raise ConfigInvalid("stop_at_accuracy must lie in [0, 1]")

    def to_dict(self) -> dict[str, str]:
        return {f.name: str(getattr(self, f.name)).lower() if f.type == "bool" else repr(getattr(self, f.name))
                for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "TrainConfig":
        kwargs = {}
        known = {f.name: f.type for f in fields(cls)}
        for key, raw in d.items():
            if key not in known:
                raise ConfigInvalid(f"unknown training key {key!r}")
            typ = known[key]
            try:
                if typ == "bool":
                    if raw.lower() not in ("true", "false"):
                        raise ValueError(raw)
                    kwargs[key] = raw.lower() == "true"
                elif typ == "int":
                    kwargs[key] = int(raw)
                else:
                    kwargs[key] = float(raw)
            except ValueError as exc:
                raise ConfigInvalid(f"bad value for {key}: {raw!r}") from exc
        return cls(**kwargs)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step decay: ``lr * decay_factor ** (epoch // decay_every)``, epochs counted from 0."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.learning_rate * cfg.decay_factor ** (epoch // cfg.decay_every)


# ---------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, params: Sequence[np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params], 0, beta1, beta2, eps)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray | None], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update applied to ``params`` in place.

    Moments are kept in float64. A ``None`` gradient counts as zero.
    """
    if not (len(params) == len(grads) == len(state.m)):
        raise ShapeMismatch("params, grads and optimizer state differ in length")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != m.shape or (g is not None and g.shape != p.shape):
            raise ShapeMismatch(f"parameter {p.shape} vs gradient {None if g is None else g.shape}")
        g64 = np.zeros(p.shape) if g is None else np.asarray(g, dtype=np.float64)
        m *= b1
        m += (1.0 - b1) * g64
        v *= b2
        v += (1.0 - b2) * g64 * g64
        step = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p[...] = (p - step).astype(p.dtype, copy=False)


# ------------------------------------------------------------ early stopping


class Decision(enum.Enum):
    CONTINUE = "continue"
    STOP = "stop"


@dataclass
class TrainState:
    adam: AdamState
    epoch: int = 0
    best_val_accuracy: float = -math.inf
    best_epoch: int = -1
    epochs_since_improvement: int = 0
    best_weights: dict[str, np.ndarray] | None = None
    patience: int = 15

    @property
    def t(self) -> int:
        return self.adam.t


def early_stop_update(state: TrainState, val_accuracy: float, model: Model | None = None) -> Decision:
    """Record one epoch's validation accuracy.

    An improvement of at least ``MIN_IMPROVEMENT`` resets the counter and
    snapshots ``model``; anything else (including a tie) counts toward the
    patience limit.
    """
    if not 0 <= val_accuracy <= 1:
        raise ValueError("validation accuracy must lie in [0, 1]")
    if val_accuracy - state.best_val_accuracy >= MIN_IMPROVEMENT:
        state.best_val_accuracy = val_accuracy
        state.best_epoch = state.epoch
        state.epochs_since_improvement = 0
        if model is not None:
            state.best_weights = model.state()
        return Decision.CONTINUE
    state.epochs_since_improvement += 1
    return Decision.STOP if state.epochs_since_improvement >= state.patience else Decision.CONTINUE


# ---------------------------------------------------------------------- data


@dataclass
class SignalSet:
    """Preprocessed recordings ready for the network: x is (N, 1, L)."""

    x: np.ndarray
    y: np.ndarray
    patient_ids: list[str] = field(default_factory=list)
    sites: list[Site] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, mask: np.ndarray) -> "SignalSet":
        keep = np.flatnonzero(mask)
        return SignalSet(self.x[keep], self.y[keep], [self.patient_ids[i] for i in keep],
                         [self.sites[i] for i in keep])


def build_signal_set(
    manifest: DatasetManifest,
    cfg: PreprocessConfig = PreprocessConfig(),
    threads: int = 1,
    dtype=np.float32,
) -> SignalSet:
    """Load and preprocess every recording in manifest order."""
    pairs = list(manifest.recordings())
    if not pairs:
        return SignalSet(np.zeros((0, 1, cfg.target_len), dtype=dtype), np.zeros(0, dtype=np.int64))

    def work(pair):
        return preprocess(pair[1].load(), cfg)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(work, pairs))
    else:
        rows = [work(p) for p in pairs]
    x = np.stack(rows).astype(dtype)[:, None, :]
    y = np.array([p.label.index for p, _ in pairs], dtype=np.int64)
    return SignalSet(x, y, [p.patient_id for p, _ in pairs], [r.site for _, r in pairs])


# ----------------------------------------------------------------------- fit


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float
    lr: float


def predicted_class(model: Model, x: np.ndarray, threads: int = 1) -> np.ndarray:
    probs = model.predict(x, threads=threads)
    if model.config.head is Head.SIGMOID_1:
        return (probs[:, 0] >= 0.5).astype(np.int64)
    return probs.argmax(axis=1)


def accuracy(model: Model, data: SignalSet, threads: int = 1) -> float:
    if len(data) == 0:
        raise EmptyDataset("no recordings to score")
    return float(np.mean(predicted_class(model, data.x, threads) == data.y))


def _loss(model: Model, xb: np.ndarray, yb: np.ndarray, weights: np.ndarray) -> ad.Tensor:
    probs = model.forward(xb, training=True)
    if model.config.head is Head.SIGMOID_1:
        probs = ad.binary_to_two_class(probs)
    targets = np.eye(probs.shape[1], dtype=probs.dtype)[yb]
    return ad.weighted_cce(probs, targets, weights)


def train_step(model: Model, xb: np.ndarray, yb: np.ndarray, weights: np.ndarray,
               adam: AdamState, lr: float) -> float:
    """Forward, backward and one Adam update on a single batch; returns the batch loss."""
    model.zero_grad()
    loss = _loss(model, xb, yb, weights)
    loss.backward()
    params = model.parameters()
    adam_step([p.data for p in params], [p.grad for p in params], adam, lr)
    return float(loss.data)


def write_history(history: Sequence[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_accuracy", "lr"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_accuracy), repr(r.lr)])


def read_history(path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        return [
            EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["val_accuracy"]), float(r["lr"]))
            for r in csv.DictReader(fh)
        ]


def fit(
    model: Model,
    train_set: SignalSet,
    val_set: SignalSet,
    cfg: TrainConfig = TrainConfig(),
    weights: ClassWeights | None = None,
    callback: Callable[[EpochRecord, Model], None] | None = None,
    run_dir=None,
    threads: int = 1,
) -> tuple[Model, list[EpochRecord]]:
    """Train ``model`` in place and return it restored to its best validation state.

    Class weights default to the inverse-frequency weights of ``train_set``
    (all ones when ``cfg.class_weighting`` is off). With ``run_dir`` the
    final and best weights plus the epoch history are written there.
    """
    if len(train_set) == 0:
        raise EmptyDataset("training set is empty")
    if len(val_set) == 0:
        raise EmptyDataset("validation set is empty")
    k = max(model.config.num_classes, 2)
    if weights is None:
        weights = class_weights(train_set.y, k) if cfg.class_weighting else ClassWeights(np.ones(k), (0,) * k)
    w = np.asarray(weights.weights, dtype=np.float64)

    params = model.parameters()
    state = TrainState(
        AdamState.like([p.data for p in params], cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
        patience=cfg.early_stop_patience,
    )
    rng = np.random.default_rng(cfg.seed)
    history: list[EpochRecord] = []
    n = len(train_set)
    for epoch in range(cfg.max_epochs):
        state.epoch = epoch
        lr = lr_at(epoch, cfg)
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            total += train_step(model, train_set.x[idx], train_set.y[idx], w, state.adam, lr) * len(idx)
        model.zero_grad()
        val_acc = accuracy(model, val_set, threads)
        record = EpochRecord(epoch, total / n, val_acc, lr)
        history.append(record)
        log.info("epoch %d loss %.5f val_acc %.4f lr %.3g", epoch, record.train_loss, val_acc, lr)
        if callback is not None:
            callback(record, model)
        decision = early_stop_update(state, val_acc, model)
        if decision is Decision.STOP:
            break
        if cfg.stop_at_accuracy and val_acc >= cfg.stop_at_accuracy:
            break

    if run_dir is not None:
        Path(run_dir).mkdir(parents=True, exist_ok=True)
        save_weights(model, Path(run_dir) / "final.weights")
    if state.best_weights is not None:
        model.load_state(state.best_weights)
    if run_dir is not None:
        save_weights(model, Path(run_dir) / "best.weights")
        write_history(history, Path(run_dir) / "history.csv")
    return model, history


def epochs_to_reach(history: Sequence[EpochRecord], target: float) -> int | None:
    """Number of epochs run until validation accuracy first reached ``target``."""
    for r in history:
        if r.val_accuracy >= target:
            return r.epoch + 1
    return None
