"""Epoch-based training with per-epoch selection by macro-F1."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding import EmbeddingBundle, stack_bundles
from .errors import ConfigurationError, NumericError
from .evaluation import macro_f1
from .fusion import FusionModel, forward_arrays, loss_and_grads

log = logging.getLogger(__name__)

LabeledBundle = tuple[EmbeddingBundle, int]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    selection_split: str = "dev"
    threshold: float = 0.5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ConfigurationError("epochs and batch_size must be >= 1 and learning_rate > 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.selection_split not in ("dev", "devtest"):
            raise ConfigurationError(f"selection_split must be 'dev' or 'devtest', got {self.selection_split!r}")
        if not 0 < self.threshold < 1:
            raise ConfigurationError("threshold must lie in (0, 1)")


@dataclass
class EpochStats:
    epoch: int  # 1-based
    train_loss: float
    selection_macro_f1: float


@dataclass
class TrainRecord:
    epochs: list[EpochStats]
    best_epoch: int  # 1-based
    best_model: FusionModel
    config: TrainConfig
    model_path: str | None = None
    wall_clock: float = field(default=0.0, compare=False)

    @property
    def best_macro_f1(self) -> float:
        return self.epochs[self.best_epoch - 1].selection_macro_f1

    def to_json(self) -> dict:
        # wall-clock time is kept out of the persisted record so reruns are byte-identical
        return {
            "config": asdict(self.config),
            "epochs": [asdict(e) for e in self.epochs],
            "best_epoch": self.best_epoch,
            "best_macro_f1": self.best_macro_f1,
            "model_path": self.model_path,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def select_best_epoch(scores: Sequence[float]) -> int:
    """1-based index of the highest score; the earliest epoch wins ties."""
    if not scores:
        raise ValueError("no epoch scores")
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best]:
            best = i
    return best + 1


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for name, g in grads.items():
            g = np.asarray(g, dtype=np.float64)
            m = self.beta1 * self.m.get(name, 0.0) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(name, 0.0) + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            new = params[name] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            out[name] = float(new) if np.ndim(new) == 0 else new
        return out


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params: dict, grads: dict) -> dict:
        return {name: params[name] - self.lr * grads[name] for name in grads}


def _make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    return SGD(cfg.learning_rate)


def predict_proba(m: FusionModel, bundles: Sequence[EmbeddingBundle], batch_size: int = 256) -> np.ndarray:
    if not bundles:
        return np.zeros(0)
    out = []
    for start in range(0, len(bundles), batch_size):
        sent, parts, mask = stack_bundles(bundles[start: start + batch_size])
        out.append(forward_arrays(m, sent, parts, mask)["prob"])
    return np.concatenate(out)


def predict(m: FusionModel, bundles: Sequence[EmbeddingBundle], threshold: float = 0.5) -> list[tuple[str, float, int]]:
    """(id, probability, label) per bundle; label is 1 iff probability >= threshold."""
    probs = predict_proba(m, bundles)
    return [(b.source_id, float(p), int(p >= threshold)) for b, p in zip(bundles, probs)]


def evaluate_macro_f1(m: FusionModel, data: Sequence[LabeledBundle], threshold: float) -> float:
    probs = predict_proba(m, [b for b, _ in data])
    return macro_f1([y for _, y in data], [int(p >= threshold) for p in probs])


def train(
    model0: FusionModel,
    train_data: Sequence[LabeledBundle],
    selection_data: Sequence[LabeledBundle],
    cfg: TrainConfig = TrainConfig(),
) -> TrainRecord:
    """Mini-batch training for ``cfg.epochs`` epochs, keeping the best epoch.

    After every epoch the model is scored (macro-F1) on ``selection_data``;
    the snapshot with the highest score is returned, earliest on ties.
    """
    if not train_data:
        raise ConfigurationError("training set is empty")
    if not selection_data:
        raise ConfigurationError("selection set is empty")
    started = time.perf_counter()
    sent, parts, mask = stack_bundles([b for b, _ in train_data])
    y = np.array([float(label) for _, label in train_data])
    n = len(y)
    model = model0
    opt = _make_optimizer(cfg)
    stats: list[EpochStats] = []
    snapshots: list[FusionModel] = []
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        batch_losses = []
        for k, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start: start + cfg.batch_size]
            batch_loss, grads = loss_and_grads(model, sent[idx], parts[idx], mask[idx], y[idx])
            if not np.isfinite(batch_loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {k}")
            model = model.with_params(**opt.step(model.params(), grads))
            batch_losses.append((batch_loss, len(idx)))
        mean_loss = sum(l * c for l, c in batch_losses) / n
        f1 = evaluate_macro_f1(model, selection_data, cfg.threshold)
        log.info("epoch %d: train loss %.6f, selection macro-F1 %.4f", epoch, mean_loss, f1)
        stats.append(EpochStats(epoch, mean_loss, f1))
        snapshots.append(model)
    best = select_best_epoch([s.selection_macro_f1 for s in stats])
    return TrainRecord(stats, best, snapshots[best - 1], cfg, wall_clock=time.perf_counter() - started)


def ablate_lm_only(
    model0: FusionModel,
    train_data: Sequence[LabeledBundle],
    selection_data: Sequence[LabeledBundle],
    cfg: TrainConfig = TrainConfig(),
) -> TrainRecord:
    """Same loop with every triple slot zeroed and masked out (sentence-only baseline)."""
    strip = lambda data: [(b.without_triples(), y) for b, y in data]
    return train(model0, strip(train_data), strip(selection_data), cfg)
