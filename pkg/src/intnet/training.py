"""Mini-batch SGD with momentum, learning-rate decay, clipping and early stopping."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, RngState
from .data import Corpus, make_batches
from .evaluation import evaluate
from .tagger import SequenceTagger

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Non-finite loss or gradient. Carries the best state seen so far."""

    def __init__(self, message, best_state=None, history=None):
        super().__init__(message)
        self.best_state = best_state
        self.history = history or []


@dataclass
class TrainConfig:
    eta0: float = 0.01
    rho: float = 0.05
    momentum: float = 0.9
    batch_size: int = 10
    clip_norm: float = 5.0
    clip_mode: str = "norm"
    dropout: float = 0.5
    max_epochs: int = 100
    patience: int = 10
    seed: int = 1

    def validate(self) -> "TrainConfig":
        if self.eta0 <= 0 or self.rho < 0:
            raise ad.ConfigError("eta0 must be positive and rho non-negative")
        if not 0 <= self.momentum < 1:
            raise ad.ConfigError("momentum must be in [0, 1)")
        if not 0 <= self.dropout < 1:
            raise ad.ConfigError("dropout must be in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ad.ConfigError("batch_size, max_epochs and patience must be >= 1")
        if self.clip_norm <= 0 or self.clip_mode not in ("norm", "value"):
            raise ad.ConfigError("clip_norm must be positive and clip_mode 'norm' or 'value'")
        return self

    def to_dict(self):
        return asdict(self)


def lr_at(epoch: int, config: TrainConfig) -> float:
    """``eta0 / (1 + rho * epoch)``, with epochs counted from 0."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return config.eta0 / (1.0 + config.rho * epoch)


def clip_gradients(params, clip_norm: float, mode: str = "norm") -> float:
    """Rescale gradients so their global L2 norm is at most ``clip_norm``.

    Returns the factor applied (1.0 when nothing changed). With
    ``mode="value"`` each entry is clamped to ``[-clip_norm, clip_norm]``
    instead and 1.0 is returned.
    """
    params = list(params)
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise TrainingDivergedError(f"non-finite gradient in {p.name}")
    if mode == "value":
        for p in params:
            np.clip(p.grad, -clip_norm, clip_norm, out=p.grad)
        return 1.0
    total = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))
    if total <= clip_norm:
        return 1.0
    factor = clip_norm / total
    for p in params:
        p.grad *= factor
    return factor


def sgd_momentum_step(params, velocities: dict, lr: float, momentum: float) -> None:
    """Heavy-ball update ``v = momentum*v - lr*grad; theta += v``, then zero the grads."""
    for p in params:
        v = velocities.get(p.name)
        if v is None:
            v = np.zeros_like(p.values)
        v = momentum * v - lr * p.grad
        velocities[p.name] = v
        p.values += v
        p.grad = np.zeros_like(p.values)


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int
    best_metrics: dict
    history: list = field(default_factory=list)


def dev_metric(report, task) -> tuple:
    """Early-stopping key: accuracy for POS, (F1, accuracy) otherwise."""
    if task == "pos":
        return (report.token_accuracy,)
    return (report.f1, report.token_accuracy)


def evaluate_model(model: SequenceTagger, sentences, task="ner", embedding_vocab=frozenset(),
                   train_vocab=None):
    pred = model.predict(sentences)
    train_vocab = train_vocab if train_vocab is not None else model.word_vocab
    return evaluate([s.tokens for s in sentences], [s.labels for s in sentences], pred, task,
                    train_vocab, embedding_vocab), pred


def train(model: SequenceTagger, corpus: Corpus, config: TrainConfig,
          on_epoch: Callable[[dict], None] | None = None, embedding_vocab=frozenset()) -> TrainResult:
    """Train with early stopping on the dev split (the training split if there is none).

    Each epoch shuffles, runs summed-NLL mini-batches through backward,
    clipping and one momentum step per batch, then scores the dev split.
    The best state is kept; training stops after ``patience`` epochs
    without strict improvement or at ``max_epochs``.
    """
    config.validate()
    rng = RngState(config.seed)
    shuffle_rng = rng.generator("shuffle")
    dropout_rng = rng.generator("dropout")
    dev = corpus.dev if corpus.dev else corpus.train
    params = model.parameters()
    velocities: dict = {}
    history = []
    best_key, best_state, best_epoch, best_metrics = None, model.state_dict(), 0, {}
    stale = 0

    for epoch in range(config.max_epochs):
        lr = lr_at(epoch, config)
        total_loss = 0.0
        n_sent = 0
        for batch in make_batches(corpus.train, config.batch_size, shuffle_rng):
            model.zero_grad()
            try:
                loss = model.loss(batch, training=True, rng=dropout_rng, dropout_rate=config.dropout)
                ad.backward(loss)
                clip_gradients(params, config.clip_norm, config.clip_mode)
            except (NonFiniteError, TrainingDivergedError) as e:
                raise TrainingDivergedError(f"epoch {epoch + 1}: {e}", best_state, history) from e
            sgd_momentum_step(params, velocities, lr, config.momentum)
            total_loss += loss.item()
            n_sent += len(batch)

        report, _ = evaluate_model(model, dev, corpus.task, embedding_vocab, corpus.train_words)
        key = dev_metric(report, corpus.task)
        improved = best_key is None or key > best_key
        if improved:
            best_key, best_state, best_epoch = key, model.state_dict(), epoch + 1
            best_metrics = {"f1": report.f1, "token_accuracy": report.token_accuracy}
            stale = 0
        else:
            stale += 1
        entry = {
            "epoch": epoch + 1,
            "lr": lr,
            "train_loss": total_loss / max(n_sent, 1),
            "dev_f1": report.f1,
            "dev_token_accuracy": report.token_accuracy,
            "best_epoch": best_epoch,
        }
        history.append(entry)
        log.info("epoch %d lr %.6f loss %.4f dev f1 %.4f acc %.4f", entry["epoch"], lr,
                 entry["train_loss"], report.f1, report.token_accuracy)
        if on_epoch is not None:
            on_epoch(entry)
        if stale >= config.patience:
            break

    return TrainResult(best_state, best_epoch, best_metrics, history)
