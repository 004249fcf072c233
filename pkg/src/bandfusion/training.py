"""Mini-batch Adam training with stratified validation and early stopping."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import dataio, model
from .errors import ValidationError
from .numerics import (
    AdamState,
    Tape,
    add,
    adam_step,
    backward,
    cross_entropy,
    mul_scalar,
    reshape,
    zero_grads,
)


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 50
    learning_rate: float = 1e-4
    early_stop_patience: int = 10
    min_delta: float = 1e-4
    val_fraction: float = 0.1
    seed: int = 0
    augment: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("train config: batch_size must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValidationError("train config: val_fraction must lie in (0, 1)")
        if self.max_epochs < 1:
            raise ValidationError("train config: max_epochs must be >= 1")


@dataclass
class RunLog:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_oa: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    wall_seconds: float = 0.0


def _stratified_holdout(samples, val_fraction, rng):
    """Per-class validation indices; every class keeps at least one train sample."""
    by_class: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        by_class.setdefault(s.label, []).append(i)
    val: list[int] = []
    train: list[int] = []
    for label in sorted(by_class):
        idx = by_class[label]
        n = len(idx)
        n_val = min(int(round(n * val_fraction)), n - 1)
        perm = rng.permutation(n)
        chosen = {idx[j] for j in perm[:n_val]}
        val += sorted(chosen)
        train += sorted(set(idx) - chosen)
    return sorted(train), sorted(val)


def _sample_loss(params, sample, num_classes):
    logits = model.forward_logits(params, sample)
    return cross_entropy(reshape(logits, (1, num_classes)), [sample.label - 1])


def _evaluate(params, samples, num_classes):
    """(mean loss, overall accuracy) without recording gradients."""
    total = 0.0
    correct = 0
    for s in samples:
        logits = model.forward_logits(params, s)
        loss = cross_entropy(reshape(logits, (1, num_classes)), [s.label - 1])
        total += float(loss.data)
        if int(np.argmax(logits.data)) + 1 == s.label:
            correct += 1
    n = len(samples)
    return total / n, correct / n


def train(params, samples, model_config: model.ModelConfig | None = None,
          train_config: TrainConfig | None = None):
    """Train in place; returns (params, RunLog).

    Holds out a stratified validation fraction for early stopping on
    validation loss (min_delta improvements reset patience), optionally
    expands the remaining training samples 5x by augmentation before the
    first epoch, and restores the best-validation weights at exit. With the
    same seed, data, and configs the result is bit-for-bit reproducible.
    """
    model_config = model_config or params.config
    train_config = train_config or TrainConfig()
    if not samples:
        raise ValidationError("train: sample set is empty")
    k = model_config.num_classes
    for s in samples:
        if not 1 <= s.label <= k:
            raise ValidationError(f"train: label {s.label} outside 1..{k}")

    started = time.perf_counter()
    rng = np.random.default_rng(train_config.seed)
    train_idx, val_idx = _stratified_holdout(samples, train_config.val_fraction, rng)
    train_samples = [samples[i] for i in train_idx]
    val_samples = [samples[i] for i in val_idx]
    if train_config.augment:
        train_samples = [a for s in train_samples for a in dataio.augment(s)]
    # with no validation samples (tiny sets), early stopping watches train loss
    monitor_val = bool(val_samples)

    tensors = model.parameters(params)
    for t in tensors:
        t.requires_grad = True
    state = AdamState.for_params(tensors)
    log = RunLog()
    best_loss = np.inf
    best_data = None
    since_best = 0

    for epoch in range(train_config.max_epochs):
        order = rng.permutation(len(train_samples))
        epoch_loss = 0.0
        for start in range(0, len(order), train_config.batch_size):
            batch = [train_samples[i] for i in order[start : start + train_config.batch_size]]
            zero_grads(tensors)
            with Tape() as tape:
                total = None
                for s in batch:
                    loss = _sample_loss(params, s, k)
                    total = loss if total is None else add(total, loss)
                batch_loss = mul_scalar(total, 1.0 / len(batch))
            backward(batch_loss, tape)
            adam_step(tensors, [t.grad for t in tensors], state, train_config.learning_rate)
            epoch_loss += float(batch_loss.data) * len(batch)
        log.train_loss.append(epoch_loss / len(train_samples))

        if monitor_val:
            vloss, voa = _evaluate(params, val_samples, k)
        else:
            vloss, voa = log.train_loss[-1], float("nan")
        log.val_loss.append(vloss)
        log.val_oa.append(voa)

        if vloss < best_loss - train_config.min_delta:
            best_loss = vloss
            best_data = [t.data.copy() for t in tensors]
            since_best = 0
        else:
            since_best += 1
        if since_best > train_config.early_stop_patience:
            break

    if best_data is not None:
        for t, data in zip(tensors, best_data):
            t.data = data
    log.stopped_epoch = len(log.train_loss)
    log.wall_seconds = time.perf_counter() - started
    return params, log


def predict(params, sample) -> int:
    """1-based class of the largest logit; ties go to the lowest class id."""
    logits = model.forward_logits(params, sample)
    return int(np.argmax(logits.data)) + 1
