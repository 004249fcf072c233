"""Downstream fused classification and the OA/AA/Kappa metric suite."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dataio
from .errors import ValidationError
from .numerics import (
    AdamState,
    Tape,
    Tensor,
    adam_step,
    backward,
    cross_entropy,
    linear,
    relu,
    zero_grads,
)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (K, K), rows = true class, cols = predicted

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValidationError(f"confusion matrix must be square, got {self.counts.shape}")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricsReport:
    oa: float
    aa: float
    kappa: float
    per_class: list[float]  # NaN where a class has no test samples
    absent_classes: list[int] = field(default_factory=list)


def confusion(preds, truths, num_classes: int) -> ConfusionMatrix:
    """Tally (true, predicted) pairs; labels are 1-based."""
    preds = np.asarray(preds, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if preds.shape != truths.shape:
        raise ValidationError(
            f"confusion: {preds.size} predictions vs {truths.size} truths"
        )
    for name, arr in (("prediction", preds), ("truth", truths)):
        if arr.size and (arr.min() < 1 or arr.max() > num_classes):
            raise ValidationError(
                f"confusion: {name} labels outside 1..{num_classes}"
            )
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (truths - 1, preds - 1), 1)
    return ConfusionMatrix(counts)


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Overall accuracy, average accuracy, and Cohen's kappa.

    Classes with no true samples are excluded from AA and flagged. When
    expected agreement reaches 1, kappa is 1 for a perfect matrix and 0
    otherwise.
    """
    counts = cm.counts
    total = cm.total
    if total == 0:
        raise ValidationError("metrics: empty confusion matrix")
    diag = np.diag(counts).astype(np.float64)
    row = counts.sum(axis=1).astype(np.float64)
    col = counts.sum(axis=0).astype(np.float64)
    oa = float(diag.sum() / total)
    per_class = [float(diag[i] / row[i]) if row[i] > 0 else float("nan")
                 for i in range(counts.shape[0])]
    absent = [i + 1 for i in range(counts.shape[0]) if row[i] == 0]
    defined = [a for a in per_class if not np.isnan(a)]
    aa = float(np.mean(defined))
    pe = float((row * col).sum() / (total * total))
    if pe >= 1.0:
        kappa = 1.0 if oa == 1.0 else 0.0
    else:
        kappa = (oa - pe) / (1.0 - pe)
    return MetricsReport(oa=oa, aa=aa, kappa=float(kappa), per_class=per_class,
                         absent_classes=absent)


@dataclass
class EvalClassifierConfig:
    """Built-in MLP that scores selected bands + LiDAR fusion."""

    patch_size: int = 3
    hidden_dim: int = 128
    learning_rate: float = 1e-3
    epochs: int = 100
    seed: int = 0


def _patch_features(cube, lidar, centers, patch_size):
    rows = []
    for center in centers:
        s = dataio.extract_patch(cube, lidar, center, patch_size)
        rows.append(np.concatenate([s.hsi_patch.ravel(), s.lidar_patch.ravel()]))
    return np.stack(rows)


def evaluate_fusion(
    cube_reduced: dataio.HsiCube,
    lidar: dataio.LidarRaster,
    labels: dataio.LabelMap,
    split_spec: dataio.SplitSpec,
    classifier_config: EvalClassifierConfig | None = None,
) -> MetricsReport:
    """Train the built-in MLP on train pixels, score on test pixels.

    Per pixel the feature vector is the flattened patch of selected bands
    concatenated with the flattened LiDAR patch.
    """
    cfg = classifier_config or EvalClassifierConfig()
    if cube_reduced.bands < 1:
        raise ValidationError("evaluate_fusion: no bands selected")
    train_centers, test_centers = dataio.split(labels, split_spec)
    if not train_centers or not test_centers:
        raise ValidationError("evaluate_fusion: split produced an empty side")
    k = labels.num_classes
    x_train = _patch_features(cube_reduced, lidar, train_centers, cfg.patch_size)
    y_train = np.array([labels.labels[r, c] - 1 for r, c in train_centers])
    x_test = _patch_features(cube_reduced, lidar, test_centers, cfg.patch_size)
    y_test = np.array([labels.labels[r, c] for r, c in test_centers])

    rng = np.random.default_rng(cfg.seed)
    dim = x_train.shape[1]

    def init(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                      requires_grad=True)

    w1 = init(dim, cfg.hidden_dim)
    b1 = Tensor(np.zeros(cfg.hidden_dim), requires_grad=True)
    w2 = init(cfg.hidden_dim, k)
    b2 = Tensor(np.zeros(k), requires_grad=True)
    params = [w1, b1, w2, b2]
    state = AdamState.for_params(params)
    x_t = Tensor(x_train)
    for _ in range(cfg.epochs):
        zero_grads(params)
        with Tape() as tape:
            logits = linear(relu(linear(x_t, w1, b1)), w2, b2)
            loss = cross_entropy(logits, y_train)
        backward(loss, tape)
        adam_step(params, [p.grad for p in params], state, cfg.learning_rate)

    hidden = np.maximum(x_test @ w1.data + b1.data, 0.0)
    scores = hidden @ w2.data + b2.data
    preds = scores.argmax(axis=1) + 1
    return metrics(confusion(preds, y_test, k))
