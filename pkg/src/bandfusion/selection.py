"""Band ranking strategies: cross-attention weights and two self-attention ablations."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dataio, model
from .errors import ContractError, ValidationError

STRATEGY_CROSS = "cross"
STRATEGY_SELF_A = "selfA"
STRATEGY_SELF_B = "selfB"


@dataclass
class BandWeightRecord:
    sample_index: int
    label: int
    weights: np.ndarray  # (B,)


@dataclass
class BandRanking:
    scores: np.ndarray  # (B,)
    order: np.ndarray  # permutation of 0..B-1, descending score, ties by index
    strategy: str
    aggregation: str


def _rank(scores: np.ndarray, strategy: str, aggregation: str) -> BandRanking:
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    return BandRanking(scores=scores, order=order, strategy=strategy,
                       aggregation=aggregation)


def collect_weights(params: model.ModelParams, samples, config=None) -> list[BandWeightRecord]:
    """One head-averaged cross-attention weight vector per sample.

    For multi-channel LiDAR the C query rows are averaged, so every record
    still sums to 1.
    """
    if not isinstance(params, model.ModelParams):
        raise ContractError("collect_weights needs the cross-attention architecture")
    records = []
    for i, s in enumerate(samples):
        att = model.forward(s, params, config).att_weights.data
        records.append(BandWeightRecord(sample_index=i, label=s.label,
                                        weights=att.mean(axis=0)))
    return records


def aggregate(records: list[BandWeightRecord], class_id: int | None = None,
              strategy: str = STRATEGY_CROSS) -> BandRanking:
    """Mean of record weights, in fixed sample order; optionally one class only."""
    if not records:
        raise ValidationError("aggregate: no records")
    chosen = sorted(records, key=lambda r: r.sample_index)
    if class_id is not None:
        chosen = [r for r in chosen if r.label == class_id]
        if not chosen:
            raise ValidationError(f"aggregate: no records for class {class_id}")
    stacked = np.stack([r.weights for r in chosen])
    scores = stacked.mean(axis=0)
    tag = "global" if class_id is None else f"class_{class_id}"
    return _rank(scores, strategy, tag)


def select_top_k(ranking: BandRanking, k: int) -> list[int]:
    """The k highest-scoring bands, returned in ascending band order."""
    b = ranking.scores.size
    if not 1 <= k <= b:
        raise ValidationError(f"select_top_k: k={k} outside 1..{b}")
    return sorted(int(i) for i in ranking.order[:k])


def _column_mean_scores(attn_layers) -> np.ndarray:
    """Mean incoming attention mass per band over layers, heads, and queries."""
    per = [w.mean(axis=0) for maps in attn_layers for w in maps]
    return np.mean(per, axis=0)


def selfattn_importance(params, samples, variant: str, config=None) -> BandRanking:
    """Ablation rankings from self-attention mass.

    Variant B scores bands by the column means of the HSI-only model's
    self-attention maps. Variant A runs on the full model and averages the
    HSI-stream column-mean score with a cross-stream score formed by
    pushing the LiDAR encoder output through the last HSI encoder layer's
    query projections against that layer's keys.
    """
    if variant == STRATEGY_SELF_B or variant == "B":
        if not isinstance(params, model.HsiOnlyParams):
            raise ContractError("variant B needs the HSI-only architecture")
        cfg = config or params.config
        per_sample = []
        for s in samples:
            capture: dict = {}
            model.forward_hsi_only(s, params, cfg, capture)
            per_sample.append(_column_mean_scores(capture["hsi_self_attn"]))
        return _rank(np.mean(per_sample, axis=0), STRATEGY_SELF_B, "global")

    if variant == STRATEGY_SELF_A or variant == "A":
        if not isinstance(params, model.ModelParams):
            raise ContractError("variant A needs the cross-attention architecture")
        cfg = config or params.config
        last = params.hsi_encoder[-1]
        dk = cfg.head_dim
        per_sample = []
        for s in samples:
            capture: dict = {}
            model.forward(s, params, cfg, capture)
            hsi_score = _column_mean_scores(capture["hsi_self_attn"])
            # LiDAR output as an extra query against the last layer's HSI keys
            lidar_out = capture["lidar_encoded"]
            mu = lidar_out.mean(axis=1, keepdims=True)
            var = lidar_out.var(axis=1, keepdims=True)
            normed = (lidar_out - mu) / np.sqrt(var + model.LAYER_NORM_EPS)
            normed = normed * last.norm1_gamma.data + last.norm1_beta.data
            keys_in = capture["hsi_last_normed"]
            rows = []
            for wq, wk in zip(last.wq, last.wk):
                scores = (normed @ wq.data) @ (keys_in @ wk.data).T / math.sqrt(dk)
                e = np.exp(scores - scores.max(axis=1, keepdims=True))
                rows.append((e / e.sum(axis=1, keepdims=True)).mean(axis=0))
            cross_score = np.mean(rows, axis=0)
            per_sample.append(0.5 * (hsi_score + cross_score))
        return _rank(np.mean(per_sample, axis=0), STRATEGY_SELF_A, "global")

    raise ValidationError(f"unknown self-attention variant {variant!r}")


def reduce_cube(cube: dataio.HsiCube, band_indices) -> dataio.HsiCube:
    """Restrict a cube to the listed bands; indices must strictly increase."""
    idx = [int(i) for i in band_indices]
    if not idx:
        raise ValidationError("reduce_cube: empty band list")
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise ValidationError(f"reduce_cube: indices must strictly increase, got {idx}")
    if idx[0] < 0 or idx[-1] >= cube.bands:
        raise ValidationError(f"reduce_cube: index out of range for {cube.bands} bands")
    names = [cube.band_names[i] for i in idx] if cube.band_names else None
    return dataio.HsiCube(
        width=cube.width,
        height=cube.height,
        bands=len(idx),
        values=cube.values[:, :, idx].copy(),
        band_names=names,
    )
