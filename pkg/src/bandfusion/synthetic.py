"""Synthetic paired HSI/LiDAR scenes with known band-level ground truth.

Planted bands carry class-separated mean levels, LiDAR-redundant bands are
noisy affine copies of a LiDAR channel (high Pearson correlation with it),
and the rest is pure noise. Labels come as random blocks so patches stay
class-coherent. Everything is normalized through the dataio rules before
being returned, which preserves Pearson correlations and relative class
separations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio
from .errors import ValidationError


@dataclass
class SynthSpec:
    width: int = 64
    height: int = 64
    bands: int = 40
    lidar_channels: int = 1
    classes: int = 4
    planted_bands: list[int] = field(default_factory=lambda: [2, 7, 12, 17, 22, 27, 32, 37])
    lidar_redundant_bands: list[int] = field(default_factory=lambda: [0, 5, 10, 15, 20, 25, 30, 35])
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ValidationError("synth spec: need at least 2 classes")
        if self.noise_sigma < 0:
            raise ValidationError("synth spec: noise_sigma must be >= 0")
        planted = list(self.planted_bands)
        if planted != sorted(set(planted)):
            raise ValidationError("synth spec: planted_bands must strictly increase")
        if set(planted) & set(self.lidar_redundant_bands):
            raise ValidationError("synth spec: planted and redundant bands overlap")
        for b in list(planted) + list(self.lidar_redundant_bands):
            if not 0 <= b < self.bands:
                raise ValidationError(f"synth spec: band index {b} outside [0, {self.bands})")


@dataclass
class SynthTruth:
    planted_bands: list[int]
    signatures: np.ndarray  # (K, n_planted) pre-normalization class levels
    lidar_heights: np.ndarray  # (K, C) pre-normalization class heights
    redundant_bands: list[int]


def _smooth_field(rng, width, height, cells: int = 8) -> np.ndarray:
    """Unit-variance noise field, smooth at roughly width/cells scale."""
    gw = max(2, min(cells, width))
    gh = max(2, min(cells, height))
    coarse = rng.normal(0.0, 1.0, size=(gh, gw))
    rows = np.linspace(0, gh - 1, height)
    cols = np.linspace(0, gw - 1, width)
    r0 = np.floor(rows).astype(int).clip(0, gh - 2)
    c0 = np.floor(cols).astype(int).clip(0, gw - 2)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    return (
        coarse[np.ix_(r0, c0)] * (1 - fr) * (1 - fc)
        + coarse[np.ix_(r0 + 1, c0)] * fr * (1 - fc)
        + coarse[np.ix_(r0, c0 + 1)] * (1 - fr) * fc
        + coarse[np.ix_(r0 + 1, c0 + 1)] * fr * fc
    )


def _paint_labels(rng, width, height, k) -> np.ndarray:
    """Horizontal strips overpainted with random class rectangles."""
    labels = np.zeros((height, width), dtype=np.int32)
    edges = np.linspace(0, height, k + 1).astype(int)
    for ci in range(k):
        labels[edges[ci] : edges[ci + 1], :] = ci + 1

    def rect(cls):
        lo_h = max(2, height // 8)
        hi_h = max(lo_h + 1, height // 3)
        lo_w = max(2, width // 8)
        hi_w = max(lo_w + 1, width // 3)
        rh = int(rng.integers(lo_h, hi_h + 1))
        rw = int(rng.integers(lo_w, hi_w + 1))
        r0 = int(rng.integers(0, height - rh + 1))
        c0 = int(rng.integers(0, width - rw + 1))
        labels[r0 : r0 + rh, c0 : c0 + rw] = cls

    for _ in range(3 * k):
        rect(1 + int(rng.integers(k)))
    floor = (width * height) // (8 * k)
    for _ in range(50):
        counts = np.bincount(labels.ravel(), minlength=k + 1)[1:]
        lacking = [ci + 1 for ci in range(k) if counts[ci] < floor]
        if not lacking:
            break
        for cls in lacking:
            rect(cls)
    return labels


def generate(spec: SynthSpec):
    """Build (HsiCube, LidarRaster, LabelMap, SynthTruth) for a spec, deterministically."""
    rng = np.random.default_rng(spec.seed)
    w, h, k = spec.width, spec.height, spec.classes
    sigma = spec.noise_sigma
    labels = _paint_labels(rng, w, h, k)
    class_idx = labels - 1  # all pixels labeled

    # class levels on planted bands, spaced 4 sigma apart (unit spacing when noiseless)
    delta = 4.0 * sigma if sigma > 0 else 1.0
    n_planted = len(spec.planted_bands)
    signatures = np.zeros((k, n_planted))
    for j in range(n_planted):
        base = rng.uniform(0.0, 0.2)
        order = rng.permutation(k)
        signatures[:, j] = base + order * delta

    # LiDAR: weakly separated class heights, so redundant bands track LiDAR
    # without rivaling the planted bands as class evidence
    hspace = 0.5 * sigma if sigma > 0 else 0.5
    heights = np.zeros((k, spec.lidar_channels))
    for c in range(spec.lidar_channels):
        base = rng.uniform(0.3, 0.5)
        order = rng.permutation(k)
        heights[:, c] = base + order * hspace

    lidar_values = np.zeros((h, w, spec.lidar_channels))
    for c in range(spec.lidar_channels):
        lidar_values[:, :, c] = heights[class_idx, c] + rng.normal(0.0, sigma, size=(h, w))

    cube_values = np.zeros((h, w, spec.bands))
    planted = set(spec.planted_bands)
    redundant = set(spec.lidar_redundant_bands)
    planted_col = {b: j for j, b in enumerate(spec.planted_bands)}
    for b in range(spec.bands):
        if b in planted:
            level = signatures[class_idx, planted_col[b]]
            cube_values[:, :, b] = level + rng.normal(0.0, sigma, size=(h, w))
        elif b in redundant:
            src = lidar_values[:, :, b % spec.lidar_channels]
            slope = rng.uniform(0.8, 1.5)
            intercept = rng.uniform(-0.3, 0.3)
            cube_values[:, :, b] = slope * src + intercept + rng.normal(
                0.0, 0.3 * sigma, size=(h, w)
            )
        else:
            # pure noise: a smooth random field plus white noise, so patches
            # of these bands fluctuate sample to sample instead of averaging out
            mu = rng.uniform(0.3, 0.7)
            field = _smooth_field(rng, w, h) * (4.0 * sigma)
            cube_values[:, :, b] = mu + field + rng.normal(0.0, sigma, size=(h, w))

    cube = dataio.normalize_per_band(
        dataio.HsiCube(width=w, height=h, bands=spec.bands, values=cube_values)
    )
    lidar = dataio.normalize_per_channel(
        dataio.LidarRaster(width=w, height=h, channels=spec.lidar_channels,
                           values=lidar_values)
    )
    label_map = dataio.LabelMap(width=w, height=h, labels=labels)
    truth = SynthTruth(
        planted_bands=list(spec.planted_bands),
        signatures=signatures,
        lidar_heights=heights,
        redundant_bands=list(spec.lidar_redundant_bands),
    )
    return cube, lidar, label_map, truth


def recovery_score(selected, truth: SynthTruth) -> float:
    """|selected ∩ planted| / min(|selected|, |planted|); 0 when either is empty."""
    sel = set(int(i) for i in selected)
    planted = set(truth.planted_bands)
    denom = min(len(sel), len(planted))
    if denom == 0:
        return 0.0
    return len(sel & planted) / denom


def save_truth(path, truth: SynthTruth, spec: SynthSpec) -> None:
    doc = {
        "planted_bands": truth.planted_bands,
        "redundant_bands": truth.redundant_bands,
        "signatures": truth.signatures.tolist(),
        "lidar_heights": truth.lidar_heights.tolist(),
        "spec": {
            "width": spec.width,
            "height": spec.height,
            "bands": spec.bands,
            "lidar_channels": spec.lidar_channels,
            "classes": spec.classes,
            "noise_sigma": spec.noise_sigma,
            "seed": spec.seed,
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_truth(path) -> SynthTruth:
    doc = json.loads(Path(path).read_text())
    return SynthTruth(
        planted_bands=[int(b) for b in doc["planted_bands"]],
        signatures=np.asarray(doc["signatures"], dtype=np.float64),
        lidar_heights=np.asarray(doc["lidar_heights"], dtype=np.float64),
        redundant_bands=[int(b) for b in doc.get("redundant_bands", [])],
    )
