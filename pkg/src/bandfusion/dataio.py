"""Raster containers, patch sampling, splits, augmentation, band statistics.

Rasters travel as a text header plus a raw little-endian binary file of
row-major, channel-interleaved values. Headers, split specs and config
files all share the same ``key: value`` line format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LoadError, ValidationError
from .numerics import Tensor

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"), "i32": np.dtype("<i4")}


# --- key/value text files ---


def read_kv(path) -> dict[str, str]:
    """Parse a ``key: value`` text file; '#' starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"file not found: {path}")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise LoadError(f"{path}:{lineno}: expected 'key: value', got {raw!r}")
        key, value = line.split(":", 1)
        out[key.strip()] = value.strip()
    return out


def write_kv(path, fields: dict) -> None:
    lines = [f"{k}: {v}" for k, v in fields.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def _kv_int(kv: dict[str, str], key: str, source) -> int:
    if key not in kv:
        raise LoadError(f"{source}: missing field '{key}'")
    try:
        return int(kv[key])
    except ValueError as exc:
        raise LoadError(f"{source}: field '{key}' is not an integer: {kv[key]!r}") from exc


# --- raster domain types ---


@dataclass
class HsiCube:
    """Co-registered reflectance cube, values shaped (height, width, bands)."""

    width: int
    height: int
    bands: int
    values: np.ndarray
    band_names: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(
            self.height, self.width, self.bands
        )


@dataclass
class LidarRaster:
    """Rasterized elevation channels, values shaped (height, width, channels)."""

    width: int
    height: int
    channels: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(
            self.height, self.width, self.channels
        )


@dataclass
class LabelMap:
    """Integer class map, 0 = unlabeled, 1..K = classes."""

    width: int
    height: int
    labels: np.ndarray
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32).reshape(
            self.height, self.width
        )
        k = int(self.labels.max()) if self.labels.size else 0
        if not self.class_names:
            self.class_names = [f"class_{i}" for i in range(1, k + 1)]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


@dataclass
class SamplePair:
    """One HSI patch paired with its LiDAR patch and a class label."""

    hsi_patch: np.ndarray  # (P, P, B)
    lidar_patch: np.ndarray  # (P, P, C)
    label: int
    center: tuple[int, int]


@dataclass
class SplitSpec:
    """Per-class training pixel counts (or one global count) plus a seed."""

    train_count: int | None = None
    train_counts: dict[int, int] | None = None
    seed: int = 0

    def count_for(self, class_id: int) -> int:
        if self.train_counts is not None:
            if class_id not in self.train_counts:
                raise ValidationError(f"split spec has no count for class {class_id}")
            return self.train_counts[class_id]
        if self.train_count is None:
            raise ValidationError("split spec needs train_count or train_counts")
        return self.train_count


# --- container load/save ---


def load_raster(header_path) -> tuple[np.ndarray, str]:
    """Read a container; returns (array shaped (H, W, C), dtype tag)."""
    header_path = Path(header_path)
    kv = read_kv(header_path)
    width = _kv_int(kv, "width", header_path)
    height = _kv_int(kv, "height", header_path)
    channels = _kv_int(kv, "channels", header_path)
    dtype_tag = kv.get("dtype", "")
    if dtype_tag not in _DTYPES:
        raise LoadError(f"{header_path}: unknown dtype {dtype_tag!r}")
    if kv.get("byte_order", "little") != "little":
        raise LoadError(f"{header_path}: unsupported byte_order {kv.get('byte_order')!r}")
    if "data_file" not in kv:
        raise LoadError(f"{header_path}: missing field 'data_file'")
    data_path = header_path.parent / kv["data_file"]
    if not data_path.is_file():
        raise LoadError(f"data file not found: {data_path}")
    dtype = _DTYPES[dtype_tag]
    expected = width * height * channels * dtype.itemsize
    actual = data_path.stat().st_size
    if actual != expected:
        raise LoadError(
            f"{data_path}: expected {expected} bytes for "
            f"{width}x{height}x{channels} {dtype_tag}, found {actual}"
        )
    flat = np.fromfile(data_path, dtype=dtype)
    return flat.reshape(height, width, channels), dtype_tag


def save_raster(header_path, values: np.ndarray, dtype_tag: str = "f64") -> None:
    header_path = Path(header_path)
    if dtype_tag not in _DTYPES:
        raise ValidationError(f"unknown dtype {dtype_tag!r}")
    arr = np.ascontiguousarray(values, dtype=_DTYPES[dtype_tag])
    if arr.ndim != 3:
        raise ValidationError(f"raster values must be 3-D, got shape {arr.shape}")
    data_name = header_path.stem + ".bin"
    header_path.parent.mkdir(parents=True, exist_ok=True)
    arr.tofile(header_path.parent / data_name)
    write_kv(
        header_path,
        {
            "width": arr.shape[1],
            "height": arr.shape[0],
            "channels": arr.shape[2],
            "dtype": dtype_tag,
            "byte_order": "little",
            "data_file": data_name,
        },
    )


def load_cube(header_path) -> HsiCube:
    values, _ = load_raster(header_path)
    h, w, b = values.shape
    return HsiCube(width=w, height=h, bands=b, values=values.astype(np.float64))


def save_cube(header_path, cube: HsiCube, dtype_tag: str = "f64") -> None:
    save_raster(header_path, cube.values, dtype_tag)


def load_lidar(header_path) -> LidarRaster:
    values, _ = load_raster(header_path)
    h, w, c = values.shape
    return LidarRaster(width=w, height=h, channels=c, values=values.astype(np.float64))


def save_lidar(header_path, lidar: LidarRaster, dtype_tag: str = "f64") -> None:
    save_raster(header_path, lidar.values, dtype_tag)


def load_labels(header_path) -> LabelMap:
    values, dtype_tag = load_raster(header_path)
    if dtype_tag != "i32":
        raise LoadError(f"{header_path}: label maps must be i32, got {dtype_tag}")
    if values.shape[2] != 1:
        raise LoadError(f"{header_path}: label maps must have one channel")
    h, w, _ = values.shape
    return LabelMap(width=w, height=h, labels=values[:, :, 0].astype(np.int32))


def save_labels(header_path, labels: LabelMap) -> None:
    save_raster(header_path, labels.labels[:, :, None], "i32")


# --- normalization ---


def normalize_per_band(cube: HsiCube) -> HsiCube:
    """Min-max scale each band to [0, 1]; constant bands map to 0."""
    return HsiCube(
        width=cube.width,
        height=cube.height,
        bands=cube.bands,
        values=_minmax(cube.values),
        band_names=cube.band_names,
    )


def normalize_per_channel(lidar: LidarRaster) -> LidarRaster:
    return LidarRaster(
        width=lidar.width,
        height=lidar.height,
        channels=lidar.channels,
        values=_minmax(lidar.values),
    )


def _minmax(values: np.ndarray) -> np.ndarray:
    lo = values.min(axis=(0, 1), keepdims=True)
    hi = values.max(axis=(0, 1), keepdims=True)
    span = hi - lo
    span = np.where(span == 0.0, 1.0, span)
    out = (values - lo) / span
    return np.where(hi == lo, 0.0, out)


# --- patch sampling ---


def _reflect_index(i: np.ndarray, n: int) -> np.ndarray:
    """Mirror indices into [0, n) without repeating the edge (-1 -> 1)."""
    if n == 1:
        return np.zeros_like(i)
    period = 2 * n - 2
    m = np.mod(i, period)
    return np.where(m >= n, period - m, m)


def extract_patch(
    cube: HsiCube,
    lidar: LidarRaster,
    center: tuple[int, int],
    patch_size: int,
    label: int = 0,
) -> SamplePair:
    """Cut the P-by-P neighborhood around (row, col), mirror-padded at borders."""
    if patch_size % 2 == 0 or patch_size < 1:
        raise ValidationError(f"patch size must be odd and positive, got {patch_size}")
    row, col = center
    if not (0 <= row < cube.height and 0 <= col < cube.width):
        raise ValidationError(f"center {center} outside raster {cube.height}x{cube.width}")
    if (lidar.height, lidar.width) != (cube.height, cube.width):
        raise ValidationError(
            f"lidar dims {lidar.height}x{lidar.width} differ from cube "
            f"{cube.height}x{cube.width}"
        )
    half = patch_size // 2
    rows = _reflect_index(np.arange(row - half, row + half + 1), cube.height)
    cols = _reflect_index(np.arange(col - half, col + half + 1), cube.width)
    hsi = cube.values[np.ix_(rows, cols)]
    lid = lidar.values[np.ix_(rows, cols)]
    return SamplePair(hsi_patch=hsi.copy(), lidar_patch=lid.copy(), label=label, center=(row, col))


def gather_samples(
    cube: HsiCube,
    lidar: LidarRaster,
    labels: LabelMap,
    centers,
    patch_size: int,
) -> list[SamplePair]:
    out = []
    for row, col in centers:
        lab = int(labels.labels[row, col])
        if lab == 0:
            raise ValidationError(f"center ({row}, {col}) is unlabeled")
        out.append(extract_patch(cube, lidar, (row, col), patch_size, label=lab))
    return out


def tokenize(sample: SamplePair) -> tuple[Tensor, Tensor]:
    """Band-wise tokens: row i holds band i's P*P pixels in row-major order."""
    p, _, b = sample.hsi_patch.shape
    c = sample.lidar_patch.shape[2]
    hsi = sample.hsi_patch.reshape(p * p, b).T.copy()
    lid = sample.lidar_patch.reshape(p * p, c).T.copy()
    return Tensor(hsi), Tensor(lid)


# --- splits ---


def split(labels: LabelMap, spec: SplitSpec) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Seeded per-class train/test partition of all labeled pixels."""
    rng = np.random.default_rng(spec.seed)
    train: list[tuple[int, int]] = []
    test: list[tuple[int, int]] = []
    k = int(labels.labels.max())
    for class_id in range(1, k + 1):
        rows, cols = np.nonzero(labels.labels == class_id)
        n = rows.size
        if n == 0:
            continue
        want = spec.count_for(class_id)
        if want < 0 or want > n:
            raise ValidationError(
                f"class {class_id}: requested {want} training pixels, only {n} available"
            )
        perm = rng.permutation(n)
        picked = set(perm[:want].tolist())
        for i in range(n):
            pt = (int(rows[i]), int(cols[i]))
            (train if i in picked else test).append(pt)
    return train, test


# --- augmentation ---


def _rotate90(patch: np.ndarray) -> np.ndarray:
    return np.rot90(patch, k=1, axes=(0, 1)).copy()


def _flip_vertical(patch: np.ndarray) -> np.ndarray:
    return patch[::-1, :, :].copy()


def _flip_horizontal(patch: np.ndarray) -> np.ndarray:
    return patch[:, ::-1, :].copy()


def _rotate45(patch: np.ndarray) -> np.ndarray:
    """Bilinear 45-degree rotation about the patch center, mirror-padded."""
    p = patch.shape[0]
    c = (p - 1) / 2.0
    cos = sin = math.sqrt(0.5)
    jj, ii = np.meshgrid(np.arange(p), np.arange(p))
    u = ii - c
    v = jj - c
    # inverse map: rotate output coords by -45 degrees into the source
    src_r = cos * u + sin * v + c
    src_c = -sin * u + cos * v + c
    r0 = np.floor(src_r).astype(int)
    c0 = np.floor(src_c).astype(int)
    fr = (src_r - r0)[:, :, None]
    fc = (src_c - c0)[:, :, None]
    out = np.zeros_like(patch)
    for dr in (0, 1):
        for dc in (0, 1):
            rr = _reflect_index(r0 + dr, p)
            cc = _reflect_index(c0 + dc, p)
            wr = fr if dr else 1.0 - fr
            wc = fc if dc else 1.0 - fc
            out += wr * wc * patch[rr, cc]
    return out


def augment(sample: SamplePair) -> list[SamplePair]:
    """[original, rot45, rot90, flip_v, flip_h]; label and center preserved."""
    transforms = (
        lambda a: a.copy(),
        _rotate45,
        _rotate90,
        _flip_vertical,
        _flip_horizontal,
    )
    return [
        SamplePair(
            hsi_patch=t(sample.hsi_patch),
            lidar_patch=t(sample.lidar_patch),
            label=sample.label,
            center=sample.center,
        )
        for t in transforms
    ]


# --- band statistics ---


def pearson_band_lidar(cube: HsiCube, lidar: LidarRaster, channel: int) -> np.ndarray:
    """Pearson r between every band and one LiDAR channel over all pixels.

    Constant inputs yield 0 by convention.
    """
    if not 0 <= channel < lidar.channels:
        raise ValidationError(f"channel {channel} out of range for {lidar.channels} channels")
    x = cube.values.reshape(-1, cube.bands)
    y = lidar.values[:, :, channel].reshape(-1)
    xc = x - x.mean(axis=0)
    yc = y - y.mean()
    sx = (xc * xc).sum(axis=0)
    sy = float(yc @ yc)
    denom = np.sqrt(sx * sy)
    num = xc.T @ yc
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0.0, num / np.where(denom == 0.0, 1.0, denom), 0.0)
    return r
