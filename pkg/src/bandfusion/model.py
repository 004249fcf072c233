"""Two-stream attention network with LiDAR-query cross-attention fusion.

Band-wise tokens from each modality are embedded, passed through separate
pre-norm self-attention encoder stacks, then fused by a cross-attention
block whose queries come from the LiDAR stream and whose keys/values come
from the hyperspectral stream. The head-averaged cross-attention weights
are the per-band relevance scores used for band selection downstream.

Parameters are plain Tensors grouped in dataclasses; all forward functions
work under an ambient numerics.Tape for training, or tape-free for
inference. An HSI-only variant (encoder plus classifier, no fusion) backs
the self-attention ablation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio
from .errors import ContractError, LoadError, ShapeError, ValidationError
from .numerics import (
    Tensor,
    add,
    concat_cols,
    layer_norm,
    linear,
    matmul,
    mean_rows,
    mul_scalar,
    relu,
    reshape,
    scaled_dot_attention,
)

LAYER_NORM_EPS = 1e-5


@dataclass
class ModelConfig:
    patch_size: int
    bands: int
    lidar_channels: int
    num_classes: int
    embed_dim: int = 256
    encoder_layers: int = 3
    heads: int = 8
    head_dim: int = 128
    mlp_dim: int = 256
    seed: int = 0

    def __post_init__(self):
        for name in ("patch_size", "bands", "lidar_channels", "num_classes",
                     "embed_dim", "encoder_layers", "heads", "head_dim", "mlp_dim"):
            if getattr(self, name) < 1:
                raise ValidationError(f"model config: {name} must be positive")
        if self.patch_size % 2 == 0:
            raise ValidationError("model config: patch_size must be odd")

    @property
    def token_len(self) -> int:
        return self.patch_size * self.patch_size


@dataclass
class EncoderLayerParams:
    norm1_gamma: Tensor
    norm1_beta: Tensor
    wq: list[Tensor]
    wk: list[Tensor]
    wv: list[Tensor]
    attn_out_w: Tensor
    attn_out_b: Tensor
    norm2_gamma: Tensor
    norm2_beta: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor


@dataclass
class CrossAttentionParams:
    wq: list[Tensor]
    wk: list[Tensor]
    wv: list[Tensor]
    out_w: Tensor
    out_b: Tensor


@dataclass
class ModelParams:
    config: ModelConfig
    hsi_embed_w: Tensor
    hsi_embed_b: Tensor
    lidar_embed_w: Tensor
    lidar_embed_b: Tensor
    hsi_pos: Tensor
    lidar_pos: Tensor
    hsi_encoder: list[EncoderLayerParams]
    lidar_encoder: list[EncoderLayerParams]
    cross: CrossAttentionParams
    head_w: Tensor
    head_b: Tensor


@dataclass
class HsiOnlyParams:
    """Ablation architecture: hyperspectral encoder plus classifier, no fusion."""

    config: ModelConfig
    embed_w: Tensor
    embed_b: Tensor
    pos: Tensor
    encoder: list[EncoderLayerParams]
    head_w: Tensor
    head_b: Tensor


@dataclass
class ForwardOutput:
    logits: Tensor  # (K,)
    att_weights: Tensor  # (C, B), head-averaged, rows sum to 1
    fused: Tensor  # (d,), channel-pooled fusion features


def _uniform(rng, fan_in, fan_out, shape):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape))


def _init_encoder_layer(rng, d, heads, dk, mlp) -> EncoderLayerParams:
    return EncoderLayerParams(
        norm1_gamma=Tensor(np.ones(d)),
        norm1_beta=Tensor(np.zeros(d)),
        wq=[_uniform(rng, d, dk, (d, dk)) for _ in range(heads)],
        wk=[_uniform(rng, d, dk, (d, dk)) for _ in range(heads)],
        wv=[_uniform(rng, d, dk, (d, dk)) for _ in range(heads)],
        attn_out_w=_uniform(rng, heads * dk, d, (heads * dk, d)),
        attn_out_b=Tensor(np.zeros(d)),
        norm2_gamma=Tensor(np.ones(d)),
        norm2_beta=Tensor(np.zeros(d)),
        mlp_w1=_uniform(rng, d, mlp, (d, mlp)),
        mlp_b1=Tensor(np.zeros(mlp)),
        mlp_w2=_uniform(rng, mlp, d, (mlp, d)),
        mlp_b2=Tensor(np.zeros(d)),
    )


def init_params(config: ModelConfig) -> ModelParams:
    """Seeded scaled-uniform weights, zero biases, small positional encodings."""
    rng = np.random.default_rng(config.seed)
    m = config.token_len
    d = config.embed_dim
    dk = config.head_dim
    return ModelParams(
        config=config,
        hsi_embed_w=_uniform(rng, m, d, (m, d)),
        hsi_embed_b=Tensor(np.zeros(d)),
        lidar_embed_w=_uniform(rng, m, d, (m, d)),
        lidar_embed_b=Tensor(np.zeros(d)),
        hsi_pos=Tensor(rng.uniform(-0.02, 0.02, size=(config.bands, d))),
        lidar_pos=Tensor(rng.uniform(-0.02, 0.02, size=(config.lidar_channels, d))),
        hsi_encoder=[
            _init_encoder_layer(rng, d, config.heads, dk, config.mlp_dim)
            for _ in range(config.encoder_layers)
        ],
        lidar_encoder=[
            _init_encoder_layer(rng, d, config.heads, dk, config.mlp_dim)
            for _ in range(config.encoder_layers)
        ],
        cross=CrossAttentionParams(
            wq=[_uniform(rng, d, dk, (d, dk)) for _ in range(config.heads)],
            wk=[_uniform(rng, d, dk, (d, dk)) for _ in range(config.heads)],
            wv=[_uniform(rng, d, dk, (d, dk)) for _ in range(config.heads)],
            out_w=_uniform(rng, config.heads * dk, d, (config.heads * dk, d)),
            out_b=Tensor(np.zeros(d)),
        ),
        head_w=_uniform(rng, d, config.num_classes, (d, config.num_classes)),
        head_b=Tensor(np.zeros(config.num_classes)),
    )


def init_hsi_only_params(config: ModelConfig) -> HsiOnlyParams:
    rng = np.random.default_rng(config.seed)
    m = config.token_len
    d = config.embed_dim
    return HsiOnlyParams(
        config=config,
        embed_w=_uniform(rng, m, d, (m, d)),
        embed_b=Tensor(np.zeros(d)),
        pos=Tensor(rng.uniform(-0.02, 0.02, size=(config.bands, d))),
        encoder=[
            _init_encoder_layer(rng, d, config.heads, config.head_dim, config.mlp_dim)
            for _ in range(config.encoder_layers)
        ],
        head_w=_uniform(rng, d, config.num_classes, (d, config.num_classes)),
        head_b=Tensor(np.zeros(config.num_classes)),
    )


def _layer_items(prefix: str, layer: EncoderLayerParams):
    yield f"{prefix}.norm1_gamma", layer.norm1_gamma
    yield f"{prefix}.norm1_beta", layer.norm1_beta
    for i, t in enumerate(layer.wq):
        yield f"{prefix}.wq.{i}", t
    for i, t in enumerate(layer.wk):
        yield f"{prefix}.wk.{i}", t
    for i, t in enumerate(layer.wv):
        yield f"{prefix}.wv.{i}", t
    yield f"{prefix}.attn_out_w", layer.attn_out_w
    yield f"{prefix}.attn_out_b", layer.attn_out_b
    yield f"{prefix}.norm2_gamma", layer.norm2_gamma
    yield f"{prefix}.norm2_beta", layer.norm2_beta
    yield f"{prefix}.mlp_w1", layer.mlp_w1
    yield f"{prefix}.mlp_b1", layer.mlp_b1
    yield f"{prefix}.mlp_w2", layer.mlp_w2
    yield f"{prefix}.mlp_b2", layer.mlp_b2


def named_parameters(params) -> list[tuple[str, Tensor]]:
    """All learnable tensors in a stable, documented order."""
    items: list[tuple[str, Tensor]] = []
    if isinstance(params, ModelParams):
        items += [
            ("hsi_embed_w", params.hsi_embed_w),
            ("hsi_embed_b", params.hsi_embed_b),
            ("lidar_embed_w", params.lidar_embed_w),
            ("lidar_embed_b", params.lidar_embed_b),
            ("hsi_pos", params.hsi_pos),
            ("lidar_pos", params.lidar_pos),
        ]
        for li, layer in enumerate(params.hsi_encoder):
            items += list(_layer_items(f"hsi_encoder.{li}", layer))
        for li, layer in enumerate(params.lidar_encoder):
            items += list(_layer_items(f"lidar_encoder.{li}", layer))
        for i, t in enumerate(params.cross.wq):
            items.append((f"cross.wq.{i}", t))
        for i, t in enumerate(params.cross.wk):
            items.append((f"cross.wk.{i}", t))
        for i, t in enumerate(params.cross.wv):
            items.append((f"cross.wv.{i}", t))
        items += [
            ("cross.out_w", params.cross.out_w),
            ("cross.out_b", params.cross.out_b),
            ("head_w", params.head_w),
            ("head_b", params.head_b),
        ]
    elif isinstance(params, HsiOnlyParams):
        items += [
            ("embed_w", params.embed_w),
            ("embed_b", params.embed_b),
            ("pos", params.pos),
        ]
        for li, layer in enumerate(params.encoder):
            items += list(_layer_items(f"encoder.{li}", layer))
        items += [("head_w", params.head_w), ("head_b", params.head_b)]
    else:
        raise ContractError(f"unknown parameter container {type(params).__name__}")
    return items


def parameters(params) -> list[Tensor]:
    return [t for _, t in named_parameters(params)]


def embed(tokens: Tensor, embed_w: Tensor, embed_b: Tensor, pos: Tensor) -> Tensor:
    """Linear projection of each token plus its positional row."""
    projected = linear(tokens, embed_w, embed_b)
    if projected.shape != pos.shape:
        raise ShapeError(
            f"embed: positional encoding {pos.shape} does not match tokens {projected.shape}"
        )
    return add(projected, pos)


def _self_attention_block(x: Tensor, layer: EncoderLayerParams, capture_maps):
    h = layer_norm(x, layer.norm1_gamma, layer.norm1_beta, LAYER_NORM_EPS)
    outs = []
    maps = []
    for wq, wk, wv in zip(layer.wq, layer.wk, layer.wv):
        q = matmul(h, wq)
        k = matmul(h, wk)
        v = matmul(h, wv)
        o, w = scaled_dot_attention(q, k, v)
        outs.append(o)
        maps.append(w.data.copy())
    attn = linear(concat_cols(outs), layer.attn_out_w, layer.attn_out_b)
    x = add(x, attn)
    if capture_maps is not None:
        capture_maps.append(maps)
    h2 = layer_norm(x, layer.norm2_gamma, layer.norm2_beta, LAYER_NORM_EPS)
    m = linear(relu(linear(h2, layer.mlp_w1, layer.mlp_b1)), layer.mlp_w2, layer.mlp_b2)
    return add(x, m), h


def encoder_forward(x: Tensor, layers: list[EncoderLayerParams], capture: dict | None = None,
                    stream: str = "") -> Tensor:
    """Stacked pre-norm self-attention encoder.

    When ``capture`` is given, per-layer per-head attention maps land in
    ``capture[stream + '_self_attn']`` and the last layer's normalized
    input in ``capture[stream + '_last_normed']``.
    """
    maps = [] if capture is not None else None
    last_normed = None
    for layer in layers:
        x, normed = _self_attention_block(x, layer, maps)
        last_normed = normed
    if capture is not None:
        capture[f"{stream}_self_attn"] = maps
        capture[f"{stream}_last_normed"] = last_normed.data.copy()
    return x


def cross_attention(
    lidar_feats: Tensor,
    hsi_feats: Tensor,
    params: CrossAttentionParams,
    capture: dict | None = None,
) -> tuple[Tensor, Tensor]:
    """LiDAR-query attention over hyperspectral band tokens.

    Returns the projected fusion features (C x d) and the per-band weights
    averaged over heads (C x B); every weight row is a softmax output and
    sums to 1.
    """
    outs = []
    weight_sum = None
    head_weights = []
    for wq, wk, wv in zip(params.wq, params.wk, params.wv):
        q = matmul(lidar_feats, wq)
        k = matmul(hsi_feats, wk)
        v = matmul(hsi_feats, wv)
        o, w = scaled_dot_attention(q, k, v)
        outs.append(o)
        head_weights.append(w.data.copy())
        weight_sum = w if weight_sum is None else add(weight_sum, w)
    fused = linear(concat_cols(outs), params.out_w, params.out_b)
    att_weights = mul_scalar(weight_sum, 1.0 / len(params.wq))
    if capture is not None:
        capture["cross_head_weights"] = head_weights
    return fused, att_weights


def classify(fused: Tensor, head_w: Tensor, head_b: Tensor) -> Tensor:
    """Mean-pool fusion rows, then project to class logits (softmax lives in the loss)."""
    pooled = mean_rows(fused)
    logits = linear(pooled, head_w, head_b)
    return reshape(logits, (head_w.shape[1],))


def forward(sample: dataio.SamplePair, params: ModelParams,
            config: ModelConfig | None = None,
            capture: dict | None = None) -> ForwardOutput:
    """Full pipeline: tokenize, embed, encode per stream, fuse, classify."""
    config = config or params.config
    _check_sample(sample, config)
    hsi_tokens, lidar_tokens = dataio.tokenize(sample)
    h = embed(hsi_tokens, params.hsi_embed_w, params.hsi_embed_b, params.hsi_pos)
    l = embed(lidar_tokens, params.lidar_embed_w, params.lidar_embed_b, params.lidar_pos)
    h = encoder_forward(h, params.hsi_encoder, capture, "hsi")
    l = encoder_forward(l, params.lidar_encoder, capture, "lidar")
    if capture is not None:
        capture["lidar_encoded"] = l.data.copy()
    fused, att_weights = cross_attention(l, h, params.cross, capture)
    pooled = mean_rows(fused)
    logits = reshape(linear(pooled, params.head_w, params.head_b),
                     (config.num_classes,))
    return ForwardOutput(
        logits=logits,
        att_weights=att_weights,
        fused=reshape(pooled, (config.embed_dim,)),
    )


def forward_hsi_only(sample: dataio.SamplePair, params: HsiOnlyParams,
                     config: ModelConfig | None = None,
                     capture: dict | None = None) -> Tensor:
    """Ablation forward: encoder output mean-pooled over band tokens, then classified."""
    config = config or params.config
    _check_sample(sample, config)
    hsi_tokens, _ = dataio.tokenize(sample)
    h = embed(hsi_tokens, params.embed_w, params.embed_b, params.pos)
    h = encoder_forward(h, params.encoder, capture, "hsi")
    return classify(h, params.head_w, params.head_b)


def forward_logits(params, sample: dataio.SamplePair, capture: dict | None = None) -> Tensor:
    """Architecture dispatch used by the trainer and predictor."""
    if isinstance(params, ModelParams):
        return forward(sample, params, capture=capture).logits
    if isinstance(params, HsiOnlyParams):
        return forward_hsi_only(sample, params, capture=capture)
    raise ContractError(f"unknown parameter container {type(params).__name__}")


def _check_sample(sample: dataio.SamplePair, config: ModelConfig) -> None:
    p = config.patch_size
    if sample.hsi_patch.shape != (p, p, config.bands):
        raise ShapeError(
            f"sample HSI patch {sample.hsi_patch.shape} does not match config "
            f"({p}, {p}, {config.bands})"
        )
    if sample.lidar_patch.shape != (p, p, config.lidar_channels):
        raise ShapeError(
            f"sample LiDAR patch {sample.lidar_patch.shape} does not match config "
            f"({p}, {p}, {config.lidar_channels})"
        )


# --- checkpoints ---

_ARCH_TAGS = {ModelParams: "cross_attention", HsiOnlyParams: "hsi_only"}


def save_checkpoint(directory, params, extra: dict | None = None) -> None:
    """Write one raster container per tensor plus a manifest with config and shapes."""
    directory = Path(directory)
    (directory / "tensors").mkdir(parents=True, exist_ok=True)
    entries = []
    for name, tensor in named_parameters(params):
        arr = tensor.data
        if arr.ndim == 1:
            raster = arr[None, :, None]
        elif arr.ndim == 2:
            raster = arr[:, :, None]
        else:
            raise ContractError(f"cannot checkpoint tensor {name} of rank {arr.ndim}")
        dataio.save_raster(directory / "tensors" / f"{name}.hdr", raster, "f64")
        entries.append({"name": name, "shape": list(arr.shape), "file": f"tensors/{name}.hdr"})
    manifest = {
        "format": "bandfusion-checkpoint-v1",
        "arch": _ARCH_TAGS[type(params)],
        "config": vars(params.config),
        "tensors": entries,
    }
    if extra:
        manifest["extra"] = extra
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_checkpoint(directory):
    """Rebuild (params, extra) from a checkpoint directory."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise LoadError(f"checkpoint manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    config = ModelConfig(**manifest["config"])
    arch = manifest.get("arch")
    if arch == "cross_attention":
        params = init_params(config)
    elif arch == "hsi_only":
        params = init_hsi_only_params(config)
    else:
        raise LoadError(f"unknown checkpoint architecture {arch!r}")
    by_name = dict(named_parameters(params))
    listed = {e["name"] for e in manifest["tensors"]}
    if listed != set(by_name):
        missing = sorted(set(by_name) - listed)
        surplus = sorted(listed - set(by_name))
        raise LoadError(
            f"checkpoint tensors do not match architecture "
            f"(missing {missing[:3]}, surplus {surplus[:3]})"
        )
    for entry in manifest["tensors"]:
        raster, _ = dataio.load_raster(directory / entry["file"])
        arr = raster.reshape(tuple(entry["shape"]))
        target = by_name[entry["name"]]
        if arr.shape != target.data.shape:
            raise LoadError(
                f"checkpoint tensor {entry['name']} has shape {arr.shape}, "
                f"expected {target.data.shape}"
            )
        target.data = arr.astype(np.float64)
    return params, manifest.get("extra", {})
