"""Forward-only encoder/decoder over scale-adaptive tokens.

Weights are seeded-random from a documented scheme (or loaded from JSON);
there is no training loop. Blocks are pre-norm transformer layers in double
precision. Desk-scale defaults keep everything fast; the full-scale layer
counts remain valid configurations for cost reporting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy.special import erf

from .body_model import JOINT_COUNT, SHAPE_COUNT
from .errors import InvalidArgumentError
from .geometry import ImageDims
from .scale_map import (ScaleMap, Thresholds, build_gt_scale_map,
                        classify)
from .token_engine import (CostModel, PatchGrid, Provenance, TokenLayout,
                           assemble, partition, uniform_layout)

if TYPE_CHECKING:
    from .scene import PersonAnnotation

WEIGHTS_SCHEMA_VERSION = 1
# Pre-squash clamp: keeps anchor coordinates strictly inside (0, 1) even
# under adversarial residual magnitudes.
_LOGIT_CLAMP = 16.7


@dataclass(frozen=True)
class ArchConfig:
    """Architecture hyperparameters.

    The low-res and high-res shallow stages must be equally deep so their
    features stay interchangeable. ``d_model`` must divide into heads and
    into the 8 channels-per-coordinate of the positional encoding.
    """

    d_model: int = 32
    n_heads: int = 4
    mlp_ratio: int = 4
    layers_lowres: int = 1
    layers_highres: int = 1
    layers_adaptive: int = 2
    layers_decoder: int = 2
    n_queries: int = 8
    patch_size: int = 14
    scale_head_hidden: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.layers_lowres != self.layers_highres:
            raise InvalidArgumentError(
                "low-res and high-res stages must have equal depth")
        if self.d_model % self.n_heads:
            raise InvalidArgumentError("d_model must be divisible by n_heads")
        if self.d_model % 8:
            raise InvalidArgumentError(
                "d_model must be divisible by 8 (positional encoding)")
        for name in ("d_model", "n_heads", "mlp_ratio", "layers_lowres",
                     "layers_adaptive", "layers_decoder", "n_queries",
                     "patch_size", "scale_head_hidden"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1")

    def cost_model(self) -> CostModel:
        return CostModel(d_model=self.d_model, mlp_ratio=self.mlp_ratio,
                         layers_lowres=self.layers_lowres,
                         layers_highres=self.layers_highres,
                         layers_adaptive=self.layers_adaptive)


PAPER_SCALE = ArchConfig(d_model=768, n_heads=12, mlp_ratio=4,
                         layers_lowres=3, layers_highres=3, layers_adaptive=9,
                         layers_decoder=6, n_queries=50, patch_size=14)


# ---------------------------------------------------------------------------
# Weights.


def _block_specs(prefix: str, d: int, r: int):
    specs = []
    for ln in ("ln1", "ln2"):
        specs.append((f"{prefix}.{ln}.scale", (d,), "one"))
        specs.append((f"{prefix}.{ln}.bias", (d,), "zero"))
    for nm in ("q", "k", "v", "o"):
        specs.append((f"{prefix}.attn.w{nm}", (d, d), "normal"))
        specs.append((f"{prefix}.attn.b{nm}", (d,), "zero"))
    specs.append((f"{prefix}.mlp.w1", (r * d, d), "normal"))
    specs.append((f"{prefix}.mlp.b1", (r * d,), "zero"))
    specs.append((f"{prefix}.mlp.w2", (d, r * d), "normal"))
    specs.append((f"{prefix}.mlp.b2", (d,), "zero"))
    return specs


def _head_specs(prefix: str, d: int, out: int):
    return [(f"{prefix}.w1", (d, d), "normal"),
            (f"{prefix}.b1", (d,), "zero"),
            (f"{prefix}.w2", (out, d), "normal"),
            (f"{prefix}.b2", (out,), "zero")]


def weight_specs(cfg: ArchConfig) -> list[tuple[str, tuple, str]]:
    """Deterministic (name, shape, init-kind) list defining the weight file."""
    d, r, p, n = cfg.d_model, cfg.mlp_ratio, cfg.patch_size, cfg.n_queries
    specs = [("patch_embed.weight", (d, 3 * p * p), "normal"),
             ("patch_embed.bias", (d,), "zero")]
    for stage, depth in (("enc_lr", cfg.layers_lowres),
                         ("enc_hr", cfg.layers_highres),
                         ("enc_sa", cfg.layers_adaptive)):
        for i in range(depth):
            specs += _block_specs(f"{stage}.{i}", d, r)
    h = cfg.scale_head_hidden
    specs += [("scale_head.w1", (h, d), "normal"),
              ("scale_head.b1", (h,), "zero"),
              ("scale_head.w2", (2, h), "normal"),
              ("scale_head.b2", (2,), "zero")]
    for i in range(cfg.layers_decoder):
        prefix = f"dec.{i}"
        for ln in ("ln_q", "ln_c", "ln_m"):
            specs.append((f"{prefix}.{ln}.scale", (d,), "one"))
            specs.append((f"{prefix}.{ln}.bias", (d,), "zero"))
        for attn in ("self_attn", "cross_attn"):
            for nm in ("q", "k", "v", "o"):
                specs.append((f"{prefix}.{attn}.w{nm}", (d, d), "normal"))
                specs.append((f"{prefix}.{attn}.b{nm}", (d,), "zero"))
        specs.append((f"{prefix}.mlp.w1", (r * d, d), "normal"))
        specs.append((f"{prefix}.mlp.b1", (r * d,), "zero"))
        specs.append((f"{prefix}.mlp.w2", (d, r * d), "normal"))
        specs.append((f"{prefix}.mlp.b2", (d,), "zero"))
    specs += _head_specs("box_head", d, 4)
    specs += _head_specs("pose_head", d, JOINT_COUNT * 3)
    specs += _head_specs("shape_head", d, SHAPE_COUNT)
    specs += _head_specs("trans_head", d, 3)
    specs += [("conf.weight", (1, d), "normal"), ("conf.bias", (1,), "zero")]
    specs += [("queries.content", (n, d), "normal"),
              ("queries.anchors", (n, 4), "anchor"),
              ("queries.mean_pose", (JOINT_COUNT, 3), "zero"),
              ("queries.mean_shape", (SHAPE_COUNT,), "zero")]
    return specs


def init_weights(cfg: ArchConfig, seed: int | None = None) -> dict[str, np.ndarray]:
    """Seeded-random weights: normal(0, 0.02) matrices, zero biases, unit
    layer-norm scales, anchors uniform in (0.1, 0.9). Tensors are drawn in
    :func:`weight_specs` order, so a (config, seed) pair is reproducible."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    weights = {}
    for name, shape, kind in weight_specs(cfg):
        if kind == "normal":
            weights[name] = rng.normal(0.0, 0.02, size=shape)
        elif kind == "anchor":
            weights[name] = rng.uniform(0.1, 0.9, size=shape)
        elif kind == "one":
            weights[name] = np.ones(shape)
        else:
            weights[name] = np.zeros(shape)
    return weights


def save_weights(weights: dict[str, np.ndarray], cfg: ArchConfig,
                 path: str | Path) -> None:
    tensors = {name: {"shape": list(t.shape), "data": t.ravel().tolist()}
               for name, t in weights.items()}
    payload = {"schema_version": WEIGHTS_SCHEMA_VERSION,
               "arch": asdict(cfg), "tensors": tensors}
    Path(path).write_text(json.dumps(payload))


def load_weights(path: str | Path) -> tuple[ArchConfig, dict[str, np.ndarray]]:
    payload = json.loads(Path(path).read_text())
    if payload.get("schema_version") != WEIGHTS_SCHEMA_VERSION:
        raise InvalidArgumentError(
            f"unsupported weights schema: {payload.get('schema_version')}")
    cfg = ArchConfig(**payload["arch"])
    weights = {}
    for name, rec in payload["tensors"].items():
        weights[name] = np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])
    expected = {name: shape for name, shape, _ in weight_specs(cfg)}
    for name, shape in expected.items():
        if name not in weights or weights[name].shape != shape:
            raise InvalidArgumentError(f"weight tensor {name} missing or misshaped")
    return cfg, weights


# ---------------------------------------------------------------------------
# Primitive layers.


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def inverse_sigmoid(p: np.ndarray) -> np.ndarray:
    """Logit with the input clamped to [1e-4, 1 - 1e-4] to avoid infinities."""
    p = np.clip(p, 1e-4, 1.0 - 1e-4)
    return np.log(p / (1.0 - p))


def layer_norm(x: np.ndarray, weights: dict, prefix: str,
               eps: float = 1e-5) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return ((x - mean) / np.sqrt(var + eps) * weights[f"{prefix}.scale"]
            + weights[f"{prefix}.bias"])


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def multi_head_attention(q_in: np.ndarray, k_in: np.ndarray, v_in: np.ndarray,
                         weights: dict, prefix: str, n_heads: int,
                         return_weights: bool = False):
    """Standard scaled dot-product attention with h heads."""
    d = q_in.shape[-1]
    dh = d // n_heads
    q = q_in @ weights[f"{prefix}.wq"].T + weights[f"{prefix}.bq"]
    k = k_in @ weights[f"{prefix}.wk"].T + weights[f"{prefix}.bk"]
    v = v_in @ weights[f"{prefix}.wv"].T + weights[f"{prefix}.bv"]
    nq, nk = q.shape[0], k.shape[0]
    q = q.reshape(nq, n_heads, dh).transpose(1, 0, 2)
    k = k.reshape(nk, n_heads, dh).transpose(1, 0, 2)
    v = v.reshape(nk, n_heads, dh).transpose(1, 0, 2)
    attn = _softmax(q @ k.transpose(0, 2, 1) / np.sqrt(dh))
    out = (attn @ v).transpose(1, 0, 2).reshape(nq, d)
    out = out @ weights[f"{prefix}.wo"].T + weights[f"{prefix}.bo"]
    if return_weights:
        return out, attn
    return out


def _mlp(x: np.ndarray, weights: dict, prefix: str) -> np.ndarray:
    """Two-layer GELU MLP; serves both block MLPs and prediction heads."""
    h = gelu(x @ weights[f"{prefix}.w1"].T + weights[f"{prefix}.b1"])
    return h @ weights[f"{prefix}.w2"].T + weights[f"{prefix}.b2"]


def encoder_forward(tokens: np.ndarray, weights: dict, stage: str,
                    depth: int, n_heads: int) -> np.ndarray:
    """Pre-norm self-attention + MLP blocks; preserves (count, width)."""
    x = np.asarray(tokens, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise InvalidArgumentError("tokens must be a non-empty (k, d) array")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("non-finite encoder input")
    for i in range(depth):
        prefix = f"{stage}.{i}"
        h = layer_norm(x, weights, f"{prefix}.ln1")
        x = x + multi_head_attention(h, h, h, weights, f"{prefix}.attn", n_heads)
        h = layer_norm(x, weights, f"{prefix}.ln2")
        x = x + _mlp(h, weights, f"{prefix}.mlp")
    return x


# ---------------------------------------------------------------------------
# Positional encoding and patch embedding.


def positional_encoding(coords: np.ndarray, d_model: int) -> np.ndarray:
    """Continuous sinusoidal features of (cx, cy, w, h) rows.

    Each of the 4 coordinates receives d/4 channels from a dyadic frequency
    ladder; one formula serves every token no matter its resolution level.
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    if coords.shape[1] != 4:
        raise InvalidArgumentError("coords must be (n, 4)")
    if d_model % 8:
        raise InvalidArgumentError("d_model must be divisible by 8")
    m = d_model // 8
    freqs = (2.0 ** np.arange(m)) * 2.0 * np.pi
    ang = coords[:, :, None] * freqs
    enc = np.stack([np.sin(ang), np.cos(ang)], axis=-1)
    return enc.reshape(coords.shape[0], d_model)


def _project_grid_patches(image: np.ndarray, grid: PatchGrid,
                          weights: dict) -> np.ndarray:
    """Linear projection of every grid cell's pixels, row-major (k, d)."""
    p = grid.patch_size
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidArgumentError("image must be (H, W, 3)")
    h, w = image.shape[:2]
    if h > grid.rows * p or w > grid.cols * p:
        raise InvalidArgumentError(
            f"image {h}x{w} exceeds grid coverage "
            f"{grid.rows * p}x{grid.cols * p}")
    padded = np.zeros((grid.rows * p, grid.cols * p, 3))
    padded[:h, :w] = image
    patches = (padded.reshape(grid.rows, p, grid.cols, p, 3)
               .transpose(0, 2, 1, 3, 4)
               .reshape(grid.cell_count, 3 * p * p))
    return patches @ weights["patch_embed.weight"].T + weights["patch_embed.bias"]


def embed_patches(image: np.ndarray, layout: TokenLayout,
                  weights: dict) -> np.ndarray:
    """One feature per layout record: patch projection + positional encoding.

    Multi-source records average their source projections. The image must
    fit inside the layout's grid coverage.
    """
    grid = layout.grid
    proj = _project_grid_patches(image, grid, weights)
    d = proj.shape[1]
    coords = np.array([[rec.center[0], rec.center[1],
                        rec.extent[0], rec.extent[1]]
                       for rec in layout.records])
    pos = positional_encoding(coords, d)
    feats = np.empty((len(layout.records), d))
    for idx, rec in enumerate(layout.records):
        flat = [grid.flat(i, j) for i, j in rec.sources]
        feats[idx] = proj[flat].mean(axis=0)
    return feats + pos


def scale_head(lr_tokens: np.ndarray, grid: PatchGrid,
               weights: dict) -> ScaleMap:
    """Predicted per-patch (confidence, scale): MLP + squash/clamp."""
    x = np.asarray(lr_tokens, dtype=np.float64)
    if x.shape[0] != grid.cell_count:
        raise InvalidArgumentError(
            f"expected {grid.cell_count} tokens, got {x.shape[0]}")
    h = gelu(x @ weights["scale_head.w1"].T + weights["scale_head.b1"])
    out = h @ weights["scale_head.w2"].T + weights["scale_head.b2"]
    conf = sigmoid(out[:, 0]).reshape(grid.rows, grid.cols)
    scl = np.clip(out[:, 1], 0.0, 1.0).reshape(grid.rows, grid.cols)
    return ScaleMap(confidence=conf, scale=scl)


# ---------------------------------------------------------------------------
# Decoder and predictions.


@dataclass(frozen=True)
class Prediction:
    """One query's outputs; box is normalized center-size."""

    pose: np.ndarray         # (J, 3)
    shape: np.ndarray        # (B,)
    translation: np.ndarray  # (3,)
    box: np.ndarray          # (4,) cxcywh in (0, 1)
    confidence: float

    def to_json_dict(self) -> dict:
        return {"pose": self.pose.tolist(), "shape": self.shape.tolist(),
                "translation": self.translation.tolist(),
                "box": self.box.tolist(), "confidence": self.confidence}

    @classmethod
    def from_json_dict(cls, payload: dict) -> "Prediction":
        return cls(pose=np.array(payload["pose"], dtype=np.float64),
                   shape=np.array(payload["shape"], dtype=np.float64),
                   translation=np.array(payload["translation"], dtype=np.float64),
                   box=np.array(payload["box"], dtype=np.float64),
                   confidence=float(payload["confidence"]))


@dataclass
class DecoderOutput:
    layer_states: list          # query embeddings after each layer, (n, d)
    layer_anchors: list         # anchor boxes after each update, (n, 4)
    predictions: list[Prediction]


def decoder_forward(memory: np.ndarray, cfg: ArchConfig,
                    weights: dict) -> DecoderOutput:
    """Query refinement: self-attention, cross-attention to memory, and
    additive anchor/pose/shape updates per layer.

    Each query carries a content embedding, an anchor box (its positional
    part, re-encoded sinusoidally every layer), and running pose/shape
    parameters initialized at the configured means. Translation is
    regressed once from the final embeddings; anchors stay strictly inside
    (0, 1) through the clamped inverse-squash update."""
    memory = np.asarray(memory, dtype=np.float64)
    if memory.ndim != 2 or memory.shape[0] < 1:
        raise InvalidArgumentError("memory must be a non-empty (k, d) array")
    n = cfg.n_queries
    q = weights["queries.content"].copy()
    anchors = weights["queries.anchors"].copy()
    theta = np.tile(weights["queries.mean_pose"], (n, 1, 1))
    beta = np.tile(weights["queries.mean_shape"], (n, 1))

    layer_states, layer_anchors = [], []
    for i in range(cfg.layers_decoder):
        prefix = f"dec.{i}"
        pos_q = positional_encoding(anchors, cfg.d_model)
        h = layer_norm(q, weights, f"{prefix}.ln_q")
        q = q + multi_head_attention(h + pos_q, h + pos_q, h, weights,
                                     f"{prefix}.self_attn", cfg.n_heads)
        h = layer_norm(q, weights, f"{prefix}.ln_c")
        q = q + multi_head_attention(h + pos_q, memory, memory, weights,
                                     f"{prefix}.cross_attn", cfg.n_heads)
        h = layer_norm(q, weights, f"{prefix}.ln_m")
        q = q + _mlp(h, weights, f"{prefix}.mlp")

        delta = _mlp(q, weights, "box_head")
        z = np.clip(inverse_sigmoid(anchors) + delta, -_LOGIT_CLAMP, _LOGIT_CLAMP)
        anchors = sigmoid(z)
        theta = theta + _mlp(q, weights, "pose_head").reshape(n, JOINT_COUNT, 3)
        beta = beta + _mlp(q, weights, "shape_head")
        layer_states.append(q.copy())
        layer_anchors.append(anchors.copy())

    translation = _mlp(q, weights, "trans_head")
    conf = sigmoid(q @ weights["conf.weight"].T + weights["conf.bias"]).ravel()
    predictions = [Prediction(pose=theta[i], shape=beta[i],
                              translation=translation[i], box=anchors[i],
                              confidence=float(conf[i]))
                   for i in range(n)]
    return DecoderOutput(layer_states=layer_states,
                         layer_anchors=layer_anchors,
                         predictions=predictions)


def filter_predictions(predictions: Sequence[Prediction],
                       detection_threshold: float) -> list[int]:
    """Indices of predictions whose confidence meets the threshold."""
    return [i for i, p in enumerate(predictions)
            if p.confidence >= detection_threshold]


# ---------------------------------------------------------------------------
# Full pipelines.


@dataclass
class ForwardResult:
    predictions: list[Prediction]
    valid: list[int]
    layout: TokenLayout
    scale_map_pred: ScaleMap | None
    scale_map_used: ScaleMap | None
    decoder: DecoderOutput = field(repr=False, default=None)


def _gather_adaptive_features(layout: TokenLayout, lr_feats: np.ndarray,
                              hr_feats: np.ndarray | None) -> np.ndarray:
    """Features for each layout record: pooled tokens average their source
    features; unchanged tokens copy theirs; high-res tokens come from the
    high-res stage."""
    grid = layout.grid
    hr_cols = grid.cols * 2
    feats = np.empty((len(layout.records), lr_feats.shape[1]))
    for idx, rec in enumerate(layout.records):
        if rec.provenance is Provenance.HIGHRES:
            i, j = rec.hr_cell
            feats[idx] = hr_feats[i * hr_cols + j]
        elif rec.provenance is Provenance.POOLED_BACKGROUND:
            flat = [grid.flat(i, j) for i, j in rec.sources]
            feats[idx] = lr_feats[flat].mean(axis=0)
        else:
            (i, j), = rec.sources
            feats[idx] = lr_feats[grid.flat(i, j)]
    return feats


def full_forward(image_lr: np.ndarray, image_hr: np.ndarray, cfg: ArchConfig,
                 weights: dict, thresholds: Thresholds,
                 persons: Sequence["PersonAnnotation"] | None = None,
                 use_gt_map: bool = False,
                 pool_twice: bool = False) -> ForwardResult:
    """Adaptive pipeline: shallow low-res encoding, scale prediction, token
    replacement/pooling, main encoding, decoding, confidence filtering.

    With ``use_gt_map`` the predicted map is still produced but
    classification uses the ground-truth map built from ``persons``.
    """
    image_lr = np.asarray(image_lr, dtype=np.float64)
    image_hr = np.asarray(image_hr, dtype=np.float64)
    if (image_hr.shape[0] != 2 * image_lr.shape[0]
            or image_hr.shape[1] != 2 * image_lr.shape[1]):
        raise InvalidArgumentError(
            f"high-res image {image_hr.shape[:2]} must be exactly twice "
            f"the low-res image {image_lr.shape[:2]}")
    dims_lr = ImageDims(image_lr.shape[1], image_lr.shape[0])
    grid = partition(dims_lr, cfg.patch_size)

    lr_layout = uniform_layout(grid)
    lr_feats = embed_patches(image_lr, lr_layout, weights)
    lr_feats = encoder_forward(lr_feats, weights, "enc_lr",
                               cfg.layers_lowres, cfg.n_heads)

    map_pred = scale_head(lr_feats, grid, weights)
    if use_gt_map:
        if persons is None:
            raise InvalidArgumentError("ground-truth map mode needs persons")
        longest_hr = 2 * dims_lr.longest
        map_used = build_gt_scale_map(grid, persons, longest_hr)
    else:
        map_used = map_pred
    class_grid = classify(map_used, thresholds)

    layout = assemble(grid, class_grid, pool_twice=pool_twice)

    hr_feats = None
    if layout.counts.highres > 0:
        hr_grid = grid.doubled()
        hr_layout = uniform_layout(hr_grid)
        hr_feats = embed_patches(image_hr, hr_layout, weights)
        hr_feats = encoder_forward(hr_feats, weights, "enc_hr",
                                   cfg.layers_highres, cfg.n_heads)

    sa_feats = _gather_adaptive_features(layout, lr_feats, hr_feats)
    sa_feats = encoder_forward(sa_feats, weights, "enc_sa",
                               cfg.layers_adaptive, cfg.n_heads)

    decoded = decoder_forward(sa_feats, cfg, weights)
    valid = filter_predictions(decoded.predictions, thresholds.detection)
    return ForwardResult(predictions=decoded.predictions, valid=valid,
                         layout=layout, scale_map_pred=map_pred,
                         scale_map_used=map_used, decoder=decoded)


def baseline_forward(image_lr: np.ndarray, cfg: ArchConfig, weights: dict,
                     thresholds: Thresholds) -> ForwardResult:
    """Uniform single-resolution pipeline: every patch is one unchanged
    token through both encoder stages. Shares all weights with
    :func:`full_forward`; forcing the large class everywhere there
    reproduces this path bit-for-bit."""
    image_lr = np.asarray(image_lr, dtype=np.float64)
    dims = ImageDims(image_lr.shape[1], image_lr.shape[0])
    grid = partition(dims, cfg.patch_size)
    layout = uniform_layout(grid)
    feats = embed_patches(image_lr, layout, weights)
    feats = encoder_forward(feats, weights, "enc_lr",
                            cfg.layers_lowres, cfg.n_heads)
    feats = encoder_forward(feats, weights, "enc_sa",
                            cfg.layers_adaptive, cfg.n_heads)
    decoded = decoder_forward(feats, cfg, weights)
    valid = filter_predictions(decoded.predictions, thresholds.detection)
    return ForwardResult(predictions=decoded.predictions, valid=valid,
                         layout=layout, scale_map_pred=None,
                         scale_map_used=None, decoder=decoded)
