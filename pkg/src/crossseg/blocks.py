"""Building blocks of the cross-scanning segmentation network.

The decoder mixes an upsampled deep feature map with a same-stage skip map by
interleaving their rows (and columns), runs diagonal state-space scans over
the mixed maps, and fuses the results under attention.  A multi-scale
depthwise block refines each skip connection, and a stage-chaining fusion
decoder aggregates the decoder pyramid into the final logit map.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from . import tensor as T
from .checkpoint import load_tensors, save_tensors
from .config import ModelConfig
from .errors import CheckpointError, ConfigError, ShapeError
from .nn import Block, conv_weight, zeros_param
from .scan import DiagonalScanBlock
from .tensor import Tensor, _emit, as_tensor


# --------------------------------------------------------------------------
# Pixel exchange
# --------------------------------------------------------------------------

def _interleave(a, b, axis: int, tag: str) -> Tensor:
    """a on even indices, b on odd indices along the given spatial axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"pixel exchange needs identical shapes, got {a.shape} vs {b.shape}")
    if a.ndim != 4:
        raise ShapeError(f"pixel exchange expects N,C,H,W, got {a.shape}")
    even = [slice(None)] * 4
    odd = [slice(None)] * 4
    even[axis] = slice(0, None, 2)
    odd[axis] = slice(1, None, 2)
    even, odd = tuple(even), tuple(odd)
    out = a.data.copy()
    out[odd] = b.data[odd]

    def backward(g):
        ga = np.zeros_like(g)
        gb = np.zeros_like(g)
        ga[even] = g[even]
        gb[odd] = g[odd]
        return ga, gb

    return _emit(out, (a, b), backward, tag)


def row_exchange(x, y):
    """Swap alternating rows of two maps, producing two mixed maps.

    S carries x's even rows and y's odd rows; D carries the complement.
    Applying the exchange twice restores (x, y).
    """
    return _interleave(x, y, 2, "row_exchange"), _interleave(y, x, 2, "row_exchange")


def column_exchange(x, y):
    """Column analogue of row_exchange."""
    return _interleave(x, y, 3, "column_exchange"), _interleave(y, x, 3, "column_exchange")


# --------------------------------------------------------------------------
# Attention
# --------------------------------------------------------------------------

class ChannelGate(Block):
    """Squeeze both spatial pools through a shared bottleneck; sigmoid gate."""

    def __init__(self, prefix: str, channels: int, reduction: int,
                 rng: np.random.Generator, dtype):
        hidden = max(1, channels // reduction)
        self.w_down = conv_weight(f"{prefix}.w_down", (hidden, channels, 1, 1), rng, dtype)
        self.w_up = conv_weight(f"{prefix}.w_up", (channels, hidden, 1, 1), rng, dtype)

    def _bottleneck(self, pooled: Tensor) -> Tensor:
        return T.conv2d(T.relu(T.conv2d(pooled, self.w_down)), self.w_up)

    def __call__(self, m: Tensor) -> Tensor:
        avg = self._bottleneck(T.reduce(m, "mean", "spatial"))
        mx = self._bottleneck(T.reduce(m, "max", "spatial"))
        return T.sigmoid(T.add(avg, mx))           # (N, C, 1, 1)


class SpatialGate(Block):
    """Convolve stacked channel statistics into a per-position sigmoid gate."""

    def __init__(self, prefix: str, rng: np.random.Generator, dtype, kernel: int = 7):
        self.kernel = kernel
        self.w = conv_weight(f"{prefix}.w", (1, 2, kernel, kernel), rng, dtype)

    def __call__(self, m: Tensor) -> Tensor:
        stats = T.concat_channels(T.reduce(m, "mean", "channel"),
                                  T.reduce(m, "max", "channel"))
        return T.sigmoid(T.conv2d(stats, self.w, padding=self.kernel // 2))  # (N, 1, H, W)


class ParallelAttention(Block):
    """Channel and spatial gates blended by a learned convex weight.

    out = ((1 - lam) * W_c + lam * W_s) * m + m with lam = sigmoid(raw_lambda),
    so the blend stays strictly inside (0, 1).
    """

    def __init__(self, prefix: str, channels: int, reduction: int,
                 rng: np.random.Generator, dtype):
        self.channel = ChannelGate(f"{prefix}.channel", channels, reduction, rng, dtype)
        self.spatial = SpatialGate(f"{prefix}.spatial", rng, dtype)
        self.raw_lambda = zeros_param(f"{prefix}.raw_lambda", (1,), dtype)

    @property
    def blend(self) -> float:
        return float(T._sigmoid(self.raw_lambda.data)[0])

    def combine(self, w_c: Tensor, w_s: Tensor, m: Tensor) -> Tensor:
        lam = T.sigmoid(self.raw_lambda)
        keep = T.add_const(T.scale(lam, -1.0), 1.0)
        w_cs = T.add(T.mul(w_c, keep), T.mul(w_s, lam))
        return T.add(T.mul(w_cs, m), m)

    def __call__(self, m: Tensor) -> Tensor:
        return self.combine(self.channel(m), self.spatial(m), m)


class SerialAttention(Block):
    """Channel gate then spatial gate applied in sequence (ablation variant)."""

    def __init__(self, prefix: str, channels: int, reduction: int,
                 rng: np.random.Generator, dtype):
        self.channel = ChannelGate(f"{prefix}.channel", channels, reduction, rng, dtype)
        self.spatial = SpatialGate(f"{prefix}.spatial", rng, dtype)

    def __call__(self, m: Tensor) -> Tensor:
        refined = T.mul(self.channel(m), m)
        return T.mul(self.spatial(refined), refined)


def make_attention(kind: str, prefix: str, channels: int, reduction: int,
                   rng: np.random.Generator, dtype) -> Block:
    if kind == "gab":
        return ParallelAttention(prefix, channels, reduction, rng, dtype)
    if kind == "cbam":
        return SerialAttention(prefix, channels, reduction, rng, dtype)
    raise ConfigError(f"unknown attention kind {kind!r}; expected 'gab' or 'cbam'")


# --------------------------------------------------------------------------
# Multi-scale aggregation
# --------------------------------------------------------------------------

class MultiScaleBlock(Block):
    """Inverted bottleneck with 3/5/7 depthwise branches and channel shuffle."""

    def __init__(self, prefix: str, channels: int, groups: int, reduction: int,
                 attention: str, rng: np.random.Generator, dtype):
        self.channels = channels
        self.groups = groups
        inner = channels * 2
        self.inner = inner
        self.attn = make_attention(attention, f"{prefix}.attn", channels, reduction, rng, dtype)
        self.w_expand = conv_weight(f"{prefix}.w_expand", (inner, channels, 1, 1), rng, dtype)
        self.b_expand = zeros_param(f"{prefix}.b_expand", (inner,), dtype)
        self.w_dw3 = conv_weight(f"{prefix}.w_dw3", (inner, 1, 3, 3), rng, dtype)
        self.w_dw5 = conv_weight(f"{prefix}.w_dw5", (inner, 1, 5, 5), rng, dtype)
        self.w_dw7 = conv_weight(f"{prefix}.w_dw7", (inner, 1, 7, 7), rng, dtype)
        self.w_reduce = conv_weight(f"{prefix}.w_reduce", (channels, inner, 1, 1), rng, dtype)
        self.b_reduce = zeros_param(f"{prefix}.b_reduce", (channels,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        o = T.conv2d(self.attn(x), self.w_expand, self.b_expand)
        mixed = T.add(T.add(T.conv2d(o, self.w_dw3, padding=1, groups=self.inner),
                            T.conv2d(o, self.w_dw5, padding=2, groups=self.inner)),
                      T.conv2d(o, self.w_dw7, padding=3, groups=self.inner))
        mixed = T.channel_shuffle(mixed, self.groups)
        return T.conv2d(mixed, self.w_reduce, self.b_reduce)


# --------------------------------------------------------------------------
# Cross-scan decoder stage
# --------------------------------------------------------------------------

class DecoderStage(Block):
    """Fuse a skip map with the upsampled deeper decoder map by pixel exchange
    plus diagonal scans.

    With use_cross=False the stage degenerates to aligned-upsample + skip
    addition (the module-removal ablation)."""

    def __init__(self, prefix: str, channels: int, deeper_channels: int,
                 state_size: int, reduction: int, attention: str, use_cross: bool,
                 rng: np.random.Generator, dtype):
        self.channels = channels
        self.deeper_channels = deeper_channels
        self.use_cross = use_cross
        self.w_align = conv_weight(f"{prefix}.w_align", (channels, deeper_channels, 1, 1),
                                   rng, dtype)
        self.b_align = zeros_param(f"{prefix}.b_align", (channels,), dtype)
        if not use_cross:
            return
        self.scan_row_s = DiagonalScanBlock(f"{prefix}.scan_row_s", channels, state_size, rng, dtype)
        self.scan_row_d = DiagonalScanBlock(f"{prefix}.scan_row_d", channels, state_size, rng, dtype)
        self.scan_col_s = DiagonalScanBlock(f"{prefix}.scan_col_s", channels, state_size, rng, dtype)
        self.scan_col_d = DiagonalScanBlock(f"{prefix}.scan_col_d", channels, state_size, rng, dtype)
        self.w_fuse_row = conv_weight(f"{prefix}.w_fuse_row", (channels, channels, 1, 1), rng, dtype)
        self.b_fuse_row = zeros_param(f"{prefix}.b_fuse_row", (channels,), dtype)
        self.w_fuse_col = conv_weight(f"{prefix}.w_fuse_col", (channels, channels, 1, 1), rng, dtype)
        self.b_fuse_col = zeros_param(f"{prefix}.b_fuse_col", (channels,), dtype)
        self.attn_row = make_attention(attention, f"{prefix}.attn_row", channels, reduction, rng, dtype)
        self.attn_col = make_attention(attention, f"{prefix}.attn_col", channels, reduction, rng, dtype)
        self.w_mid = conv_weight(f"{prefix}.w_mid", (channels, channels, 1, 1), rng, dtype)
        self.b_mid = zeros_param(f"{prefix}.b_mid", (channels,), dtype)
        self.w_dw = conv_weight(f"{prefix}.w_dw", (channels, 1, 3, 3), rng, dtype)
        self.b_dw = zeros_param(f"{prefix}.b_dw", (channels,), dtype)
        self.w_out = conv_weight(f"{prefix}.w_out", (channels, channels, 1, 1), rng, dtype)
        self.b_out = zeros_param(f"{prefix}.b_out", (channels,), dtype)

    def __call__(self, skip: Tensor, deeper: Tensor) -> Tensor:
        if skip.shape[1] != self.channels or deeper.shape[1] != self.deeper_channels:
            raise ShapeError(
                f"decoder stage expects channels {self.channels}/{self.deeper_channels}, "
                f"got {skip.shape[1]}/{deeper.shape[1]}")
        if skip.shape[2] != 2 * deeper.shape[2] or skip.shape[3] != 2 * deeper.shape[3]:
            raise ShapeError(
                f"deeper map {deeper.shape} must be exactly half of skip {skip.shape}")
        up = T.conv2d(T.bilinear_upsample(deeper, 2), self.w_align, self.b_align)
        if not self.use_cross:
            return T.add(up, skip)
        s_r, d_r = row_exchange(up, skip)
        s_c, d_c = column_exchange(up, skip)
        r1 = self.scan_row_s(s_r)
        r2 = self.scan_row_d(d_r)
        c1 = self.scan_col_s(s_c)
        c2 = self.scan_col_d(d_c)
        b1 = self.attn_row(T.conv2d(T.add(r1, r2), self.w_fuse_row, self.b_fuse_row))
        b2 = self.attn_col(T.conv2d(T.add(c1, c2), self.w_fuse_col, self.b_fuse_col))
        z = T.conv2d(T.add(b1, b2), self.w_mid, self.b_mid)
        z = T.conv2d(z, self.w_dw, self.b_dw, padding=1, groups=self.channels)
        return T.conv2d(z, self.w_out, self.b_out)


# --------------------------------------------------------------------------
# Stage-chaining fusion decoder
# --------------------------------------------------------------------------

class FusionDecoder(Block):
    """Chain decoder stages coarse-to-fine: upsample, multiply into the finer
    stage, add it back.  Both transposed convolutions are bias-free so zero
    deep features pass the finer stage through untouched."""

    def __init__(self, prefix: str, c1: int, c2: int, c3: int,
                 rng: np.random.Generator, dtype):
        self.c1, self.c2, self.c3 = c1, c2, c3
        self.w_up32 = conv_weight(f"{prefix}.w_up32", (c3, c2, 4, 4), rng, dtype,
                                  fan_in=c3 * 4)
        self.w_up21 = conv_weight(f"{prefix}.w_up21", (c2, c1, 4, 4), rng, dtype,
                                  fan_in=c2 * 4)

    def __call__(self, d1: Tensor, d2: Tensor, d3: Tensor) -> Tensor:
        for fine, coarse, what in ((d1, d2, "stage1/2"), (d2, d3, "stage2/3")):
            if fine.shape[2] != 2 * coarse.shape[2] or fine.shape[3] != 2 * coarse.shape[3]:
                raise ShapeError(f"{what} maps must differ by exactly 2x, "
                                 f"got {fine.shape} vs {coarse.shape}")
        g23_up = T.conv2d(d3, self.w_up32, stride=2, padding=1, transposed=True)
        g23 = T.add(T.mul(g23_up, d2), d2)
        out_up = T.conv2d(g23, self.w_up21, stride=2, padding=1, transposed=True)
        return T.add(T.mul(out_up, d1), d1)


# --------------------------------------------------------------------------
# Encoder stub
# --------------------------------------------------------------------------

class ResidualUnit(Block):
    """x + pointwise(silu(depthwise3x3(x)))."""

    def __init__(self, prefix: str, channels: int, rng: np.random.Generator, dtype):
        self.channels = channels
        self.w_dw = conv_weight(f"{prefix}.w_dw", (channels, 1, 3, 3), rng, dtype)
        self.b_dw = zeros_param(f"{prefix}.b_dw", (channels,), dtype)
        self.w_pw = conv_weight(f"{prefix}.w_pw", (channels, channels, 1, 1), rng, dtype)
        self.b_pw = zeros_param(f"{prefix}.b_pw", (channels,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        y = T.silu(T.conv2d(x, self.w_dw, self.b_dw, padding=1, groups=self.channels))
        return T.add(T.conv2d(y, self.w_pw, self.b_pw), x)


class EncoderStub(Block):
    """From-scratch pyramid encoder: stride-4 patch embedding, then three
    stride-2 downsampling stages with lightweight residual refinement.

    Output strides are 4, 8, 16, 32 relative to the input image."""

    def __init__(self, prefix: str, channels: tuple, rng: np.random.Generator, dtype):
        c1, c2, c3, c4 = channels
        self.channels = tuple(channels)
        self.w_patch = conv_weight(f"{prefix}.w_patch", (c1, 3, 4, 4), rng, dtype)
        self.b_patch = zeros_param(f"{prefix}.b_patch", (c1,), dtype)
        self.stages = []
        for i, (cin, cout) in enumerate(zip((c1, c2, c3), (c2, c3, c4)), start=2):
            down_w = conv_weight(f"{prefix}.stage{i}.w_down", (cout, cin, 2, 2), rng, dtype)
            down_b = zeros_param(f"{prefix}.stage{i}.b_down", (cout,), dtype)
            res1 = ResidualUnit(f"{prefix}.stage{i}.res1", cout, rng, dtype)
            res2 = ResidualUnit(f"{prefix}.stage{i}.res2", cout, rng, dtype)
            self.stages.append((down_w, down_b, res1, res2))

    def parameters(self):
        yield self.w_patch
        yield self.b_patch
        for down_w, down_b, res1, res2 in self.stages:
            yield down_w
            yield down_b
            yield from res1.parameters()
            yield from res2.parameters()

    def __call__(self, image: Tensor) -> list:
        image = as_tensor(image)
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"encoder expects N,3,H,W images, got {image.shape}")
        if image.shape[2] % 32 or image.shape[3] % 32:
            raise ShapeError(
                f"image size {image.shape[2]}x{image.shape[3]} must be divisible by 32")
        feats = [T.conv2d(image, self.w_patch, self.b_patch, stride=4)]
        for down_w, down_b, res1, res2 in self.stages:
            x = T.conv2d(feats[-1], down_w, down_b, stride=2)
            feats.append(res2(res1(x)))
        return feats


# --------------------------------------------------------------------------
# Assembled model
# --------------------------------------------------------------------------

class CrossScanNet(Block):
    """Encoder + multi-scale skips + cross-scan decoder + fusion head.

    forward(image, train=True) returns [final, aux1, aux2, aux3] logit maps at
    input resolution (one map per supervised decoder stage); train=False
    returns just [final].
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        c1, c2, c3, c4 = (int(c) for c in config.channels)
        red = config.attention_reduction
        self.encoder = EncoderStub("encoder", (c1, c2, c3, c4), rng, dtype)
        self.msa = None
        if config.use_msa:
            self.msa = [
                MultiScaleBlock(f"msa{i}", c, config.shuffle_groups, red,
                                config.attention, rng, dtype)
                for i, c in enumerate((c1, c2, c3), start=1)
            ]
        self.w_seed = conv_weight("seed.w", (c4, c4, 1, 1), rng, dtype)
        self.b_seed = zeros_param("seed.b", (c4,), dtype)
        stage_args = dict(state_size=config.state_size, reduction=red,
                          attention=config.attention, use_cross=config.use_cmd)
        self.stage3 = DecoderStage("dec3", c3, c4, rng=rng, dtype=dtype, **stage_args)
        self.stage2 = DecoderStage("dec2", c2, c3, rng=rng, dtype=dtype, **stage_args)
        self.stage1 = DecoderStage("dec1", c1, c2, rng=rng, dtype=dtype, **stage_args)
        self.fuse = None
        if config.use_fd:
            self.fuse = FusionDecoder("fd", c1, c2, c3, rng, dtype)
        self.w_head = conv_weight("head.w", (1, c1, 1, 1), rng, dtype)
        self.b_head = zeros_param("head.b", (1,), dtype)
        self.aux_heads = [
            (conv_weight(f"aux{i}.w", (1, c, 1, 1), rng, dtype),
             zeros_param(f"aux{i}.b", (1,), dtype))
            for i, c in enumerate((c1, c2, c3), start=1)
        ]

    def __call__(self, image, train: bool = False) -> list:
        image = as_tensor(image)
        size = self.config.input_size
        if image.ndim != 4 or image.shape[2] != size or image.shape[3] != size:
            raise ShapeError(
                f"model configured for {size}x{size} inputs, got {image.shape}")
        s1, s2, s3, s4 = self.encoder(image)
        if self.msa is not None:
            m1, m2, m3 = (blk(s) for blk, s in zip(self.msa, (s1, s2, s3)))
        else:
            m1, m2, m3 = s1, s2, s3
        seed = T.conv2d(s4, self.w_seed, self.b_seed)
        d3 = self.stage3(m3, seed)
        d2 = self.stage2(m2, d3)
        d1 = self.stage1(m1, d2)
        fused = self.fuse(d1, d2, d3) if self.fuse is not None else d1
        final = T.bilinear_upsample(T.conv2d(fused, self.w_head, self.b_head), 4)
        if not train:
            return [final]
        if not self.config.deep_supervision:
            return [final]
        maps = [final]
        for (w, b), feat, factor in zip(self.aux_heads, (d1, d2, d3), (4, 8, 16)):
            maps.append(T.bilinear_upsample(T.conv2d(feat, w, b), factor))
        return maps

    def predict_logits(self, image) -> np.ndarray:
        """Inference forward pass with no tape; returns the logit map array."""
        return self(image, train=False)[0].data


def save_model(model: CrossScanNet, path, extra_meta: dict | None = None) -> None:
    """Serialize parameters plus the architecture description."""
    cfg = dataclasses.asdict(model.config)
    cfg["channels"] = list(cfg["channels"])
    meta = {"kind": "crossseg-model", "config": cfg}
    if extra_meta:
        overlap = set(meta) & set(extra_meta)
        if overlap:
            raise ValueError(f"extra_meta may not override {sorted(overlap)}")
        meta.update(extra_meta)
    save_tensors(path, model.state_arrays(), meta)


def load_model(path, dtype=np.float32) -> tuple:
    """Rebuild a model from a checkpoint; returns (model, meta)."""
    meta, tensors = load_tensors(path)
    if meta.get("kind") != "crossseg-model":
        raise CheckpointError(f"checkpoint {path} does not describe a model "
                              f"(kind={meta.get('kind')!r})")
    cfg_doc = meta.get("config")
    if not isinstance(cfg_doc, dict):
        raise CheckpointError("checkpoint is missing its architecture description")
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    unknown = sorted(set(cfg_doc) - known)
    if unknown:
        raise CheckpointError(f"unknown architecture key(s) in checkpoint: {unknown}")
    kwargs = dict(cfg_doc)
    if "channels" in kwargs:
        kwargs["channels"] = tuple(kwargs["channels"])
    try:
        config = ModelConfig(**kwargs).validate()
    except ConfigError as exc:
        raise CheckpointError(f"invalid architecture in checkpoint: {exc}") from exc
    model = CrossScanNet(config, seed=0, dtype=dtype)
    model.load_state(tensors)
    return model, meta
