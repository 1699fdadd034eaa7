"""Forward-only RangeFormer-style segmenter in NumPy (inference mode).

Computation runs in ``ModelConfig.dtype`` (float32 by default, matching the
weight file; float64 for reference checks). Feature maps are ``(C, H, W)``;
token sequences are ``(H*W, C)`` in row-major spatial order. Batch norm runs as a per-channel affine map
(``scale``/``shift``, initialised to the identity). Bilinear resizing uses the
half-pixel (align-corners-false) convention.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erf

from .types import RangeImage

LN_EPS = 1e-6
ATTN_CHUNK = 1024


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 20
    in_channels: int = 6
    rem_channels: tuple = (64, 128, 128)
    stage_channels: tuple = (128, 128, 320, 512)
    heads: tuple = (3, 4, 6, 3)
    depths: tuple = (2, 2, 2, 2)
    reductions: tuple = (8, 4, 2, 1)
    strides: tuple = (1, 2, 2, 2)
    mlp_ratio: int = 4
    decode_channels: int = 256
    dtype: str = "float32"

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")
        for name in ("rem_channels", "stage_channels", "heads", "depths", "reductions", "strides"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if not (len(self.stage_channels) == len(self.heads) == len(self.depths)
                == len(self.reductions) == len(self.strides)):
            raise ValueError("per-stage settings differ in length")
        for c, h in zip(self.stage_channels, self.heads):
            if not 1 <= h <= c:
                raise ValueError(f"{h} heads for {c} channels")
        if any(s not in (1, 2) for s in self.strides):
            raise ValueError("patch-embedding strides must be 1 or 2")
        if any(r < 1 for r in self.reductions):
            raise ValueError("reduction factors must be >= 1")

    def head_dim(self, stage: int) -> int:
        return self.stage_channels[stage] // self.heads[stage]

    def inner_dim(self, stage: int) -> int:
        return self.heads[stage] * self.head_dim(stage)


TINY_CONFIG = ModelConfig(
    rem_channels=(16, 16, 16),
    stage_channels=(16, 16, 32, 32),
    heads=(1, 2, 2, 1),
    depths=(1, 1, 1, 1),
    reductions=(4, 2, 1, 1),
    mlp_ratio=2,
    decode_channels=16,
)


# -- weight layout -------------------------------------------------------


def weight_shapes(config: ModelConfig) -> dict:
    """Ordered ``name -> shape`` for every parameter."""
    shapes = {}

    def linear(prefix, n_in, n_out):
        shapes[f"{prefix}.weight"] = (n_out, n_in)
        shapes[f"{prefix}.bias"] = (n_out,)

    def norm(prefix, c, kind):
        a, b = ("scale", "shift") if kind == "bn" else ("gamma", "beta")
        shapes[f"{prefix}.{a}"] = (c,)
        shapes[f"{prefix}.{b}"] = (c,)

    prev = config.in_channels
    for i, c in enumerate(config.rem_channels):
        linear(f"rem.{i}", prev, c)
        norm(f"rem.{i}.bn", c, "bn")
        prev = c
    for s, c in enumerate(config.stage_channels):
        p = f"stage{s}"
        shapes[f"{p}.embed.weight"] = (c, prev, 3, 3)
        shapes[f"{p}.embed.bias"] = (c,)
        norm(f"{p}.embed.ln", c, "ln")
        inner = config.inner_dim(s)
        hidden = c * config.mlp_ratio
        for b in range(config.depths[s]):
            q = f"{p}.block{b}"
            norm(f"{q}.ln1", c, "ln")
            linear(f"{q}.attn.q", c, inner)
            linear(f"{q}.attn.k", c, inner)
            linear(f"{q}.attn.v", c, inner)
            linear(f"{q}.attn.o", inner, c)
            if config.reductions[s] > 1:
                linear(f"{q}.attn.sr", c, c)
                norm(f"{q}.attn.sr_ln", c, "ln")
            norm(f"{q}.ln2", c, "ln")
            linear(f"{q}.ffn.fc1", c, hidden)
            shapes[f"{q}.ffn.dw.weight"] = (hidden, 3, 3)
            shapes[f"{q}.ffn.dw.bias"] = (hidden,)
            linear(f"{q}.ffn.fc2", hidden, c)
        norm(f"{p}.ln", c, "ln")
        prev = c
    d = config.decode_channels
    for s, c in enumerate(config.stage_channels):
        linear(f"decode.unify{s}", c, d)
    n_stages = len(config.stage_channels)
    linear("decode.fuse", n_stages * d, d)
    norm("decode.fuse.bn", d, "bn")
    linear("decode.cls", d, config.num_classes)
    for s in range(n_stages):
        linear(f"decode.aux{s}", d, config.num_classes)
    return shapes


def _fan_in(shape: tuple) -> int:
    return int(np.prod(shape[1:])) if len(shape) > 1 else 1


def init_weights(config: ModelConfig, seed: int) -> dict:
    """Uniform in +-1/sqrt(fan_in) for linear/conv parameters; norms start at identity.

    A bias takes the fan-in of the weight it belongs to.
    """
    rng = np.random.default_rng(seed)
    shapes = weight_shapes(config)
    weights = {}
    for name, shape in shapes.items():
        leaf = name.rsplit(".", 1)[1]
        if leaf in ("scale", "gamma"):
            weights[name] = np.ones(shape)
        elif leaf in ("shift", "beta"):
            weights[name] = np.zeros(shape)
        else:
            ref = shapes[name[: -len("bias")] + "weight"] if leaf == "bias" else shape
            bound = 1.0 / np.sqrt(_fan_in(ref))
            weights[name] = rng.uniform(-bound, bound, size=shape)
    return weights


def check_weights(weights: dict, config: ModelConfig) -> None:
    shapes = weight_shapes(config)
    missing = set(shapes) - set(weights)
    if missing:
        raise ValueError(f"missing weights: {sorted(missing)[:5]}")
    for name, shape in shapes.items():
        if tuple(weights[name].shape) != shape:
            raise ValueError(f"{name}: shape {weights[name].shape} != {shape}")


def save_weights(path, weights: dict, config: ModelConfig) -> None:
    """Flat binary: uint32 layer count, per layer uint32 ndim + dims, then float32 data."""
    shapes = weight_shapes(config)
    check_weights(weights, config)
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(shapes)))
        for shape in shapes.values():
            f.write(struct.pack(f"<I{len(shape)}I", len(shape), *shape))
        for name in shapes:
            f.write(np.ascontiguousarray(weights[name], dtype="<f4").tobytes())


def load_weights(path, config: ModelConfig) -> dict:
    from .io import FormatError

    shapes = weight_shapes(config)
    with open(path, "rb") as f:
        raw = f.read()
    try:
        (count,), pos = struct.unpack_from("<I", raw, 0), 4
        if count != len(shapes):
            raise FormatError(f"{path}: {count} layers, config expects {len(shapes)}")
        declared = []
        for _ in range(count):
            (ndim,) = struct.unpack_from("<I", raw, pos)
            dims = struct.unpack_from(f"<{ndim}I", raw, pos + 4)
            pos += 4 + 4 * ndim
            declared.append(tuple(dims))
    except struct.error:
        raise FormatError(f"{path}: truncated header") from None
    weights = {}
    for (name, shape), dims in zip(shapes.items(), declared):
        if dims != shape:
            raise FormatError(f"{path}: {name} declared {dims}, config expects {shape}")
        size = 4 * int(np.prod(shape))
        if pos + size > len(raw):
            raise FormatError(f"{path}: truncated data at {name}")
        weights[name] = np.frombuffer(raw, dtype="<f4", count=size // 4, offset=pos).reshape(shape).astype(np.float64)
        pos += size
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return weights


# -- primitives ----------------------------------------------------------


def gelu(x: np.ndarray, inplace: bool = False) -> np.ndarray:
    """Exact (erf) GELU."""
    t = erf(x * (1.0 / math.sqrt(2.0)))
    t += 1.0
    t *= 0.5
    if inplace:
        x *= t
        return x
    t *= x
    return t


def softmax(x: np.ndarray, axis: int = -1, inplace: bool = False) -> np.ndarray:
    out = x if inplace else x.copy()
    out -= out.max(axis=axis, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=axis, keepdims=True)
    return out


def layer_norm(x: np.ndarray, gamma, beta) -> np.ndarray:
    out = x - x.mean(axis=-1, keepdims=True)
    var = np.einsum("ij,ij->i", out, out)[:, None] / x.shape[-1]
    out *= 1.0 / np.sqrt(var + LN_EPS)
    out *= gamma
    out += beta
    return out


def linear(x: np.ndarray, w, b) -> np.ndarray:
    out = x @ w.T
    out += b
    return out


def _conv3x3_hwc(grid: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int) -> np.ndarray:
    """Channels-last core: ``(H, W, C_in) -> (ceil(H/s) * ceil(W/s), C_out)``."""
    h, w, c_in = grid.shape
    ho, wo = -(-h // stride), -(-w // stride)
    padded = np.pad(grid, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros((ho * wo, weight.shape[0]), dtype=grid.dtype)
    for dy in range(3):
        for dx in range(3):
            window = padded[dy: dy + stride * ho: stride, dx: dx + stride * wo: stride]
            tap = np.ascontiguousarray(weight[:, :, dy, dx].T)
            out += window.reshape(-1, c_in) @ tap
    return out + bias


def conv3x3(fmap: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int = 1) -> np.ndarray:
    """Zero-padded 3x3 convolution of a ``(C, H, W)`` map; output ``(C_out, ceil(H/s), ceil(W/s))``."""
    _, h, w = fmap.shape
    out = _conv3x3_hwc(np.ascontiguousarray(fmap.transpose(1, 2, 0)), weight, bias, stride)
    return _fmap(out, -(-h // stride), -(-w // stride))


def _depthwise_hwc(grid: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    # one output row at a time keeps the nine taps in cache
    h, w, c = grid.shape
    padded = np.pad(grid, ((1, 1), (1, 1), (0, 0)))
    taps = [(dy, dx, np.ascontiguousarray(weight[:, dy, dx])) for dy in range(3) for dx in range(3)]
    out = np.empty_like(grid)
    acc = np.empty((w, c), dtype=grid.dtype)
    tmp = np.empty((w, c), dtype=grid.dtype)
    for r in range(h):
        acc[:] = bias
        for dy, dx, k in taps:
            np.multiply(padded[r + dy, dx: dx + w], k, out=tmp)
            acc += tmp
        out[r] = acc
    return out


def depthwise_conv3x3(fmap: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Per-channel zero-padded 3x3 convolution of a ``(C, H, W)`` map."""
    out = _depthwise_hwc(np.ascontiguousarray(fmap.transpose(1, 2, 0)), weight, bias)
    return np.ascontiguousarray(out.transpose(2, 0, 1))


def mean_pool(fmap: np.ndarray, r: int) -> np.ndarray:
    """Non-overlapping ``r x r`` average; trailing partial windows average what they cover."""
    c, h, w = fmap.shape
    ho, wo = -(-h // r), -(-w // r)
    padded = np.zeros((c, ho * r, wo * r), dtype=fmap.dtype)
    padded[:, :h, :w] = fmap
    counts = np.zeros((ho * r, wo * r))
    counts[:h, :w] = 1.0
    sums = padded.reshape(c, ho, r, wo, r).sum(axis=(2, 4))
    n = counts.reshape(ho, r, wo, r).sum(axis=(1, 3))
    return (sums / n).astype(fmap.dtype, copy=False)


def resize_weights(n_in: int, n_out: int):
    """Half-pixel bilinear sampling: lower index, upper index, upper weight."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def bilinear_resize(fmap: np.ndarray, height: int, width: int) -> np.ndarray:
    _, h, w = fmap.shape
    if (h, w) == (height, width):
        return fmap.copy()
    r0, r1, fr = resize_weights(h, height)
    c0, c1, fc = resize_weights(w, width)
    fr, fc = fr.astype(fmap.dtype), fc.astype(fmap.dtype)
    rows = fmap[:, r0, :] * (1 - fr)[None, :, None] + fmap[:, r1, :] * fr[None, :, None]
    return rows[:, :, c0] * (1 - fc) + rows[:, :, c1] * fc


def _tokens(fmap: np.ndarray) -> np.ndarray:
    return fmap.reshape(fmap.shape[0], -1).T


def _fmap(tokens: np.ndarray, h: int, w: int) -> np.ndarray:
    return tokens.T.reshape(-1, h, w)


# -- network pieces -------------------------------------------------------


def rem_forward(channels: np.ndarray, weights: dict, config: ModelConfig) -> np.ndarray:
    """Pointwise 6 -> 64 -> 128 -> 128 embedding of a ``(6, H, W)`` raster."""
    if channels.shape[0] != config.in_channels:
        raise ValueError(f"expected {config.in_channels} input channels, got {channels.shape[0]}")
    _, h, w = channels.shape
    x = _tokens(channels)
    for i in range(len(config.rem_channels)):
        p = f"rem.{i}"
        x = linear(x, weights[f"{p}.weight"], weights[f"{p}.bias"])
        x = x * weights[f"{p}.bn.scale"] + weights[f"{p}.bn.shift"]
        x = gelu(x)
    return _fmap(x, h, w)


def overlap_patch_embed(fmap: np.ndarray, weights: dict, prefix: str, stride: int):
    """3x3 overlapping patches -> normalized tokens. Returns ``(tokens, (h, w))``."""
    _, h, w = fmap.shape
    grid = np.ascontiguousarray(fmap.transpose(1, 2, 0))
    out = _conv3x3_hwc(grid, weights[f"{prefix}.weight"], weights[f"{prefix}.bias"], stride)
    tokens = layer_norm(out, weights[f"{prefix}.ln.gamma"], weights[f"{prefix}.ln.beta"])
    return tokens, (-(-h // stride), -(-w // stride))


def attention_forward(tokens: np.ndarray, weights: dict, prefix: str, heads: int, reduction: int,
                      dims: tuple, return_probs: bool = False):
    """Multi-head attention with keys/values from an ``reduction``-pooled sequence.

    Residual is left to the caller.
    """
    n, c = tokens.shape
    h, w = dims
    if n != h * w:
        raise ValueError(f"{n} tokens do not fill a {h}x{w} grid")
    q = linear(tokens, weights[f"{prefix}.q.weight"], weights[f"{prefix}.q.bias"])
    if q.shape[1] % heads:
        raise ValueError(f"inner dim {q.shape[1]} not divisible by {heads} heads")
    src = tokens
    if reduction > 1:
        pooled = _tokens(mean_pool(_fmap(tokens, h, w), reduction))
        pooled = linear(pooled, weights[f"{prefix}.sr.weight"], weights[f"{prefix}.sr.bias"])
        src = layer_norm(pooled, weights[f"{prefix}.sr_ln.gamma"], weights[f"{prefix}.sr_ln.beta"])
    k = linear(src, weights[f"{prefix}.k.weight"], weights[f"{prefix}.k.bias"])
    v = linear(src, weights[f"{prefix}.v.weight"], weights[f"{prefix}.v.bias"])
    d = q.shape[1] // heads
    scale = 1.0 / math.sqrt(d)
    out = np.empty_like(q)
    probs = []
    for i in range(heads):
        sl = slice(i * d, (i + 1) * d)
        qh = np.ascontiguousarray(q[:, sl]) * scale
        kh_t = np.ascontiguousarray(k[:, sl].T)
        vh = np.ascontiguousarray(v[:, sl])
        for start in range(0, n, ATTN_CHUNK):
            rows = slice(start, min(n, start + ATTN_CHUNK))
            p = softmax(qh[rows] @ kh_t, inplace=True)
            if return_probs:
                probs.append(p)
            out[rows, sl] = p @ vh
    out = linear(out, weights[f"{prefix}.o.weight"], weights[f"{prefix}.o.bias"])
    return (out, probs) if return_probs else out


def ffn_forward(tokens: np.ndarray, weights: dict, prefix: str, dims: tuple,
                norm: Optional[tuple] = None) -> np.ndarray:
    """Linear -> depthwise 3x3 conv -> GELU -> Linear, plus the input.

    ``norm`` is an optional ``(gamma, beta)`` layer norm applied before the
    first linear map (the residual uses the un-normalized input).
    """
    h, w = dims
    if tokens.shape[0] != h * w:
        raise ValueError(f"{tokens.shape[0]} tokens do not fill a {h}x{w} grid")
    x = tokens if norm is None else layer_norm(tokens, *norm)
    x = linear(x, weights[f"{prefix}.fc1.weight"], weights[f"{prefix}.fc1.bias"])
    x = _depthwise_hwc(x.reshape(h, w, -1), weights[f"{prefix}.dw.weight"],
                       weights[f"{prefix}.dw.bias"]).reshape(h * w, -1)
    x = gelu(x, inplace=True)
    x = linear(x, weights[f"{prefix}.fc2.weight"], weights[f"{prefix}.fc2.bias"])
    return tokens + x


def block_forward(tokens, weights, prefix, heads, reduction, dims):
    normed = layer_norm(tokens, weights[f"{prefix}.ln1.gamma"], weights[f"{prefix}.ln1.beta"])
    tokens = tokens + attention_forward(normed, weights, f"{prefix}.attn", heads, reduction, dims)
    norm = (weights[f"{prefix}.ln2.gamma"], weights[f"{prefix}.ln2.beta"])
    return ffn_forward(tokens, weights, f"{prefix}.ffn", dims, norm)


def stage_forward(fmap: np.ndarray, weights: dict, config: ModelConfig, stage: int) -> np.ndarray:
    p = f"stage{stage}"
    tokens, dims = overlap_patch_embed(fmap, weights, f"{p}.embed", config.strides[stage])
    for b in range(config.depths[stage]):
        tokens = block_forward(tokens, weights, f"{p}.block{b}", config.heads[stage],
                               config.reductions[stage], dims)
    tokens = layer_norm(tokens, weights[f"{p}.ln.gamma"], weights[f"{p}.ln.beta"])
    return _fmap(tokens, *dims)


def decode_head(stages: list, weights: dict, config: ModelConfig, size: tuple, aux: bool = True):
    """Unify channels, resize to ``size``, fuse. Returns ``(main_logits, aux_logits)``.

    With ``aux=False`` the auxiliary list is empty (inference keeps only the
    main head) and each stage's share of the fuse projection is applied before
    resizing, which is the same map since resizing mixes no channels.
    """
    height, width = size
    d = config.decode_channels
    fuse_w = weights["decode.fuse.weight"]
    low_res = []
    for s, f in enumerate(stages):
        if f.shape[0] != config.stage_channels[s]:
            raise ValueError(f"stage {s}: {f.shape[0]} channels, expected {config.stage_channels[s]}")
        t = linear(_tokens(f), weights[f"decode.unify{s}.weight"], weights[f"decode.unify{s}.bias"])
        low_res.append((t, f.shape[1:]))

    if aux:
        unified = [bilinear_resize(_fmap(t, *dims), height, width) for t, dims in low_res]
        x = linear(_tokens(np.concatenate(unified, axis=0)), fuse_w, weights["decode.fuse.bias"])
    else:
        x = np.zeros((height * width, d), dtype=low_res[0][0].dtype)
        for s, (t, dims) in enumerate(low_res):
            part = t @ np.ascontiguousarray(fuse_w[:, s * d: (s + 1) * d].T)
            x += _tokens(bilinear_resize(_fmap(part, *dims), height, width))
        x += weights["decode.fuse.bias"]
    x = gelu(x * weights["decode.fuse.bn.scale"] + weights["decode.fuse.bn.shift"])
    main = _fmap(linear(x, weights["decode.cls.weight"], weights["decode.cls.bias"]), height, width)
    aux_logits = [
        _fmap(linear(_tokens(u), weights[f"decode.aux{s}.weight"], weights[f"decode.aux{s}.bias"]),
              height, width)
        for s, u in enumerate(unified)
    ] if aux else []
    return main, aux_logits


def cast_weights(weights: dict, dtype) -> dict:
    dtype = np.dtype(dtype)
    return {k: v.astype(dtype, copy=False) for k, v in weights.items()}


def forward_logits(channels: np.ndarray, config: ModelConfig, weights: dict, aux: bool = True):
    """Main logits ``(d_cls, H, W)``, auxiliary logits, and the per-stage feature maps."""
    channels = np.asarray(channels, dtype=config.dtype)
    weights = cast_weights(weights, config.dtype)
    fmap = rem_forward(channels, weights, config)
    stages = []
    for s in range(len(config.stage_channels)):
        fmap = stage_forward(fmap, weights, config, s)
        stages.append(fmap)
    main, aux_logits = decode_head(stages, weights, config, channels.shape[1:], aux)
    return main, aux_logits, stages


def forward(img, config: ModelConfig, weights: dict) -> np.ndarray:
    """Per-grid argmax of the main head. ``img`` is a RangeImage or a ``(6, H, W)`` array."""
    channels = img.channels if isinstance(img, RangeImage) else img
    main, _, _ = forward_logits(channels, config, weights, aux=False)
    return main.argmax(axis=0)


class Segmenter:
    """Callable grid predictor bound to a config and weights."""

    def __init__(self, config: ModelConfig, weights: dict):
        check_weights(weights, config)
        self.config = config
        self.weights = cast_weights(weights, config.dtype)

    def __call__(self, img) -> np.ndarray:
        return forward(img, self.config, self.weights)
