"""Tiny bidirectional transformer denoiser.

Pre-norm blocks, sinusoidal encodings keyed on explicit position ids (so
duplicated ids give identical encodings), arbitrary boolean visibility
masks, float32 arithmetic. Weights come from a SplitMix64 stream and
round-trip through a small binary format.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels
from .core import FormatError, Vocab
from .rng import SplitMix64

MAGIC = b"LEAPW1"
_HEADER = struct.Struct("<7I")
LN_EPS = np.float32(1e-5)


@dataclass(frozen=True)
class Dims:
    d_model: int
    n_heads: int
    n_layers: int
    d_ffn: int
    vocab: int
    max_pos: int

    def __post_init__(self):
        for name in ("d_model", "n_heads", "n_layers", "d_ffn", "vocab", "max_pos"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.vocab < 2:
            raise ValueError("vocab must be >= 2")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    def as_tuple(self):
        return (self.d_model, self.n_heads, self.n_layers, self.d_ffn, self.vocab, self.max_pos)


@dataclass
class LayerWeights:
    ln1_scale: np.ndarray
    ln1_bias: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln2_scale: np.ndarray
    ln2_bias: np.ndarray
    ffn_in: np.ndarray
    ffn_in_bias: np.ndarray
    ffn_out: np.ndarray
    ffn_out_bias: np.ndarray

    FIELDS = (
        "ln1_scale", "ln1_bias", "wq", "wk", "wv", "wo",
        "ln2_scale", "ln2_bias", "ffn_in", "ffn_in_bias", "ffn_out", "ffn_out_bias",
    )


@dataclass
class DenoiserWeights:
    dims: Dims
    tok_emb: np.ndarray
    layers: list
    final_scale: np.ndarray
    final_bias: np.ndarray
    unembed: np.ndarray

    def tensors(self):
        """(name, array) pairs in file / fill order."""
        yield "tok_emb", self.tok_emb
        for k, layer in enumerate(self.layers):
            for name in LayerWeights.FIELDS:
                yield f"layers.{k}.{name}", getattr(layer, name)
        yield "final_scale", self.final_scale
        yield "final_bias", self.final_bias
        yield "unembed", self.unembed

    def check(self):
        for name, t in self.tensors():
            if t.dtype != np.float32:
                raise FormatError(f"{name}: expected float32, got {t.dtype}")
            if not np.all(np.isfinite(t)):
                raise FormatError(f"{name} contains non-finite values")

    def equals(self, other: "DenoiserWeights") -> bool:
        if self.dims != other.dims:
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for (_, a), (_, b) in zip(self.tensors(), other.tensors())
        )


def tensor_shapes(dims: Dims):
    d, f, V = dims.d_model, dims.d_ffn, dims.vocab
    shapes = [("tok_emb", (V, d))]
    per_layer = {
        "ln1_scale": (d,), "ln1_bias": (d,),
        "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
        "ln2_scale": (d,), "ln2_bias": (d,),
        "ffn_in": (d, f), "ffn_in_bias": (f,),
        "ffn_out": (f, d), "ffn_out_bias": (d,),
    }
    for k in range(dims.n_layers):
        for name in LayerWeights.FIELDS:
            shapes.append((f"layers.{k}.{name}", per_layer[name]))
    shapes += [("final_scale", (d,)), ("final_bias", (d,)), ("unembed", (d, V))]
    return shapes


def _assemble(dims: Dims, arrays: list) -> DenoiserWeights:
    it = iter(arrays)
    tok_emb = next(it)
    layers = []
    for _ in range(dims.n_layers):
        layers.append(LayerWeights(**{name: next(it) for name in LayerWeights.FIELDS}))
    return DenoiserWeights(dims, tok_emb, layers, next(it), next(it), next(it))


def seeded_weights(seed: int, dims: Dims) -> DenoiserWeights:
    """Xavier-uniform matrices from SplitMix64, filled in field order, row-major.

    Vectors are not drawn: norm scales are 1 and biases are 0.
    """
    rng = SplitMix64(seed)
    arrays = []
    for name, shape in tensor_shapes(dims):
        if len(shape) == 1:
            fill = 1.0 if name.endswith("scale") else 0.0
            arrays.append(np.full(shape, fill, dtype=np.float32))
            continue
        fan_in, fan_out = shape
        a = math.sqrt(6.0 / (fan_in + fan_out))
        u = rng.uniform(fan_in * fan_out)
        arrays.append(((2.0 * u - 1.0) * a).astype(np.float32).reshape(shape))
    return _assemble(dims, arrays)


def save_weights(weights: DenoiserWeights, path) -> None:
    weights.check()
    parts = [MAGIC, _HEADER.pack(*weights.dims.as_tuple(), 0)]
    for _, t in weights.tensors():
        parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_weights(path) -> DenoiserWeights:
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic")
    off = len(MAGIC)
    if len(blob) < off + _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    *dim_vals, reserved = _HEADER.unpack_from(blob, off)
    off += _HEADER.size
    if reserved != 0:
        raise FormatError(f"{path}: reserved header field is {reserved}, expected 0")
    try:
        dims = Dims(*dim_vals)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    shapes = tensor_shapes(dims)
    need = sum(4 * int(np.prod(s)) for _, s in shapes)
    have = len(blob) - off
    if have < need:
        raise FormatError(f"{path}: truncated, header implies {need} tensor bytes, found {have}")
    if have > need:
        raise FormatError(f"{path}: {have - need} trailing bytes after declared tensors")
    arrays = []
    for _, shape in shapes:
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).astype(np.float32).reshape(shape)
        off += 4 * n
        arrays.append(arr)
    weights = _assemble(dims, arrays)
    weights.check()
    return weights


# ---------------------------------------------------------------- forward


def sinusoidal(position_ids: np.ndarray, d_model: int) -> np.ndarray:
    pos = np.asarray(position_ids, dtype=np.float64)[:, None]
    i = np.arange(d_model // 2 + d_model % 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d_model)
    pe = np.empty((pos.shape[0], d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe.astype(np.float32)


def layer_norm(x, scale, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * scale + bias


def gelu(x):
    # tanh approximation
    c = np.float32(math.sqrt(2.0 / math.pi))
    return np.float32(0.5) * x * (np.float32(1.0) + np.tanh(c * (x + np.float32(0.044715) * x * x * x)))


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardOutput:
    probs: np.ndarray  # (R, V) float64
    top_token: np.ndarray
    top_conf: np.ndarray

    @classmethod
    def from_probs(cls, probs: np.ndarray) -> "ForwardOutput":
        top = probs.argmax(axis=1)
        return cls(probs, top, probs[np.arange(probs.shape[0]), top])


def forward(weights: DenoiserWeights, tokens, position_ids, mask, suppress=None) -> ForwardOutput:
    """One forward pass; ``suppress`` names a token id whose logit is forced to -inf."""
    dims = weights.dims
    tokens = np.asarray(tokens, dtype=np.int64)
    position_ids = np.asarray(position_ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    R = tokens.shape[0]
    if tokens.ndim != 1 or position_ids.shape != (R,):
        raise ValueError("tokens and position_ids must be 1-D of equal length")
    if mask.shape != (R, R):
        raise ValueError(f"visibility mask has shape {mask.shape}, expected {(R, R)}")
    if R == 0:
        raise ValueError("empty input")
    if tokens.min() < 0 or tokens.max() >= dims.vocab:
        raise ValueError("token id outside vocabulary")
    if position_ids.min() < 0 or position_ids.max() >= dims.max_pos:
        raise ValueError("position id outside [0, max_pos)")
    if not mask.any(axis=1).all():
        raise ValueError("a visibility row has no visible key")

    H = dims.n_heads
    dh = dims.d_model // H
    x = weights.tok_emb[tokens] + sinusoidal(position_ids, dims.d_model)
    for layer in weights.layers:
        h = layer_norm(x, layer.ln1_scale, layer.ln1_bias)
        q = (h @ layer.wq).reshape(R, H, dh).transpose(1, 0, 2)
        k = (h @ layer.wk).reshape(R, H, dh).transpose(1, 0, 2)
        v = (h @ layer.wv).reshape(R, H, dh).transpose(1, 0, 2)
        att = _kernels.masked_attention(
            np.ascontiguousarray(q), np.ascontiguousarray(k), np.ascontiguousarray(v), mask
        )
        x = x + att.transpose(1, 0, 2).reshape(R, dims.d_model) @ layer.wo
        h = layer_norm(x, layer.ln2_scale, layer.ln2_bias)
        x = x + gelu(h @ layer.ffn_in + layer.ffn_in_bias) @ layer.ffn_out + layer.ffn_out_bias
    x = layer_norm(x, weights.final_scale, weights.final_bias)
    logits = x @ weights.unembed
    if suppress is not None:
        logits[:, suppress] = -np.inf
    return ForwardOutput.from_probs(softmax_rows(logits))


class TinyTransformer:
    """Denoiser wrapper: plain prediction plus superposed forwards.

    The mask token is the last vocabulary entry and is never predicted:
    its logit is suppressed so every distribution lives on real tokens.
    """

    supports_superposition = True

    def __init__(self, weights: DenoiserWeights, vocab: Optional[Vocab] = None):
        self.weights = weights
        self.vocab = vocab or Vocab(weights.dims.vocab, weights.dims.vocab - 1)
        if self.vocab.size != weights.dims.vocab:
            raise ValueError("vocabulary size does not match the weights")

    @classmethod
    def from_file(cls, path) -> "TinyTransformer":
        return cls(load_weights(path))

    def forward(self, tokens, position_ids, mask) -> ForwardOutput:
        return forward(self.weights, tokens, position_ids, mask, suppress=self.vocab.mask_id)

    def predict(self, tokens) -> np.ndarray:
        R = len(tokens)
        return self.forward(tokens, np.arange(R), np.ones((R, R), dtype=bool)).probs
