"""
Trainable token encoders and the text-conditioned frame pooling.

Text tokens are projected linearly and mean-pooled. Frame tokens are
projected and refined by ``depth`` residual self-attention blocks. A video is
then summarised for a particular text by attending over its frames with the
pooled text as the query.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .exceptions import ConfigError, InputError
from .numerics import SeededRng, Tensor


@dataclass
class EncoderParams:
    tensors: dict[str, Tensor]
    depth: int = 1
    tau_frame: float = 1.0
    tau_contrast: float = 0.01
    positional: bool = False

    def __post_init__(self):
        if not self.tau_frame > 0 or not self.tau_contrast > 0:
            raise ConfigError("encoder temperatures must be positive")

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    @property
    def dim(self) -> int:
        return self.tensors["word_proj"].shape[1]

    @property
    def d_in(self) -> int:
        return self.tensors["word_proj"].shape[0]


@dataclass
class EncodedText:
    pooled: Tensor  # (B, D)
    words: Tensor  # (B, Lt, D)
    mask: np.ndarray = field(repr=False)  # (B, Lt) bool


@dataclass
class EncodedVideo:
    frames: Tensor  # (B, Lv, D)
    mask: np.ndarray = field(repr=False)  # (B, Lv) bool

    def pooled(self) -> Tensor:
        """Mask-aware mean of the frame features, the text-agnostic video summary."""
        w = self.mask / self.mask.sum(axis=1, keepdims=True)
        return nx.tsum(self.frames * w[:, :, None], axis=1)


def _dense(rng: SeededRng, fan_in: int, fan_out: int) -> Tensor:
    return Tensor(rng.normal((fan_in, fan_out)) / math.sqrt(fan_in), requires_grad=True)


def _bias(n: int) -> Tensor:
    return Tensor(np.zeros(n), requires_grad=True)


def init_encoder(rng: SeededRng, d_in: int, dim: int, depth: int = 1,
                 tau_frame: float = 1.0, tau_contrast: float = 0.01,
                 positional: bool = False) -> EncoderParams:
    t = {
        "word_proj": _dense(rng.child("word_proj"), d_in, dim),
        "frame_proj": _dense(rng.child("frame_proj"), d_in, dim),
    }
    for b in range(depth):
        r = rng.child(f"block{b}")
        for name in ("q", "k", "v", "o"):
            t[f"block{b}.{name}"] = _dense(r.child(name), dim, dim)
        t[f"block{b}.ffn_w1"] = _dense(r.child("ffn_w1"), dim, 2 * dim)
        t[f"block{b}.ffn_b1"] = _bias(2 * dim)
        t[f"block{b}.ffn_w2"] = _dense(r.child("ffn_w2"), 2 * dim, dim)
        t[f"block{b}.ffn_b2"] = _bias(dim)
    for head in ("word_head", "frame_head"):
        r = rng.child(head)
        t[f"{head}.w1"] = _dense(r.child("w1"), dim, dim)
        t[f"{head}.b1"] = _bias(dim)
        t[f"{head}.w2"] = _dense(r.child("w2"), dim, 1)
        t[f"{head}.b2"] = _bias(1)
    return EncoderParams(t, depth=depth, tau_frame=tau_frame, tau_contrast=tau_contrast,
                         positional=positional)


def _check_tokens(tokens, mask, what: str):
    tokens = tokens if isinstance(tokens, Tensor) else np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 3:
        raise InputError(f"{what} must be a (batch, tokens, features) array, got shape {tokens.shape}")
    if tokens.shape[1] == 0:
        raise InputError(f"empty {what} token set")
    if mask is None:
        mask = np.ones(tokens.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tokens.shape[:2]:
        raise InputError(f"{what} mask shape {mask.shape} does not match tokens {tokens.shape[:2]}")
    if not np.all(mask.any(axis=1)):
        raise InputError(f"empty {what} token set")
    return tokens, mask


def sinusoidal_positions(n: int, dim: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    freq = np.exp(-math.log(10000.0) * np.arange(dim // 2) / max(dim // 2, 1))
    out = np.zeros((n, dim))
    out[:, 0:2 * (dim // 2):2] = np.sin(pos * freq)
    out[:, 1:2 * (dim // 2):2] = np.cos(pos * freq)
    return out


def encode_text(tokens, params: EncoderParams, mask=None) -> EncodedText:
    tokens, mask = _check_tokens(tokens, mask, "text")
    words = nx.matmul(tokens, params["word_proj"])
    w = mask / mask.sum(axis=1, keepdims=True)
    pooled = nx.tsum(words * w[:, :, None], axis=1)
    return EncodedText(pooled, words, mask)


def self_attention_block(x: Tensor, mask: np.ndarray, params: EncoderParams, b: int,
                         return_weights: bool = False):
    """Residual single-head self-attention followed by a residual feed-forward layer."""
    p = f"block{b}."
    q = nx.matmul(x, params[p + "q"])
    k = nx.matmul(x, params[p + "k"])
    v = nx.matmul(x, params[p + "v"])
    logits = nx.matmul(q, nx.swapaxes(k, -1, -2)) / math.sqrt(x.shape[-1])
    attn = nx.softmax(logits, axis=-1, mask=mask[:, None, :])
    h = x + nx.matmul(nx.matmul(attn, v), params[p + "o"])
    ff = nx.relu(nx.matmul(h, params[p + "ffn_w1"]) + params[p + "ffn_b1"])
    out = h + nx.matmul(ff, params[p + "ffn_w2"]) + params[p + "ffn_b2"]
    return (out, attn) if return_weights else out


def encode_video(frames, params: EncoderParams, mask=None) -> EncodedVideo:
    frames, mask = _check_tokens(frames, mask, "video")
    x = nx.matmul(frames, params["frame_proj"])
    if params.positional:
        x = x + sinusoidal_positions(frames.shape[1], params.dim)
    for b in range(params.depth):
        x = self_attention_block(x, mask, params, b)
    return EncodedVideo(x, mask)


def text_frame_attention(c_t, frames, tau: float, mask=None, return_weights: bool = False):
    """Pool frame rows with softmax(c_t . f_j / tau) weights.

    ``c_t`` has shape (..., D) and ``frames`` (..., Nv, D); leading dims
    broadcast. Returns (..., D), a convex combination of frame rows.
    """
    if not tau > 0:
        raise ConfigError(f"text-frame temperature must be positive, got {tau}")
    c_t = nx.as_tensor(c_t)
    frames = nx.as_tensor(frames)
    q = nx.expand_dims(c_t, -2)  # (..., 1, D)
    logits = nx.matmul(q, nx.swapaxes(frames, -1, -2)) / tau  # (..., 1, Nv)
    m = None if mask is None else np.expand_dims(np.asarray(mask, dtype=bool), -2)
    weights = nx.softmax(logits, axis=-1, mask=m)
    pooled = nx.matmul(weights, frames)
    shape = pooled.shape[:-2] + (pooled.shape[-1],)
    out = nx.reshape(pooled, shape)
    if return_weights:
        return out, weights.value.reshape(weights.shape[:-2] + (weights.shape[-1],))
    return out


def pairwise_video_repr(text: EncodedText, video: EncodedVideo, tau: float) -> Tensor:
    """Text-conditioned video representation for every (text, video) pair: (Bt, Bv, D)."""
    c_t = nx.expand_dims(text.pooled, 1)  # (Bt, 1, D)
    frames = nx.expand_dims(video.frames, 0)  # (1, Bv, Nv, D)
    return text_frame_attention(c_t, frames, tau, mask=video.mask[None])
