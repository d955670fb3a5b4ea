"""
Training objectives: the generation loss on predicted joint distributions,
token-level similarity with the symmetric contrastive loss, and the plain
softmax posterior used as the discriminative baseline.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .encoders import EncodedText, EncodedVideo, EncoderParams
from .exceptions import ConfigError, ContractError, InputError, NumericGuardWarning
from .numerics import Tensor

LOSS_TYPES = ("kl", "kl_literal", "mse")
NORM_EPS = 1e-12


@dataclass
class JointTarget:
    """Clean target: ``signal`` is +scale at the positive and -scale elsewhere,
    ``prob`` the label-smoothed one-hot. Arrays may carry a leading batch axis."""

    signal: np.ndarray
    prob: np.ndarray
    positive: np.ndarray


def joint_target(positive, n: int, signal_scale: float = 1.0, smoothing: float = 0.0) -> JointTarget:
    """Targets for one positive index, or for an array of them (one row each)."""
    if not 0.0 <= smoothing < 1.0:
        raise ConfigError(f"smoothing must lie in [0, 1), got {smoothing}")
    if not signal_scale > 0:
        raise ConfigError(f"signal_scale must be positive, got {signal_scale}")
    pos = np.asarray(positive)
    if np.any(pos < 0) or np.any(pos >= n):
        raise ContractError(f"positive index out of range for gallery of {n}")
    onehot = np.zeros(pos.shape + (n,))
    np.put_along_axis(onehot, pos[..., None], 1.0, axis=-1)
    signal = signal_scale * (2.0 * onehot - 1.0)
    prob = (1.0 - smoothing) * onehot + smoothing / n
    return JointTarget(signal, prob, pos)


def generation_loss(pred, target: JointTarget, kind: str = "kl") -> Tensor:
    """Mean over rows of the chosen discrepancy between ``pred`` logits and the target.

    ``kl`` is KL(target || softmax(pred)); ``kl_literal`` reverses the
    arguments and needs a smoothed (strictly positive) target; ``mse``
    compares raw logits with the +/-scale signal.
    """
    pred = nx.as_tensor(pred)
    if pred.shape != target.prob.shape:
        raise ContractError(f"prediction shape {pred.shape} != target shape {target.prob.shape}")
    p0 = target.prob
    if kind == "kl":
        logq = nx.log_softmax(pred, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = np.where(p0 > 0, p0 * np.log(np.where(p0 > 0, p0, 1.0)), 0.0).sum(axis=-1)
        per_row = ent - nx.tsum(logq * p0, axis=-1)
    elif kind == "kl_literal":
        if np.any(p0 <= 0):
            raise ConfigError("reverse-order KL needs a smoothed target (smoothing > 0)")
        logq = nx.log_softmax(pred, axis=-1)
        q = nx.exp(logq)
        per_row = nx.tsum(q * (logq - np.log(p0)), axis=-1)
    elif kind == "mse":
        per_row = nx.mean(nx.square(pred - target.signal), axis=-1)
    else:
        raise ConfigError(f"unknown generation loss {kind!r}")
    return nx.mean(per_row)


def _guard_norms(features: Tensor, mask: np.ndarray, what: str) -> None:
    norms = np.sqrt((features.value ** 2).sum(axis=-1))
    if np.any((norms <= NORM_EPS) & mask):
        warnings.warn(f"zero-norm {what} token; norm clamped at {NORM_EPS}", NumericGuardWarning,
                      stacklevel=3)


def token_weights(features: Tensor, mask: np.ndarray, params: EncoderParams, head: str) -> Tensor:
    h = nx.relu(nx.matmul(features, params[f"{head}.w1"]) + params[f"{head}.b1"])
    logits = nx.matmul(h, params[f"{head}.w2"]) + params[f"{head}.b2"]
    logits = nx.reshape(logits, logits.shape[:-1])
    return nx.softmax(logits, axis=-1, mask=mask)


def token_similarity(text: EncodedText, video: EncodedVideo, params: EncoderParams,
                     uniform_weights: bool = False) -> Tensor:
    """Weighted max-alignment similarity for every (text, video) pair: (Bt, Bv).

    Per pair: cosine alignment matrix a_ij between words and frames, then
    0.5 * (sum_i g_t^i max_j a_ij + sum_j g_v^j max_i a_ij) with softmax
    token weights from the word/frame heads (uniform over valid tokens
    when ``uniform_weights``).
    """
    _guard_norms(text.words, text.mask, "word")
    _guard_norms(video.frames, video.mask, "frame")
    wn = nx.l2_normalize(text.words, axis=-1, eps=NORM_EPS)  # (Bt, Lt, D)
    fn = nx.l2_normalize(video.frames, axis=-1, eps=NORM_EPS)  # (Bv, Lv, D)
    align = nx.matmul(nx.expand_dims(wn, 1), nx.swapaxes(nx.expand_dims(fn, 0), -1, -2))
    best_frame = nx.amax(align, axis=-1, mask=video.mask[None, :, None, :])  # (Bt, Bv, Lt)
    best_word = nx.amax(align, axis=-2, mask=text.mask[:, None, :, None])  # (Bt, Bv, Lv)
    if uniform_weights:
        g_t = Tensor._wrap(text.mask / text.mask.sum(axis=1, keepdims=True))
        g_v = Tensor._wrap(video.mask / video.mask.sum(axis=1, keepdims=True))
    else:
        g_t = token_weights(text.words, text.mask, params, "word_head")
        g_v = token_weights(video.frames, video.mask, params, "frame_head")
    t2v = nx.tsum(best_frame * nx.expand_dims(g_t, 1), axis=-1)
    v2t = nx.tsum(best_word * nx.expand_dims(g_v, 0), axis=-1)
    return 0.5 * (t2v + v2t)


def contrastive_loss(sim, tau: float = 0.01) -> Tensor:
    """Symmetric InfoNCE over an in-batch score matrix with positives on the diagonal."""
    sim = nx.as_tensor(sim)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ContractError(f"similarity matrix must be square, got {sim.shape}")
    if not tau > 0:
        raise ConfigError(f"contrastive temperature must be positive, got {tau}")
    logits = sim / tau
    diag = (np.arange(sim.shape[0]),) * 2
    row = nx.getitem(nx.log_softmax(logits, axis=1), diag)
    col = nx.getitem(nx.log_softmax(logits, axis=0), diag)
    return -0.5 * nx.mean(row + col)


def baseline_posterior(c_t, gallery, tau: float = 0.01) -> np.ndarray:
    """softmax(gallery . c_t / tau): the conditional p(candidate | query)."""
    gallery = np.asarray(gallery.value if isinstance(gallery, Tensor) else gallery, dtype=np.float64)
    c_t = np.asarray(c_t.value if isinstance(c_t, Tensor) else c_t, dtype=np.float64)
    if gallery.ndim != 2 or gallery.shape[0] == 0:
        raise InputError("baseline posterior needs a non-empty (N, D) gallery")
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    return nx.softmax(gallery @ c_t / tau).value
