"""
Query-candidate attention denoiser predicting the clean joint distribution.

For one query and N candidates the network embeds the noise level, attends
from the query to the candidates with the noisy distribution x_k added to
the attention logits, and decodes ``[candidate, attended embedding]`` into
one logit per candidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .exceptions import ConfigError, ContractError, InputError
from .numerics import SeededRng, Tensor

DIRECTIONS = ("t2v", "v2t")


@dataclass
class DenoiserParams:
    tensors: dict[str, Tensor]
    steps: int
    scaled_attention: bool = False

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    @property
    def dim(self) -> int:
        return self.tensors["time.w1"].shape[0]

    def has_branch(self, direction: str) -> bool:
        return f"{direction}.q" in self.tensors


def _dense(rng: SeededRng, fan_in: int, fan_out: int) -> Tensor:
    return Tensor(rng.normal((fan_in, fan_out)) / math.sqrt(fan_in), requires_grad=True)


def _bias(n: int) -> Tensor:
    return Tensor(np.zeros(n), requires_grad=True)


def init_denoiser(rng: SeededRng, dim: int, steps: int, hidden: int | None = None,
                  scaled_attention: bool = False, directions=DIRECTIONS) -> DenoiserParams:
    if dim % 2:
        raise ConfigError(f"embedding dim must be even for the sinusoidal timestep code, got {dim}")
    hidden = hidden or 2 * dim
    t = {
        "time.w1": _dense(rng.child("time.w1"), dim, dim),
        "time.b1": _bias(dim),
        "time.w2": _dense(rng.child("time.w2"), dim, dim),
        "time.b2": _bias(dim),
    }
    for d in directions:
        r = rng.child(d)
        for name in ("q", "k", "v"):
            t[f"{d}.{name}"] = _dense(r.child(name), dim, dim)
        t[f"{d}.dec_w1"] = _dense(r.child("dec_w1"), 2 * dim, hidden)
        t[f"{d}.dec_b1"] = _bias(hidden)
        t[f"{d}.dec_w2"] = _dense(r.child("dec_w2"), hidden, 1)
        t[f"{d}.dec_b2"] = _bias(1)
    return DenoiserParams(t, steps=steps, scaled_attention=scaled_attention)


def sinusoidal_embedding(k, dim: int) -> np.ndarray:
    """[sin(k w_i), cos(k w_i)] with w_i = 10000^(-i / (dim/2))."""
    k = np.asarray(k, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    angles = k[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def timestep_embed(k, steps: int, params: DenoiserParams) -> Tensor:
    """Noise level(s) ``k`` mapped to D-dim embeddings through a two-layer MLP."""
    k = np.asarray(k)
    if np.any(k < 0) or np.any(k > steps):
        raise ContractError(f"noise level must lie in [0, {steps}]")
    e = sinusoidal_embedding(k, params.dim)
    h = nx.relu(nx.matmul(e.reshape(-1, params.dim), params["time.w1"]) + params["time.b1"])
    out = nx.matmul(h, params["time.w2"]) + params["time.b2"]
    return nx.reshape(out, e.shape)


def predict_x0(query, cands, x_k, k, params: DenoiserParams, direction: str = "t2v") -> Tensor:
    """Predict clean logits over the candidates.

    query: (Q, D) or (D,); cands: (Q, N, D) per-query candidates or (N, D)
    shared by every query; x_k: (Q, N) or (N,); k: per-query noise levels.
    Returns (Q, N), or (N,) for a single unbatched query.
    """
    if direction not in DIRECTIONS:
        raise ConfigError(f"unknown direction {direction!r}")
    if not params.has_branch(direction):
        raise ConfigError(f"denoiser has no {direction} branch")
    query = nx.as_tensor(query)
    cands = nx.as_tensor(cands)
    single = query.ndim == 1
    if single:
        query = nx.reshape(query, (1, -1))
    q_count, dim = query.shape
    n = cands.shape[-2]
    if n == 0:
        raise InputError("empty candidate set")
    if cands.ndim == 2:
        cands = nx.broadcast_to(cands, (q_count, n, dim))
    x_k = np.asarray(x_k.value if isinstance(x_k, Tensor) else x_k, dtype=np.float64)
    x_k = x_k.reshape(q_count, n)
    k = np.broadcast_to(np.asarray(k), (q_count,))
    if np.any(k < 1):
        raise ContractError("predict_x0 needs noise level k >= 1")

    p = params.tensors
    tproj = timestep_embed(k, params.steps, params)  # (Q, D)
    qv = nx.matmul(nx.reshape(query + tproj, (q_count, 1, dim)), p[f"{direction}.q"])
    shifted = cands + nx.expand_dims(tproj, 1)
    kc = nx.matmul(shifted, p[f"{direction}.k"])
    vc = nx.matmul(shifted, p[f"{direction}.v"])
    logits = nx.matmul(qv, nx.swapaxes(kc, -1, -2))  # (Q, 1, N)
    if params.scaled_attention:
        logits = logits / math.sqrt(dim)
    attn = nx.softmax(logits + x_k[:, None, :], axis=-1)
    emb = nx.matmul(attn, vc)  # (Q, 1, D)
    dec_in = nx.concat([cands, nx.broadcast_to(emb, (q_count, n, dim))], axis=-1)
    h = nx.relu(nx.matmul(dec_in, p[f"{direction}.dec_w1"]) + p[f"{direction}.dec_b1"])
    out = nx.reshape(nx.matmul(h, p[f"{direction}.dec_w2"]) + p[f"{direction}.dec_b2"], (q_count, n))
    return nx.reshape(out, (n,)) if single else out
