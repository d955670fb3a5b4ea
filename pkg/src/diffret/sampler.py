"""
Reverse diffusion over joint distributions: DDPM ancestral steps and DDIM.

The core loop, :func:`sample_joint`, is vectorised over queries. It only
needs a ``denoise(x_k, k) -> x0_hat`` callable, so the same loop serves the
trained network and the oracle denoisers used in tests.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .denoiser import DenoiserParams, predict_x0
from .exceptions import ConfigError, ContractError, InputError
from .numerics import SeededRng
from .schedule import NoiseSchedule, ddim_subsequence

STRATEGIES = ("ddim", "ddpm")

DenoiseFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class SamplerConfig:
    strategy: str = "ddim"
    eval_steps: int | None = None  # None: the full trained chain
    eta: float = 0.0
    clamp: float | None = None  # half-width; None: 2 * signal_scale, <= 0 disables
    repeats: int = 1

    def resolve(self, sched: NoiseSchedule) -> tuple[list[int], float | None]:
        """Validate against ``sched`` and return (timesteps, clamp half-width)."""
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown sampling strategy {self.strategy!r}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"ddim eta must lie in [0, 1], got {self.eta}")
        if self.repeats < 1:
            raise ConfigError("repeats must be at least 1")
        n = sched.steps if self.eval_steps is None else int(self.eval_steps)
        if self.strategy == "ddpm":
            if n != sched.steps:
                raise ConfigError("ddpm sampling runs the full chain; eval_steps must equal K")
            steps = list(range(sched.steps, 0, -1))
        else:
            steps = ddim_subsequence(sched.steps, n)
        if self.clamp is None:
            half = 2.0 * sched.signal_scale
        else:
            half = float(self.clamp) if self.clamp > 0 else None
        return steps, half


def ddim_step(x_k, x0_hat, k: int, k_prev: int, sched: NoiseSchedule, eta: float = 0.0,
              rng: SeededRng | None = None, noise=None) -> np.ndarray:
    if not k > k_prev >= 0:
        raise ContractError(f"ddim step needs k > k_prev >= 0, got k={k}, k_prev={k_prev}")
    x_k = np.asarray(x_k, dtype=np.float64)
    abar = sched.alpha_bar(k)
    abar_prev = sched.alpha_bar(k_prev)
    eps_hat = (x_k - np.sqrt(abar) * x0_hat) / np.sqrt(1.0 - abar)
    sigma = eta * np.sqrt((1.0 - abar_prev) / (1.0 - abar)) * np.sqrt(1.0 - abar / abar_prev)
    out = np.sqrt(abar_prev) * x0_hat + np.sqrt(max(1.0 - abar_prev - sigma**2, 0.0)) * eps_hat
    if sigma > 0:
        z = noise if noise is not None else rng.normal(x_k.shape)
        out = out + sigma * z
    return out


def ddpm_posterior(k: int, sched: NoiseSchedule) -> tuple[float, float, float]:
    """(coef on x0_hat, coef on x_k, variance) of q(x_{k-1} | x_k, x_0)."""
    beta = sched.betas[k - 1]
    abar = sched.alpha_bar(k)
    abar_prev = sched.alpha_bar(k - 1)
    c0 = np.sqrt(abar_prev) * beta / (1.0 - abar)
    ck = np.sqrt(1.0 - beta) * (1.0 - abar_prev) / (1.0 - abar)
    var = (1.0 - abar_prev) / (1.0 - abar) * beta
    return float(c0), float(ck), float(var)


def ddpm_step(x_k, x0_hat, k: int, sched: NoiseSchedule, rng: SeededRng | None = None,
              noise=None) -> np.ndarray:
    if k < 1:
        raise ContractError("ddpm step needs k >= 1")
    c0, ck, var = ddpm_posterior(k, sched)
    mu = c0 * np.asarray(x0_hat) + ck * np.asarray(x_k)
    if k == 1:
        return mu
    z = noise if noise is not None else rng.normal(np.shape(x_k))
    return mu + np.sqrt(var) * z


def _rows_normal(rngs: Sequence[SeededRng], n: int) -> np.ndarray:
    return np.stack([r.normal(n) for r in rngs])


def sample_joint(denoise: DenoiseFn, n_cands: int, sched: NoiseSchedule, cfg: SamplerConfig,
                 rngs: Sequence[SeededRng], trace: bool = False, init=None):
    """Run one reverse chain per query.

    ``rngs`` holds one stream per query. ``init`` optionally supplies the
    starting noise x_K (Q, N), e.g. drawn in a canonical candidate order.
    Returns probabilities (Q, N) and, with ``trace``, an array
    (steps + 1, Q, N) whose first row is softmax of the starting noise.
    """
    if n_cands < 1:
        raise InputError("empty candidate set")
    steps, half = cfg.resolve(sched)
    x = np.asarray(init, dtype=np.float64) if init is not None else _rows_normal(rngs, n_cands)
    rows = [nx.softmax(x).value] if trace else None
    x0_hat = None
    for i, k in enumerate(steps):
        kk = np.full(x.shape[0], k)
        x0_hat = np.asarray(denoise(x, kk), dtype=np.float64)
        x0_used = np.clip(x0_hat, -half, half) if half is not None else x0_hat
        if trace:
            rows.append(nx.softmax(x0_hat).value)
        if cfg.strategy == "ddpm":
            noise = _rows_normal(rngs, n_cands) if k > 1 else None
            x = ddpm_step(x, x0_used, k, sched, noise=noise)
        else:
            k_prev = steps[i + 1] if i + 1 < len(steps) else 0
            noise = _rows_normal(rngs, n_cands) if cfg.eta > 0 else None
            x = ddim_step(x, x0_used, k, k_prev, sched, cfg.eta, noise=noise)
    probs = nx.softmax(x0_hat).value
    return (probs, np.stack(rows)) if trace else probs


def network_denoiser(params: DenoiserParams, query, cands, direction: str) -> DenoiseFn:
    def denoise(x_k, k):
        return predict_x0(query, cands, x_k, k, params, direction).value
    return denoise


def generate_joint(params: DenoiserParams, sched: NoiseSchedule, query, candidates,
                   cfg: SamplerConfig, rng: SeededRng, direction: str = "t2v",
                   trace: bool = False):
    """Joint distribution over ``candidates`` for a single query vector.

    With ``cfg.repeats > 1`` the probabilities of independent chains are
    averaged; the trace always comes from the first chain.
    """
    query = np.asarray(getattr(query, "value", query), dtype=np.float64)
    candidates = np.asarray(getattr(candidates, "value", candidates), dtype=np.float64)
    if candidates.ndim != 2 or candidates.shape[0] == 0:
        raise InputError("generate_joint needs a non-empty (N, D) candidate matrix")
    fn = network_denoiser(params, query[None], candidates, direction)
    probs, rows = [], None
    for r in range(cfg.repeats):
        res = sample_joint(fn, candidates.shape[0], sched, cfg, [rng.child(r)], trace=trace and r == 0)
        if trace and r == 0:
            res, rows = res
        probs.append(res[0])
    out = np.mean(probs, axis=0)
    return (out, rows[:, 0]) if trace else out
