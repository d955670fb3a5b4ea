"""Scikit-learn style wrapper around training, scoring and evaluation."""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..denoiser import DIRECTIONS
from ..exceptions import ConfigError
from ..sampler import SamplerConfig
from ..validation import check_corpus
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, TrainConfig
from .evaluation import evaluate, score_matrix
from .training import train

_TRAIN = [f.name for f in dataclasses.fields(TrainConfig)]
_SAMPLER = {f.name: "sampler_" + f.name if f.name != "strategy" else "sampling" for f in dataclasses.fields(SamplerConfig)}


class DiffusionRetriever(BaseEstimator):
    """Text-video retriever fitted on a paired :class:`~diffret.corpus.Corpus`.

    ``X`` is always a corpus; text ``i`` and video ``i`` are a pair. For
    ``predict`` and ``decision_function`` the corpus is the gallery, so its
    texts are the queries (t2v) and its videos the candidates, or the other
    way round for v2t.

    Constructor arguments mirror :class:`TrainConfig`; sampler fields carry a
    ``sampler_`` prefix and the sampler strategy is called ``sampling``.
    """

    def __init__(self, strategy="both", epochs=250, batch_size=32, lr=1e-3, lambda_gen=1.0, steps=50,
                 schedule="cosine", signal_scale=1.0, smoothing=0.1, loss_type="kl", seed=0, dim=64,
                 hidden=0, encoder_depth=1, tau_frame=1.0, tau_contrast=0.01, scaled_attention=True,
                 positional=False, sampling="ddim", sampler_eval_steps=None, sampler_eta=0.0,
                 sampler_clamp=None, sampler_repeats=1, fusion_weight=None, eval_seed=0):
        self.strategy = strategy
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lambda_gen = lambda_gen
        self.steps = steps
        self.schedule = schedule
        self.signal_scale = signal_scale
        self.smoothing = smoothing
        self.loss_type = loss_type
        self.seed = seed
        self.dim = dim
        self.hidden = hidden
        self.encoder_depth = encoder_depth
        self.tau_frame = tau_frame
        self.tau_contrast = tau_contrast
        self.scaled_attention = scaled_attention
        self.positional = positional
        self.sampling = sampling
        self.sampler_eval_steps = sampler_eval_steps
        self.sampler_eta = sampler_eta
        self.sampler_clamp = sampler_clamp
        self.sampler_repeats = sampler_repeats
        self.fusion_weight = fusion_weight
        self.eval_seed = eval_seed

    def run_config(self) -> RunConfig:
        """The RunConfig these hyperparameters describe."""
        tc = TrainConfig(**{name: getattr(self, name) for name in _TRAIN})
        sc = SamplerConfig(**{name: getattr(self, attr) for name, attr in _SAMPLER.items()})
        cfg = RunConfig(tc, sc, self.fusion_weight, self.eval_seed)
        cfg.train.validate()
        cfg.resolved_fusion_weight()
        return cfg

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "DiffusionRetriever":
        kwargs = {name: getattr(cfg.train, name) for name in _TRAIN}
        kwargs.update({attr: getattr(cfg.sampler, name) for name, attr in _SAMPLER.items()})
        return cls(fusion_weight=cfg.fusion_weight, eval_seed=cfg.eval_seed, **kwargs)

    @classmethod
    def from_checkpoint(cls, path) -> "DiffusionRetriever":
        ckpt = load_checkpoint(path)
        est = cls.from_config(ckpt.config)
        est.checkpoint_ = ckpt
        est.loss_curve_ = ckpt.loss_curve
        est.n_features_in_ = ckpt.d_in
        return est

    def fit(self, X, y=None, callback=None):
        """Train encoders and denoiser on every pair of ``X``; ``y`` is ignored."""
        corpus = check_corpus(X, min_pairs=2)
        self.checkpoint_ = train(corpus, self.run_config(), callback=callback)
        self.loss_curve_ = self.checkpoint_.loss_curve
        self.n_features_in_ = corpus.d_in
        return self

    def _gallery(self, X):
        check_is_fitted(self, "checkpoint_")
        return check_corpus(X, d_in=self.n_features_in_)

    def decision_function(self, X, direction="t2v"):
        """Fused scores, shape (queries, candidates)."""
        corpus = self._gallery(X)
        ckpt = self.checkpoint_
        return score_matrix(ckpt, corpus, direction, ckpt.config.sampler,
                            ckpt.config.resolved_fusion_weight(), ckpt.config.eval_seed)

    def predict(self, X, direction="t2v", top_k=1):
        """Gallery indices of the ``top_k`` best candidates for every query.

        Returns shape (queries,) when ``top_k`` is 1, else (queries, top_k).
        """
        scores = self.decision_function(X, direction)
        if not 1 <= top_k <= scores.shape[1]:
            raise ConfigError(f"top_k must lie in [1, {scores.shape[1]}], got {top_k}")
        order = np.argsort(-scores, axis=1, kind="stable")[:, :top_k]
        return order[:, 0] if top_k == 1 else order

    def evaluate(self, X, directions=DIRECTIONS, label=""):
        corpus = self._gallery(X)
        return evaluate(self.checkpoint_, corpus, directions, label=label)

    def score(self, X, y=None, direction="t2v"):
        """Fraction of queries whose own pair is ranked first (R@1 / 100)."""
        return self.evaluate(X, (direction,))[direction].r1 / 100.0

    def save(self, path):
        check_is_fitted(self, "checkpoint_")
        save_checkpoint(self.checkpoint_, path)
