"""Hybrid generation + discrimination training loop."""

from __future__ import annotations

import logging

import numpy as np

from .. import numerics as nx
from ..corpus import Corpus
from ..denoiser import predict_x0
from ..encoders import encode_text, encode_video, pairwise_video_repr
from ..exceptions import ConfigError, InputError, NumericError
from ..numerics import Adam, SeededRng, Tape
from ..objectives import contrastive_loss, generation_loss, joint_target, token_similarity
from ..schedule import forward_diffuse
from .checkpoint import Checkpoint, init_checkpoint
from .config import RunConfig

log = logging.getLogger(__name__)


def hybrid_loss(ckpt: Checkpoint, texts, text_mask, videos, video_mask, rng: SeededRng):
    """Total loss L_D + lambda * L_G on one batch, plus its parts as floats.

    The gallery for both objectives is the batch itself; positives sit on
    the diagonal. Each query draws its own noise level.
    """
    tc = ckpt.config.train
    enc, den, sched = ckpt.encoder, ckpt.denoiser, ckpt.schedule
    text = encode_text(texts, enc, text_mask)
    video = encode_video(videos, enc, video_mask)
    b = texts.shape[0]
    parts = {}
    total = None
    if tc.strategy != "gen":
        sim = token_similarity(text, video, enc)
        l_dis = contrastive_loss(sim, enc.tau_contrast)
        parts["dis"] = l_dis.item()
        total = l_dis
    if tc.strategy != "dis":
        target = joint_target(np.arange(b), b, sched.signal_scale, tc.smoothing)
        gen_terms = []
        for direction in ("t2v", "v2t"):
            r = rng.child(direction)
            k = r.integers(1, sched.steps + 1, size=b)
            x_k = forward_diffuse(sched, target.signal, k, r.normal((b, b)))
            if direction == "t2v":
                pred = predict_x0(text.pooled, pairwise_video_repr(text, video, enc.tau_frame),
                                  x_k, k, den, direction)
            else:
                pred = predict_x0(video.pooled(), text.pooled, x_k, k, den, direction)
            gen_terms.append(generation_loss(pred, target, tc.loss_type))
        l_gen = 0.5 * (gen_terms[0] + gen_terms[1])
        parts["gen"] = l_gen.item()
        total = tc.lambda_gen * l_gen if total is None else total + tc.lambda_gen * l_gen
    parts["loss"] = total.item()
    return total, parts


def train(corpus: Corpus, config: RunConfig | None = None, callback=None) -> Checkpoint:
    """Fit encoders and denoiser; the per-epoch mean losses land in ``loss_curve``."""
    config = config or RunConfig()
    tc = config.train.validate()
    n = len(corpus)
    if n == 0:
        raise InputError("cannot train on an empty corpus")
    if n < 2:
        raise InputError("training needs at least two pairs")
    if tc.batch_size > n:
        raise ConfigError(f"batch_size={tc.batch_size} exceeds the {n} training pairs")
    root = SeededRng(tc.seed)
    ckpt = init_checkpoint(config, corpus.d_in, root.child("init"))
    params = ckpt.parameters()
    opt = Adam(lr=tc.lr)
    texts, tmask = corpus.text_batch()
    videos, vmask = corpus.video_batch()
    for epoch in range(tc.epochs):
        order = root.child("order").child(epoch).permutation(n)
        sums: dict[str, float] = {}
        batches = [order[i:i + tc.batch_size] for i in range(0, n, tc.batch_size)]
        for bi, idx in enumerate(batches):
            try:
                with Tape():
                    loss, parts = hybrid_loss(ckpt, texts[idx], tmask[idx], videos[idx], vmask[idx],
                                              root.child("diffusion").child(epoch).child(bi))
                    grads = nx.backward(loss, params)
                opt.step(params, grads)
            except NumericError as exc:
                raise NumericError(f"training diverged at epoch {epoch}, batch {bi}: {exc}") from exc
            for key, v in parts.items():
                sums[key] = sums.get(key, 0.0) + v
        row = {"epoch": epoch, **{k: v / len(batches) for k, v in sums.items()}}
        ckpt.loss_curve.append(row)
        log.info("epoch %d: %s", epoch, row)
        if callback is not None:
            callback(row)
    ckpt.rng_state = {**root.get_state(), "epochs_done": tc.epochs, "adam_steps": opt.t}
    return ckpt
