"""
Retrieval over a full test gallery: similarity, generated joint
distributions, score fusion, and the analysis exports built on them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..corpus import Corpus
from ..denoiser import DIRECTIONS
from ..encoders import EncodedText, EncodedVideo, encode_text, encode_video, pairwise_video_repr
from ..exceptions import ConfigError, ContractError, InputError
from ..numerics import SeededRng, Tensor
from ..objectives import token_similarity
from ..sampler import SamplerConfig, network_denoiser, sample_joint
from .checkpoint import Checkpoint
from .metrics import EvalReport

CHUNK = 64


@dataclass
class Encoded:
    text: EncodedText
    video: EncodedVideo
    text_ids: list[str]
    video_ids: list[str]


class _CanonicalStream:
    """Noise stream that hands out draws in candidate-id order.

    Permuting the gallery then permutes the noise with it, so rankings do
    not depend on gallery order.
    """

    def __init__(self, rng: SeededRng, slot: np.ndarray):
        self.rng = rng
        self.slot = slot

    def normal(self, n):
        return self.rng.normal(n)[self.slot]


def encode_corpus(ckpt: Checkpoint, corpus: Corpus) -> Encoded:
    if len(corpus) == 0:
        raise InputError("empty corpus")
    if corpus.d_in != ckpt.d_in:
        raise InputError(f"corpus features have dim {corpus.d_in}, model expects {ckpt.d_in}")
    texts, tmask = corpus.text_batch()
    videos, vmask = corpus.video_batch()
    return Encoded(encode_text(texts, ckpt.encoder, tmask), encode_video(videos, ckpt.encoder, vmask),
                   list(corpus.text_ids), list(corpus.video_ids))


def _rows(enc_text: EncodedText, sl: slice) -> EncodedText:
    return EncodedText(Tensor._wrap(enc_text.pooled.value[sl]), Tensor._wrap(enc_text.words.value[sl]),
                       enc_text.mask[sl])


def similarity_matrix(ckpt: Checkpoint, enc: Encoded) -> np.ndarray:
    """Token-level similarity for every (text, video) pair: (texts, videos)."""
    n = enc.text.pooled.shape[0]
    out = [token_similarity(_rows(enc.text, slice(i, i + CHUNK)), enc.video, ckpt.encoder).value
           for i in range(0, n, CHUNK)]
    return np.concatenate(out, axis=0)


def _streams(seed: int, direction: str, query_id: str, cand_ids: list[str]) -> _CanonicalStream:
    slot = np.empty(len(cand_ids), dtype=np.int64)
    slot[np.argsort(np.asarray(cand_ids), kind="stable")] = np.arange(len(cand_ids))
    return _CanonicalStream(SeededRng(seed).child(direction).child(query_id), slot)


def _query_block(ckpt: Checkpoint, enc: Encoded, direction: str, sl: slice):
    if direction == "t2v":
        text = _rows(enc.text, sl)
        return text.pooled, pairwise_video_repr(text, enc.video, ckpt.encoder.tau_frame)
    pooled = enc.video.pooled().value[sl]
    return Tensor._wrap(pooled), enc.text.pooled


def joint_matrix(ckpt: Checkpoint, enc: Encoded, direction: str, sampler: SamplerConfig,
                 seed: int = 0, trace_query: int | None = None):
    """Generated joint distribution of every query over the whole gallery.

    With ``trace_query`` only that query's chain is run and its per-step
    trace is returned instead.
    """
    if direction not in DIRECTIONS:
        raise ConfigError(f"unknown direction {direction!r}")
    q_ids, c_ids = (enc.text_ids, enc.video_ids) if direction == "t2v" else (enc.video_ids, enc.text_ids)
    if trace_query is not None:
        starts = [trace_query]
        size = 1
    else:
        starts = range(0, len(q_ids), CHUNK)
        size = CHUNK
    out = []
    for start in starts:
        sl = slice(start, start + size)
        query, cands = _query_block(ckpt, enc, direction, sl)
        rows = []
        for rep in range(sampler.repeats):
            rngs = [_streams(seed, direction, qid, c_ids) for qid in q_ids[sl]]
            if rep:
                rngs = [_CanonicalStream(s.rng.child(rep), s.slot) for s in rngs]
            fn = network_denoiser(ckpt.denoiser, query, cands, direction)
            res = sample_joint(fn, len(c_ids), ckpt.schedule, sampler, rngs,
                               trace=trace_query is not None)
            if trace_query is not None:
                return res[1][:, 0]
            rows.append(res)
        out.append(np.mean(rows, axis=0))
    return np.concatenate(out, axis=0)


def _zscore(x: np.ndarray) -> np.ndarray:
    std = np.maximum(x.std(axis=-1, keepdims=True), 1e-12)
    return (x - x.mean(axis=-1, keepdims=True)) / std


def fuse_scores(sim, joint, w: float) -> np.ndarray:
    """(1 - w) * z(sim) + w * z(joint), standardising each row separately."""
    sim = np.asarray(sim, dtype=np.float64)
    joint = np.asarray(joint, dtype=np.float64)
    if sim.shape != joint.shape:
        raise ContractError(f"similarity shape {sim.shape} != joint shape {joint.shape}")
    if not 0.0 <= w <= 1.0:
        raise ContractError(f"fusion weight must lie in [0, 1], got {w}")
    return (1.0 - w) * _zscore(sim) + w * _zscore(joint)


def _resolve(ckpt: Checkpoint, sampler, w, seed):
    sampler = sampler or ckpt.config.sampler
    w = ckpt.config.resolved_fusion_weight() if w is None else w
    seed = ckpt.config.eval_seed if seed is None else seed
    return sampler, w, seed


def _fused(ckpt, enc, sim, direction, sampler, w, seed):
    s = sim if direction == "t2v" else sim.T
    # w = 0 ranks by similarity alone, so the sampler is not run at all
    joint = joint_matrix(ckpt, enc, direction, sampler, seed) if w > 0 else np.zeros_like(s)
    return fuse_scores(s, joint, w)


def score_matrix(ckpt: Checkpoint, corpus: Corpus, direction: str = "t2v",
                 sampler: SamplerConfig | None = None, w: float | None = None,
                 seed: int | None = None) -> np.ndarray:
    """Fused (queries, candidates) scores for one direction; higher ranks first."""
    if direction not in DIRECTIONS:
        raise ConfigError(f"unknown direction {direction!r}")
    sampler, w, seed = _resolve(ckpt, sampler, w, seed)
    enc = encode_corpus(ckpt, corpus)
    return _fused(ckpt, enc, similarity_matrix(ckpt, enc), direction, sampler, w, seed)


def evaluate(ckpt: Checkpoint, corpus: Corpus, directions=DIRECTIONS, sampler: SamplerConfig | None = None,
             w: float | None = None, seed: int | None = None, label: str = "") -> dict[str, EvalReport]:
    """Rank the full test gallery for every query; one report per direction.

    Text ``i`` and video ``i`` of ``corpus`` form the ground-truth pair.
    """
    if isinstance(directions, str):
        directions = (directions,)
    for direction in directions:
        if direction not in DIRECTIONS:
            raise ConfigError(f"unknown direction {direction!r}")
    sampler, w, seed = _resolve(ckpt, sampler, w, seed)
    enc = encode_corpus(ckpt, corpus)
    sim = similarity_matrix(ckpt, enc)
    positives = np.arange(len(corpus))
    return {d: EvalReport.from_scores(d, _fused(ckpt, enc, sim, d, sampler, w, seed), positives, w, label)
            for d in directions}


def out_domain_eval(ckpt: Checkpoint, test_a: Corpus, test_b: Corpus, **kwargs):
    """Evaluate one frozen model on its own test set and on an unseen domain."""
    if test_a.d_in != test_b.d_in:
        raise InputError(f"domains differ in feature dim: {test_a.d_in} vs {test_b.d_in}")
    rep_a = evaluate(ckpt, test_a, label="in-domain", **kwargs)
    rep_b = evaluate(ckpt, test_b, label="out-domain", **kwargs)
    return rep_a, rep_b


def diffusion_trace(ckpt: Checkpoint, corpus: Corpus, query, direction: str = "t2v",
                    sampler: SamplerConfig | None = None, seed: int | None = None):
    """Per-step softmax(x0_hat) rows for one query, first row from the start noise.

    ``query`` is a query id or an integer position. Returns (rows, ground-truth index).
    """
    ids = corpus.text_ids if direction == "t2v" else corpus.video_ids
    if isinstance(query, (int, np.integer)):
        if not 0 <= query < len(ids):
            raise InputError(f"query index {query} out of range")
        qi = int(query)
    elif query in ids:
        qi = ids.index(query)
    else:
        raise InputError(f"unknown query id {query!r}")
    if direction not in DIRECTIONS:
        raise ConfigError(f"unknown direction {direction!r}")
    sampler, _, seed = _resolve(ckpt, sampler, 0.0, seed)
    enc = encode_corpus(ckpt, corpus)
    rows = joint_matrix(ckpt, enc, direction, sampler, seed, trace_query=qi)
    return rows, qi
