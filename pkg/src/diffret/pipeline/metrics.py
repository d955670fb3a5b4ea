"""Retrieval metrics and the evaluation report."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.metrics import roc_auc_score

from ..exceptions import ContractError, InputError


def ranks_from_scores(scores, positives) -> np.ndarray:
    """1-based rank of each row's positive under a descending stable sort.

    Ties are broken by candidate index, matching ``sorted`` on
    ``(-score, index)``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives)
    if scores.ndim != 2 or scores.shape[1] == 0:
        raise InputError("scores must be a non-empty (queries, candidates) matrix")
    q = np.arange(scores.shape[0])
    pos_score = scores[q, positives][:, None]
    idx = np.arange(scores.shape[1])[None, :]
    ahead = (scores > pos_score) | ((scores == pos_score) & (idx < positives[:, None]))
    return ahead.sum(axis=1) + 1


def retrieval_metrics(ranks) -> dict[str, float]:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise InputError("no ranks to summarise")
    r = {f"R@{k}": 100.0 * float(np.mean(ranks <= k)) for k in (1, 5, 10)}
    r["Rsum"] = r["R@1"] + r["R@5"] + r["R@10"]
    r["MdR"] = float(np.median(ranks))
    r["MnR"] = float(np.mean(ranks))
    return r


def separation(scores, positives, bins: int = 20) -> dict:
    """AUROC and shared-bin histograms of positive-pair vs negative-pair scores."""
    scores = np.asarray(scores, dtype=np.float64)
    q = np.arange(scores.shape[0])
    is_pos = np.zeros(scores.shape, dtype=bool)
    is_pos[q, positives] = True
    pos, neg = scores[is_pos], scores[~is_pos]
    if neg.size == 0:
        auroc = float("nan")
    else:
        auroc = float(roc_auc_score(is_pos.ravel(), scores.ravel()))
    lo, hi = float(scores.min()), float(scores.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    return {
        "auroc": auroc,
        "hist_edges": edges.tolist(),
        "pos_hist": np.histogram(pos, edges)[0].tolist(),
        "neg_hist": np.histogram(neg, edges)[0].tolist(),
    }


@dataclass
class EvalReport:
    direction: str
    r1: float
    r5: float
    r10: float
    rsum: float
    mdr: float
    mnr: float
    fusion_weight: float
    auroc: float
    ranks: list[int] = field(default_factory=list, repr=False)
    hist_edges: list[float] = field(default_factory=list, repr=False)
    pos_hist: list[int] = field(default_factory=list, repr=False)
    neg_hist: list[int] = field(default_factory=list, repr=False)
    label: str = ""

    @classmethod
    def from_scores(cls, direction: str, scores, positives, fusion_weight: float,
                    label: str = "") -> "EvalReport":
        ranks = ranks_from_scores(scores, positives)
        m = retrieval_metrics(ranks)
        sep = separation(scores, positives)
        rep = cls(direction, m["R@1"], m["R@5"], m["R@10"], m["Rsum"], m["MdR"], m["MnR"],
                  float(fusion_weight), sep["auroc"], [int(r) for r in ranks],
                  sep["hist_edges"], sep["pos_hist"], sep["neg_hist"], label)
        rep.check()
        return rep

    def check(self) -> None:
        if not (self.r1 <= self.r5 <= self.r10 <= 100.0):
            raise ContractError("recall values are not monotone")
        if self.rsum != self.r1 + self.r5 + self.r10:
            raise ContractError("Rsum differs from the sum of recalls")
        if self.mdr < 1 or self.mnr < 1:
            raise ContractError("median/mean rank below 1")

    def summary(self) -> dict:
        d = asdict(self)
        for key in ("ranks", "hist_edges", "pos_hist", "neg_hist"):
            d.pop(key)
        return d

    def to_dict(self) -> dict:
        return asdict(self)
