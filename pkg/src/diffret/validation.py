"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import numpy as np

from .corpus import Corpus
from .exceptions import InputError


def check_corpus(corpus, min_pairs: int = 1, d_in: int | None = None) -> Corpus:
    """Return ``corpus`` if it is a usable paired corpus, else raise InputError."""
    if not isinstance(corpus, Corpus):
        raise InputError(f"expected a Corpus, got {type(corpus).__name__}")
    if len(corpus) < min_pairs:
        raise InputError(f"need at least {min_pairs} pairs, corpus has {len(corpus)}")
    dims = {x.shape[1] for x in corpus.texts + corpus.videos}
    if len(dims) != 1:
        raise InputError(f"token features disagree on dimensionality: {sorted(dims)}")
    if d_in is not None and corpus.d_in != d_in:
        raise InputError(f"corpus features have dim {corpus.d_in}, expected {d_in}")
    for kind, items, ids in (("text", corpus.texts, corpus.text_ids), ("video", corpus.videos, corpus.video_ids)):
        for x, ident in zip(items, ids):
            if x.ndim != 2 or x.shape[0] == 0:
                raise InputError(f"{kind} {ident!r} has no tokens")
            if not np.all(np.isfinite(x)):
                raise InputError(f"{kind} {ident!r} contains non-finite features")
    return corpus
