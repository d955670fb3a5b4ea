"""
Paired token-feature corpora: synthetic generation, splitting, and file I/O.

Item ``i`` pairs ``texts[i]`` (words x features) with ``videos[i]``
(frames x features). Features are float32 both in memory and on disk, so a
save/load round trip is bit-exact.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, FormatError, HeaderError, InputError
from .numerics import SeededRng
from .serialization import encode_record, read_file, write_file

MAGIC = b"DFCX"
VERSION = 1


@dataclass
class DomainShift:
    """Affine domain change: near-identity rotation, translation, extra noise.

    The rotation is the QR-orthogonalised ``I + rotation * G`` with G
    Gaussian, so ``rotation=0`` is the identity.
    """

    rotation: float = 0.6
    translation: float = 0.5
    noise_inflation: float = 1.5
    seed: int = 1000

    def matrices(self, d_in: int) -> tuple[np.ndarray, np.ndarray]:
        rng = SeededRng(self.seed)
        g = rng.child("rotation").normal((d_in, d_in))
        q, r = np.linalg.qr(np.eye(d_in) + self.rotation * g)
        q = q * np.sign(np.diag(r))
        t = rng.child("translation").normal(d_in)
        t = self.translation * t / np.linalg.norm(t) * np.sqrt(d_in)
        return q, t


@dataclass
class DomainSpec:
    classes: int = 16
    pairs_per_class: int = 40
    d_in: int = 32
    words: int = 8
    frames: int = 8
    sigma_within: float = 0.3
    sigma_modal: float = 0.3
    shift: DomainShift | None = None

    def validate(self) -> None:
        if self.classes < 2:
            raise ConfigError("a domain needs at least two classes")
        if self.pairs_per_class < 1 or self.d_in < 1:
            raise ConfigError("pairs_per_class and d_in must be positive")
        if self.words < 1 or self.frames < 1:
            raise ConfigError("texts and videos need at least one token")
        if self.sigma_within < 0 or self.sigma_modal < 0:
            raise ConfigError("noise levels must be non-negative")
        if self.shift is not None and self.shift.noise_inflation < 1:
            raise ConfigError("noise_inflation must be >= 1")


@dataclass
class Corpus:
    texts: list[np.ndarray]
    videos: list[np.ndarray]
    text_ids: list[str]
    video_ids: list[str]
    labels: np.ndarray
    splits: list[str]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.texts)
        if not (len(self.videos) == len(self.text_ids) == len(self.video_ids) == len(self.splits) == n):
            raise InputError("corpus fields disagree on the number of items")
        if len(set(self.text_ids)) != n or len(set(self.video_ids)) != n:
            raise InputError("text and video ids must be unique")
        self.labels = np.asarray(self.labels, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.texts)

    @property
    def d_in(self) -> int:
        return self.texts[0].shape[1]

    def subset(self, indices, split: str | None = None) -> "Corpus":
        idx = [int(i) for i in indices]
        return Corpus(
            texts=[self.texts[i] for i in idx],
            videos=[self.videos[i] for i in idx],
            text_ids=[self.text_ids[i] for i in idx],
            video_ids=[self.video_ids[i] for i in idx],
            labels=self.labels[idx],
            splits=[split or self.splits[i] for i in idx],
            meta=dict(self.meta),
        )

    def text_batch(self, indices=None) -> tuple[np.ndarray, np.ndarray]:
        items = self.texts if indices is None else [self.texts[i] for i in indices]
        return pad_tokens(items)

    def video_batch(self, indices=None) -> tuple[np.ndarray, np.ndarray]:
        items = self.videos if indices is None else [self.videos[i] for i in indices]
        return pad_tokens(items)

    def equals(self, other: "Corpus") -> bool:
        return (
            self.text_ids == other.text_ids
            and self.video_ids == other.video_ids
            and self.splits == other.splits
            and np.array_equal(self.labels, other.labels)
            and all(a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
                    for a, b in zip(self.texts + self.videos, other.texts + other.videos))
        )


def pad_tokens(items) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length token matrices into (B, L, D) float64 plus a validity mask."""
    if not items:
        raise InputError("empty batch")
    length = max(m.shape[0] for m in items)
    d = items[0].shape[1]
    out = np.zeros((len(items), length, d))
    mask = np.zeros((len(items), length), dtype=bool)
    for i, m in enumerate(items):
        if m.shape[1] != d:
            raise InputError("items disagree on feature dimensionality")
        out[i, :m.shape[0]] = m
        mask[i, :m.shape[0]] = True
    return out, mask


def generate(spec: DomainSpec, seed: int) -> Corpus:
    """Latent-class corpus: each pair shares a latent drawn around its class centroid.

    text token = centroid + pair offset (sigma_within) + token noise (sigma_modal),
    and likewise for video frames with independent token noise.
    """
    spec.validate()
    rng = SeededRng(seed)
    centroids = rng.child("centroids").normal((spec.classes, spec.d_in))
    modal = spec.sigma_modal * (spec.shift.noise_inflation if spec.shift else 1.0)
    texts, videos, labels = [], [], []
    for c in range(spec.classes):
        r = rng.child("class").child(c)
        offsets = r.child("pairs").normal((spec.pairs_per_class, spec.d_in)) * spec.sigma_within
        latent = centroids[c] + offsets
        t_noise = r.child("words").normal((spec.pairs_per_class, spec.words, spec.d_in))
        v_noise = r.child("frames").normal((spec.pairs_per_class, spec.frames, spec.d_in))
        for p in range(spec.pairs_per_class):
            texts.append(latent[p] + modal * t_noise[p])
            videos.append(latent[p] + modal * v_noise[p])
            labels.append(c)
    if spec.shift is not None:
        q, t = spec.shift.matrices(spec.d_in)
        texts = [x @ q.T + t for x in texts]
        videos = [x @ q.T + t for x in videos]
    n = len(texts)
    spec_echo = asdict(spec)
    return Corpus(
        texts=[x.astype(np.float32) for x in texts],
        videos=[x.astype(np.float32) for x in videos],
        text_ids=[f"t{i:06d}" for i in range(n)],
        video_ids=[f"v{i:06d}" for i in range(n)],
        labels=np.array(labels),
        splits=["all"] * n,
        meta={"seed": int(seed), "spec": spec_echo},
    )


def apply_shift(corpus: Corpus, shift: DomainShift, sigma_modal: float | None = None) -> Corpus:
    """Move an existing corpus into a shifted domain (same ids, new features).

    Extra isotropic noise brings the per-token noise up to
    ``noise_inflation * sigma_modal``.
    """
    if sigma_modal is None:
        sigma_modal = corpus.meta.get("spec", {}).get("sigma_modal", 0.3)
    q, t = shift.matrices(corpus.d_in)
    extra = sigma_modal * np.sqrt(max(shift.noise_inflation**2 - 1.0, 0.0))
    rng = SeededRng(shift.seed).child("extra_noise")

    def move(x, i, kind):
        z = rng.child(kind).child(i).normal(x.shape)
        return ((x.astype(np.float64) + extra * z) @ q.T + t).astype(np.float32)

    meta = dict(corpus.meta)
    meta["shift"] = asdict(shift)
    return Corpus(
        texts=[move(x, i, "text") for i, x in enumerate(corpus.texts)],
        videos=[move(x, i, "video") for i, x in enumerate(corpus.videos)],
        text_ids=list(corpus.text_ids),
        video_ids=list(corpus.video_ids),
        labels=corpus.labels.copy(),
        splits=list(corpus.splits),
        meta=meta,
    )


def split(corpus: Corpus, train_fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    """Pair-respecting random split; every pair lands in exactly one side."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(corpus)
    n_train = int(round(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise ConfigError(f"train_fraction={train_fraction} leaves an empty split of {n} pairs")
    order = SeededRng(seed).child("split").permutation(n)
    return (corpus.subset(np.sort(order[:n_train]), "train"),
            corpus.subset(np.sort(order[n_train:]), "test"))


def save(corpus: Corpus, path) -> None:
    records, offsets, pos = [], [], 0
    for i in range(len(corpus)):
        item = []
        for kind, ids, arr in (("text", corpus.text_ids, corpus.texts[i]),
                               ("video", corpus.video_ids, corpus.videos[i])):
            rec = encode_record(f"{kind}/{ids[i]}", arr, "<f4")
            item.append(pos)
            pos += len(rec)
            records.append(rec)
        offsets.append(item)
    manifest = {
        "items": len(corpus),
        "d_in": corpus.d_in,
        "offsets": offsets,
        "pairs": [[t, v] for t, v in zip(corpus.text_ids, corpus.video_ids)],
        "labels": [int(x) for x in corpus.labels],
        "splits": corpus.splits,
        "meta": corpus.meta,
    }
    write_file(path, MAGIC, VERSION, json.dumps(manifest, sort_keys=True), b"".join(records))


def load(path) -> Corpus:
    header, reader = read_file(path, MAGIC, VERSION)
    try:
        manifest = json.loads(header)
        n = int(manifest["items"])
        pairs = manifest["pairs"]
        offsets = manifest["offsets"]
    except (ValueError, KeyError, TypeError) as exc:
        raise HeaderError(f"{path}: malformed manifest") from exc
    if len(pairs) != n or len(offsets) != n:
        raise HeaderError(f"{path}: manifest item count disagrees with its tables")
    base = reader.pos
    texts, videos = [], []
    for i, (tid, vid) in enumerate(pairs):
        for kind, want, store in (("text", tid, texts), ("video", vid, videos)):
            if reader.pos - base != offsets[i][0 if kind == "text" else 1]:
                raise HeaderError(f"{path}: record offset mismatch at item {i}")
            name, arr = reader.record("<f4")
            if name != f"{kind}/{want}":
                raise HeaderError(f"{path}: expected record {kind}/{want}, found {name}")
            if arr.ndim != 2 or arr.shape[1] != manifest["d_in"]:
                raise HeaderError(f"{path}: record {name} has shape {arr.shape}")
            store.append(arr.astype(np.float32))
    if not reader.exhausted:
        raise FormatError(f"{path}: trailing bytes after the last record")
    return Corpus(
        texts=texts,
        videos=videos,
        text_ids=[p[0] for p in pairs],
        video_ids=[p[1] for p in pairs],
        labels=np.array(manifest.get("labels", [-1] * n)),
        splits=list(manifest.get("splits", ["all"] * n)),
        meta=manifest.get("meta", {}),
    )


def load_csv_dir(path) -> Corpus:
    """Import externally computed embeddings.

    Layout: ``texts/<text_id>.csv`` and ``videos/<video_id>.csv`` hold one
    token per row; ``pairs.csv`` has a ``text_id,video_id`` header and one
    pair per line.
    """
    root = Path(path)
    pairs_file = root / "pairs.csv"
    if not pairs_file.exists():
        raise InputError(f"{root}: missing pairs.csv")
    with open(pairs_file, newline="") as fh:
        rows = [(r["text_id"], r["video_id"]) for r in csv.DictReader(fh)]
    if not rows:
        raise InputError(f"{root}: pairs.csv lists no pairs")

    def matrix(kind, ident):
        f = root / kind / f"{ident}.csv"
        if not f.exists():
            raise InputError(f"missing feature file {f}")
        arr = np.loadtxt(f, delimiter=",", dtype=np.float64, ndmin=2)
        if arr.size == 0:
            raise InputError(f"empty token set in {f}")
        return arr.astype(np.float32)

    texts = [matrix("texts", t) for t, _ in rows]
    videos = [matrix("videos", v) for _, v in rows]
    if len({m.shape[1] for m in texts + videos}) != 1:
        raise InputError("feature files disagree on dimensionality")
    return Corpus(texts, videos, [t for t, _ in rows], [v for _, v in rows],
                  labels=np.full(len(rows), -1), splits=["all"] * len(rows),
                  meta={"source": os.fspath(root)})
