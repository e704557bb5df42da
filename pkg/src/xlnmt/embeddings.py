"""Aligned word vectors and the vocabulary-aligned embedding table.

The table concatenates the vectors of every language. A surface form found
in several languages' files gets the mean of those vectors. Rows that come
from the files are frozen; specials, language tags and tokens missing from
every file get seeded random rows and stay trainable.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import LANGUAGE_ORIGIN, Vocabulary
from .errors import ConfigurationError, ParseError

log = logging.getLogger(__name__)

PRETRAINED = "pretrained"
MERGED_MEAN = "merged-mean"
RANDOM_INIT = "random-init"
SPECIAL = "special"
PROVENANCES = (PRETRAINED, MERGED_MEAN, RANDOM_INIT, SPECIAL)


class VectorFileWarning(UserWarning):
    pass


@dataclass
class WordVectorFile:
    language: str
    dim: int
    tokens: list
    vectors: np.ndarray  # (len(tokens), dim)

    def __post_init__(self):
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def vector(self, token: str) -> np.ndarray:
        return self.vectors[self.index[token]]


def parse_vector_file(path, expected_lang: str) -> WordVectorFile:
    """Read the ``<count> <dim>`` header format used by aligned fastText vectors."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ParseError("header must be '<count> <dim>'", path=path, line=1)
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise ParseError(f"non-integer header {header!r}", path=path, line=1) from None
        if count < 0 or dim <= 0:
            raise ParseError(f"invalid header values {header!r}", path=path, line=1)
        rows: dict = {}
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if parts == [""]:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ParseError(f"expected {dim} components, found {len(values)}", path=path, line=lineno)
            try:
                vec = np.array([float(v) for v in values])
            except ValueError:
                raise ParseError("non-numeric vector component", path=path, line=lineno) from None
            if token in rows:
                warnings.warn(f"{path}:{lineno}: duplicate token {token!r}, keeping the last",
                              VectorFileWarning, stacklevel=2)
                del rows[token]
            rows[token] = vec
    if len(rows) != count:
        warnings.warn(f"{path}: header declares {count} entries, found {len(rows)}",
                      VectorFileWarning, stacklevel=2)
    tokens = list(rows)
    vectors = np.array([rows[t] for t in tokens]).reshape(len(tokens), dim)
    return WordVectorFile(expected_lang, dim, tokens, vectors)


def write_vector_file(path, tokens: Sequence[str], vectors: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(tokens)} {vectors.shape[1]}\n")
        for tok, vec in zip(tokens, vectors):
            fh.write(tok + " " + " ".join(repr(float(x)) for x in vec) + "\n")


@dataclass
class EmbeddingTable:
    matrix: np.ndarray          # (|V|, dim)
    trainable_mask: np.ndarray  # (|V|,) bool
    provenance: list
    vocab: Vocabulary

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def frozen_rows(self) -> np.ndarray:
        return np.flatnonzero(~self.trainable_mask)

    def counts(self) -> dict:
        return {p: self.provenance.count(p) for p in PROVENANCES}

    def save(self, path, sidecar=None) -> None:
        """Vectors in the aligned-vector text format plus a provenance sidecar."""
        path = Path(path)
        write_vector_file(path, self.vocab.itos, self.matrix)
        sidecar = Path(sidecar) if sidecar else path.with_suffix(path.suffix + ".prov")
        with open(sidecar, "w", encoding="utf-8") as fh:
            for tok, prov, tr in zip(self.vocab.itos, self.provenance, self.trainable_mask):
                fh.write(f"{tok}\t{prov}\t{str(bool(tr)).lower()}\n")

    @classmethod
    def load(cls, path, vocab: Vocabulary, sidecar=None) -> "EmbeddingTable":
        path = Path(path)
        vf = parse_vector_file(path, "*")
        if vf.tokens != vocab.itos:
            raise ConfigurationError(f"{path}: rows do not match the vocabulary")
        sidecar = Path(sidecar) if sidecar else path.with_suffix(path.suffix + ".prov")
        prov, mask = [], []
        for i, line in enumerate(sidecar.read_text(encoding="utf-8").splitlines(), 1):
            parts = line.split("\t")
            if len(parts) != 3 or parts[1] not in PROVENANCES or parts[2] not in ("true", "false"):
                raise ParseError("expected token<TAB>provenance<TAB>trainable", path=sidecar, line=i)
            prov.append(parts[1])
            mask.append(parts[2] == "true")
        return cls(vf.vectors, np.array(mask), prov, vocab)


def _random_rows(n: int, dim: int, seed: int, init_range: float) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-init_range, init_range, size=(n, dim))


def build_embedding_table(files: Sequence[WordVectorFile], vocab: Vocabulary, seed: int,
                          init_range: float = 0.1, dim: int | None = None) -> EmbeddingTable:
    """Initialize one row per vocabulary entry from the per-language vector files."""
    dims = {f.dim for f in files}
    if len(dims) > 1:
        raise ConfigurationError(f"vector files disagree on dimension: {sorted(dims)}")
    if dims:
        dim = dims.pop()
    elif dim is None:
        raise ConfigurationError("no vector files and no dim given")
    # sorted by language so the mean is independent of the file order
    by_lang = sorted(files, key=lambda f: f.language)
    matrix = _random_rows(len(vocab), dim, seed, init_range)
    mask = np.ones(len(vocab), dtype=bool)
    provenance = []
    for idx, tok in enumerate(vocab.itos):
        if vocab.is_reserved(idx):
            provenance.append(SPECIAL)
            continue
        if vocab.mode == LANGUAGE_ORIGIN:
            lang, surface = tok.split(":", 1)
            sources = [f.vector(surface) for f in by_lang if f.language == lang and surface in f]
        else:
            sources = [f.vector(tok) for f in by_lang if tok in f]
        if not sources:
            provenance.append(RANDOM_INIT)
            continue
        if len(sources) == 1:
            matrix[idx] = sources[0]
            provenance.append(PRETRAINED)
        else:
            total = sources[0].copy()
            for v in sources[1:]:
                total += v
            matrix[idx] = total / len(sources)
            provenance.append(MERGED_MEAN)
        mask[idx] = False
    table = EmbeddingTable(matrix, mask, provenance, vocab)
    log.info("embedding table: %s", table.counts())
    return table


def random_table(vocab: Vocabulary, dim: int, seed: int, random_frozen: bool = False,
                 init_range: float = 0.1) -> EmbeddingTable:
    """All-random baseline table.

    With ``random_frozen`` the lexical rows are frozen like pretrained ones;
    specials and language tags always stay trainable.
    """
    matrix = _random_rows(len(vocab), dim, seed, init_range)
    mask = np.ones(len(vocab), dtype=bool)
    if random_frozen:
        mask[vocab.n_reserved:] = False
    return EmbeddingTable(matrix, mask, [RANDOM_INIT] * len(vocab), vocab)


def nearest_neighbors(table: EmbeddingTable, query_token: str, k: int,
                      metric: str = "cosine") -> list[tuple[str, float]]:
    """The ``k`` closest lexical entries to ``query_token`` (itself excluded)."""
    vocab = table.vocab
    if query_token not in vocab:
        raise KeyError(f"unknown token {query_token!r}")
    if k <= 0:
        return []
    q = vocab.stoi[query_token]
    cand = np.array([i for i in range(vocab.n_reserved, len(vocab)) if i != q], dtype=int)
    if cand.size == 0:
        return []
    rows = table.matrix[cand]
    qv = table.matrix[q]
    if metric == "cosine":
        norms = np.linalg.norm(rows, axis=1) * np.linalg.norm(qv)
        with np.errstate(invalid="ignore", divide="ignore"):
            sim = np.where(norms > 0, rows @ qv / norms, 0.0)
        dist = 1.0 - sim
    elif metric == "euclidean":
        dist = np.linalg.norm(rows - qv, axis=1)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    order = np.lexsort((cand, dist))[:k]
    return [(vocab.itos[cand[i]], float(dist[i])) for i in order]
