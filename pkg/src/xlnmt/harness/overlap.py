"""Lexical overlap between languages."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..corpus import SPECIALS, ParallelCorpus


@dataclass
class OverlapStats:
    languages: list[str]
    jaccard: np.ndarray      # symmetric, ones on the diagonal
    shared: np.ndarray       # |V_a ∩ V_b|
    sizes: dict[str, int]

    def table(self) -> str:
        w = max(6, *(len(l) for l in self.languages))
        head = " " * w + "".join(l.rjust(w + 2) for l in self.languages)
        rows = [head]
        for i, a in enumerate(self.languages):
            cells = "".join(f"{self.jaccard[i, j]:.3f}".rjust(w + 2) for j in range(len(self.languages)))
            rows.append(a.ljust(w) + cells)
        rows.append("")
        rows.append("shared types: " + ", ".join(
            f"{a}-{b}={self.shared[i, j]}" for i, a in enumerate(self.languages)
            for j, b in enumerate(self.languages) if i < j))
        return "\n".join(rows) + "\n"


def lexicons(corpora: Sequence[ParallelCorpus]) -> dict[str, set[str]]:
    """Surface-form types per language over every sentence of every corpus."""
    out: dict[str, set[str]] = {}
    for corpus in corpora:
        for pair in corpus.pairs:
            for sent in pair:
                out.setdefault(sent.language, set()).update(t for t in sent.tokens if t not in SPECIALS)
    return out


def vocab_overlap_stats(languages: Sequence[str], corpora: Sequence[ParallelCorpus]) -> OverlapStats:
    """Pairwise Jaccard overlap ``|A ∩ B| / |A ∪ B|`` of surface vocabularies."""
    lex = lexicons(corpora)
    langs = list(languages)
    n = len(langs)
    jac = np.zeros((n, n))
    shared = np.zeros((n, n), dtype=int)
    for i, a in enumerate(langs):
        for j, b in enumerate(langs):
            A, B = lex.get(a, set()), lex.get(b, set())
            union = A | B
            shared[i, j] = len(A & B)
            jac[i, j] = len(A & B) / len(union) if union else 1.0
    return OverlapStats(langs, jac, shared, {l: len(lex.get(l, ())) for l in langs})
