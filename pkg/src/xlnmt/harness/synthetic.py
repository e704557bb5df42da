"""Toy languages for desk-scale experiments.

Every language renders the same latent concepts, word for word and in the
same order, so translation between any two of them is a learnable
substitution. Concepts fall into three part-of-speech classes and sentences
follow a seeded bigram over those classes. Lexicons are disjoint except for
designated pairs, which share a chosen fraction of their forms verbatim.

Aligned embeddings are the concept vectors plus a little per-language
noise, so translation-equivalent words lie close together in every
language's vector file.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..corpus import BOS_ID, EOS_ID, ParallelCorpus, Sentence, write_parallel_files
from ..embeddings import WordVectorFile, write_vector_file
from ..errors import ConfigurationError

N_CLASSES = 3
_ONSETS = list("bdfgklmnprstvz")
_VOWELS = list("aeiou")
SPLITS = ("train", "dev", "test")


@dataclass
class SyntheticSpec:
    n_concepts: int = 60
    languages: tuple[str, ...] = ("xa", "xb", "xc", "xd")
    overlap: float = 0.0
    # pairs whose lexicons share ``overlap`` of their forms
    related: tuple[tuple[str, str], ...] = (("xc", "xd"),)
    seed: int = 0
    sentences: dict[str, int] = field(default_factory=lambda: {"train": 300, "dev": 40, "test": 60})
    min_len: int = 3
    max_len: int = 8
    dim: int = 16
    noise: float = 0.25
    zipf: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.overlap <= 1.0:
            raise ConfigurationError(f"overlap must lie in [0, 1], got {self.overlap}")
        if self.n_concepts < N_CLASSES:
            raise ConfigurationError(f"need at least {N_CLASSES} concepts")
        if len(set(self.languages)) != len(self.languages):
            raise ConfigurationError("language codes must be distinct")
        for a, b in self.related:
            if a not in self.languages or b not in self.languages:
                raise ConfigurationError(f"related pair {a}-{b} names an unknown language")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigurationError("need 1 <= min_len <= max_len")


def shared_count(n: int, overlap: float) -> int:
    """Forms two n-word lexicons must share for a Jaccard overlap of ``overlap``."""
    return int(round(2 * n * overlap / (1 + overlap)))


@dataclass
class SyntheticLanguages:
    spec: SyntheticSpec
    lexicons: dict[str, list[str]]          # language -> form per concept
    concept_vectors: np.ndarray             # (n_concepts, dim)
    vectors: dict[str, WordVectorFile]
    classes: np.ndarray                     # POS class per concept
    transitions: np.ndarray                 # (N_CLASSES, N_CLASSES)

    def render(self, concepts, lang: str) -> Sentence:
        return Sentence([self.lexicons[lang][c] for c in concepts], lang)

    def sample_concepts(self, rng: np.random.Generator) -> list[int]:
        spec = self.spec
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        cls = int(rng.integers(N_CLASSES))
        out = []
        for _ in range(length):
            members = np.flatnonzero(self.classes == cls)
            weights = 1.0 / np.arange(1, len(members) + 1) ** spec.zipf
            out.append(int(members[rng.choice(len(members), p=weights / weights.sum())]))
            cls = int(rng.choice(N_CLASSES, p=self.transitions[cls]))
        return out

    def corpus(self, src: str, tgt: str, split: str, n: int | None = None) -> ParallelCorpus:
        """Parallel sentences for one direction; the sentences depend only on the unordered pair."""
        a, b = sorted((src, tgt))
        pair_id = [self.spec.languages.index(a), self.spec.languages.index(b)]
        rng = np.random.default_rng([self.spec.seed, 7, *pair_id, SPLITS.index(split)])
        n = self.spec.sentences[split] if n is None else n
        rows = [self.sample_concepts(rng) for _ in range(n)]
        return ParallelCorpus([(self.render(c, src), self.render(c, tgt)) for c in rows], split)

    def write(self, directory, pairs=None) -> dict:
        """Write parallel files for ``pairs`` (default: all) and one ``.vec`` per language."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        pairs = pairs or list(itertools.combinations(self.spec.languages, 2))
        written = {"corpora": [], "vectors": {}}
        for a, b in pairs:
            for split in SPLITS:
                written["corpora"] += write_parallel_files(self.corpus(a, b, split), directory, a, b)
        for lang, vf in self.vectors.items():
            path = directory / f"{lang}.vec"
            write_vector_file(path, vf.tokens, vf.vectors)
            written["vectors"][lang] = path
        return written


def _pseudo_words(rng: np.random.Generator, count: int, taken: set[str]) -> list[str]:
    words = []
    while len(words) < count:
        syl = int(rng.integers(2, 4))
        w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(syl))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def generate_synthetic_languages(spec: SyntheticSpec) -> SyntheticLanguages:
    rng = np.random.default_rng([spec.seed, 1])
    n = spec.n_concepts
    classes = np.arange(n) % N_CLASSES
    transitions = rng.dirichlet(np.full(N_CLASSES, 0.8), size=N_CLASSES)

    taken: set[str] = set()
    lexicons = {lang: _pseudo_words(rng, n, taken) for lang in spec.languages}
    k = shared_count(n, spec.overlap)
    for a, b in spec.related:
        shared = rng.choice(n, size=k, replace=False) if k else []
        for c in shared:
            lexicons[b][c] = lexicons[a][c]

    vecs = rng.standard_normal((n, spec.dim)) / np.sqrt(spec.dim)
    files = {}
    for i, lang in enumerate(spec.languages):
        noise_rng = np.random.default_rng([spec.seed, 2, i])
        noisy = vecs + spec.noise * noise_rng.standard_normal(vecs.shape) / np.sqrt(spec.dim)
        files[lang] = WordVectorFile(lang, spec.dim, list(lexicons[lang]), np.round(noisy, 6))
    return SyntheticLanguages(spec, lexicons, vecs, files, classes, transitions)


def copy_task(n_pairs: int, vocab_size: int = 20, seed: int = 0, min_len: int = 3,
              max_len: int = 8) -> list[tuple[list[int], list[int]]]:
    """Random id sequences paired with themselves, targets wrapped in BOS/EOS.

    Ids come from the non-reserved range ``[4, vocab_size)``.
    """
    if vocab_size <= 4:
        raise ConfigurationError("copy task needs symbols beyond the four reserved ids")
    rng = np.random.default_rng([seed, 11])
    out = []
    for _ in range(n_pairs):
        s = rng.integers(4, vocab_size, int(rng.integers(min_len, max_len + 1))).tolist()
        out.append((s, [BOS_ID] + s + [EOS_ID]))
    return out
