"""Parallel corpora: loading, cleaning, language tags and vocabularies."""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigurationError, EmptyCorpusWarning, ParseError

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
SPECIALS = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3

SHARED_FORM = "shared-form"
LANGUAGE_ORIGIN = "language-origin"
VOCAB_MODES = (SHARED_FORM, LANGUAGE_ORIGIN)


def tag_token(lang: str) -> str:
    return f"<2{lang}>"


@dataclass(frozen=True)
class Sentence:
    tokens: tuple
    language: str

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))

    def __len__(self):
        return len(self.tokens)


@dataclass
class ParallelCorpus:
    pairs: list = field(default_factory=list)
    split: str = "train"

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def empty(self) -> bool:
        return not self.pairs

    def directions(self) -> list[tuple[str, str]]:
        seen = dict.fromkeys((s.language, t.language) for s, t in self.pairs)
        return list(seen)

    def select(self, src: str | Iterable[str] | None = None,
               tgt: str | Iterable[str] | None = None) -> "ParallelCorpus":
        src = {src} if isinstance(src, str) else (None if src is None else set(src))
        tgt = {tgt} if isinstance(tgt, str) else (None if tgt is None else set(tgt))
        pairs = [(s, t) for s, t in self.pairs
                 if (src is None or s.language in src) and (tgt is None or t.language in tgt)]
        return ParallelCorpus(pairs, self.split)

    def __add__(self, other: "ParallelCorpus") -> "ParallelCorpus":
        return ParallelCorpus(self.pairs + other.pairs, self.split)


# ------------------------------------------------------------ tokenization

def _simple_lower(text: str) -> str:
    # Per-character mapping, so no final-sigma context rule. U+0130 is the
    # only code point whose full lowercase mapping is longer than one char.
    return "".join("i" if ch == "\u0130" else ch.lower() for ch in text)


def tokenize_line(raw: str) -> list[str]:
    """Lowercase and split on whitespace; empty input gives an empty list."""
    if raw.isascii():
        return raw.lower().split()
    return _simple_lower(raw).split()


# ----------------------------------------------------------------- loading

def corpus_filename(split: str, src: str, tgt: str, lang: str) -> str:
    return f"{split}.{src}-{tgt}.{lang}"


def read_parallel_files(src_path, tgt_path, src_lang: str, tgt_lang: str,
                        split: str = "train") -> ParallelCorpus:
    src_lines = Path(src_path).read_text(encoding="utf-8").splitlines()
    tgt_lines = Path(tgt_path).read_text(encoding="utf-8").splitlines()
    if len(src_lines) != len(tgt_lines):
        raise ParseError(f"line counts differ: {len(src_lines)} vs {len(tgt_lines)} ({tgt_path})",
                         path=src_path)
    pairs = [(Sentence(tokenize_line(a), src_lang), Sentence(tokenize_line(b), tgt_lang))
             for a, b in zip(src_lines, tgt_lines)]
    return ParallelCorpus(pairs, split)


def load_language_pair(directory, split: str, lang_a: str, lang_b: str,
                       both_directions: bool = True) -> tuple[ParallelCorpus, list[Path]]:
    """Read ``<split>.<a>-<b>.{a,b}`` (or the ``b-a`` naming) from ``directory``.

    Returns the corpus (a->b, plus b->a when ``both_directions``) and the file
    paths that were read.
    """
    directory = Path(directory)
    for x, y in ((lang_a, lang_b), (lang_b, lang_a)):
        pa = directory / corpus_filename(split, x, y, lang_a)
        pb = directory / corpus_filename(split, x, y, lang_b)
        if pa.exists() and pb.exists():
            break
    else:
        raise FileNotFoundError(
            f"no {split} files for {lang_a}-{lang_b} in {directory} "
            f"(expected {corpus_filename(split, lang_a, lang_b, lang_a)})")
    corpus = read_parallel_files(pa, pb, lang_a, lang_b, split)
    if both_directions:
        corpus = corpus + ParallelCorpus([(t, s) for s, t in corpus.pairs], split)
    return corpus, [pa, pb]


def write_parallel_files(corpus: ParallelCorpus, directory, src: str, tgt: str) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pairs = corpus.select(src, tgt).pairs
    paths = []
    for lang, side in ((src, 0), (tgt, 1)):
        path = directory / corpus_filename(corpus.split, src, tgt, lang)
        path.write_text("".join(" ".join(p[side].tokens) + "\n" for p in pairs), encoding="utf-8")
        paths.append(path)
    return paths


# ----------------------------------------------------------- preprocessing

@dataclass
class FrequencyTable:
    """Per-language token counts over the retained training text."""

    counts: dict = field(default_factory=dict)

    def __getitem__(self, lang: str) -> Counter:
        return self.counts.setdefault(lang, Counter())

    def frequency(self, token: str, lang: str | None = None) -> int:
        if lang is not None:
            return self.counts.get(lang, Counter())[token]
        return sum(c[token] for c in self.counts.values())

    def languages(self) -> list[str]:
        return sorted(self.counts)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for lang in self.languages():
                for tok, n in sorted(self.counts[lang].items(), key=lambda kv: (-kv[1], kv[0])):
                    fh.write(f"{lang}\t{tok}\t{n}\n")

    @classmethod
    def load(cls, path) -> "FrequencyTable":
        table = cls()
        for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError("expected lang<TAB>token<TAB>count", path=path, line=i)
            table[parts[0]][parts[1]] = int(parts[2])
        return table


def count_tokens(corpus: ParallelCorpus) -> FrequencyTable:
    table = FrequencyTable()
    for pair in corpus.pairs:
        for sent in pair:
            table[sent.language].update(sent.tokens)
    return table


def preprocess_corpus(corpus: ParallelCorpus, max_len: int = 60, min_freq: int = 2,
                      singleton_policy: str = "unk", apply_length_filter: bool = True,
                      ) -> tuple[ParallelCorpus, FrequencyTable]:
    """Length-filter a training corpus and replace rare tokens.

    Pairs with either side longer than ``max_len`` tokens are dropped (only
    when ``apply_length_filter``). Token frequencies are then counted per
    language over the retained pairs; tokens seen fewer than ``min_freq``
    times become ``<unk>`` (``singleton_policy="unk"``) or cause their pair
    to be dropped (``"drop-sentence"``). Pairs with an empty side are dropped.
    """
    if singleton_policy not in ("unk", "drop-sentence"):
        raise ConfigurationError(f"unknown singleton_policy {singleton_policy!r}")
    pairs = [(s, t) for s, t in corpus.pairs if len(s) and len(t)]
    if apply_length_filter:
        pairs = [(s, t) for s, t in pairs if len(s) <= max_len and len(t) <= max_len]
    freq = count_tokens(ParallelCorpus(pairs, corpus.split))

    def rare(tok, lang):
        return freq.counts[lang][tok] < min_freq

    if singleton_policy == "drop-sentence":
        kept = [(s, t) for s, t in pairs
                if not any(rare(x, s.language) for x in s.tokens)
                and not any(rare(x, t.language) for x in t.tokens)]
    else:
        kept = []
        for s, t in pairs:
            s2 = Sentence([UNK if rare(x, s.language) else x for x in s.tokens], s.language)
            t2 = Sentence([UNK if rare(x, t.language) else x for x in t.tokens], t.language)
            kept.append((s2, t2))
    out = ParallelCorpus(kept, corpus.split)
    table = count_tokens(out)
    for counter in table.counts.values():
        counter.pop(UNK, None)
    if out.empty:
        warnings.warn("corpus is empty after preprocessing", EmptyCorpusWarning, stacklevel=2)
    return out, table


def prepend_target_tag(sentence: Sentence, target_lang: str, languages: Sequence[str]) -> Sentence:
    if target_lang not in languages:
        raise ConfigurationError(f"unknown target language {target_lang!r}; configured: {list(languages)}")
    return Sentence((tag_token(target_lang),) + sentence.tokens, sentence.language)


# --------------------------------------------------------------- vocabulary

class Vocabulary:
    """Dense token <-> id map.

    Layout: the four specials (PAD=0, UNK=1, BOS=2, EOS=3), then one
    ``<2xx>`` tag per configured language, then lexical tokens. In
    language-origin mode lexical entries carry a ``lang:`` prefix.
    """

    def __init__(self, tokens: Sequence[str], languages: Sequence[str], mode: str = SHARED_FORM,
                 frequencies: dict | None = None):
        if mode not in VOCAB_MODES:
            raise ConfigurationError(f"unknown vocabulary mode {mode!r}")
        if tuple(tokens[:4]) != SPECIALS:
            raise ConfigurationError("vocabulary must start with the four special tokens")
        self.mode = mode
        self.languages = list(languages)
        self.itos = list(tokens)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ConfigurationError("duplicate tokens in vocabulary")
        missing = [tag_token(l) for l in self.languages if tag_token(l) not in self.stoi]
        if missing:
            raise ConfigurationError(f"vocabulary lacks language tags {missing}")
        self.frequencies = dict(frequencies or {})
        self.n_reserved = 4 + len(self.languages)
        self._reserved = frozenset(self.itos[: self.n_reserved])

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return (isinstance(other, Vocabulary) and self.itos == other.itos
                and self.mode == other.mode and self.languages == other.languages)

    def is_reserved(self, idx: int) -> bool:
        return idx < self.n_reserved

    def tag_id(self, lang: str) -> int:
        try:
            return self.stoi[tag_token(lang)]
        except KeyError:
            raise ConfigurationError(f"no language tag for {lang!r}") from None

    def lexical_key(self, token: str, lang: str) -> str:
        if self.mode == LANGUAGE_ORIGIN and token not in self._reserved:
            return f"{lang}:{token}"
        return token

    def surface(self, token: str) -> str:
        """Strip the ``lang:`` prefix of a language-origin entry."""
        if self.mode == LANGUAGE_ORIGIN and ":" in token and token not in self._reserved:
            return token.split(":", 1)[1]
        return token

    def token_language(self, token: str) -> str | None:
        if self.mode == LANGUAGE_ORIGIN and ":" in token:
            return token.split(":", 1)[0]
        return None

    def encode(self, tokens: Sequence[str], lang: str) -> list[int]:
        reserved = self._reserved
        prefix = self.mode == LANGUAGE_ORIGIN
        out = []
        for tok in tokens:
            key = f"{lang}:{tok}" if prefix and tok not in reserved else tok
            out.append(self.stoi.get(key, UNK_ID))
        return out

    def decode(self, ids: Iterable[int], strip_origin: bool = True) -> list[str]:
        toks = [self.itos[i] for i in ids]
        return [self.surface(t) for t in toks] if strip_origin else toks

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"#mode\t{self.mode}\t{','.join(self.languages)}\n")
            for i, tok in enumerate(self.itos):
                fh.write(f"{tok}\t{i}\t{self.frequencies.get(tok, 0)}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith("#mode\t"):
            raise ParseError("missing #mode header", path=path, line=1)
        _, mode, langs = lines[0].split("\t")
        tokens, freqs = [], {}
        for n, line in enumerate(lines[1:], 2):
            parts = line.split("\t")
            if len(parts) != 3 or int(parts[1]) != len(tokens):
                raise ParseError("expected token<TAB>id<TAB>frequency with dense ids", path=path, line=n)
            tokens.append(parts[0])
            freqs[parts[0]] = int(parts[2])
        return cls(tokens, langs.split(",") if langs else [], mode, freqs)


def build_vocabulary(corpora: Sequence[ParallelCorpus], languages: Sequence[str],
                     mode: str = SHARED_FORM, extra_lexicon: dict | None = None) -> Vocabulary:
    """Deterministic vocabulary over preprocessed corpora.

    ``extra_lexicon`` maps a language to tokens that must be present even
    though they never occur in the corpora (the unseen test languages); they
    get frequency 0 and sort after every observed token.
    """
    if mode not in VOCAB_MODES:
        raise ConfigurationError(f"unknown vocabulary mode {mode!r}")
    reserved = set(SPECIALS) | {tag_token(l) for l in languages}
    counts: Counter = Counter()
    for corpus in corpora:
        for pair in corpus.pairs:
            for sent in pair:
                for tok in sent.tokens:
                    if tok in reserved:
                        continue
                    counts[tok if mode == SHARED_FORM else f"{sent.language}:{tok}"] += 1
    for lang, toks in (extra_lexicon or {}).items():
        for tok in toks:
            if tok in reserved:
                continue
            key = tok if mode == SHARED_FORM else f"{lang}:{tok}"
            counts.setdefault(key, 0)
    lexical = sorted(counts, key=lambda t: (-counts[t], t))
    tokens = list(SPECIALS) + [tag_token(l) for l in languages] + lexical
    return Vocabulary(tokens, languages, mode, frequencies=dict(counts))


def encode_sentence(sentence: Sentence, vocab: Vocabulary, side: str = "source") -> list[int]:
    """Token ids; target side is wrapped in BOS ... EOS, source side is not."""
    ids = vocab.encode(sentence.tokens, sentence.language)
    if side == "target":
        return [BOS_ID] + ids + [EOS_ID]
    if side != "source":
        raise ValueError(f"side must be 'source' or 'target', got {side!r}")
    return ids


@dataclass(frozen=True)
class EncodedPair:
    source: tuple
    target: tuple
    src_lang: str
    tgt_lang: str


def encode_corpus(corpus: ParallelCorpus, vocab: Vocabulary) -> list[EncodedPair]:
    """Tag every source with its target language and numericalize both sides."""
    out = []
    for s, t in corpus.pairs:
        src = prepend_target_tag(s, t.language, vocab.languages)
        out.append(EncodedPair(tuple(encode_sentence(src, vocab, "source")),
                               tuple(encode_sentence(t, vocab, "target")),
                               s.language, t.language))
    return out
