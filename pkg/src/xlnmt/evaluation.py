"""Corpus BLEU, modified n-gram precisions and per-direction reports.

BLEU here is the corpus-level score with a single reference per sentence:
clipped n-gram counts are summed over the whole corpus before dividing,
and the brevity penalty compares total lengths.

>>> corpus_bleu([["the", "cat"]], [["the", "cat"]]).bleu
1.0
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .corpus import EOS_ID, BOS_ID, PAD_ID
from .errors import ContractError

MAX_ORDER = 4
NO_SMOOTHING, ADD_ONE = "none", "add-one"


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check_parallel(hyps, refs):
    if len(hyps) != len(refs):
        raise ContractError(f"{len(hyps)} hypotheses but {len(refs)} references")


def ngram_counts(hyps, refs, n: int) -> tuple[int, int, int]:
    """``(clipped matches, hypothesis n-grams, reference n-grams)`` over the corpus."""
    _check_parallel(hyps, refs)
    clipped = total = ref_total = 0
    for h, r in zip(hyps, refs):
        hc, rc = ngrams(h, n), ngrams(r, n)
        clipped += sum(min(c, rc[g]) for g, c in hc.items())
        total += sum(hc.values())
        ref_total += sum(rc.values())
    return clipped, total, ref_total


def ngram_precision(hyps, refs, n: int) -> tuple[float, int, int]:
    """Modified precision ``(p_n, clipped, total)``; ``p_n`` is 0 when there are no n-grams."""
    clipped, total, _ = ngram_counts(hyps, refs, n)
    return (clipped / total if total else 0.0), clipped, total


def brevity_penalty(hyp_len: int, ref_len: int) -> float:
    if ref_len <= 0:
        raise ContractError("reference length must be positive")
    if hyp_len == 0:
        return 0.0
    if hyp_len >= ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / hyp_len)


@dataclass
class BleuScore:
    bleu: float
    precisions: list[float]
    bp: float
    hyp_len: int
    ref_len: int
    smoothing: str = NO_SMOOTHING
    counts: list[tuple[int, int]] = field(default_factory=list)

    @property
    def display(self) -> float:
        return 100.0 * self.bleu


def corpus_bleu(hyps, refs, smoothing: str = NO_SMOOTHING, max_order: int = MAX_ORDER) -> BleuScore:
    """Corpus BLEU with uniform weights over orders 1..``max_order``.

    Unsmoothed, any zero precision makes the score 0. ``add-one`` adds one
    to numerator and denominator of every order above 1, which keeps short
    or poor outputs distinguishable. An order with no n-grams on either side
    (every sentence too short) is left out of the mean, so a corpus scored
    against itself is exactly 1.
    """
    _check_parallel(hyps, refs)
    if not hyps:
        raise ContractError("cannot score an empty corpus")
    if smoothing not in (NO_SMOOTHING, ADD_ONE):
        raise ContractError(f"unknown smoothing {smoothing!r}")
    hyp_len = sum(len(h) for h in hyps)
    ref_len = sum(len(r) for r in refs)
    precisions, counts, logs = [], [], []
    for n in range(1, max_order + 1):
        clipped, total, ref_total = ngram_counts(hyps, refs, n)
        precisions.append(clipped / total if total else 0.0)
        counts.append((clipped, total))
        if total == 0 and ref_total == 0:
            continue
        if smoothing == ADD_ONE and n > 1:
            clipped, total = clipped + 1, total + 1
        logs.append(math.log(clipped / total) if clipped else None)
    bp = brevity_penalty(hyp_len, ref_len) if ref_len else (1.0 if hyp_len == 0 else 0.0)
    if not logs or any(v is None for v in logs) or bp == 0.0:
        bleu = 0.0 if logs or hyp_len else 1.0
    else:
        bleu = bp * math.exp(sum(logs) / len(logs))
    return BleuScore(min(bleu, 1.0), precisions, bp, hyp_len, ref_len, smoothing, counts)


# ----------------------------------------------------------------- reports


@dataclass
class DirectionRecord:
    direction: str
    bleu: float
    p1: float
    p2: float
    p3: float
    p4: float
    bp: float
    hyp_len: int
    ref_len: int
    smoothing: str = NO_SMOOTHING
    sentences: int = 0
    tag_tokens: int = 0

    @classmethod
    def from_score(cls, direction: str, score: BleuScore, sentences: int = 0, tag_tokens: int = 0):
        p = score.precisions + [0.0] * (4 - len(score.precisions))
        return cls(direction, score.bleu, *p[:4], score.bp, score.hyp_len, score.ref_len,
                   score.smoothing, sentences, tag_tokens)


def direction_label(src, tgt) -> str:
    join = lambda x: x if isinstance(x, str) else "+".join(x)
    return f"{join(src)}->{join(tgt)}"


def hypothesis_tokens(ids: Sequence[int], vocab) -> list[str]:
    """Token strings of a decoder output, EOS and padding dropped, prefixes kept."""
    return [vocab.itos[i] for i in ids if i not in (EOS_ID, BOS_ID, PAD_ID)]


def evaluate_direction(model, pairs, vocab, direction: str, references=None, beam_size: int = 5,
                       max_len: int = 70, smoothing: str = NO_SMOOTHING, decoded=None) -> DirectionRecord:
    """Decode every source with beam search and score it against the references.

    ``pairs`` are encoded pairs. ``references`` (token lists in vocabulary
    space) default to the encoded targets; passing the un-replaced test
    tokens keeps UNK from ever earning credit. ``decoded`` skips decoding
    and scores the given id sequences instead.
    """
    from .search import beam_search

    if not pairs:
        raise ContractError(f"no sentences to evaluate for {direction}")
    if decoded is None:
        decoded = [beam_search(p.source, model, beam_size, max_len)[0].output for p in pairs]
    hyps = [hypothesis_tokens(ids, vocab) for ids in decoded]
    if references is None:
        references = [hypothesis_tokens(p.target, vocab) for p in pairs]
    tags = sum(vocab.is_reserved(i) and i >= 4 for ids in decoded for i in ids)
    score = corpus_bleu(hyps, references, smoothing)
    return DirectionRecord.from_score(direction, score, len(pairs), int(tags))


def pooled(records: Sequence[DirectionRecord], direction: str) -> DirectionRecord:
    """Average of several directions (arithmetic mean of every score field)."""
    if not records:
        raise ContractError("nothing to average")
    n = len(records)
    mean = lambda f: sum(getattr(r, f) for r in records) / n
    return DirectionRecord(direction, mean("bleu"), mean("p1"), mean("p2"), mean("p3"), mean("p4"),
                           mean("bp"), sum(r.hyp_len for r in records), sum(r.ref_len for r in records),
                           records[0].smoothing, sum(r.sentences for r in records),
                           sum(r.tag_tokens for r in records))


@dataclass
class EvalReport:
    title: str
    records: list[DirectionRecord] = field(default_factory=list)

    def add(self, record: DirectionRecord) -> DirectionRecord:
        self.records.append(record)
        return record

    def table(self) -> str:
        """Aligned text table: direction, BLEU and 1-3 gram precisions, scaled by 100."""
        head = ("direction", "BLEU", "1gram", "2gram", "3gram", "smoothing")
        rows = [(r.direction, f"{100 * r.bleu:.2f}", f"{100 * r.p1:.2f}", f"{100 * r.p2:.2f}",
                 f"{100 * r.p3:.2f}", r.smoothing) for r in self.records]
        widths = [max(len(str(x[i])) for x in [head] + rows) for i in range(len(head))]
        fmt = lambda row: "  ".join(
            str(c).ljust(w) if i in (0, 5) else str(c).rjust(w) for i, (c, w) in enumerate(zip(row, widths))
        ).rstrip()
        lines = [self.title, fmt(head), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows]
        return "\n".join(lines) + "\n"

    def jsonl(self) -> str:
        """One JSON object per direction with sorted keys."""
        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.records)

    @staticmethod
    def parse_jsonl(text: str) -> list[DirectionRecord]:
        return [DirectionRecord(**json.loads(line)) for line in text.splitlines() if line.strip()]
