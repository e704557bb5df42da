"""Decoders: beam search, greedy, and an exhaustive reference.

All three talk to a model through three calls:

``start(source) -> state``
    encode one source sentence; the state holds one decoder row.
``step(prev_ids, state) -> (log_probs, state)``
    advance ``k`` rows at once; ``log_probs`` is a ``(k, V)`` numpy array.
``reorder(state, index) -> state``
    gather rows, e.g. to follow surviving beam hypotheses.

Scores are summed log-probabilities. PAD and BOS are never emitted. A
hypothesis still open after ``max_len`` steps is closed with an EOS that
adds nothing to its score.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import BOS_ID, EOS_ID, PAD_ID
from .errors import ContractError, SearchRefusedError

DEFAULT_BEAM = 5
DEFAULT_MAX_LEN = 70
EXHAUSTIVE_LIMIT = 10 ** 6
BANNED = (PAD_ID, BOS_ID)
NO_NORM, BY_LENGTH = "none", "by_length"


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    score: float
    finished: bool = True
    forced: bool = False

    @property
    def output(self) -> tuple[int, ...]:
        """Tokens without the closing EOS."""
        return self.tokens[:-1] if self.tokens and self.tokens[-1] == EOS_ID else self.tokens

    def ranked(self, length_norm: str = NO_NORM) -> float:
        if length_norm == BY_LENGTH:
            return self.score / max(len(self.tokens), 1)
        return self.score


def _check(source, max_len):
    if len(source) == 0:
        raise ContractError("cannot decode an empty source")
    if max_len < 1:
        raise ContractError("max_len must be at least 1")


def _masked(log_probs: np.ndarray, banned: Sequence[int]) -> np.ndarray:
    lp = np.array(log_probs, dtype=float)
    lp[:, list(banned)] = -np.inf
    return lp


def _best_first(hyps: Iterable[Hypothesis], length_norm: str) -> list[Hypothesis]:
    return sorted(hyps, key=lambda h: (-h.ranked(length_norm), h.tokens))


def beam_search(source: Sequence[int], model, beam_size: int = DEFAULT_BEAM,
                max_len: int = DEFAULT_MAX_LEN, nbest: int = 1, length_norm: str = NO_NORM,
                banned: Sequence[int] = BANNED) -> list[Hypothesis]:
    """Return the ``nbest`` best finished hypotheses, best first.

    Each step expands every live hypothesis over the whole vocabulary and
    keeps the ``beam_size`` best candidates; those ending in EOS leave the
    beam and wait in the finished pool. Equal scores are ordered by the
    token-id sequence, smallest first.
    """
    _check(source, max_len)
    if beam_size < 1:
        raise ContractError("beam_size must be at least 1")
    if length_norm not in (NO_NORM, BY_LENGTH):
        raise ContractError(f"unknown length_norm {length_norm!r}")
    state = model.start(source)
    live: list[tuple[int, ...]] = [()]
    scores = np.zeros(1)
    prev = [BOS_ID]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        lp, state = model.step(prev, state)
        cand = scores[:, None] + _masked(lp, banned)
        k, V = cand.shape
        # parents share a length, so (parent rank, token) orders candidate sequences
        rank = np.empty(k, dtype=np.int64)
        rank[sorted(range(k), key=lambda i: live[i])] = np.arange(k)
        flat = cand.reshape(-1)
        parent = np.repeat(np.arange(k), V)
        token = np.tile(np.arange(V), k)
        ok = np.flatnonzero(np.isfinite(flat))
        order = ok[np.lexsort((token[ok], rank[parent[ok]], -flat[ok]))][:beam_size]
        keep_rows, keep_seqs, keep_scores = [], [], []
        for j in order:
            p, v, s = int(parent[j]), int(token[j]), float(flat[j])
            seq = live[p] + (v,)
            if v == EOS_ID:
                finished.append(Hypothesis(seq, s))
            else:
                keep_rows.append(p)
                keep_seqs.append(seq)
                keep_scores.append(s)
        live, scores = keep_seqs, np.array(keep_scores)
        if not live:
            break
        if length_norm == NO_NORM and len(finished) >= nbest:
            # scores only fall as hypotheses grow, so nothing live can overtake
            cutoff = _best_first(finished, NO_NORM)[nbest - 1].score
            if cutoff > scores.max():
                live = []
                break
        state = model.reorder(state, keep_rows)
        prev = [seq[-1] for seq in live]
    for seq, s in zip(live, scores):
        finished.append(Hypothesis(seq + (EOS_ID,), float(s), forced=True))
    return _best_first(finished, length_norm)[:nbest]


def greedy_decode(source: Sequence[int], model, max_len: int = DEFAULT_MAX_LEN,
                  banned: Sequence[int] = BANNED) -> Hypothesis:
    """Pick the most probable token at every step (lowest id on ties)."""
    _check(source, max_len)
    state = model.start(source)
    tokens: list[int] = []
    score = 0.0
    prev = BOS_ID
    for _ in range(max_len):
        lp, state = model.step([prev], state)
        row = _masked(lp, banned)[0]
        prev = int(np.argmax(row))
        score += float(row[prev])
        tokens.append(prev)
        if prev == EOS_ID:
            return Hypothesis(tuple(tokens), score)
    return Hypothesis(tuple(tokens) + (EOS_ID,), score, forced=True)


def count_sequences(n_tokens: int, max_len: int) -> int:
    """Number of complete outputs over ``n_tokens`` emittable ids (EOS among them)."""
    body = n_tokens - 1
    return sum(body ** t for t in range(max_len)) + body ** max_len


def exhaustive_decode(source: Sequence[int], model, max_len: int, vocab_size: int | None = None,
                      banned: Sequence[int] = BANNED, limit: int = EXHAUSTIVE_LIMIT,
                      length_norm: str = NO_NORM) -> Hypothesis:
    """Score every complete output and return the best one."""
    _check(source, max_len)
    state = model.start(source)
    lp, state = model.step([BOS_ID], state)
    V = vocab_size or lp.shape[1]
    allowed = [v for v in range(V) if v not in set(banned)]
    if EOS_ID not in allowed:
        raise ContractError("EOS must be emittable")
    total = count_sequences(len(allowed), max_len)
    if total > limit:
        raise SearchRefusedError(f"exhaustive search over {total} sequences exceeds the limit of {limit}")
    body = [v for v in allowed if v != EOS_ID]
    prefixes: list[tuple[int, ...]] = [()]
    scores = np.zeros(1)
    done: list[Hypothesis] = []
    for t in range(max_len):
        if t > 0:
            lp, state = model.step([p[-1] for p in prefixes], state)
        lp = _masked(lp, banned)
        for i, p in enumerate(prefixes):
            done.append(Hypothesis(p + (EOS_ID,), float(scores[i] + lp[i, EOS_ID])))
        rows = [i for i in range(len(prefixes)) for _ in body]
        prefixes = [p + (v,) for p in prefixes for v in body]
        scores = np.array([scores[i] + lp[i, v] for i in range(len(scores)) for v in body])
        if not prefixes:
            break
        state = model.reorder(state, rows)
    done.extend(Hypothesis(p + (EOS_ID,), float(s), forced=True) for p, s in zip(prefixes, scores))
    return _best_first(done, length_norm)[0]


# ------------------------------------------------------------------ output


def translate(sources: Sequence[Sequence[int]], model, beam_size: int = DEFAULT_BEAM,
              max_len: int = DEFAULT_MAX_LEN, nbest: int = 1, length_norm: str = NO_NORM
              ) -> list[list[Hypothesis]]:
    return [beam_search(s, model, beam_size, max_len, nbest, length_norm) for s in sources]


def write_translations(path, hyps: Sequence[Hypothesis], vocab, strip_origin: bool = True) -> None:
    lines = [" ".join(vocab.decode(h.output, strip_origin=strip_origin)) for h in hyps]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def write_nbest(path, nbest: Sequence[Sequence[Hypothesis]], vocab, strip_origin: bool = True) -> None:
    """``index<TAB>score<TAB>tokens`` per hypothesis, grouped by sentence index."""
    out = []
    for i, hyps in enumerate(nbest):
        for h in hyps:
            toks = " ".join(vocab.decode(h.output, strip_origin=strip_origin))
            out.append(f"{i}\t{h.score!r}\t{toks}\n")
    Path(path).write_text("".join(out), encoding="utf-8")


def read_nbest(path) -> list[tuple[int, float, list[str]]]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        i, score, toks = line.split("\t")
        rows.append((int(i), float(score), toks.split()))
    return rows
