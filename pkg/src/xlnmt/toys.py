"""Small stand-in models for exercising decoders."""

from __future__ import annotations

import numpy as np

from .corpus import BOS_ID
from .numerics import log_softmax_np


class PrefixTableModel:
    """Log-probabilities drawn afresh for every (source, prefix) pair.

    The distribution after a prefix depends only on ``seed``, the source
    and the prefix itself, never on batch layout, so any two decoders that
    visit the same prefix see bit-identical numbers. ``sharpness`` scales
    the logits; large values make the model nearly deterministic.
    """

    def __init__(self, vocab_size: int, seed: int, sharpness: float = 1.0):
        self.vocab_size = vocab_size
        self.seed = seed
        self.sharpness = sharpness

    def _row(self, source, prefix) -> np.ndarray:
        rng = np.random.default_rng([self.seed, len(source), *source, 1_000_003, *prefix])
        return log_softmax_np(self.sharpness * rng.standard_normal(self.vocab_size))

    def start(self, source):
        return (tuple(source), [()])

    def step(self, prev_ids, state):
        source, prefixes = state
        if len(prev_ids) != len(prefixes):
            raise ValueError("one previous id per live row")
        # BOS is never emitted, so it only ever marks the empty prefix
        grown = [p if int(i) == BOS_ID else p + (int(i),) for p, i in zip(prefixes, prev_ids)]
        return np.stack([self._row(source, g) for g in grown]), (source, grown)

    @staticmethod
    def reorder(state, index):
        source, prefixes = state
        return (source, [prefixes[i] for i in index])
