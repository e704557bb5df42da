"""Attentional encoder-decoder.

A two-layer bidirectional LSTM encoder feeds an additive-attention,
single-layer LSTM decoder whose ``[h; context]`` vector is projected to the
vocabulary. One embedding table is shared by encoder and decoder inputs;
the output projection is a separate, randomly initialized matrix.

All computation is batched along a leading axis. Padded source positions
are held out of the recurrences with :func:`~xlnmt.numerics.where` and
out of attention with a large negative score bias.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import numerics as nx
from .corpus import BOS_ID, EOS_ID, PAD_ID
from .embeddings import EmbeddingTable
from .errors import ConfigurationError, ContractError
from .numerics import Tensor

MASK_SCORE = -1e9


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 300
    hidden_dim: int = 256
    attention_dim: int | None = None
    encoder_layers: int = 2
    dropout_p: float = 0.1
    seed: int = 0
    init_range: float = 0.08
    forget_bias: float = 1.0
    share_embeddings: bool = True

    def __post_init__(self):
        if self.attention_dim is None:
            self.attention_dim = self.hidden_dim
        for name in ("vocab_size", "embed_dim", "hidden_dim", "attention_dim", "encoder_layers"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigurationError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")

    def to_dict(self) -> dict:
        return asdict(self)


class Encoded(NamedTuple):
    annotations: Tensor      # (B, T, 2H)
    projected: Tensor        # annotations @ W_enc, (B, T, A)
    score_bias: Tensor | None  # (B, T) zero on real positions, MASK_SCORE on padding
    init_state: tuple        # decoder (h0, c0), each (B, H)


def pad_batch(seqs: Sequence[Sequence[int]], pad: int = PAD_ID) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences; returns ``(ids, mask)`` of shape ``(B, T)``."""
    lengths = [len(s) for s in seqs]
    T = max(lengths)
    ids = np.full((len(seqs), T), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), T), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, mask


def _row(x: Tensor) -> Tensor:
    return nx.reshape(x, (1,) + x.shape) if x.data.ndim == 1 else x


def lstm_gates(z: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """Finish an LSTM step from pre-activations ``z`` laid out as [i, f, g, o]."""
    H = c_prev.shape[-1]
    s = nx.sigmoid(z)
    i = nx.slice_last(s, 0, H)
    f = nx.slice_last(s, H, 2 * H)
    o = nx.slice_last(s, 3 * H, 4 * H)
    g = nx.tanh(nx.slice_last(z, 2 * H, 3 * H))
    c = f * c_prev + i * g
    h = o * nx.tanh(c)
    return h, c


def lstm_cell_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, W_x: Tensor, W_h: Tensor,
                   b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step. ``x``/``h_prev``/``c_prev`` may be vectors or ``(B, ·)`` batches."""
    vector = x.data.ndim == 1
    x, h_prev, c_prev = _row(x), _row(h_prev), _row(c_prev)
    H = h_prev.shape[-1]
    if W_x.shape != (x.shape[-1], 4 * H) or W_h.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise nx.ShapeError(
            f"LSTM weight shapes {W_x.shape}, {W_h.shape}, {b.shape} do not fit "
            f"input {x.shape[-1]} / hidden {H}")
    z = nx.matmul(x, W_x) + nx.matmul(h_prev, W_h) + b
    h, c = lstm_gates(z, c_prev)
    if vector:
        h, c = nx.reshape(h, (H,)), nx.reshape(c, (H,))
    return h, c


def attention(dec_h: Tensor, annotations: Tensor, W_enc: Tensor, W_dec: Tensor, v: Tensor,
              projected: Tensor | None = None, score_bias: Tensor | None = None
              ) -> tuple[Tensor, Tensor]:
    """Additive attention: ``score_t = v . tanh(W_enc a_t + W_dec s)``.

    ``dec_h`` is ``(B, H)`` (or a vector with ``annotations`` of shape
    ``(T, 2H)``). ``annotations`` may have batch extent 1 and broadcast
    against ``B`` decoder states, which is how beam hypotheses share one
    encoding. Returns ``(context, weights)``.
    """
    single = dec_h.data.ndim == 1
    if single:
        dec_h = _row(dec_h)
        annotations = nx.reshape(annotations, (1,) + annotations.shape)
    if annotations.shape[1] == 0:
        raise ContractError("attention over an empty annotation sequence")
    if projected is None:
        projected = nx.matmul(annotations, W_enc)
    B, A = dec_h.shape[0], W_dec.shape[1]
    T = annotations.shape[1]
    q = nx.reshape(nx.matmul(dec_h, W_dec), (B, 1, A))
    scores = nx.matmul(nx.tanh(projected + q), v)           # (B, T, 1)
    scores = nx.reshape(scores, (B, T))
    if score_bias is not None:
        scores = scores + score_bias
    weights = nx.softmax(scores, axis=-1)
    context = nx.sum(nx.reshape(weights, (B, T, 1)) * annotations, axis=1)
    if single:
        return nx.reshape(context, (context.shape[-1],)), nx.reshape(weights, (T,))
    return context, weights


class Seq2Seq:
    """Encoder-decoder parameters plus forward computations.

    ``params`` maps names to leaf tensors. ``row_masks`` marks, for the
    embedding matrices, which rows may be updated; all other parameters are
    fully trainable.
    """

    def __init__(self, config: ModelConfig, table: EmbeddingTable | None = None):
        self.config = config
        cfg = config
        V, E, H, A = cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.attention_dim
        rng = np.random.default_rng(cfg.seed)
        r = cfg.init_range

        def weight(*shape):
            return rng.uniform(-r, r, size=shape)

        def lstm_bias():
            b = np.zeros(4 * H)
            b[H:2 * H] = cfg.forget_bias
            return b

        shapes: dict[str, np.ndarray] = {}
        in_dim = E
        for layer in range(cfg.encoder_layers):
            for d in ("fwd", "bwd"):
                shapes[f"enc.l{layer}.{d}.W_x"] = weight(in_dim, 4 * H)
                shapes[f"enc.l{layer}.{d}.W_h"] = weight(H, 4 * H)
                shapes[f"enc.l{layer}.{d}.b"] = lstm_bias()
            in_dim = 2 * H
        for part in ("h", "c"):
            shapes[f"bridge.{part}.W"] = weight(2 * H, H)
            shapes[f"bridge.{part}.b"] = np.zeros(H)
        shapes["att.W_enc"] = weight(2 * H, A)
        shapes["att.W_dec"] = weight(H, A)
        shapes["att.v"] = weight(A, 1)
        shapes["dec.W_x"] = weight(E + 2 * H, 4 * H)
        shapes["dec.W_h"] = weight(H, 4 * H)
        shapes["dec.b"] = lstm_bias()
        shapes["out.W"] = weight(3 * H, V)
        shapes["out.b"] = np.zeros(V)

        if table is not None:
            if table.matrix.shape != (V, E):
                raise ConfigurationError(
                    f"embedding table {table.matrix.shape} does not match vocab {V} x embed {E}")
            embed, mask = table.matrix.copy(), table.trainable_mask.copy()
        else:
            embed, mask = rng.uniform(-0.1, 0.1, size=(V, E)), np.ones(V, dtype=bool)
        shapes["embed"] = embed
        self.row_masks = {"embed": mask}
        if not cfg.share_embeddings:
            shapes["dec_embed"] = embed.copy()
            self.row_masks["dec_embed"] = mask.copy()

        self.params = {name: Tensor(arr, requires_grad=True, name=name) for name, arr in shapes.items()}

    # ------------------------------------------------------------ helpers

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    @property
    def dec_embed(self) -> Tensor:
        return self.params["embed" if self.config.share_embeddings else "dec_embed"]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        if set(state) != set(self.params):
            raise ConfigurationError(f"parameter names differ: {sorted(set(state) ^ set(self.params))}")
        for name, arr in state.items():
            if arr.shape != self.params[name].shape:
                raise ConfigurationError(f"{name}: shape {arr.shape} != {self.params[name].shape}")
            self.params[name].data = np.array(arr, dtype=self.params[name].data.dtype)

    def _mask(self, shape, rng) -> np.ndarray:
        return rng.random(shape) >= self.config.dropout_p

    def _dropping(self, mode: str, rng) -> bool:
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        if mode == "train" and self.config.dropout_p > 0:
            if rng is None:
                raise ContractError("training-mode dropout needs an rng for its masks")
            return True
        return False

    # ------------------------------------------------------------- encoder

    def _run_direction(self, xproj: Tensor, mask: np.ndarray, W_h: Tensor, reverse: bool):
        B, T, _ = xproj.shape
        H = W_h.shape[0]
        h = Tensor(np.zeros((B, H)))
        c = Tensor(np.zeros((B, H)))
        outputs = [None] * T
        full = mask.all()
        first = True
        for t in (range(T - 1, -1, -1) if reverse else range(T)):
            z = nx.select_step(xproj, t)
            if not first:
                z = z + nx.matmul(h, W_h)
            h_new, c_new = lstm_gates(z, c)
            if full:
                h, c = h_new, c_new
            else:
                m = mask[:, t:t + 1]
                h, c = nx.where(m, h_new, h), nx.where(m, c_new, c)
            outputs[t] = h
            first = False
        return nx.stack(outputs, axis=1), (h, c)

    def encode(self, sources: Sequence[Sequence[int]], mode: str = "infer", rng=None) -> Encoded:
        if not sources or any(len(s) == 0 for s in sources):
            raise ContractError("encode needs non-empty source sequences")
        drop = self._dropping(mode, rng)
        p = self.params
        ids, mask = pad_batch(sources)
        if ids.max() >= self.config.vocab_size or ids.min() < 0:
            raise IndexError("source id out of vocabulary range")
        x = nx.embedding_lookup(p["embed"], ids)
        finals = None
        for layer in range(self.config.encoder_layers):
            outs, finals = [], []
            for d, reverse in (("fwd", False), ("bwd", True)):
                pre = f"enc.l{layer}.{d}."
                xproj = nx.matmul(x, p[pre + "W_x"]) + p[pre + "b"]
                out, final = self._run_direction(xproj, mask, p[pre + "W_h"], reverse)
                outs.append(out)
                finals.append(final)
            x = nx.concat(outs, axis=-1)
            if drop and layer < self.config.encoder_layers - 1:
                x = nx.dropout(x, self._mask(x.shape, rng), self.config.dropout_p)
        (hf, cf), (hb, cb) = finals
        h0 = nx.tanh(nx.matmul(nx.concat([hf, hb]), p["bridge.h.W"]) + p["bridge.h.b"])
        c0 = nx.tanh(nx.matmul(nx.concat([cf, cb]), p["bridge.c.W"]) + p["bridge.c.b"])
        projected = nx.matmul(x, p["att.W_enc"])
        bias = None if mask.all() else Tensor(np.where(mask, 0.0, MASK_SCORE))
        return Encoded(x, projected, bias, (h0, c0))

    # ------------------------------------------------------------- decoder

    def _decoder_core(self, prev_ids, state, enc: Encoded):
        p = self.params
        h, c = state
        prev_ids = np.asarray(prev_ids)
        if prev_ids.size and (prev_ids.min() < 0 or prev_ids.max() >= self.config.vocab_size):
            raise IndexError(f"previous token id out of range for vocabulary of {self.config.vocab_size}")
        emb = nx.embedding_lookup(self.dec_embed, prev_ids)
        ctx, _ = attention(h, enc.annotations, p["att.W_enc"], p["att.W_dec"], p["att.v"],
                           projected=enc.projected, score_bias=enc.score_bias)
        h, c = lstm_cell_step(nx.concat([emb, ctx]), h, c, p["dec.W_x"], p["dec.W_h"], p["dec.b"])
        return h, c, ctx

    def decode_step(self, prev_ids, state, enc: Encoded, mode: str = "infer", rng=None):
        """One decoder step; returns ``(logits (B, V), (h, c))``."""
        drop = self._dropping(mode, rng)
        h, c, ctx = self._decoder_core(prev_ids, state, enc)
        pre = nx.concat([h, ctx])
        if drop:
            pre = nx.dropout(pre, self._mask(pre.shape, rng), self.config.dropout_p)
        logits = nx.matmul(pre, self.params["out.W"]) + self.params["out.b"]
        return logits, (h, c)

    # ---------------------------------------------------------------- loss

    def batch_loss(self, pairs: Sequence[tuple], mode: str = "train", rng=None) -> tuple[Tensor, int]:
        """Token-weighted mean cross-entropy of a batch of ``(source, target)`` id pairs.

        Targets must be BOS ... EOS wrapped; each position predicts the next
        token under teacher forcing. Returns ``(loss, n_target_tokens)``.
        """
        drop = self._dropping(mode, rng)
        for _, tgt in pairs:
            if len(tgt) < 2 or tgt[0] != BOS_ID or tgt[-1] != EOS_ID:
                raise ContractError("targets must be wrapped in BOS ... EOS")
        enc = self.encode([s for s, _ in pairs], mode, rng)
        tgt_in, _ = pad_batch([t[:-1] for _, t in pairs])
        tgt_out, out_mask = pad_batch([t[1:] for _, t in pairs])
        B, L = tgt_in.shape
        state = enc.init_state
        pre = []
        for step in range(L):
            h, c, ctx = self._decoder_core(tgt_in[:, step], state, enc)
            state = (h, c)
            pre.append(nx.concat([h, ctx]))
        pre = nx.stack(pre, axis=1)                             # (B, L, 3H)
        if drop:
            pre = nx.dropout(pre, self._mask(pre.shape, rng), self.config.dropout_p)
        logits = nx.matmul(pre, self.params["out.W"]) + self.params["out.b"]
        logits = nx.reshape(logits, (B * L, self.config.vocab_size))
        n_tokens = int(out_mask.sum())
        ce = nx.cross_entropy(logits, tgt_out.reshape(-1), weights=out_mask.reshape(-1))
        return ce * (1.0 / n_tokens), n_tokens

    def forward_loss(self, source: Sequence[int], target: Sequence[int], mode: str = "infer",
                     rng=None) -> Tensor:
        return self.batch_loss([(source, target)], mode, rng)[0]

    # -------------------------------------------------- search interface

    def start(self, source: Sequence[int]):
        """Decoder state for one source sentence (inference mode, no recording)."""
        with nx.no_grad():
            enc = self.encode([source], "infer")
        return (enc.init_state[0], enc.init_state[1], enc)

    def step(self, prev_ids, state):
        """Log-probabilities ``(k, V)`` for ``k`` hypotheses sharing one encoding."""
        h, c, enc = state
        with nx.no_grad():
            logits, (h, c) = self.decode_step(np.asarray(prev_ids), (h, c), enc, "infer")
        return nx.log_softmax_np(logits.data, axis=-1), (h, c, enc)

    @staticmethod
    def reorder(state, index):
        h, c, enc = state
        index = np.asarray(index)
        return (Tensor(h.data[index]), Tensor(c.data[index]), enc)
