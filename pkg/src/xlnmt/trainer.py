"""Mini-batch Adam training with dev-BLEU learning-rate decay and early stopping.

One epoch shuffles the encoded pairs with an RNG seeded by ``(seed, epoch)``,
cuts them into batches, and applies one Adam update per batch. After each
epoch the caller reports dev BLEU to :func:`end_of_epoch`, which halves the
learning rate on a non-improvement and stops after ``patience`` of them in a
row.
"""

from __future__ import annotations

import io
import json
import math
import time
import zipfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .errors import CheckpointError, ConfigurationError, ContractError
from .model import ModelConfig, Seq2Seq

CONTINUE, DECAY, STOP = "continue", "decay", "stop"
STRICT, BUCKETED = "strict", "bucketed"

CHECKPOINT_VERSION = 1
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class TrainSchedule:
    initial_lr: float = 0.0002
    decay_factor: float = 0.5
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 3
    seed: int = 0
    clip_norm: float | None = 5.0
    shuffle: str = BUCKETED
    use_dev: bool = True
    burn_in: int = 0
    # mutable run state
    lr: float | None = None
    best_dev_bleu: float = -math.inf
    bad_epochs: int = 0
    epoch: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if not 0 < self.decay_factor <= 1:
            raise ConfigurationError("decay_factor must be in (0, 1]")
        if self.initial_lr <= 0:
            raise ConfigurationError("initial_lr must be positive")
        if self.patience < 1:
            raise ConfigurationError("patience must be at least 1")
        if self.burn_in < 0:
            raise ConfigurationError("burn_in must be non-negative")
        if self.shuffle not in (STRICT, BUCKETED):
            raise ConfigurationError(f"shuffle must be {STRICT!r} or {BUCKETED!r}")
        if self.lr is None:
            self.lr = self.initial_lr

    def to_dict(self) -> dict:
        d = asdict(self)
        d["best_dev_bleu"] = None if d["best_dev_bleu"] == -math.inf else d["best_dev_bleu"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainSchedule":
        d = {k: v for k, v in d.items() if k in {f.name for f in fields(cls)}}
        if d.get("best_dev_bleu") is None:
            d["best_dev_bleu"] = -math.inf
        return cls(**d)


def end_of_epoch(dev_bleu: float, schedule: TrainSchedule) -> str:
    """Update the schedule with this epoch's dev BLEU and say what happens next."""
    if dev_bleu > schedule.best_dev_bleu:
        schedule.best_dev_bleu = dev_bleu
        schedule.bad_epochs = 0
        return CONTINUE
    schedule.lr *= schedule.decay_factor
    schedule.bad_epochs += 1
    return STOP if schedule.bad_epochs >= schedule.patience else DECAY


# ------------------------------------------------------------------- Adam


class OptimizerState:
    """Adam moments for every trainable entry.

    Parameters with a row mask (the embedding tables) keep moments only for
    their trainable rows; frozen rows have no state at all.
    """

    def __init__(self, params: dict, row_masks: dict | None = None, lr: float = 0.0002,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.step = 0
        self.rows: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        for name, p in params.items():
            shape = _data(p).shape
            mask = (row_masks or {}).get(name)
            if mask is not None:
                self.rows[name] = np.flatnonzero(mask)
                shape = (len(self.rows[name]),) + shape[1:]
            self.m[name] = np.zeros(shape)
            self.v[name] = np.zeros(shape)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
            if name in self.rows:
                out[f"rows/{name}"] = self.rows[name]
        return out

    def restore(self, arrays: dict, step: int) -> None:
        for name in self.m:
            m, v = arrays[f"m/{name}"], arrays[f"v/{name}"]
            if m.shape != self.m[name].shape or v.shape != self.v[name].shape:
                raise CheckpointError(f"optimizer state for {name} has the wrong shape")
            if name in self.rows and not np.array_equal(arrays[f"rows/{name}"], self.rows[name]):
                raise CheckpointError(f"trainable rows of {name} differ from the checkpoint")
            self.m[name], self.v[name] = m.copy(), v.copy()
        self.step = step


def _data(p):
    return p.data if isinstance(p, nx.Tensor) else p


def adam_step(params: dict, grads: dict, state: OptimizerState) -> OptimizerState:
    """Apply one bias-corrected Adam update to ``params`` (tensors or arrays)."""
    if state.step < 0:
        raise ContractError("optimizer step counter is negative")
    if set(grads) - set(state.m):
        raise ContractError(f"no optimizer state for {sorted(set(grads) - set(state.m))}")
    state.step += 1
    b1, b2 = state.betas
    c1, c2 = 1 - b1 ** state.step, 1 - b2 ** state.step
    for name, g in grads.items():
        p = params[name]
        data = _data(p)
        if g.shape != data.shape:
            raise ContractError(f"{name}: gradient shape {g.shape} != parameter shape {data.shape}")
        rows = state.rows.get(name)
        if rows is not None:
            g = g[rows]
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        delta = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if rows is None:
            new = data - delta
        else:
            new = data.copy()
            new[rows] -= delta
        if isinstance(p, nx.Tensor):
            p.data = new
        else:
            p[...] = new
    return state


def clip_by_global_norm(grads: dict, max_norm: float | None, rows: dict | None = None):
    """Scale gradients so their joint L2 norm is at most ``max_norm``.

    Only trainable rows count toward the norm. Returns ``(grads, norm)``;
    the inputs are never modified.
    """
    total = 0.0
    for name, g in grads.items():
        r = (rows or {}).get(name)
        part = g if r is None else g[r]
        total += float(np.vdot(part, part))
    norm = math.sqrt(total)
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm


# ----------------------------------------------------------------- epochs


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    n_tokens: int
    n_batches: int
    seconds: float
    grad_norm: float = 0.0

    @property
    def tokens_per_second(self) -> float:
        return self.n_tokens / self.seconds if self.seconds > 0 else float("inf")


def _pairs(data) -> list[tuple[list[int], list[int]]]:
    out = []
    for item in data:
        if hasattr(item, "source"):
            out.append((list(item.source), list(item.target)))
        else:
            out.append((list(item[0]), list(item[1])))
    return out


def make_batches(pairs: Sequence, batch_size: int, rng: np.random.Generator,
                 mode: str = BUCKETED, pool: int = 20) -> list[list[int]]:
    """Index batches for one epoch.

    ``strict`` cuts a random permutation into consecutive batches.
    ``bucketed`` sorts each pool of ``pool`` batches by source length before
    cutting, then shuffles the batch order, which keeps padding small.
    """
    order = rng.permutation(len(pairs))
    if mode == BUCKETED:
        span = batch_size * pool
        chunks = []
        for start in range(0, len(order), span):
            chunk = order[start:start + span]
            lengths = np.array([len(pairs[i][0]) for i in chunk])
            chunks.append(chunk[np.argsort(lengths, kind="stable")])
        order = np.concatenate(chunks) if chunks else order
    batches = [order[i:i + batch_size].tolist() for i in range(0, len(order), batch_size)]
    if mode == BUCKETED:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def train_epoch(model: Seq2Seq, data, schedule: TrainSchedule, state: OptimizerState) -> EpochStats:
    """One pass over ``data`` (encoded pairs); advances ``schedule.epoch``."""
    pairs = _pairs(data)
    if not pairs:
        raise ContractError("cannot train on an empty corpus")
    rng = np.random.default_rng([schedule.seed, schedule.epoch])
    state.lr = schedule.lr
    names = list(model.params)
    t0 = time.perf_counter()
    loss_sum, tokens, worst_norm = 0.0, 0, 0.0
    batches = make_batches(pairs, schedule.batch_size, rng, schedule.shuffle)
    for batch in batches:
        model.zero_grad()
        with nx.Tape() as tape:
            loss, n = model.batch_loss([pairs[i] for i in batch], "train", rng)
        tape.backward(loss)
        grads = {name: model.params[name].grad for name in names}
        grads, norm = clip_by_global_norm(grads, schedule.clip_norm, state.rows)
        worst_norm = max(worst_norm, norm)
        adam_step(model.params, grads, state)
        loss_sum += loss.item() * n
        tokens += n
    model.zero_grad()
    stats = EpochStats(schedule.epoch, loss_sum / tokens, tokens, len(batches),
                       time.perf_counter() - t0, worst_norm)
    schedule.epoch += 1
    return stats


def format_log_line(epoch: int, loss: float, dev_bleu: float | None, lr: float, decision: str) -> str:
    bleu = "nan" if dev_bleu is None else f"{dev_bleu:.6f}"
    return f"{epoch}\t{loss:.6f}\t{bleu}\t{lr:.6g}\t{decision}"


@dataclass
class TrainResult:
    history: list[EpochStats] = field(default_factory=list)
    log: list[str] = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False


def train(model: Seq2Seq, data, schedule: TrainSchedule, state: OptimizerState | None = None,
          dev_bleu: Callable[[Seq2Seq], float] | None = None, log: Callable[[str], None] | None = None,
          checkpoint: Callable[[Seq2Seq, OptimizerState, TrainSchedule, dict | None], None] | None = None,
          best_state: dict | None = None) -> TrainResult:
    """Run epochs until ``max_epochs`` or early stopping.

    With ``dev_bleu`` and ``schedule.use_dev`` the parameters of the best dev
    epoch are restored at the end. During the first ``schedule.burn_in``
    epochs dev BLEU is tracked but never triggers decay or stopping. ``checkpoint`` is called after every epoch
    with the live objects and the best-so-far parameters, which is all that
    is needed to resume.
    """
    state = state or OptimizerState(model.params, model.row_masks, schedule.lr)
    result = TrainResult()
    use_dev = dev_bleu is not None and schedule.use_dev
    while schedule.epoch < schedule.max_epochs:
        stats = train_epoch(model, data, schedule, state)
        result.history.append(stats)
        bleu = None
        decision = CONTINUE
        if dev_bleu is not None:
            bleu = dev_bleu(model)
        if use_dev:
            if stats.epoch < schedule.burn_in:
                # early plateaus say little; only remember the best epoch
                improved = bleu > schedule.best_dev_bleu
                if improved:
                    schedule.best_dev_bleu = bleu
            else:
                decision = end_of_epoch(bleu, schedule)
                improved = decision == CONTINUE
            if improved:
                best_state = model.state_dict()
                result.best_epoch = stats.epoch
        line = format_log_line(stats.epoch, stats.mean_loss, bleu, schedule.lr, decision)
        result.log.append(line)
        if log:
            log(line)
        if checkpoint:
            checkpoint(model, state, schedule, best_state)
        if decision == STOP:
            result.stopped_early = True
            break
    if use_dev and best_state is not None:
        model.load_state_dict(best_state)
    return result


# ------------------------------------------------------------- checkpoints


def _write_zip(path: Path, entries: dict[str, bytes]) -> None:
    # fixed timestamps keep the archive byte-identical across runs
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(entries):
            info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, entries[name])


def _npy(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(path, model: Seq2Seq, state: OptimizerState, schedule: TrainSchedule,
                    best_state: dict | None = None, provenance: Sequence[str] | None = None,
                    extra: dict | None = None) -> Path:
    """Write a zip of ``.npy`` tensors plus ``meta.json``; loadable by ``np.load``."""
    path = Path(path)
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "schedule": schedule.to_dict(),
        "optimizer": {"step": state.step, "lr": state.lr, "betas": list(state.betas), "eps": state.eps},
        "rng": {"seed": schedule.seed, "next_epoch": schedule.epoch},
        "provenance": list(provenance) if provenance is not None else None,
        "has_best": best_state is not None,
        "extra": extra or {},
    }
    entries = {"meta.json": json.dumps(meta, sort_keys=True, indent=1).encode("utf-8")}
    for name, p in model.params.items():
        entries[f"param/{name}.npy"] = _npy(p.data)
    for name, mask in model.row_masks.items():
        entries[f"mask/{name}.npy"] = _npy(mask)
    for key, arr in state.arrays().items():
        entries[f"opt/{key}.npy"] = _npy(arr)
    for name, arr in (best_state or {}).items():
        entries[f"best/{name}.npy"] = _npy(arr)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        _write_zip(tmp, entries)
        tmp.replace(path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


@dataclass
class Checkpoint:
    model: Seq2Seq
    state: OptimizerState
    schedule: TrainSchedule
    best_state: dict | None
    meta: dict


def load_checkpoint(path, vocab_size: int | None = None) -> Checkpoint:
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            arrays = {}
            for name in zf.namelist():
                if name.endswith(".npy"):
                    with zf.open(name) as fh:
                        arrays[name[:-4]] = np.lib.format.read_array(fh, allow_pickle=False)
    except (OSError, KeyError, zipfile.BadZipFile, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {meta.get('version')} is not {CHECKPOINT_VERSION}")
    config = ModelConfig(**meta["config"])
    if vocab_size is not None and config.vocab_size != vocab_size:
        raise CheckpointError(f"checkpoint vocabulary size {config.vocab_size} != {vocab_size}")
    model = Seq2Seq(config)
    try:
        model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("param/")})
    except ConfigurationError as exc:
        raise CheckpointError(str(exc)) from exc
    for name in model.row_masks:
        model.row_masks[name] = arrays[f"mask/{name}"].astype(bool)
    opt = meta["optimizer"]
    state = OptimizerState(model.params, model.row_masks, opt["lr"], tuple(opt["betas"]), opt["eps"])
    state.restore({k[4:]: v for k, v in arrays.items() if k.startswith("opt/")}, opt["step"])
    best = {k[5:]: v for k, v in arrays.items() if k.startswith("best/")} if meta["has_best"] else None
    return Checkpoint(model, state, TrainSchedule.from_dict(meta["schedule"]), best, meta)
