"""End-to-end runs: preprocess, vocabulary, embeddings, training, evaluation.

A run owns ``<runs root>/<name>/``::

    manifest.json        config snapshot, corpus sizes, input checksums, timings
    vocab.tsv
    embeddings.vec       plus embeddings.vec.prov
    checkpoints/         last.npz after every epoch, final.npz at the end
    reports/             train.log, training.{txt,jsonl}, transfer.{txt,jsonl}

Every file a stage reads is checksummed into the input ledger, which is how
the manifest shows that no test-language corpus was opened before
evaluation. Reports contain no timings, so identical config and seed give
byte-identical reports.
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import __version__
from ..corpus import (
    ParallelCorpus, Vocabulary, build_vocabulary, encode_corpus, load_language_pair, preprocess_corpus,
)
from ..embeddings import build_embedding_table, parse_vector_file, random_table
from ..errors import StageError
from ..evaluation import EvalReport, corpus_bleu, direction_label, evaluate_direction, pooled
from ..model import ModelConfig, Seq2Seq
from ..search import beam_search
from ..trainer import OptimizerState, TrainSchedule, save_checkpoint, train
from .config import PRETRAINED_MODE, ExperimentConfig

RUNS_ENV = "XLNMT_RUNS"
DEFAULT_RUNS = "runs"
STAGES = ("config", "preprocess", "embeddings-read", "vocab", "embeddings", "train", "evaluate")


def runs_root(explicit=None) -> Path:
    return Path(explicit or os.environ.get(RUNS_ENV) or DEFAULT_RUNS)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class InputLedger:
    entries: list[dict] = field(default_factory=list)

    def record(self, stage: str, path, kind: str, languages=()) -> None:
        self.entries.append({"stage": stage, "path": str(path), "sha256": sha256(path),
                             "kind": kind, "languages": sorted(languages)})

    def test_language_reads(self, test_languages, stages) -> list[dict]:
        """Corpus files touching a test language that were read in ``stages``."""
        test = set(test_languages)
        return [e for e in self.entries
                if e["kind"] == "corpus" and e["stage"] in stages and test & set(e["languages"])]


@dataclass
class RunManifest:
    config: dict
    corpus_sizes: dict
    inputs: list
    versions: dict
    timings: dict
    outputs: dict = field(default_factory=dict)
    isolation: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=1, sort_keys=True) + "\n"


@dataclass
class ExperimentResult:
    run_dir: Path
    manifest: RunManifest
    training_report: EvalReport | None = None
    transfer_report: EvalReport | None = None
    model: Seq2Seq | None = None
    vocab: Vocabulary | None = None

    def record(self, direction: str):
        reports = [r for r in (self.training_report, self.transfer_report) if r is not None]
        for r in (rec for rep in reports for rec in rep.records):
            if r.direction == direction:
                return r
        raise KeyError(direction)


@contextmanager
def run_lock(run_dir: Path):
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StageError("lock", f"run directory {run_dir} is in use (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


class _Stages:
    def __init__(self):
        self.timings: dict[str, float] = {}

    @contextmanager
    def __call__(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as exc:  # noqa: BLE001 - every failure is reported with its stage
            raise StageError(name, exc) from exc
        finally:
            self.timings[name] = round(time.perf_counter() - t0, 3)


def _reference_tokens(corpus: ParallelCorpus, vocab: Vocabulary) -> list[list[str]]:
    return [[vocab.lexical_key(tok, t.language) for tok in t.tokens] for _, t in corpus.pairs]


def length_filtered(corpus: ParallelCorpus, max_len: int) -> ParallelCorpus:
    return ParallelCorpus([(s, t) for s, t in corpus.pairs if len(s) <= max_len and len(t) <= max_len],
                          corpus.split)


def _decode_pool(model, encoded, beam, max_len):
    return [beam_search(p.source, model, beam, max_len)[0].output for p in encoded]


def load_training_data(config: ExperimentConfig, ledger: InputLedger, stage: str = "preprocess"):
    """Preprocessed train corpus (both directions) and raw dev corpora per direction."""
    p = config.preprocess
    train_parts, dev = [], {}
    for a, b in config.train_pairs:
        one_way, paths = load_language_pair(config.data_dir, "train", a, b, both_directions=False)
        for path in paths:
            ledger.record(stage, path, "corpus", (a, b))
        one_way, _ = preprocess_corpus(one_way, p.max_len, p.min_freq, p.singleton_policy,
                                       apply_length_filter="train" in p.filtered_splits)
        train_parts.append(one_way)
        train_parts.append(ParallelCorpus([(t, s) for s, t in one_way.pairs], "train"))
        dev_corpus, paths = load_language_pair(config.data_dir, "dev", a, b, both_directions=False)
        for path in paths:
            ledger.record(stage, path, "corpus", (a, b))
        if "dev" in p.filtered_splits:
            dev_corpus = length_filtered(dev_corpus, p.max_len)
        dev[(a, b)] = dev_corpus
        dev[(b, a)] = ParallelCorpus([(t, s) for s, t in dev_corpus.pairs], "dev")
    train_corpus = ParallelCorpus([], "train")
    for part in train_parts:
        train_corpus = train_corpus + part
    return train_corpus, dev


def run_experiment(config: ExperimentConfig, root=None, log: Callable[[str], None] | None = None,
                   stop_after: str | None = None) -> ExperimentResult:
    """Run the stages for ``config`` in order; failures raise :class:`StageError`.

    ``stop_after`` names the last stage to run (``vocab``, ``embeddings`` or
    ``train``); the manifest is written either way.
    """
    if stop_after is not None and stop_after not in STAGES:
        raise ValueError(f"unknown stage {stop_after!r}; expected one of {STAGES}")
    run_dir = runs_root(root) / config.name
    run_dir.mkdir(parents=True, exist_ok=True)
    with run_lock(run_dir):
        return _run(config, run_dir, log or (lambda line: None), stop_after)


def _run(config: ExperimentConfig, run_dir: Path, log, stop_after) -> ExperimentResult:
    stage = _Stages()
    ledger = InputLedger()
    (run_dir / "checkpoints").mkdir(exist_ok=True)
    reports = run_dir / "reports"
    reports.mkdir(exist_ok=True)
    sizes: dict = {}
    state: dict = {}

    def finish(training_report=None, transfer_report=None, model=None, vocab=None):
        outputs = {str(p.relative_to(run_dir)): sha256(p)
                   for p in sorted(run_dir.rglob("*")) if p.is_file() and p.name not in (".lock", "manifest.json")}
        reads = ledger.test_language_reads(config.test_languages, {"preprocess", "vocab", "embeddings", "train"})
        manifest = RunManifest(
            config=config.to_dict(),
            corpus_sizes=sizes,
            inputs=ledger.entries,
            versions={"python": platform.python_version(), "numpy": np.__version__, "xlnmt": __version__},
            timings=stage.timings,
            outputs=outputs,
            isolation={"test_languages": config.test_languages,
                       "test_corpus_reads_before_evaluation": len(reads),
                       "first_test_corpus_read_stage": next(
                           (e["stage"] for e in ledger.entries if e["kind"] == "corpus"
                            and set(config.test_languages) & set(e["languages"])), None)},
            training=state,
        )
        (run_dir / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
        return ExperimentResult(run_dir, manifest, training_report, transfer_report, model, vocab)

    with stage("config"):
        config.validate()

    with stage("preprocess"):
        train_corpus, dev = load_training_data(config, ledger)
        sizes["train"] = {f"{s}-{t}": len(train_corpus.select(s, t)) for s, t in train_corpus.directions()}
        sizes["dev"] = {f"{s}-{t}": len(c) for (s, t), c in sorted(dev.items())}
        if train_corpus.empty:
            raise StageError("preprocess", "no training pairs left after preprocessing")

    with stage("embeddings-read"):
        vec_files = {}
        for lang in config.languages:
            if lang in config.embeddings:
                vec_files[lang] = parse_vector_file(config.embeddings[lang], lang)
                ledger.record("embeddings-read", config.embeddings[lang], "vectors", (lang,))

    with stage("vocab"):
        extra = {lang: vec_files[lang].tokens for lang in config.test_languages if lang in vec_files}
        vocab = build_vocabulary([train_corpus], config.languages, config.vocab_mode, extra_lexicon=extra)
        vocab.save(run_dir / "vocab.tsv")
    if stop_after in ("config", "preprocess", "embeddings-read", "vocab"):
        return finish(vocab=vocab)

    with stage("embeddings"):
        m = config.model
        if config.embedding_mode == PRETRAINED_MODE:
            table = build_embedding_table([vec_files[l] for l in config.languages], vocab, config.seed,
                                          m.embed_init_range)
        else:
            table = random_table(vocab, m.embed_dim, config.seed, m.random_frozen, m.embed_init_range)
        table.save(run_dir / "embeddings.vec")
    if stop_after == "embeddings":
        return finish(vocab=vocab)

    with stage("train"):
        t = config.train
        mcfg = ModelConfig(vocab_size=len(vocab), embed_dim=table.dim, hidden_dim=m.hidden_dim,
                           attention_dim=m.attention_dim or None, dropout_p=m.dropout, seed=config.seed,
                           init_range=m.init_range, share_embeddings=m.share_embeddings)
        model = Seq2Seq(mcfg, table)
        schedule = TrainSchedule(initial_lr=t.initial_lr, decay_factor=t.decay_factor, batch_size=t.batch_size,
                                 max_epochs=t.max_epochs, patience=t.patience, seed=config.seed,
                                 clip_norm=t.clip_norm or None, shuffle=t.shuffle, use_dev=t.use_dev,
                                 burn_in=t.burn_in)
        encoded = encode_corpus(train_corpus, vocab)
        dev_sets = [(encode_corpus(c, vocab), _reference_tokens(c, vocab)) for _, c in sorted(dev.items())]
        dev_encoded = [p for enc, _ in dev_sets for p in enc]
        dev_refs = [r for _, refs in dev_sets for r in refs]
        s = config.search

        def dev_bleu(mod):
            hyps = [[vocab.itos[i] for i in out] for out in _decode_pool(mod, dev_encoded, t.dev_beam, s.max_len)]
            return corpus_bleu(hyps, dev_refs, t.dev_smoothing).bleu

        lines = []

        def on_log(line):
            lines.append(line)
            log(line)

        def on_checkpoint(mod, st, sch, best):
            save_checkpoint(run_dir / "checkpoints" / "last.npz", mod, st, sch, best, table.provenance)

        result = train(model, encoded, schedule, OptimizerState(model.params, model.row_masks, schedule.lr),
                       dev_bleu=dev_bleu if dev_encoded else None, log=on_log, checkpoint=on_checkpoint)
        (reports / "train.log").write_text("epoch\tloss\tdev_bleu\tlr\tdecision\n" + "".join(l + "\n" for l in lines))
        final_state = OptimizerState(model.params, model.row_masks, schedule.lr)
        save_checkpoint(run_dir / "checkpoints" / "final.npz", model, final_state, schedule, None,
                        table.provenance, {"best_epoch": result.best_epoch})
        state.update(epochs=len(result.history), best_epoch=result.best_epoch,
                     stopped_early=result.stopped_early, final_lr=schedule.lr)

    if stop_after == "train":
        return finish(model=model, vocab=vocab)

    leaks = ledger.test_language_reads(config.test_languages, {"preprocess", "vocab", "embeddings", "train"})
    if leaks:
        raise StageError("train", f"test-language corpus read before evaluation: {leaks[0]['path']}")

    with stage("evaluate"):
        training_report, transfer_report = _evaluate(config, model, vocab, ledger, sizes)
        for name, rep in (("training", training_report), ("transfer", transfer_report)):
            (reports / f"{name}.txt").write_text(rep.table(), encoding="utf-8")
            (reports / f"{name}.jsonl").write_text(rep.jsonl(), encoding="utf-8")

    return finish(training_report, transfer_report, model, vocab)


def _evaluate(config: ExperimentConfig, model, vocab, ledger, sizes):
    s, smoothing = config.search, config.eval.smoothing
    sizes["test"] = {}

    def score(corpus, src, tgt):
        enc = encode_corpus(corpus, vocab)
        return evaluate_direction(model, enc, vocab, direction_label(src, tgt), _reference_tokens(corpus, vocab),
                                  s.beam_size, s.max_len, smoothing,
                                  decoded=[beam_search(p.source, model, s.beam_size, s.max_len,
                                                       length_norm=s.length_norm)[0].output for p in enc])

    def directions(pairs):
        out = []
        for a, b in pairs:
            corpus, paths = load_language_pair(config.data_dir, "test", a, b, both_directions=False)
            for path in paths:
                ledger.record("evaluate", path, "corpus", (a, b))
            if "test" in config.preprocess.filtered_splits:
                corpus = length_filtered(corpus, config.preprocess.max_len)
            out.append(((a, b), corpus))
            out.append(((b, a), ParallelCorpus([(t, x) for x, t in corpus.pairs], "test")))
        return out

    def pooled_corpus(items):
        c = ParallelCorpus([], "test")
        for _, corpus in items:
            c = c + corpus
        return c

    training = EvalReport("Training languages (test split)")
    train_dirs = directions(config.train_pairs)
    for (a, b), corpus in train_dirs:
        sizes["test"][f"{a}-{b}"] = len(corpus)
        training.add(score(corpus, a, b))
    langs = config.train_languages
    all_label = direction_label(langs, langs)
    training.add(pooled(list(training.records), f"avg({all_label})"))
    training.add(score(pooled_corpus(train_dirs), langs, langs))

    transfer = EvalReport("Unseen languages (test split)")
    unseen = set(config.test_languages)
    test_dirs = directions(config.test_pairs)
    for lang in config.test_languages:
        into = [(d, c) for d, c in test_dirs if d[1] == lang]
        out_of = [(d, c) for d, c in test_dirs if d[0] == lang]
        groups = []
        for items in (out_of, into):
            recs = []
            for (a, b), corpus in items:
                sizes["test"][f"{a}-{b}"] = len(corpus)
                recs.append(transfer.add(score(corpus, a, b)))
            if not items:
                continue
            srcs = sorted({a for (a, _), _ in items})
            tgts = sorted({b for (_, b), _ in items})
            groups.append(transfer.add(pooled(recs, f"avg({direction_label(srcs, tgts)})")))
            transfer.add(score(pooled_corpus(items), srcs, tgts))
        if len(groups) == 2:
            transfer.add(pooled(groups, f"transfer({lang})"))
    if not unseen:
        transfer.title += " (none configured)"
    return training, transfer
