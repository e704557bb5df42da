"""Command line entry point.

Every failure prints one JSON line on stderr,
``{"error": ..., "stage": ..., "type": ...}``, and exits 1. Usage errors
exit 2.
"""

from __future__ import annotations

import os

THREADS_ENV = "XLNMT_THREADS"

# BLAS reads these once, at import time, so they must be set before numpy loads.
if os.environ.get(THREADS_ENV):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ[THREADS_ENV])

import argparse  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

from .. import __version__  # noqa: E402
from ..corpus import Sentence, encode_sentence, load_language_pair, prepend_target_tag, tokenize_line  # noqa: E402
from ..corpus import Vocabulary  # noqa: E402
from ..errors import StageError  # noqa: E402
from ..evaluation import corpus_bleu  # noqa: E402
from ..search import translate, write_nbest, write_translations  # noqa: E402
from ..trainer import load_checkpoint  # noqa: E402
from .config import ExperimentConfig, load_config, parse_config  # noqa: E402
from .experiment import run_experiment  # noqa: E402
from .overlap import vocab_overlap_stats  # noqa: E402
from .synthetic import SPLITS, SyntheticSpec, generate_synthetic_languages  # noqa: E402


class _Failure(Exception):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(str(exc))
        self.stage = stage
        self.exc = exc


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - reported as one line by main()
        raise _Failure(name, exc) from exc


def _load(args) -> ExperimentConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"experiment.seed={args.seed}")
    if getattr(args, "name", None):
        overrides.append(f"experiment.name={args.name}")
    return _stage("config", load_config, args.config, overrides, check_files=False)


# ------------------------------------------------------------ subcommands

def _pipeline(stop_after):
    def run(args) -> int:
        config = _load(args)
        log = (lambda line: print(line, flush=True)) if not args.quiet else None
        result = run_experiment(config, args.runs_root, log=log, stop_after=stop_after)
        for rep in (result.training_report, result.transfer_report):
            if rep is not None and not args.quiet:
                print(rep.table(), end="")
        print(f"run directory: {result.run_dir}")
        return 0
    return run


def cmd_translate(args) -> int:
    model_path = Path(args.model)
    vocab_path = Path(args.vocab) if args.vocab else model_path.parent.parent / "vocab.tsv"
    vocab = _stage("load", Vocabulary.load, vocab_path)
    ckpt = _stage("load", load_checkpoint, model_path, len(vocab))
    lines = _stage("read-input", Path(args.input).read_text, encoding="utf-8").splitlines()

    def encode(line):
        sent = prepend_target_tag(Sentence(tokenize_line(line), args.src_lang), args.tgt_lang, vocab.languages)
        return encode_sentence(sent, vocab, "source")

    sources = _stage("encode", lambda: [encode(line) for line in lines])
    nbest = _stage("translate", translate, sources, ckpt.model, args.beam, args.max_len,
                   max(args.nbest, 1), args.length_norm)
    if args.output:
        write_translations(args.output, [h[0] for h in nbest], vocab)
    else:
        for hyps in nbest:
            print(" ".join(vocab.decode(hyps[0].output)))
    if args.nbest > 1:
        write_nbest(args.nbest_output or f"{args.output or 'translations'}.nbest", nbest, vocab)
    return 0


def cmd_evaluate(args) -> int:
    def read(path):
        return [tokenize_line(line) for line in Path(path).read_text(encoding="utf-8").splitlines()]

    hyps = _stage("read-input", read, args.hyp)
    refs = _stage("read-input", read, args.ref)
    score = _stage("evaluate", corpus_bleu, hyps, refs, args.smoothing)
    print(json.dumps({"bleu": score.bleu, "precisions": score.precisions, "bp": score.bp,
                      "hyp_len": score.hyp_len, "ref_len": score.ref_len, "smoothing": score.smoothing},
                     sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    spec = _stage("config", SyntheticSpec, n_concepts=args.concepts, overlap=args.overlap, seed=args.seed,
                  dim=args.dim, noise=args.noise,
                  sentences={"train": args.train, "dev": args.dev, "test": args.test})
    langs = generate_synthetic_languages(spec)
    out = Path(args.out)
    _stage("write", langs.write, out)
    train_pairs = "xa-xb, xa-xc, xb-xc"
    test_pairs = "xd-xa, xd-xb, xd-xc"
    text = (f"[experiment]\nname = synth-o{args.overlap:g}-s{args.seed}\nseed = {args.seed}\ndata_dir = .\n"
            f"train_pairs = {train_pairs}\ntest_pairs = {test_pairs}\n"
            "embedding_mode = pretrained\nvocab_mode = shared-form\n\n[embeddings]\n"
            + "".join(f"{lang} = {lang}.vec\n" for lang in spec.languages)
            + f"\n[preprocess]\nmin_freq = 1\n\n[model]\nembed_dim = {args.dim}\nhidden_dim = 32\n\n"
            "[train]\ninitial_lr = 0.005\nmax_epochs = 30\nburn_in = 10\n")
    parse_config(text, out)  # the written config must parse
    (out / "experiment.ini").write_text(text, encoding="utf-8")
    print(f"wrote {out} (config: {out / 'experiment.ini'})")
    return 0


def cmd_overlap_stats(args) -> int:
    config = _load(args)
    pairs = config.train_pairs + config.test_pairs

    def read():
        return [load_language_pair(config.data_dir, args.split, a, b, both_directions=False)[0] for a, b in pairs]

    corpora = _stage("preprocess", read)
    stats = vocab_overlap_stats(config.languages, corpora)
    if args.json:
        print(json.dumps({"languages": stats.languages, "jaccard": stats.jaccard.round(6).tolist(),
                          "shared": stats.shared.tolist(), "sizes": stats.sizes}, sort_keys=True))
    else:
        print(stats.table(), end="")
    return 0


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xlnmt", description="Multilingual NMT transfer testbed.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p, required=True):
        p.add_argument("--config", required=required, help="experiment INI file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
        p.add_argument("--seed", type=int, help="shorthand for --set experiment.seed=N")
        p.add_argument("--name", help="shorthand for --set experiment.name=NAME")

    for name, stop, help_ in (("preprocess", "vocab", "clean corpora and write vocab.tsv"),
                              ("build-embeddings", "embeddings", "also build the embedding table"),
                              ("train", "train", "also train; writes checkpoints/"),
                              ("experiment", None, "run every stage including evaluation")):
        p = sub.add_parser(name, help=help_)
        with_config(p)
        p.add_argument("--runs-root", help="directory holding run directories (env XLNMT_RUNS)")
        p.add_argument("--quiet", action="store_true")
        p.set_defaults(func=_pipeline(stop))

    p = sub.add_parser("translate", help="decode a tokenized input file")
    p.add_argument("--model", required=True, help="checkpoint (.npz)")
    p.add_argument("--vocab", help="vocab.tsv (default: next to the run's checkpoints/)")
    p.add_argument("--input", required=True)
    p.add_argument("--src-lang", required=True)
    p.add_argument("--tgt-lang", required=True)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--max-len", type=int, default=70)
    p.add_argument("--nbest", type=int, default=1)
    p.add_argument("--length-norm", choices=("none", "by_length"), default="none")
    p.add_argument("--output", help="1-best output file (default: stdout)")
    p.add_argument("--nbest-output")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="corpus BLEU of a hypothesis file against a reference file")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--smoothing", choices=("none", "add-one"), default="none")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate toy languages plus an experiment.ini")
    p.add_argument("--out", required=True)
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--concepts", type=int, default=60)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--noise", type=float, default=SyntheticSpec.noise)
    for split, n in SyntheticSpec().sentences.items():
        p.add_argument(f"--{split}", type=int, default=n, help=f"{split} sentences per pair")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("overlap-stats", help="Jaccard overlap of surface vocabularies")
    with_config(p)
    p.add_argument("--split", choices=SPLITS, default="train")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_overlap_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        stage, err = exc.stage, exc.cause
    except _Failure as exc:
        stage, err = exc.stage, exc.exc
    except KeyboardInterrupt:
        return 130
    kind = type(err).__name__ if isinstance(err, BaseException) else "StageError"
    print(json.dumps({"error": str(err).splitlines()[0] if str(err) else kind, "stage": stage, "type": kind}),
          file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
