"""Experiment configuration files.

A config is an INI file. ``[experiment]`` names the data and languages,
``[embeddings]`` maps language codes to ``.vec`` files, and the remaining
sections hold knobs for each stage::

    [experiment]
    name = synth
    seed = 0
    data_dir = data
    train_pairs = xa-xb, xa-xc, xb-xc
    test_pairs = xd-xa, xd-xb, xd-xc
    embedding_mode = pretrained
    vocab_mode = shared-form

    [embeddings]
    xa = data/xa.vec

    [train]
    max_epochs = 20

Relative paths are resolved against the config file's directory. Any value
can be overridden with ``section.key=value`` strings.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from ..corpus import LANGUAGE_ORIGIN, SHARED_FORM
from ..errors import ConfigurationError

PRETRAINED_MODE, RANDOM_MODE = "pretrained", "random"


@dataclass
class PreprocessOptions:
    max_len: int = 60
    min_freq: int = 2
    singleton_policy: str = "unk"
    # comma-separated splits the max_len filter applies to; dev and test stay intact by default
    length_filter_splits: str = "train"

    @property
    def filtered_splits(self) -> set[str]:
        return {x.strip() for x in self.length_filter_splits.split(",") if x.strip()}


@dataclass
class ModelOptions:
    embed_dim: int = 300
    hidden_dim: int = 256
    attention_dim: int = 0          # 0 means "same as hidden_dim"
    dropout: float = 0.1
    init_range: float = 0.08
    embed_init_range: float = 0.1
    share_embeddings: bool = True
    random_frozen: bool = False


@dataclass
class TrainOptions:
    initial_lr: float = 0.0002
    decay_factor: float = 0.5
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 3
    burn_in: int = 0
    clip_norm: float = 5.0          # 0 disables clipping
    shuffle: str = "bucketed"
    use_dev: bool = True
    dev_beam: int = 1
    dev_smoothing: str = "add-one"


@dataclass
class SearchOptions:
    beam_size: int = 5
    max_len: int = 70
    length_norm: str = "none"


@dataclass
class EvalOptions:
    smoothing: str = "add-one"


SECTIONS = {
    "preprocess": PreprocessOptions,
    "model": ModelOptions,
    "train": TrainOptions,
    "search": SearchOptions,
    "eval": EvalOptions,
}


def _pairs(text: str) -> list[tuple[str, str]]:
    out = []
    for item in text.replace("\n", ",").split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split("-")
        if len(parts) != 2 or not all(parts):
            raise ConfigurationError(f"language pair {item!r} is not of the form aa-bb")
        out.append((parts[0], parts[1]))
    return out


def _convert(value: str, typ, where: str):
    try:
        if typ in (bool, "bool"):
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if typ in (int, "int"):
            return int(value)
        if typ in (float, "float"):
            return float(value)
        return value.strip()
    except ValueError:
        raise ConfigurationError(f"{where}: cannot read {value!r} as {getattr(typ, '__name__', typ)}") from None


@dataclass
class ExperimentConfig:
    data_dir: Path
    train_pairs: list[tuple[str, str]]
    test_pairs: list[tuple[str, str]] = field(default_factory=list)
    embeddings: dict[str, Path] = field(default_factory=dict)
    name: str = "experiment"
    seed: int = 0
    embedding_mode: str = PRETRAINED_MODE
    vocab_mode: str = SHARED_FORM
    preprocess: PreprocessOptions = field(default_factory=PreprocessOptions)
    model: ModelOptions = field(default_factory=ModelOptions)
    train: TrainOptions = field(default_factory=TrainOptions)
    search: SearchOptions = field(default_factory=SearchOptions)
    eval: EvalOptions = field(default_factory=EvalOptions)

    @property
    def train_languages(self) -> list[str]:
        return sorted({lang for pair in self.train_pairs for lang in pair})

    @property
    def test_languages(self) -> list[str]:
        train = set(self.train_languages)
        return sorted({lang for pair in self.test_pairs for lang in pair} - train)

    @property
    def languages(self) -> list[str]:
        return self.train_languages + self.test_languages

    def validate(self, check_files: bool = True) -> "ExperimentConfig":
        if not self.train_pairs:
            raise ConfigurationError("no training pairs configured")
        if self.embedding_mode not in (PRETRAINED_MODE, RANDOM_MODE):
            raise ConfigurationError(f"embedding_mode must be pretrained or random, not {self.embedding_mode!r}")
        if not self.preprocess.filtered_splits <= {"train", "dev", "test"}:
            raise ConfigurationError(f"length_filter_splits may only name train, dev and test, "
                                     f"not {self.preprocess.length_filter_splits!r}")
        if self.vocab_mode not in (SHARED_FORM, LANGUAGE_ORIGIN):
            raise ConfigurationError(f"vocab_mode must be shared-form or language-origin, not {self.vocab_mode!r}")
        for a, b in self.test_pairs:
            if a in self.train_languages and b in self.train_languages:
                raise ConfigurationError(f"test pair {a}-{b} has no unseen language")
        if self.embedding_mode == PRETRAINED_MODE:
            missing = [lang for lang in self.languages if lang not in self.embeddings]
            if missing:
                raise ConfigurationError(f"no embedding file for {', '.join(missing)}")
        if check_files:
            for lang, path in self.embeddings.items():
                if not Path(path).is_file():
                    raise FileNotFoundError(f"embedding file for {lang} not found: {path}")
            if not Path(self.data_dir).is_dir():
                raise FileNotFoundError(f"data directory not found: {self.data_dir}")
        return self

    # ------------------------------------------------------------ ini i/o

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["experiment"] = {
            "name": self.name,
            "seed": str(self.seed),
            "data_dir": str(self.data_dir),
            "train_pairs": ", ".join(f"{a}-{b}" for a, b in self.train_pairs),
            "test_pairs": ", ".join(f"{a}-{b}" for a, b in self.test_pairs),
            "embedding_mode": self.embedding_mode,
            "vocab_mode": self.vocab_mode,
        }
        cp["embeddings"] = {lang: str(p) for lang, p in sorted(self.embeddings.items())}
        for section in SECTIONS:
            obj = getattr(self, section)
            cp[section] = {f.name: _fmt(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["data_dir"] = str(self.data_dir)
        d["embeddings"] = {k: str(v) for k, v in sorted(self.embeddings.items())}
        d["train_pairs"] = [f"{a}-{b}" for a, b in self.train_pairs]
        d["test_pairs"] = [f"{a}-{b}" for a, b in self.test_pairs]
        return d


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


_EXPERIMENT_KEYS = {"name": str, "seed": int, "data_dir": str, "train_pairs": str, "test_pairs": str,
                    "embedding_mode": str, "vocab_mode": str}


def parse_config(text: str, base_dir=".", overrides: Iterable[str] = ()) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, option = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigurationError(f"override {item!r} is not section.key=value")
        if not cp.has_section(section):
            cp.add_section(section)
        cp[section][option] = value
    base = Path(base_dir)
    resolve = lambda p: Path(p) if Path(p).is_absolute() else base / p

    unknown = set(cp.sections()) - set(SECTIONS) - {"experiment", "embeddings"}
    if unknown:
        raise ConfigurationError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    if not cp.has_section("experiment"):
        raise ConfigurationError("config needs an [experiment] section")
    exp = cp["experiment"]
    bad = set(exp) - set(_EXPERIMENT_KEYS)
    if bad:
        raise ConfigurationError(f"unknown key(s) in [experiment]: {', '.join(sorted(bad))}")
    if "data_dir" not in exp or "train_pairs" not in exp:
        raise ConfigurationError("[experiment] needs data_dir and train_pairs")
    kwargs = dict(
        data_dir=resolve(exp["data_dir"]),
        train_pairs=_pairs(exp["train_pairs"]),
        test_pairs=_pairs(exp.get("test_pairs", "")),
        embeddings={lang: resolve(p) for lang, p in cp["embeddings"].items()} if cp.has_section("embeddings") else {},
        name=exp.get("name", "experiment").strip(),
        seed=_convert(exp.get("seed", "0"), int, "experiment.seed"),
        embedding_mode=exp.get("embedding_mode", PRETRAINED_MODE).strip(),
        vocab_mode=exp.get("vocab_mode", SHARED_FORM).strip(),
    )
    for section, cls in SECTIONS.items():
        values = {}
        if cp.has_section(section):
            types = {f.name: f.type for f in dataclasses.fields(cls)}
            for key, raw in cp[section].items():
                if key not in types:
                    raise ConfigurationError(f"unknown key {section}.{key}")
                values[key] = _convert(raw, types[key], f"{section}.{key}")
        kwargs[section] = cls(**values)
    return ExperimentConfig(**kwargs)


def load_config(path, overrides: Iterable[str] = (), check_files: bool = True) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path.parent, overrides).validate(check_files)
