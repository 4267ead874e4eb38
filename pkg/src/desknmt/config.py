"""Key-value configuration files.

One ``key = value`` per line; ``#`` starts a comment. Keys are dotted by
section:

``model.*``
    ``num_layers``, ``d_model``, ``num_heads``, ``d_ff``, ``max_len``,
    ``dropout_rate``, ``ln_eps``. Vocabulary sizes come from the tokenizers.
``train.*``
    every ``TrainConfig`` field.
``tokenizer.*``
    ``word_vocab_size``, ``num_merges``, ``subword_vocab_size`` (0 = no cap).
``batch.*``
    ``scale``, ``increments`` (comma-separated synthetic quotas), ``shuffle``.
``experiment.*``
    ``seed``, ``precision`` (f32/f64), ``split_side`` (source/target/both),
    ``tokenizations`` (comma-separated), ``levels`` (comma-separated),
    ``decode_batch_size``.
``reverse.model.*`` / ``reverse.train.*``
    overrides for the target-to-source model used by back-translation.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Mapping

from .errors import ConfigError
from .trainer import TrainConfig
from .transformer import ModelConfig

DEFAULT_INCREMENTS = (500_000, 1_000_000, 1_000_000, 500_000)
MODEL_KEYS = ("num_layers", "d_model", "num_heads", "d_ff", "max_len", "dropout_rate", "ln_eps")


@dataclass(frozen=True)
class TokenizerSettings:
    word_vocab_size: int = 50_000
    num_merges: int = 50_000
    subword_vocab_size: int = 0


@dataclass(frozen=True)
class BatchSettings:
    scale: float = 1e-3
    increments: tuple[int, ...] = DEFAULT_INCREMENTS
    shuffle: bool = True


@dataclass(frozen=True)
class ExperimentSettings:
    seed: int = 0
    precision: str = "f64"
    split_side: str = "source"
    tokenizations: tuple[str, ...] = ("word", "subword")
    levels: tuple[int, ...] = (0, 1, 2, 3, 4)
    decode_batch_size: int = 32


@dataclass(frozen=True)
class ToolkitConfig:
    model: Mapping[str, Any] = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    tokenizer: TokenizerSettings = field(default_factory=TokenizerSettings)
    batch: BatchSettings = field(default_factory=BatchSettings)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    reverse_model: Mapping[str, Any] = field(default_factory=dict)
    reverse_train: Mapping[str, Any] = field(default_factory=dict)

    def model_config(self, src_vocab: int, tgt_vocab: int, reverse: bool = False) -> ModelConfig:
        kw = dict(self.model)
        if reverse:
            kw.update(self.reverse_model)
        return ModelConfig(src_vocab_size=src_vocab, tgt_vocab_size=tgt_vocab, **kw)

    def train_config(self, reverse: bool = False) -> TrainConfig:
        cfg = self.train.replace(seed=self.experiment.seed)
        if reverse and self.reverse_train:
            cfg = cfg.replace(**self.reverse_train)
        return cfg

    def with_overrides(self, scale: float | None = None, seed: int | None = None,
                       precision: str | None = None) -> "ToolkitConfig":
        cfg = self
        if scale is not None:
            cfg = dataclasses.replace(cfg, batch=dataclasses.replace(cfg.batch, scale=scale))
        exp = {}
        if seed is not None:
            exp["seed"] = seed
        if precision is not None:
            exp["precision"] = precision
        if exp:
            cfg = dataclasses.replace(cfg, experiment=dataclasses.replace(cfg.experiment, **exp))
        cfg.check()
        return cfg

    def check(self) -> None:
        if self.batch.scale <= 0:
            raise ConfigError("batch.scale must be positive")
        if any(i < 0 for i in self.batch.increments):
            raise ConfigError("batch.increments must be non-negative")
        if self.experiment.precision not in ("f32", "f64"):
            raise ConfigError("experiment.precision must be f32 or f64")
        if self.experiment.split_side not in ("source", "target", "both"):
            raise ConfigError("experiment.split_side must be source, target or both")
        bad = set(self.experiment.tokenizations) - {"word", "subword"}
        if bad:
            raise ConfigError(f"unknown tokenizations: {sorted(bad)}")
        if any(not 0 <= lv <= len(self.batch.increments) for lv in self.experiment.levels):
            raise ConfigError(f"levels must lie in 0..{len(self.batch.increments)}")
        self.model_config(5, 5)
        self.model_config(5, 5, reverse=True)
        self.train_config(reverse=True)


def _coerce(raw: str, proto: Any, key: str) -> Any:
    try:
        if isinstance(proto, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(proto, int):
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if isinstance(proto, float):
            return float(raw)
        if isinstance(proto, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if proto and isinstance(proto[0], int):
                return tuple(int(float(x)) for x in items)
            return tuple(items)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


_MODEL_PROTO = {k: getattr(ModelConfig(5, 5), k) for k in MODEL_KEYS}


def parse_config(text: str, origin: str = "<config>") -> ToolkitConfig:
    """Parse config text; unknown keys and malformed lines raise ``ConfigError``."""
    sections: dict[str, dict[str, Any]] = {
        "model": {}, "train": {}, "tokenizer": {}, "batch": {}, "experiment": {},
        "reverse.model": {}, "reverse.train": {},
    }
    protos = {
        "model": _MODEL_PROTO,
        "reverse.model": _MODEL_PROTO,
        "train": TrainConfig().to_dict(),
        "reverse.train": TrainConfig().to_dict(),
        "tokenizer": dataclasses.asdict(TokenizerSettings()),
        "batch": dataclasses.asdict(BatchSettings()),
        "experiment": dataclasses.asdict(ExperimentSettings()),
    }
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{origin}:{n}: expected 'key = value'")
        section, _, name = key.rpartition(".")
        if section not in protos or name not in protos[section]:
            raise ConfigError(f"{origin}:{n}: unknown key {key!r}")
        sections[section][name] = _coerce(value, protos[section][name], key)
    try:
        cfg = ToolkitConfig(
            model=sections["model"],
            train=TrainConfig(**sections["train"]),
            tokenizer=TokenizerSettings(**sections["tokenizer"]),
            batch=BatchSettings(**sections["batch"]),
            experiment=ExperimentSettings(**sections["experiment"]),
            reverse_model=sections["reverse.model"],
            reverse_train=sections["reverse.train"],
        )
    except TypeError as e:
        raise ConfigError(f"{origin}: {e}") from None
    cfg.check()
    return cfg


def load_config(path) -> ToolkitConfig:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return parse_config(text, str(path))


def dump_config(cfg: ToolkitConfig) -> str:
    """Render ``cfg`` in the same format ``parse_config`` reads."""

    def fmt(v):
        if isinstance(v, tuple):
            return ",".join(str(x) for x in v)
        return repr(v) if isinstance(v, float) else str(v)

    out = []
    for k, v in cfg.model.items():
        out.append(f"model.{k} = {fmt(v)}")
    for k, v in cfg.train.to_dict().items():
        out.append(f"train.{k} = {fmt(v)}")
    for sec, obj in (("tokenizer", cfg.tokenizer), ("batch", cfg.batch), ("experiment", cfg.experiment)):
        for k, v in dataclasses.asdict(obj).items():
            out.append(f"{sec}.{k} = {fmt(v)}")
    for k, v in cfg.reverse_model.items():
        out.append(f"reverse.model.{k} = {fmt(v)}")
    for k, v in cfg.reverse_train.items():
        out.append(f"reverse.train.{k} = {fmt(v)}")
    return "\n".join(out) + "\n"
