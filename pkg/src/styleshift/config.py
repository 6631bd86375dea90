"""Run configuration: flat ``key = value`` files with ``#`` comments plus overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable

from .model import ClassifierConfig, Seq2SeqConfig
from .objectives import LossWeights, TemperatureSchedule


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    styles: tuple = ("informal", "formal")
    # seq2seq
    embed_dim: int = 256
    ffn_dim: int = 1024
    layers: int = 2
    heads: int = 4
    max_len: int = 128
    dropout: float = 0.1
    # classifier
    clf_embed_dim: int = 128
    filter_sizes: tuple = (3, 4, 5)
    filters_per_size: int = 100
    clf_dropout: float = 0.5
    # objective
    w_t: float = 1.0
    w_c: float = 0.1
    w_sr: float = 0.5
    w_cr: float = 0.5
    tau_start: float = 1.0
    tau_end: float = 0.1
    tau_steps: int = 0  # 0 anneals over max_steps
    # optimisation
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-8
    batch_size: int = 32
    max_steps: int = 2000
    clf_lr: float = 1e-3
    clf_batch_size: int = 64
    clf_max_steps: int = 1000
    clf_holdout: float = 0.1
    seed: int = 0
    # data
    min_freq: int = 2
    max_vocab: int = 20000
    parallel_path: str = ""
    labeled_path: str = ""
    dev_path: str = ""
    classifier_path: str = ""
    out_dir: str = "."
    dev_every: int = 200
    threshold: float = 0.995
    # decoding
    beam_width: int = 5
    length_penalty: float = 1.0
    gec_cmd: str = ""

    def __post_init__(self):
        self.styles = tuple(self.styles)
        self.filter_sizes = tuple(int(k) for k in self.filter_sizes)
        if len(self.styles) != 2 or self.styles[0] == self.styles[1]:
            raise ConfigError(f"styles must name two distinct styles, got {self.styles}")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w_t, self.w_c, self.w_sr, self.w_cr)

    @property
    def schedule(self) -> TemperatureSchedule:
        return TemperatureSchedule(self.tau_start, self.tau_end, self.tau_steps or self.max_steps)

    def seq2seq_config(self, vocab_size: int) -> Seq2SeqConfig:
        return Seq2SeqConfig(vocab_size, self.embed_dim, self.ffn_dim, self.layers, self.heads, self.max_len, self.dropout)

    def classifier_config(self, vocab_size: int) -> ClassifierConfig:
        return ClassifierConfig(vocab_size, self.clf_embed_dim, self.filter_sizes, self.filters_per_size, self.clf_dropout, 2)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in dataclasses.asdict(self).items())

    def snapshot(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _format(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    default = _FIELDS[key].default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            return tuple(int(x) for x in items) if key == "filter_sizes" else tuple(items)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_pairs(lines: Iterable[str], source: str = "<overrides>") -> dict:
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, overrides: Iterable[str] = (), base: RunConfig | None = None) -> RunConfig:
    values = {}
    if path:
        values.update(parse_pairs(Path(path).read_text(encoding="utf-8").splitlines(), str(path)))
    values.update(parse_pairs(overrides))
    return dataclasses.replace(base or RunConfig(), **values)
