"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"STX1" | u32 format version | u64 metadata length | metadata (UTF-8 JSON) | parameters

The metadata holds the model kind, config snapshot, vocabulary, step count and the
ordered list of ``[path, shape]`` parameter records; the parameter section is every
array in that order as raw little-endian float32.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Vocabulary
from .model import (
    ClassifierConfig,
    CNNClassifier,
    ModelParams,
    Seq2Seq,
    Seq2SeqConfig,
    StyleClassifier,
    config_dict,
)
from .tensor import Tensor, default_dtype

MAGIC = b"STX1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str  # "seq2seq" or "classifier"
    model_config: dict
    vocab: Vocabulary
    params: dict  # name -> ndarray, in declared order
    step: int = 0
    extra: dict = field(default_factory=dict)


def to_bytes(ckpt: Checkpoint) -> bytes:
    meta = {
        "kind": ckpt.kind,
        "model_config": ckpt.model_config,
        "vocab": ckpt.vocab.to_dict(),
        "step": int(ckpt.step),
        "extra": ckpt.extra,
        "params_version": 1,
        "params": [[name, list(np.shape(arr))] for name, arr in ckpt.params.items()],
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(blob)), blob]
    parts += [np.ascontiguousarray(arr, dtype="<f4").tobytes() for arr in ckpt.params.values()]
    return b"".join(parts)


def from_bytes(data: bytes) -> Checkpoint:
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if len(data) < 16:
        raise CheckpointError("truncated checkpoint header")
    version, meta_len = struct.unpack("<IQ", data[4:16])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        meta = json.loads(data[16 : 16 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint metadata: {e}") from None
    offset = 16 + meta_len
    params = {}
    for name, shape in meta["params"]:
        n = int(np.prod(shape, dtype=np.int64))
        end = offset + 4 * n
        if end > len(data):
            raise CheckpointError(f"truncated checkpoint at parameter {name}")
        params[name] = np.frombuffer(data[offset:end], dtype="<f4").reshape(shape).copy()
        offset = end
    if offset != len(data):
        raise CheckpointError("trailing bytes after parameter section")
    return Checkpoint(meta["kind"], meta["model_config"], Vocabulary.from_dict(meta["vocab"]), params, meta["step"], meta.get("extra", {}))


def save(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


def load(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    return from_bytes(data)


def _params_from(arrays: dict) -> ModelParams:
    dt = default_dtype()
    return ModelParams((k, Tensor(v.astype(dt), requires_grad=True)) for k, v in arrays.items())


def seq2seq_checkpoint(model: Seq2Seq, vocab: Vocabulary, step: int = 0, extra: dict | None = None) -> Checkpoint:
    return Checkpoint("seq2seq", config_dict(model.config), vocab, model.params.arrays(), step, extra or {})


def classifier_checkpoint(model: CNNClassifier, vocab: Vocabulary, step: int = 0, extra: dict | None = None) -> Checkpoint:
    return Checkpoint("classifier", config_dict(model.config), vocab, model.params.arrays(), step, extra or {})


def build_seq2seq(ckpt: Checkpoint, seed: int = 0) -> Seq2Seq:
    if ckpt.kind != "seq2seq":
        raise CheckpointError(f"expected a seq2seq checkpoint, got {ckpt.kind!r}")
    return Seq2Seq(Seq2SeqConfig(**ckpt.model_config), _params_from(ckpt.params), seed=seed)


def build_classifier(ckpt: Checkpoint, seed: int = 0) -> CNNClassifier:
    if ckpt.kind != "classifier":
        raise CheckpointError(f"expected a classifier checkpoint, got {ckpt.kind!r}")
    return CNNClassifier(ClassifierConfig(**ckpt.model_config), _params_from(ckpt.params), seed=seed)


def load_seq2seq(path, seed: int = 0) -> tuple[Seq2Seq, Vocabulary, Checkpoint]:
    ckpt = load(path)
    return build_seq2seq(ckpt, seed), ckpt.vocab, ckpt


def load_classifier(path) -> StyleClassifier:
    ckpt = load(path)
    return StyleClassifier(build_classifier(ckpt), ckpt.vocab)
