"""Tokenisation, vocabulary, corpus files, pseudo-labelling and batching."""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
SPECIALS = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = range(4)

MASK64 = (1 << 64) - 1


class CorpusFormatError(ValueError):
    pass


def direction_token(style: str) -> str:
    return f"<to_{style}>"


@dataclass(frozen=True)
class StyledSentence:
    tokens: tuple
    label: str


@dataclass(frozen=True)
class ParallelPair:
    """An aligned pair; ``informal`` is the first style column, ``formal`` the second."""

    informal: tuple
    formal: tuple


@dataclass
class CorpusStats:
    counts: dict

    @staticmethod
    def gyafc() -> "CorpusStats":
        # train/validate/test sizes of the two GYAFC domains
        return CorpusStats({
            "E&M": {"train": 52595, "valid": 2877, "test": 1416},
            "F&R": {"train": 51967, "valid": 2788, "test": 1332},
        })


def tokenize(text: str) -> list[str]:
    return unicodedata.normalize("NFC", text).split()


def detokenize(tokens: Iterable[str]) -> str:
    return " ".join(tokens)


class Vocabulary:
    """Bidirectional token/id map.

    Reserved ids come first in a fixed order: ``<pad> <unk> <bos> <eos>`` followed by one
    direction token per style in the configured style order.
    """

    def __init__(self, styles: Sequence[str], tokens: Sequence[str] = ()):
        self.styles = tuple(styles)
        self.itos: list[str] = list(SPECIALS) + [direction_token(s) for s in self.styles]
        self.num_reserved = len(self.itos)
        self.itos.extend(t for t in tokens if t not in self.itos)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos and self.styles == other.styles

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def direction_id(self, style: str) -> int:
        try:
            return self.stoi[direction_token(style)]
        except KeyError:
            raise KeyError(f"unknown style {style!r}; configured styles are {self.styles}") from None

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS_ID:
                break
            if strip and i in (PAD_ID, BOS_ID):
                continue
            out.append(self.itos[i] if 0 <= i < len(self.itos) else UNK)
        return out

    def to_dict(self) -> dict:
        return {"styles": list(self.styles), "tokens": self.itos[self.num_reserved:]}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(d["styles"], d["tokens"])


def build_vocab(
    corpora: Iterable[Iterable[str]],
    styles: Sequence[str],
    min_freq: int = 2,
    max_size: int = 20000,
) -> Vocabulary:
    """Frequency-ranked vocabulary (ties lexicographic); ``max_size`` counts non-reserved tokens."""
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts = Counter()
    for sent in corpora:
        counts.update(sent)
    reserved = set(SPECIALS) | {direction_token(s) for s in styles}
    ranked = sorted((t for t, c in counts.items() if c >= min_freq and t not in reserved),
                    key=lambda t: (-counts[t], t))
    return Vocabulary(styles, ranked[: max(0, max_size)])


def _read_lines(path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    return text.split("\n")[:-1] if text.endswith("\n") else (text.split("\n") if text else [])


def load_parallel(path) -> list[ParallelPair]:
    pairs = []
    for n, line in enumerate(_read_lines(path), 1):
        fields = line.rstrip("\r").split("\t")
        if len(fields) != 2:
            raise CorpusFormatError(f"{path}:{n}: expected 2 tab-separated fields, got {len(fields)}")
        src, tgt = tokenize(fields[0]), tokenize(fields[1])
        if not src or not tgt:
            raise CorpusFormatError(f"{path}:{n}: empty side in parallel pair")
        pairs.append(ParallelPair(tuple(src), tuple(tgt)))
    return pairs


def load_labeled(path, styles: Sequence[str] | None = None) -> list[StyledSentence]:
    out = []
    for n, line in enumerate(_read_lines(path), 1):
        fields = line.rstrip("\r").split("\t")
        if len(fields) != 2:
            raise CorpusFormatError(f"{path}:{n}: expected 2 tab-separated fields, got {len(fields)}")
        label = fields[0].strip()
        if styles is not None and label not in styles:
            raise CorpusFormatError(f"{path}:{n}: label {label!r} not in configured styles {tuple(styles)}")
        out.append(StyledSentence(tuple(tokenize(fields[1])), label))
    return out


def load_unlabeled(path) -> list[list[str]]:
    return [tokenize(line.rstrip("\r")) for line in _read_lines(path)]


def write_labeled(sentences: Iterable[StyledSentence]) -> str:
    return "".join(f"{s.label}\t{detokenize(s.tokens)}\n" for s in sentences)


def pseudo_label_extend(unlabeled_sentences, classifier, threshold: float = 0.995) -> list[StyledSentence]:
    """Keep sentences whose top class probability is strictly above ``threshold``.

    ``classifier`` needs ``predict_proba(sentences) -> (N, C)`` and a ``styles`` tuple
    naming the classes.
    """
    sentences = [tuple(s) for s in unlabeled_sentences]
    if not sentences:
        return []
    probs = np.asarray(classifier.predict_proba(sentences))
    best = probs.argmax(axis=1)
    conf = probs[np.arange(len(sentences)), best]
    return [
        StyledSentence(s, classifier.styles[int(b)])
        for s, b, c in zip(sentences, best, conf)
        if c > threshold
    ]


# ---------------------------------------------------------------- randomness and batching


class SplitMix64:
    """SplitMix64 generator; used for every data-order decision so runs replay exactly."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        # rejection sampling keeps the draw unbiased
        limit = MASK64 - (MASK64 + 1) % n
        while True:
            r = self.next()
            if r <= limit:
                return r % n

    def shuffle(self, items: list) -> list:
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items


def balanced_epoch(sentences: Sequence[StyledSentence], rng: SplitMix64) -> list[StyledSentence]:
    """Uniformly down-sample every class to the minority class size."""
    by_label: dict[str, list] = {}
    for s in sentences:
        by_label.setdefault(s.label, []).append(s)
    if len(by_label) < 2:
        return list(sentences)
    n = min(len(v) for v in by_label.values())
    out = []
    for label in sorted(by_label):
        out.extend(rng.shuffle(list(by_label[label]))[:n])
    return out


def make_batches(data: Sequence, batch_size: int, seed: int = 0, shuffle: bool = True) -> Iterator[list]:
    """Yield lists of items; deterministic for a given seed."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = list(range(len(data)))
    if shuffle:
        SplitMix64(seed).shuffle(order)
    for i in range(0, len(order), batch_size):
        yield [data[j] for j in order[i : i + batch_size]]


def pad_batch(seqs: Sequence[Sequence[int]], min_len: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences with ``<pad>``; returns (ids, valid-mask)."""
    t = max([len(s) for s in seqs] + [min_len])
    ids = np.full((len(seqs), t), PAD_ID, dtype=np.int64)
    valid = np.zeros((len(seqs), t), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        valid[i, : len(s)] = True
    return ids, valid


def infinite_batches(data: Sequence, batch_size: int, seed: int, epoch_fn=None) -> Iterator[list]:
    """Endless stream of shuffled batches; ``epoch_fn(data, rng)`` may resample each epoch."""
    rng = SplitMix64(seed)
    while True:
        epoch = list(data) if epoch_fn is None else epoch_fn(data, rng)
        if not epoch:
            raise ValueError("cannot batch an empty corpus")
        rng.shuffle(epoch)
        for i in range(0, len(epoch), batch_size):
            yield epoch[i : i + batch_size]
