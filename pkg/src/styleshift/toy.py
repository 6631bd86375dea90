"""Synthetic style-transfer corpora for desk-scale experiments.

Two styles share a pool of neutral content words. Each style also owns a 50-word
lexicon, and the two lexicons are related by a fixed random bijection; every
sentence ends with its style's marker token. Rewriting a sentence into the other
style maps each lexicon word through the bijection (or its inverse), keeps neutral
words in place and swaps the marker.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .corpus import ParallelPair, SplitMix64, StyledSentence, detokenize

STYLES = ("informal", "formal")
LEXICON_SIZE = 50
NEUTRAL_SIZE = 40
MARKERS = {"informal": "lol", "formal": "indeed"}


@dataclass
class ToyCorpus:
    train_pairs: list
    labeled: list
    dev_pairs: list
    test_pairs: list
    mapping: dict  # informal lexicon word -> formal lexicon word

    def cipher(self, tokens, target_style: str) -> tuple:
        """Gold rewrite of ``tokens`` into ``target_style``."""
        inverse = {v: k for k, v in self.mapping.items()}
        table = self.mapping if target_style == "formal" else inverse
        src_marker = MARKERS["informal" if target_style == "formal" else "formal"]
        out = []
        for t in tokens:
            if t == src_marker:
                out.append(MARKERS[target_style])
            else:
                out.append(table.get(t, t))
        return tuple(out)


def generate(
    seed: int = 0,
    n_train: int = 500,
    n_labeled: int = 2000,
    n_dev: int = 100,
    n_test: int = 100,
    min_len: int = 4,
    max_len: int = 8,
    lexicon_rate: float = 0.2,
) -> ToyCorpus:
    rng = SplitMix64(seed)
    informal_words = [f"i{k:02d}" for k in range(LEXICON_SIZE)]
    formal_words = rng.shuffle([f"F{k:02d}" for k in range(LEXICON_SIZE)])
    mapping = dict(zip(informal_words, formal_words))
    neutral = [f"w{k:02d}" for k in range(NEUTRAL_SIZE)]

    def informal_sentence() -> tuple:
        n = min_len + rng.below(max_len - min_len + 1)
        toks = []
        for _ in range(n):
            if rng.below(1 << 20) < lexicon_rate * (1 << 20):
                toks.append(informal_words[rng.below(LEXICON_SIZE)])
            else:
                toks.append(neutral[rng.below(NEUTRAL_SIZE)])
        return tuple(toks + [MARKERS["informal"]])

    corpus = ToyCorpus([], [], [], [], mapping)

    def pair() -> ParallelPair:
        x = informal_sentence()
        return ParallelPair(x, corpus.cipher(x, "formal"))

    corpus.train_pairs = [pair() for _ in range(n_train)]
    corpus.dev_pairs = [pair() for _ in range(n_dev)]
    corpus.test_pairs = [pair() for _ in range(n_test)]
    for i in range(n_labeled):
        x = informal_sentence()
        # fresh sentences, alternating styles so the labeled set is balanced
        corpus.labeled.append(StyledSentence(x, "informal") if i % 2 == 0 else StyledSentence(corpus.cipher(x, "formal"), "formal"))
    return corpus


def _pairs_tsv(pairs) -> str:
    return "".join(f"{detokenize(p.informal)}\t{detokenize(p.formal)}\n" for p in pairs)


def write(corpus: ToyCorpus, out_dir) -> dict:
    """Write the corpus files; returns name -> path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "train.parallel.tsv": _pairs_tsv(corpus.train_pairs),
        "dev.parallel.tsv": _pairs_tsv(corpus.dev_pairs),
        "test.parallel.tsv": _pairs_tsv(corpus.test_pairs),
        "labeled.tsv": "".join(f"{s.label}\t{detokenize(s.tokens)}\n" for s in corpus.labeled),
        "test.informal.txt": "".join(detokenize(p.informal) + "\n" for p in corpus.test_pairs),
        "test.formal.txt": "".join(detokenize(p.formal) + "\n" for p in corpus.test_pairs),
        "unlabeled.txt": "".join(detokenize(s.tokens) + "\n" for s in corpus.labeled),
    }
    paths = {}
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
        paths[name] = out / name
    return paths
