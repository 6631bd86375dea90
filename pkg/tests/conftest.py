import numpy as np
import pytest

from styleshift import tensor as T
from styleshift.corpus import Vocabulary
from styleshift.model import ClassifierConfig, CNNClassifier, Seq2Seq, Seq2SeqConfig

STYLES = ("informal", "formal")


def tiny_vocab(n_words: int = 4) -> Vocabulary:
    return Vocabulary(STYLES, [f"t{i}" for i in range(n_words)])


def tiny_seq2seq(vocab_size: int = 10, seed: int = 0, dropout: float = 0.0, dim: int = 8, layers: int = 2) -> Seq2Seq:
    with T.precision(np.float64):
        return Seq2Seq(Seq2SeqConfig(vocab_size, embed_dim=dim, ffn_dim=2 * dim, layers=layers, heads=2, max_len=24, dropout=dropout), seed=seed)


def tiny_classifier(vocab_size: int = 10, seed: int = 1) -> CNNClassifier:
    with T.precision(np.float64):
        return CNNClassifier(ClassifierConfig(vocab_size, embed_dim=6, filter_sizes=(2, 3), filters_per_size=4, dropout=0.5), seed=seed)


@pytest.fixture
def f64():
    with T.precision(np.float64):
        yield


@pytest.fixture
def vocab():
    return tiny_vocab()


# one "PASS/FAIL criterion N: ..." line per acceptance criterion, echoed in the run summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
