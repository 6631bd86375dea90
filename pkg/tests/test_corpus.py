from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import STYLES, tiny_seq2seq, tiny_vocab
from styleshift import corpus as C
from styleshift import objectives as O
from styleshift.corpus import ParallelPair, SplitMix64, StyledSentence, Vocabulary


class TestTokenize:
    def test_whitespace(self):
        assert C.tokenize("  hello   world \t!\n") == ["hello", "world", "!"]

    def test_nfc(self):
        assert C.tokenize("café") == ["café"]

    @given(st.lists(st.text(st.characters(blacklist_categories=("Z", "C")), min_size=1), max_size=8))
    def test_round_trip(self, tokens):
        tokens = [C.tokenize(t)[0] for t in tokens if C.tokenize(t)]
        assert C.tokenize(C.detokenize(tokens)) == tokens


class TestVocabulary:
    def test_reserved_layout(self):
        v = Vocabulary(STYLES, ["a"])
        assert v.itos[:6] == ["<pad>", "<unk>", "<bos>", "<eos>", "<to_informal>", "<to_formal>"]
        assert v.direction_id("formal") == 5
        assert v.encode(["a", "zzz"]) == [6, C.UNK_ID]

    def test_unknown_style(self):
        with pytest.raises(KeyError, match="casual"):
            tiny_vocab().direction_id("casual")

    def test_decode_strips(self):
        v = tiny_vocab()
        ids = [C.BOS_ID] + v.encode(["t0", "t1"]) + [C.EOS_ID] + v.encode(["t2"])
        assert v.decode(ids) == ["t0", "t1"]

    def test_build_min_freq_and_ranking(self):
        corpora = [["b", "a", "c"], ["a", "b"], ["a", "d"]]
        v = C.build_vocab(corpora, STYLES, min_freq=2)
        assert v.itos[v.num_reserved:] == ["a", "b"]
        v1 = C.build_vocab(corpora, STYLES, min_freq=1, max_size=3)
        assert v1.itos[v1.num_reserved:] == ["a", "b", "c"]

    def test_serialisation_stable(self):
        v = C.build_vocab([["x", "y", "y"]], STYLES, min_freq=1)
        assert Vocabulary.from_dict(v.to_dict()) == v


class TestLoaders:
    def test_parallel(self, tmp_path):
        p = tmp_path / "p.tsv"
        p.write_text("gonna go lol\twill go indeed\nhi\thello\n", encoding="utf-8")
        pairs = C.load_parallel(p)
        assert pairs == [ParallelPair(("gonna", "go", "lol"), ("will", "go", "indeed")), ParallelPair(("hi",), ("hello",))]

    def test_parallel_bad_line(self, tmp_path):
        p = tmp_path / "p.tsv"
        p.write_text("a\tb\nno tab here\n", encoding="utf-8")
        with pytest.raises(C.CorpusFormatError, match=r"p\.tsv:2"):
            C.load_parallel(p)

    def test_labeled_unknown_label(self, tmp_path):
        p = tmp_path / "l.tsv"
        p.write_text("formal\ta b\ncasual\tc\n", encoding="utf-8")
        with pytest.raises(C.CorpusFormatError, match=r":2: .*casual"):
            C.load_labeled(p, STYLES)

    def test_empty_files(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("", encoding="utf-8")
        assert C.load_parallel(p) == [] and C.load_labeled(p, STYLES) == [] and C.load_unlabeled(p) == []

    def test_labeled_round_trip(self, tmp_path):
        sents = [StyledSentence(("a", "b"), "formal"), StyledSentence(("c",), "informal")]
        p = tmp_path / "l.tsv"
        p.write_text(C.write_labeled(sents), encoding="utf-8")
        assert C.load_labeled(p, STYLES) == sents

    def test_gyafc_sizes(self):
        stats = C.CorpusStats.gyafc().counts
        assert stats["E&M"]["train"] == 52595 and stats["F&R"]["test"] == 1332


class StubClassifier:
    styles = STYLES

    def __init__(self, probs):
        self.probs = probs

    def predict_proba(self, sentences):
        return np.array([self.probs[" ".join(s)] for s in sentences])


class TestPseudoLabel:
    def test_threshold_is_strict(self):
        clf = StubClassifier({"a": [0.004, 0.996], "b": [0.995, 0.005]})
        kept = C.pseudo_label_extend([["a"], ["b"]], clf, 0.995)
        assert kept == [StyledSentence(("a",), "formal")]

    def test_zero_threshold_keeps_all(self):
        clf = StubClassifier({"a": [0.5, 0.5], "b": [0.7, 0.3]})
        kept = C.pseudo_label_extend([["a"], ["b"]], clf, 0.0)
        assert [s.label for s in kept] == ["informal", "informal"]

    def test_threshold_one_keeps_none(self):
        clf = StubClassifier({"a": [0.0, 1.0]})
        assert C.pseudo_label_extend([["a"]], clf, 1.0) == []

    def test_empty(self):
        assert C.pseudo_label_extend([], StubClassifier({}), 0.5) == []

    @given(st.lists(st.floats(0.0, 1.0), max_size=20), st.floats(0.0, 1.0))
    def test_subset_preserves_order(self, ps, threshold):
        probs = {f"s{i}": [1 - p, p] for i, p in enumerate(ps)}
        sents = [[f"s{i}"] for i in range(len(ps))]
        kept = C.pseudo_label_extend(sents, StubClassifier(probs), threshold)
        idx = [int(s.tokens[0][1:]) for s in kept]
        assert idx == sorted(idx)
        assert all(max(ps[i], 1 - ps[i]) > threshold for i in idx)


class TestSplitMix:
    def test_reference_values(self):
        rng = SplitMix64(0)
        assert rng.next() == 0xE220A8397B1DCDAF
        assert rng.next() == 0x6E789E6AA1B965F4

    def test_shuffle_is_permutation(self):
        items = list(range(50))
        out = SplitMix64(7).shuffle(list(items))
        assert sorted(out) == items and out != items

    def test_below_range(self):
        rng = SplitMix64(3)
        assert all(0 <= rng.below(7) < 7 for _ in range(200))


class TestBatching:
    def test_batch_sizes(self):
        assert [len(b) for b in C.make_batches(list(range(10)), 3, seed=0)] == [3, 3, 3, 1]

    def test_deterministic(self):
        a = list(C.make_batches(list(range(20)), 4, seed=9))
        b = list(C.make_batches(list(range(20)), 4, seed=9))
        assert a == b and a != list(C.make_batches(list(range(20)), 4, seed=10))

    def test_no_shuffle(self):
        assert list(C.make_batches([1, 2, 3], 2, shuffle=False)) == [[1, 2], [3]]

    def test_pad_batch(self):
        ids, valid = C.pad_batch([[5, 6, 7], [8]])
        np.testing.assert_array_equal(ids, [[5, 6, 7], [8, 0, 0]])
        np.testing.assert_array_equal(valid, [[1, 1, 1], [1, 0, 0]])

    def test_balanced_epoch(self):
        data = [StyledSentence((str(i),), "formal") for i in range(10)] + [StyledSentence(("x",), "informal")] * 3
        epoch = C.balanced_epoch(data, SplitMix64(0))
        assert Counter(s.label for s in epoch) == {"formal": 3, "informal": 3}

    def test_infinite_batches_cycles(self):
        it = C.infinite_batches([1, 2, 3], 2, seed=0)
        seen = [next(it) for _ in range(4)]
        assert sorted(seen[0] + seen[1]) == [1, 2, 3]

    def test_batched_loss_is_mean_of_singletons(self):
        model = tiny_seq2seq(10, seed=1)
        dirs = [4, 5]
        seqs, labels = [[6, 7, 8, 9], [6], [7, 8]], [0, 1, 0]
        batched = O.self_reconstruction_loss(model, O.EncodedStyled(seqs, labels), dirs).item()
        singles = [O.self_reconstruction_loss(model, O.EncodedStyled([s], [l]), dirs).item() for s, l in zip(seqs, labels)]
        assert batched == pytest.approx(np.mean(singles), abs=1e-5)
