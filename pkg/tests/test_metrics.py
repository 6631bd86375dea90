import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import oracle_bleu, oracle_gleu, random_corpus
from styleshift.metrics import (
    AlignmentError,
    EvalInstance,
    MetricsReport,
    bleu,
    evaluate_report,
    g_score,
    gleu,
    style_accuracy,
)


def toks(s):
    return s.split()


def inst(hyp, refs, src=None):
    if isinstance(refs, str):
        refs = [refs]
    return EvalInstance.of(toks(hyp), [toks(r) for r in refs], None if src is None else toks(src))


class TestBleu:
    def test_identical(self):
        assert bleu([inst("a b c d e", "a b c d e")]) == pytest.approx(100.0)

    def test_brevity_example(self):
        assert bleu([inst("a b c d", "a b c d e")]) == pytest.approx(77.88, abs=0.01)

    def test_no_overlap(self):
        assert bleu([inst("x y z w", "a b c d")]) < 1e-5

    def test_empty_hypothesis(self):
        assert bleu([EvalInstance.of([], [["a"]])]) == 0.0

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            bleu([])

    def test_multi_reference_clipping(self):
        # "the" appears twice in the second reference, so two matches are allowed
        one = bleu([inst("the the cat", ["the cat", "the the dog"])])
        assert one == pytest.approx(oracle_bleu([(toks("the the cat"), [toks("the cat"), toks("the the dog")])]), abs=1e-9)

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_oracle(self, seed):
        corpus = random_corpus(random.Random(seed), max_refs=3)
        got = bleu([EvalInstance.of(h, refs) for h, refs in corpus])
        assert got == pytest.approx(oracle_bleu(corpus), abs=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6))
    def test_permutation_and_duplication_invariant(self, seed):
        rng = random.Random(seed)
        insts = [EvalInstance.of(h, refs) for h, refs in random_corpus(rng)]
        base = bleu(insts)
        shuffled = list(insts)
        rng.shuffle(shuffled)
        assert bleu(shuffled) == pytest.approx(base, abs=1e-9)
        assert bleu(insts + insts) == pytest.approx(base, abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.sampled_from("abc"), min_size=1, max_size=5), st.lists(st.sampled_from("abc"), min_size=1, max_size=5))
    def test_hundred_iff_identical(self, h, r):
        score = bleu([EvalInstance.of(h, [r])])
        assert (abs(score - 100.0) < 1e-9) == (h == r)


class TestGleu:
    def test_identity_triple(self):
        assert gleu([inst("a b c d", "a b c d", "a b c d")]) == pytest.approx(100.0)

    def test_copying_source_with_no_reference_overlap(self):
        assert gleu([inst("x y z w", "a b c d", "x y z w")]) == 0.0

    def test_perfect_rewrite(self):
        assert gleu([inst("a b c d", "a b c d", "x b c d")]) == pytest.approx(100.0)

    def test_retained_source_penalised(self):
        good = gleu([inst("a b c d e", "a b c d e", "a b c d x")])
        lazy = gleu([inst("a b c d x", "a b c d e", "a b c d x")])
        assert lazy < good

    def test_missing_source(self):
        with pytest.raises(ValueError, match="source"):
            gleu([inst("a", "a")])

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_oracle(self, seed):
        corpus = random_corpus(random.Random(1000 + seed), with_source=True)
        got = gleu([EvalInstance.of(h, refs, s) for s, h, refs in corpus])
        assert got == pytest.approx(oracle_gleu(corpus), abs=1e-9)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_oracle_multi_reference(self, seed):
        corpus = random_corpus(random.Random(2000 + seed), with_source=True, max_refs=3)
        got = gleu([EvalInstance.of(h, refs, s) for s, h, refs in corpus])
        assert got == pytest.approx(oracle_gleu(corpus), abs=1e-9)

    def test_duplication_invariant(self):
        insts = [EvalInstance.of(h, refs, s) for s, h, refs in random_corpus(random.Random(5), with_source=True)]
        assert gleu(insts + insts) == pytest.approx(gleu(insts), abs=1e-9)


class TestGScore:
    @pytest.mark.parametrize("acc, b, expected", [
        (73.7, 8.12, 24.46), (8.7, 19.50, 13.02), (81.7, 21.05, 41.47), (3.00, 29.64, 9.43), (50, 50, 50.00),
    ])
    def test_table(self, acc, b, expected):
        assert f"{g_score(acc, b):.2f}" == f"{expected:.2f}"

    @given(st.floats(0, 100), st.floats(0, 100))
    def test_symmetric(self, a, b):
        assert g_score(a, b) == g_score(b, a)

    def test_negative(self):
        with pytest.raises(ValueError):
            g_score(-1.0, 10.0)


class FixedClassifier:
    def __init__(self, label):
        self.label = label

    def predict(self, seqs):
        return [self.label for _ in seqs]


class TestStyleAccuracy:
    def test_all_and_none(self):
        hyps = [["a"], ["b"]]
        assert style_accuracy(hyps, FixedClassifier("formal"), "formal") == 100.0
        assert style_accuracy(hyps, FixedClassifier("informal"), "formal") == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            style_accuracy([], FixedClassifier("formal"), "formal")

    def test_trained_classifier_on_gold_targets(self):
        from styleshift import toy
        from styleshift.config import RunConfig
        from styleshift.train import train_classifier

        corpus = toy.generate(seed=0)
        cfg = RunConfig(clf_embed_dim=16, filters_per_size=8, clf_max_steps=150, clf_lr=3e-3, min_freq=1, seed=3)
        clf = train_classifier(corpus.labeled, cfg).classifier
        gold = [list(p.formal) for p in corpus.test_pairs]
        assert style_accuracy(gold, clf, "formal") >= 99.0


class TestReport:
    def write(self, path, lines):
        path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")
        return path

    def test_identical_files(self, tmp_path):
        lines = ["a b c d", "e f g h i"]
        hyp = self.write(tmp_path / "h.txt", lines)
        src = self.write(tmp_path / "s.txt", ["a b x d", "e f g h z"])
        r = evaluate_report(hyp, hyp, src)
        assert r.bleu == pytest.approx(100.0) and r.gleu == pytest.approx(100.0)

    def test_g_score_consistency(self, tmp_path):
        hyp = self.write(tmp_path / "h.txt", ["a b c d", "x y"])
        ref = self.write(tmp_path / "r.txt", ["a b c d e", "x y"])
        r = evaluate_report(hyp, ref, classifier=FixedClassifier("formal"), target_style="formal")
        assert r.gleu is None
        assert r.g_score == pytest.approx((r.accuracy * r.bleu) ** 0.5)
        assert "gleu" not in r.to_record() and f"bleu={r.bleu:.2f}" in r.to_record()
        assert json.loads(r.to_json())["counts"] == {"n": 2}

    def test_line_mismatch(self, tmp_path):
        hyp = self.write(tmp_path / "h.txt", ["a"] * 100)
        ref = self.write(tmp_path / "r.txt", ["a"] * 99)
        with pytest.raises(AlignmentError, match=r"100.*99"):
            evaluate_report(hyp, ref)

    def test_table_format(self):
        text = MetricsReport(bleu=12.345, accuracy=50.0, g_score=24.84).to_table()
        assert "BLEU" in text and "12.35" in text and "G-score" in text
