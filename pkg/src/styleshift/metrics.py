"""Rewrite-quality metrics: corpus BLEU, source-aware GLEU, style accuracy and G-score."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import tokenize

MAX_ORDER = 4
ZERO_MATCH_EPS = 1e-9


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class EvalInstance:
    source: tuple | None
    hypothesis: tuple
    references: tuple  # of token tuples

    def __post_init__(self):
        if not self.references:
            raise ValueError("EvalInstance needs at least one reference")

    @classmethod
    def of(cls, hypothesis, references, source=None) -> "EvalInstance":
        if references and isinstance(references[0], str):
            references = [references]
        return cls(
            None if source is None else tuple(source),
            tuple(hypothesis),
            tuple(tuple(r) for r in references),
        )


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_len(hyp_len: int, refs) -> int:
    return min((abs(len(r) - hyp_len), len(r)) for r in refs)[1]


def bleu_stats(instance: EvalInstance) -> list[float]:
    """[hyp_len, ref_len, matches_1, total_1, ..., matches_4, total_4] for one instance."""
    hyp = instance.hypothesis
    stats = [len(hyp), _closest_ref_len(len(hyp), instance.references)]
    for n in range(1, MAX_ORDER + 1):
        h = ngram_counts(hyp, n)
        best: Counter = Counter()
        for ref in instance.references:
            best |= ngram_counts(ref, n)
        stats.append(sum((h & best).values()))
        stats.append(max(len(hyp) - n + 1, 0))
    return stats


def bleu_from_stats(stats: Sequence[float]) -> float:
    """Corpus BLEU-4 on [0, 100].

    Zero precisions are floored at 1e-9 (on the ratio, so duplicating the corpus
    leaves the score unchanged); orders with no hypothesis n-grams at all
    (every hypothesis shorter than n) are left out of the geometric mean.
    """
    c, r = stats[0], stats[1]
    if c == 0:
        return 0.0
    logs = []
    for m, t in zip(stats[2::2], stats[3::2]):
        if t == 0:
            continue
        logs.append(math.log(max(m / t, ZERO_MATCH_EPS)))
    if not logs:
        return 0.0
    bp = min(0.0, 1.0 - r / c)
    return 100.0 * math.exp(bp + sum(logs) / len(logs))


def bleu(instances: Sequence[EvalInstance]) -> float:
    if not instances:
        raise ValueError("bleu: no instances")
    totals = [0.0] * (2 + 2 * MAX_ORDER)
    for inst in instances:
        totals = [a + b for a, b in zip(totals, bleu_stats(inst))]
    return bleu_from_stats(totals)


def gleu_stats(instance: EvalInstance, ref_index: int = 0) -> list[float]:
    """Sufficient statistics of source-penalised GLEU against one reference.

    Per order n the numerator is ``|H & R| - |H & (S \\ R)|`` (clipped at 0), where
    ``S \\ R`` keeps source n-grams whose type never occurs in the reference.
    """
    if instance.source is None:
        raise ValueError("gleu: source sentence missing")
    hyp, src = instance.hypothesis, instance.source
    ref = instance.references[ref_index % len(instance.references)]
    stats = [len(hyp), len(ref)]
    for n in range(1, MAX_ORDER + 1):
        h = ngram_counts(hyp, n)
        r = ngram_counts(ref, n)
        s_only = Counter({g: c for g, c in ngram_counts(src, n).items() if g not in r})
        stats.append(max(sum((h & r).values()) - sum((h & s_only).values()), 0))
        stats.append(max(len(hyp) + 1 - n, 0))
    return stats


def gleu_from_stats(stats: Sequence[float]) -> float:
    if any(s == 0 for s in stats):
        return 0.0
    c, r = stats[0], stats[1]
    log_prec = sum(math.log(m / t) for m, t in zip(stats[2::2], stats[3::2])) / MAX_ORDER
    return 100.0 * math.exp(min(0.0, 1.0 - r / c) + log_prec)


def gleu(instances: Sequence[EvalInstance]) -> float:
    """Corpus GLEU on [0, 100].

    With several references, the corpus score is computed once per reference index
    (instance ``i`` uses reference ``j mod len(refs_i)``) and the scores are averaged.
    """
    if not instances:
        raise ValueError("gleu: no instances")
    rounds = max(len(inst.references) for inst in instances)
    scores = []
    for j in range(rounds):
        totals = [0.0] * (2 + 2 * MAX_ORDER)
        for inst in instances:
            totals = [a + b for a, b in zip(totals, gleu_stats(inst, j))]
        scores.append(gleu_from_stats(totals))
    return sum(scores) / len(scores)


def style_accuracy(hypotheses: Sequence[Sequence[str]], classifier, target_styles) -> float:
    """Percentage of hypotheses the classifier assigns to their target style."""
    if not hypotheses:
        raise ValueError("style_accuracy: no hypotheses")
    if isinstance(target_styles, str):
        target_styles = [target_styles] * len(hypotheses)
    if len(target_styles) != len(hypotheses):
        raise AlignmentError(f"{len(hypotheses)} hypotheses but {len(target_styles)} target styles")
    predicted = classifier.predict([list(h) for h in hypotheses])
    return 100.0 * sum(p == t for p, t in zip(predicted, target_styles)) / len(hypotheses)


def g_score(accuracy: float, bleu_score: float) -> float:
    if not (accuracy >= 0 and bleu_score >= 0):
        raise ValueError(f"g_score: inputs must be non-negative, got {accuracy}, {bleu_score}")
    return math.sqrt(accuracy * bleu_score)


@dataclass
class MetricsReport:
    bleu: float | None = None
    gleu: float | None = None
    accuracy: float | None = None
    g_score: float | None = None
    counts: dict = field(default_factory=dict)

    def fields(self) -> dict:
        out = {k: getattr(self, k) for k in ("bleu", "gleu", "accuracy", "g_score")}
        return {k: v for k, v in out.items() if v is not None}

    def to_record(self) -> str:
        parts = [f"{k}={v:.2f}" for k, v in self.fields().items()]
        parts += [f"{k}={v}" for k, v in self.counts.items()]
        return " ".join(parts)

    def to_table(self) -> str:
        rows = [(k.upper() if k != "g_score" else "G-score", f"{v:.2f}") for k, v in self.fields().items()]
        width = max([len(k) for k, _ in rows] + [6])
        lines = [f"{'metric':<{width}}  value", f"{'-' * width}  -----"]
        lines += [f"{k:<{width}}  {v}" for k, v in rows]
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps({**self.fields(), "counts": self.counts}, sort_keys=True)


def _lines(path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def evaluate_report(hyp_file, ref_file=None, src_file=None, classifier=None, target_style: str | None = None) -> MetricsReport:
    """Score a hypothesis file; BLEU/GLEU need references, accuracy needs a classifier.

    ``ref_file`` may be one path or a list of paths (one reference set each).
    ``classifier`` is a classifier object or a checkpoint path.
    """
    hyps = [tokenize(l) for l in _lines(hyp_file)]
    report = MetricsReport(counts={"n": len(hyps)})
    ref_files = [] if ref_file is None else ([ref_file] if isinstance(ref_file, (str, Path)) else list(ref_file))
    ref_sets = []
    for rf in ref_files:
        refs = [tokenize(l) for l in _lines(rf)]
        if len(refs) != len(hyps):
            raise AlignmentError(f"line count mismatch: {len(hyps)} hypotheses vs {len(refs)} references in {rf}")
        ref_sets.append(refs)
    srcs = None
    if src_file is not None:
        srcs = [tokenize(l) for l in _lines(src_file)]
        if len(srcs) != len(hyps):
            raise AlignmentError(f"line count mismatch: {len(hyps)} hypotheses vs {len(srcs)} sources")
    if ref_sets:
        instances = [
            EvalInstance(None if srcs is None else tuple(srcs[i]), tuple(h), tuple(tuple(rs[i]) for rs in ref_sets))
            for i, h in enumerate(hyps)
        ]
        report.bleu = bleu(instances) if hyps else 0.0
        if srcs is not None:
            report.gleu = gleu(instances) if hyps else 0.0
    if classifier is not None:
        if target_style is None:
            raise ValueError("style accuracy needs a target style")
        if isinstance(classifier, (str, Path)):
            from .checkpoint import load_classifier

            classifier = load_classifier(classifier)
        report.accuracy = style_accuracy(hyps, classifier, target_style)
        if report.bleu is not None:
            report.g_score = g_score(report.accuracy, report.bleu)
    return report
