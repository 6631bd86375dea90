"""Inference: beam search n-best lists, classifier filtering, GEC post-processing."""

from __future__ import annotations

import subprocess
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import EOS_ID, Vocabulary, detokenize, tokenize
from .model import Seq2Seq, StyleClassifier, repeat_encoded


class GECHookError(RuntimeError):
    pass


@dataclass
class Hypothesis:
    tokens: list  # generated ids, ending in <eos> when finished
    score: float  # summed token log-probabilities
    normalized: float  # score / len ** length_penalty
    finished: bool

    @property
    def output(self) -> list:
        return self.tokens[:-1] if self.finished else list(self.tokens)


NBestList = list  # of Hypothesis, sorted by normalized score descending


def _normalize(score: float, length: int, alpha: float) -> float:
    return score / (max(length, 1) ** alpha)


def beam_search(
    log_prob_fn: Callable[[list[list[int]]], np.ndarray],
    beam_width: int = 5,
    max_steps: int = 50,
    length_penalty: float = 1.0,
    eos_id: int = EOS_ID,
) -> NBestList:
    """Beam search over ``log_prob_fn(prefixes) -> (len(prefixes), V)`` next-token log-probs.

    Each step keeps the ``beam_width`` best expansions by cumulative log-probability;
    expansions ending in ``eos_id`` are moved to the finished pool. Search stops once the
    pool holds ``beam_width`` hypotheses, nothing is alive, or ``max_steps`` is reached
    (live hypotheses are then kept as unfinished). The result is sorted by
    length-normalised score.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    alive: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[Hypothesis] = []
    for _ in range(max_steps):
        logp = np.asarray(log_prob_fn([p for p, _ in alive]), dtype=np.float64)
        scores = np.array([s for _, s in alive])[:, None] + logp
        flat = scores.reshape(-1)
        # stable sort keeps ties in (hypothesis, token) order
        order = np.argsort(-flat, kind="stable")[:beam_width]
        vocab = logp.shape[1]
        nxt = []
        for idx in order:
            h, tok = divmod(int(idx), vocab)
            toks = alive[h][0] + [tok]
            s = float(flat[idx])
            if tok == eos_id:
                finished.append(Hypothesis(toks, s, _normalize(s, len(toks), length_penalty), True))
            else:
                nxt.append((toks, s))
        alive = nxt
        if not alive or len(finished) >= beam_width:
            break
    else:
        for toks, s in alive:
            finished.append(Hypothesis(toks, s, _normalize(s, len(toks), length_penalty), False))
    if not finished:
        finished = [Hypothesis(t, s, _normalize(s, len(t), length_penalty), False) for t, s in alive]
    finished.sort(key=lambda h: -h.normalized)
    return finished[:beam_width]


def model_beam_search(model: Seq2Seq, enc, beam_width: int = 5, max_steps: int = 50, length_penalty: float = 1.0) -> NBestList:
    """Beam search for a single encoded source (``enc`` holds one row)."""
    def fn(prefixes):
        return model.next_log_probs(repeat_encoded(enc, np.zeros(len(prefixes), dtype=int)), prefixes)

    return beam_search(fn, beam_width, max_steps, length_penalty)


def classifier_filter(nbest: NBestList, classifier, target_style: str, to_tokens: Callable | None = None) -> Hypothesis:
    """Drop hypotheses the classifier assigns to the wrong style; return the best survivor.

    Falls back to the top-scoring hypothesis when every candidate is rejected.
    ``to_tokens`` converts hypothesis ids for a classifier with its own vocabulary.
    """
    if not nbest:
        raise ValueError("classifier_filter: empty n-best list")
    convert = to_tokens or (lambda ids: ids)
    labels = classifier.predict([convert(h.output) for h in nbest])
    survivors = [h for h, lab in zip(nbest, labels) if lab == target_style]
    return max(survivors or nbest, key=lambda h: h.normalized)


def gec_postprocess(sentences: Sequence[str], hook_command: str | None) -> list[str]:
    """Send sentences through an external line-oriented correction command."""
    sentences = list(sentences)
    if not hook_command or not sentences:
        return sentences
    for s in sentences:
        if "\n" in s:
            raise GECHookError("gec_postprocess: sentences must not contain newlines")
    proc = subprocess.run(
        hook_command,
        shell=True,
        input="".join(s + "\n" for s in sentences),
        capture_output=True,
        text=True,
        encoding="utf-8",
    )
    if proc.returncode != 0:
        raise GECHookError(f"GEC hook exited with {proc.returncode}: {proc.stderr.strip()}")
    out = proc.stdout.split("\n")
    if out and out[-1] == "":
        out.pop()
    if len(out) != len(sentences):
        raise GECHookError(
            f"GEC hook returned {len(out)} lines for {len(sentences)} inputs: {proc.stderr.strip()}"
        )
    return out


@dataclass
class Pipeline:
    model: Seq2Seq
    vocab: Vocabulary
    beam_width: int = 5
    length_penalty: float = 1.0
    filter_classifier: StyleClassifier | None = None
    gec_command: str | None = None
    gec_style: str | None = None  # style whose outputs get GEC; defaults to the second style
    max_steps: int | None = None


def _steps_for(n: int, pipeline: Pipeline) -> int:
    limit = pipeline.model.config.max_len - 1
    return min(pipeline.max_steps or int(1.5 * n) + 5, limit)


def transfer_batch(sentences: Sequence[str], target_style: str, pipeline: Pipeline) -> list[str]:
    """Rewrite each sentence into ``target_style``."""
    model, vocab = pipeline.model, pipeline.vocab
    direction = vocab.direction_id(target_style)
    was = model.training
    model.training = False
    outputs = []
    try:
        for text in sentences:
            ids = vocab.encode(tokenize(text))[: model.config.max_len - 1]
            enc = model.encode([ids], direction)
            nbest = model_beam_search(model, enc, pipeline.beam_width, _steps_for(len(ids), pipeline), pipeline.length_penalty)
            if pipeline.filter_classifier is not None:
                best = classifier_filter(nbest, pipeline.filter_classifier, target_style, vocab.decode)
            else:
                best = nbest[0]
            outputs.append(detokenize(vocab.decode(best.output)))
    finally:
        model.training = was
    gec_style = pipeline.gec_style or vocab.styles[-1]
    if pipeline.gec_command and target_style == gec_style:
        outputs = gec_postprocess(outputs, pipeline.gec_command)
    return outputs


def transfer(sentence_text: str, target_style: str, pipeline: Pipeline) -> str:
    return transfer_batch([sentence_text], target_style, pipeline)[0]


def greedy_transfer_batch(model: Seq2Seq, vocab: Vocabulary, sentences: Sequence[Sequence[str]], target_style: str, batch_size: int = 64) -> list[list[str]]:
    """Batched greedy rewrite of tokenised sentences (used for dev evaluation)."""
    direction = vocab.direction_id(target_style)
    was = model.training
    model.training = False
    out = []
    try:
        for i in range(0, len(sentences), batch_size):
            chunk = [vocab.encode(s)[: model.config.max_len - 1] for s in sentences[i : i + batch_size]]
            enc = model.encode(chunk, direction)
            steps = min(int(1.5 * max(len(c) for c in chunk)) + 5, model.config.max_len - 1)
            out.extend(vocab.decode(h) for h in model.greedy_decode(enc, steps))
    finally:
        model.training = was
    return out
