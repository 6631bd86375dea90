"""Training loops: classifier pretraining and joint seq2seq training."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .config import RunConfig
from .corpus import (
    ParallelPair,
    SplitMix64,
    StyledSentence,
    Vocabulary,
    balanced_epoch,
    build_vocab,
    infinite_batches,
)
from .decode import greedy_transfer_batch
from .metrics import EvalInstance, bleu
from .model import CNNClassifier, Seq2Seq, StyleClassifier
from .objectives import EncodedPairs, EncodedStyled, classifier_pretrain_loss, overall_loss, temperature_at

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "l_trans", "l_clas", "l_self", "l_cyc", "tau", "dev_bleu")


def vocab_for(config: RunConfig, labeled: Sequence[StyledSentence], parallel: Sequence[ParallelPair] = ()) -> Vocabulary:
    corpora = [s.tokens for s in labeled]
    for p in parallel:
        corpora.extend([p.informal, p.formal])
    return build_vocab(corpora, config.styles, config.min_freq, config.max_vocab)


def split_holdout(items: Sequence, fraction: float, seed: int) -> tuple[list, list]:
    order = SplitMix64(seed ^ 0x5EED).shuffle(list(range(len(items))))
    n_hold = int(round(len(items) * fraction))
    hold = sorted(order[:n_hold])
    keep = sorted(order[n_hold:])
    return [items[i] for i in keep], [items[i] for i in hold]


def encode_styled(sents: Sequence[StyledSentence], vocab: Vocabulary, max_len: int | None = None) -> EncodedStyled:
    cut = (max_len - 1) if max_len else None
    return EncodedStyled(
        [vocab.encode(s.tokens)[:cut] for s in sents],
        [vocab.styles.index(s.label) for s in sents],
    )


def encode_pairs(pairs: Sequence[ParallelPair], vocab: Vocabulary, max_len: int | None = None) -> EncodedPairs:
    cut = (max_len - 1) if max_len else None
    return EncodedPairs([vocab.encode(p.informal)[:cut] for p in pairs], [vocab.encode(p.formal)[:cut] for p in pairs])


def accuracy(classifier: StyleClassifier, sents: Sequence[StyledSentence]) -> float:
    if not sents:
        return float("nan")
    pred = classifier.predict([s.tokens for s in sents])
    return 100.0 * sum(p == s.label for p, s in zip(pred, sents)) / len(sents)


@dataclass
class ClassifierRun:
    classifier: StyleClassifier
    heldout_accuracy: float
    losses: list = field(default_factory=list)


def train_classifier(
    labeled: Sequence[StyledSentence],
    config: RunConfig,
    vocab: Vocabulary | None = None,
    holdout: Sequence[StyledSentence] | None = None,
) -> ClassifierRun:
    """Pretrain the CNN style classifier on balanced minibatches."""
    if holdout is None:
        train_set, holdout = split_holdout(labeled, config.clf_holdout, config.seed)
    else:
        train_set = list(labeled)
    vocab = vocab or vocab_for(config, labeled)
    model = CNNClassifier(config.classifier_config(len(vocab)), seed=config.seed)
    opt = T.Adam(model.params, lr=config.clf_lr, betas=(config.beta1, config.beta2), eps=config.adam_eps)
    batches = infinite_batches(train_set, config.clf_batch_size, config.seed, balanced_epoch) if train_set else None
    losses = []
    model.train(True)
    for _ in range(config.clf_max_steps if batches else 0):
        batch = encode_styled(next(batches), vocab)
        loss = classifier_pretrain_loss(model, batch)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    model.train(False)
    clf = StyleClassifier(model, vocab)
    return ClassifierRun(clf, accuracy(clf, holdout), losses)


def dev_scores(model: Seq2Seq, vocab: Vocabulary, dev: Sequence[ParallelPair]) -> tuple[float, float]:
    """(BLEU, exact-match %) of greedy style-0 -> style-1 transfer on dev pairs."""
    if not dev:
        return float("nan"), float("nan")
    hyps = greedy_transfer_batch(model, vocab, [p.informal for p in dev], vocab.styles[1])
    insts = [EvalInstance.of(h, [list(p.formal)]) for h, p in zip(hyps, dev)]
    exact = 100.0 * sum(tuple(h) == tuple(p.formal) for h, p in zip(hyps, dev)) / len(dev)
    return bleu(insts), exact


@dataclass
class Seq2SeqRun:
    model: Seq2Seq
    best_params: dict | None
    best_dev_bleu: float
    log_rows: list
    steps: int


def train_seq2seq(
    config: RunConfig,
    vocab: Vocabulary,
    labeled: Sequence[StyledSentence],
    classifier: CNNClassifier | None,
    parallel: Sequence[ParallelPair] = (),
    dev: Sequence[ParallelPair] = (),
    on_row: Callable[[dict], None] | None = None,
) -> Seq2SeqRun:
    """Joint training on the weighted objective with temperature annealing."""
    weights = config.weights
    if weights.w_t > 0 and not parallel:
        raise ValueError("w_t > 0 needs parallel training data")
    model = Seq2Seq(config.seq2seq_config(len(vocab)), seed=config.seed)
    model.train(True)
    opt = T.Adam(model.params, lr=config.lr, betas=(config.beta1, config.beta2), eps=config.adam_eps)
    dirs = [vocab.direction_id(s) for s in vocab.styles]
    schedule = config.schedule
    par_batches = infinite_batches(list(parallel), config.batch_size, config.seed) if parallel and weights.w_t > 0 else None
    lab_batches = infinite_batches(list(labeled), config.batch_size, config.seed + 1, balanced_epoch) if labeled else None
    best_params, best_bleu = None, -math.inf
    rows = []
    for step in range(1, config.max_steps + 1):
        tau = temperature_at(step - 1, schedule)
        pb = encode_pairs(next(par_batches), vocab, config.max_len) if par_batches else None
        lb = encode_styled(next(lab_batches), vocab, config.max_len) if lab_batches else None
        out = overall_loss(model, pb, lb, classifier, weights, tau, dirs)
        opt.zero_grad()
        out.total.backward()
        opt.step()
        row = {"step": step, **out.parts, "tau": tau, "dev_bleu": float("nan")}
        if dev and (step % config.dev_every == 0 or step == config.max_steps):
            model.train(False)
            row["dev_bleu"], exact = dev_scores(model, vocab, dev)
            model.train(True)
            log.info("step %d dev bleu %.2f exact %.1f", step, row["dev_bleu"], exact)
            if row["dev_bleu"] > best_bleu:
                best_bleu = row["dev_bleu"]
                best_params = {k: v.data.copy() for k, v in model.params.items()}
        rows.append(row)
        if on_row:
            on_row(row)
    model.train(False)
    return Seq2SeqRun(model, best_params, best_bleu, rows, config.max_steps)


def format_row(row: dict) -> str:
    out = []
    for col in LOG_COLUMNS:
        v = row.get(col, float("nan"))
        out.append(str(v) if col == "step" else f"{v:.6f}")
    return "\t".join(out)
