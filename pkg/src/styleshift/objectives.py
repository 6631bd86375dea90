"""Training objectives: translation, classifier-guided, self- and cycle-reconstruction losses."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .model import CNNClassifier, Seq2Seq
from .tensor import Tensor

GRID_VALUES = (0.1, 0.2, 0.5, 1.0)
UNSUPERVISED_WEIGHTS = (0.0, 1.0, 0.5, 1.0)


@dataclass(frozen=True)
class LossWeights:
    w_t: float = 1.0
    w_c: float = 0.1
    w_sr: float = 0.5
    w_cr: float = 0.5

    def __post_init__(self):
        for name, w in self.as_dict().items():
            if not (math.isfinite(w) and w >= 0):
                raise ValueError(f"loss weight {name}={w} must be finite and non-negative")

    def as_dict(self) -> dict[str, float]:
        return {"w_t": self.w_t, "w_c": self.w_c, "w_sr": self.w_sr, "w_cr": self.w_cr}

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w_t, self.w_c, self.w_sr, self.w_cr)

    @classmethod
    def unsupervised(cls) -> "LossWeights":
        return cls(*UNSUPERVISED_WEIGHTS)


@dataclass(frozen=True)
class TemperatureSchedule:
    start: float = 1.0
    end: float = 0.1
    total_steps: int = 1000

    def __post_init__(self):
        if not 0 < self.end <= self.start <= 1:
            raise ValueError(f"temperature schedule needs 0 < end <= start <= 1, got {self.start} -> {self.end}")


def temperature_at(step: int, schedule: TemperatureSchedule) -> float:
    """Linear anneal from ``start`` to ``end`` over ``total_steps``, then held at ``end``."""
    if schedule.total_steps <= 0 or step >= schedule.total_steps:
        return schedule.end
    frac = max(step, 0) / schedule.total_steps
    return schedule.start + (schedule.end - schedule.start) * frac


@dataclass
class EncodedPairs:
    """Parallel pairs as id sequences: ``src`` in style 0, ``tgt`` in style 1."""

    src: list
    tgt: list


@dataclass
class EncodedStyled:
    """Labeled sentences as id sequences; labels are style indices (0 or 1)."""

    ids: list
    labels: list


def soft_decode_steps(lengths: Sequence[int], max_len: int) -> int:
    return min(int(1.5 * max(lengths, default=0)) + 5, max_len)


def _mean(x: Tensor) -> Tensor:
    return T.mean(x)


def translation_loss(model: Seq2Seq, batch: EncodedPairs, direction_ids: Sequence[int]) -> Tensor:
    """Mean NLL over both directions of every pair (2 terms per pair)."""
    if not batch.src:
        raise ValueError("translation_loss: empty batch")
    n = len(batch.src)
    enc = model.encode(batch.src + batch.tgt, [direction_ids[1]] * n + [direction_ids[0]] * n)
    return _mean(model.sequence_nll(enc, batch.tgt + batch.src))


def classifier_pretrain_loss(classifier: CNNClassifier, batch: EncodedStyled) -> Tensor:
    if not batch.ids:
        raise ValueError("classifier_pretrain_loss: empty batch")
    logp = classifier.classify_hard(batch.ids)
    return -_mean(T.pick(logp, np.asarray(batch.labels)))


def classifier_guided_loss(
    model: Seq2Seq,
    classifier: CNNClassifier,
    batch: EncodedStyled,
    direction_ids: Sequence[int],
    tau: float,
    max_steps: int | None = None,
) -> Tensor:
    """NLL of the opposite style under the frozen classifier, through soft decoding."""
    if not batch.ids:
        raise ValueError("classifier_guided_loss: empty batch")
    opposite = 1 - np.asarray(batch.labels)
    enc = model.encode(batch.ids, [direction_ids[o] for o in opposite])
    steps = max_steps or soft_decode_steps([len(s) for s in batch.ids], model.config.max_len)
    soft = model.decode_soft(enc, tau, steps)
    with classifier.frozen():
        logp = classifier.classify_soft(soft.dists, soft.lengths)
    return -_mean(T.pick(logp, opposite))


def self_reconstruction_loss(model: Seq2Seq, batch: EncodedStyled, direction_ids: Sequence[int]) -> Tensor:
    """NLL of x given x with its own style's direction token."""
    if not batch.ids:
        raise ValueError("self_reconstruction_loss: empty batch")
    enc = model.encode(batch.ids, [direction_ids[l] for l in batch.labels])
    return _mean(model.sequence_nll(enc, batch.ids))


def back_translate(model: Seq2Seq, batch: EncodedStyled, direction_ids: Sequence[int]) -> list[list[int]]:
    """Greedy transfer of every sentence to the opposite style, outside the graph."""
    was = model.training
    model.training = False
    try:
        with T.no_grad():
            enc = model.encode(batch.ids, [direction_ids[1 - l] for l in batch.labels])
            steps = soft_decode_steps([len(s) for s in batch.ids], model.config.max_len - 1)
            return model.greedy_decode(enc, steps)
    finally:
        model.training = was


def cycle_reconstruction_loss(
    model: Seq2Seq,
    batch: EncodedStyled,
    direction_ids: Sequence[int],
    pseudo: list[list[int]] | None = None,
) -> Tensor:
    """One-sided cycle loss: NLL of x given the stop-gradient transfer x_hat and c(x).

    ``pseudo`` may be passed in when x_hat was already produced elsewhere; an empty
    x_hat leaves only the direction token as the source.
    """
    if not batch.ids:
        raise ValueError("cycle_reconstruction_loss: empty batch")
    if pseudo is None:
        pseudo = back_translate(model, batch, direction_ids)
    enc = model.encode(pseudo, [direction_ids[l] for l in batch.labels])
    return _mean(model.sequence_nll(enc, batch.ids))


@dataclass
class LossBreakdown:
    total: Tensor
    parts: dict[str, float]


def overall_loss(
    model: Seq2Seq,
    parallel_batch: EncodedPairs | None,
    labeled_batch: EncodedStyled | None,
    classifier: CNNClassifier | None,
    weights: LossWeights,
    tau: float,
    direction_ids: Sequence[int],
) -> LossBreakdown:
    """Weighted sum of the four seq2seq losses; terms with zero weight are skipped."""
    if weights.w_t > 0 and not (parallel_batch and parallel_batch.src):
        raise ValueError("overall_loss: w_t > 0 requires a parallel batch")
    terms: list[tuple[float, str, Callable[[], Tensor]]] = [
        (weights.w_t, "l_trans", lambda: translation_loss(model, parallel_batch, direction_ids)),
        (weights.w_c, "l_clas", lambda: classifier_guided_loss(model, classifier, labeled_batch, direction_ids, tau)),
        (weights.w_sr, "l_self", lambda: self_reconstruction_loss(model, labeled_batch, direction_ids)),
        (weights.w_cr, "l_cyc", lambda: cycle_reconstruction_loss(model, labeled_batch, direction_ids)),
    ]
    total = Tensor(0.0, dtype=model.params["embed"].dtype)
    parts = {}
    for w, name, fn in terms:
        if w <= 0:
            parts[name] = float("nan")
            continue
        if name != "l_trans" and not (labeled_batch and labeled_batch.ids):
            raise ValueError(f"overall_loss: {name} needs a labeled batch")
        if name == "l_clas" and classifier is None:
            raise ValueError("overall_loss: classifier-guided loss needs a classifier")
        value = fn()
        parts[name] = value.item()
        total = total + value * w
    return LossBreakdown(total, parts)


def grid_candidates(candidates=GRID_VALUES) -> list[LossWeights]:
    """Cartesian product of per-weight candidate lists (one list reused for all four)."""
    if candidates and not isinstance(candidates[0], (list, tuple)):
        candidates = [candidates] * 4
    if len(candidates) != 4 or any(len(c) == 0 for c in candidates):
        raise ValueError("grid_search needs a non-empty candidate set for each of the four weights")
    return [LossWeights(*combo) for combo in itertools.product(*candidates)]


def grid_search(weight_candidates, train_fn: Callable, dev_metric: Callable):
    """Evaluate every combination; returns (best weights, [(weights, score), ...]).

    Ties go to the earliest combination in enumeration order.
    """
    combos = grid_candidates(weight_candidates)
    results = []
    best, best_score = None, -math.inf
    for w in combos:
        score = float(dev_metric(train_fn(w)))
        results.append((w, score))
        if best is None or score > best_score:
            best, best_score = w, score
    return best, results
