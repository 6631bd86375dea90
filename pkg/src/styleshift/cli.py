"""Command-line entry point: ``styleshift <subcommand> ...``.

Exit codes: 0 success, 1 pipeline failure at run time, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import checkpoint as ckpt_io
from . import toy
from .config import ConfigError, RunConfig, load_config
from .corpus import CorpusFormatError, load_labeled, load_parallel, load_unlabeled, pseudo_label_extend, write_labeled
from .decode import GECHookError, Pipeline, transfer_batch
from .metrics import AlignmentError, evaluate_report
from .objectives import GRID_VALUES, LossWeights, grid_candidates
from .train import (
    LOG_COLUMNS,
    format_row,
    train_classifier,
    train_seq2seq,
    vocab_for,
)

log = logging.getLogger("styleshift")


class UsageError(Exception):
    """Bad arguments or unusable inputs (exit code 2)."""


def _config(args) -> RunConfig:
    try:
        cfg = load_config(getattr(args, "config", None), getattr(args, "set", None) or [])
    except (OSError, ConfigError) as e:
        raise UsageError(str(e)) from None
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _readable(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"cannot read {what}: {path}")
    return p


def _load(fn, path, what, *a):
    _readable(path, what)
    try:
        return fn(path, *a)
    except (CorpusFormatError, UnicodeDecodeError) as e:
        raise UsageError(str(e)) from None


def _load_clf(path):
    _readable(path, "classifier checkpoint")
    try:
        return ckpt_io.load_classifier(path)
    except (ckpt_io.CheckpointError, KeyError, TypeError) as e:
        raise UsageError(f"invalid classifier checkpoint {path}: {e}") from None


# ---------------------------------------------------------------- subcommands


def cmd_gen_toy_corpus(args) -> int:
    corpus = toy.generate(seed=args.seed or 0)
    for name, path in toy.write(corpus, args.out).items():
        print(path)
    return 0


def cmd_train_classifier(args) -> int:
    cfg = _config(args)
    if args.max_steps is not None:
        cfg = cfg.replace(clf_max_steps=args.max_steps)
    labeled = _load(load_labeled, args.labeled, "labeled file", cfg.styles)
    parallel = _load(load_parallel, args.parallel, "parallel file") if args.parallel else []
    vocab = vocab_for(cfg, labeled, parallel)
    run = train_classifier(labeled, cfg, vocab)
    ck = ckpt_io.classifier_checkpoint(run.classifier.model, vocab, step=cfg.clf_max_steps, extra={"run_config": cfg.snapshot()})
    ckpt_io.save(args.out, ck)
    print(f"heldout_accuracy={run.heldout_accuracy:.2f}")
    return 0


def cmd_pseudo_label(args) -> int:
    clf = _load_clf(args.classifier)
    sentences = _load(load_unlabeled, args.input, "unlabeled file")
    kept = pseudo_label_extend([s for s in sentences if s], clf, args.threshold)
    sys.stdout.write(write_labeled(kept))
    counts = {s: sum(k.label == s for k in kept) for s in clf.styles}
    print(f"input={len(sentences)} kept={len(kept)} " + " ".join(f"{k}={v}" for k, v in counts.items()), file=sys.stderr)
    return 0


def _train_inputs(args, cfg: RunConfig):
    if cfg.w_t > 0 and not args.parallel:
        raise UsageError("w_t > 0 needs --parallel (set w_t = 0 for unsupervised training)")
    clf = _load_clf(args.classifier)
    labeled = _load(load_labeled, args.labeled, "labeled file", cfg.styles)
    parallel = _load(load_parallel, args.parallel, "parallel file") if args.parallel else []
    dev = _load(load_parallel, args.dev, "dev file") if args.dev else []
    if tuple(clf.styles) != tuple(cfg.styles):
        raise UsageError(f"classifier styles {clf.styles} differ from configured styles {cfg.styles}")
    return clf, labeled, parallel, dev


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.max_steps is not None:
        cfg = cfg.replace(max_steps=args.max_steps)
    clf, labeled, parallel, dev = _train_inputs(args, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = clf.vocab
    with open(out / "loss_log.tsv", "w", encoding="utf-8") as fh:
        fh.write("\t".join(LOG_COLUMNS) + "\n")
        run = train_seq2seq(cfg, vocab, labeled, clf.model, parallel, dev, on_row=lambda r: fh.write(format_row(r) + "\n"))
    extra = {"run_config": cfg.snapshot()}
    ckpt_io.save(out / "final.ckpt", ckpt_io.seq2seq_checkpoint(run.model, vocab, run.steps, extra))
    if run.best_params is not None:
        best = ckpt_io.seq2seq_checkpoint(run.model, vocab, run.steps, {**extra, "dev_bleu": run.best_dev_bleu})
        best.params = run.best_params
        ckpt_io.save(out / "best.ckpt", best)
        print(f"best_dev_bleu={run.best_dev_bleu:.2f}")
    print(f"steps={run.steps} final={out / 'final.ckpt'}")
    return 0


def cmd_transfer(args) -> int:
    _readable(args.model, "model checkpoint")
    try:
        model, vocab, _ = ckpt_io.load_seq2seq(args.model)
    except (ckpt_io.CheckpointError, KeyError, TypeError) as e:
        raise UsageError(f"invalid model checkpoint {args.model}: {e}") from None
    if args.direction not in vocab.styles:
        raise UsageError(f"direction {args.direction!r} is not one of {vocab.styles}")
    if args.beam < 1:
        raise UsageError("--beam must be >= 1")
    filt = _load_clf(args.filter_classifier) if args.filter_classifier else None
    if args.input in (None, "-"):
        lines = sys.stdin.read().split("\n")
    else:
        lines = _readable(args.input, "input file").read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    pipe = Pipeline(model, vocab, args.beam, args.length_penalty, filt, args.gec_cmd)
    for line in transfer_batch(lines, args.direction, pipe):
        sys.stdout.write(line + "\n")
    return 0


def cmd_evaluate(args) -> int:
    for p in [args.hyp, *args.ref, args.src, args.classifier]:
        if p:
            _readable(p, "file")
    if args.classifier and not args.target_style:
        raise UsageError("--classifier needs --target-style")
    clf = _load_clf(args.classifier) if args.classifier else None
    try:
        report = evaluate_report(args.hyp, args.ref or None, args.src, clf, args.target_style)
    except AlignmentError as e:
        raise UsageError(str(e)) from None
    print(report.to_record())
    if not args.quiet:
        print(report.to_table())
    return 0


def _grid_cell(cfg: RunConfig, weights: LossWeights, clf_path, labeled, parallel, dev):
    clf = ckpt_io.load_classifier(clf_path)
    cell = cfg.replace(w_t=weights.w_t, w_c=weights.w_c, w_sr=weights.w_sr, w_cr=weights.w_cr, dev_every=cfg.max_steps)
    run = train_seq2seq(cell, clf.vocab, labeled, clf.model, parallel, dev)
    return run.best_dev_bleu


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad candidate list {text!r}") from None


def cmd_grid_search(args) -> int:
    cfg = _config(args)
    if args.max_steps is not None:
        cfg = cfg.replace(max_steps=args.max_steps)
    if not args.dev:
        raise UsageError("grid-search needs --dev")
    base = _floats(args.candidates)
    per = [_floats(getattr(args, f"candidates_{w}")) if getattr(args, f"candidates_{w}") else base for w in ("w_t", "w_c", "w_sr", "w_cr")]
    if any(not c for c in per):
        raise UsageError("empty candidate set")
    combos = grid_candidates(per)
    if any(w.w_t > 0 for w in combos) and not args.parallel:
        raise UsageError("w_t > 0 candidates need --parallel")
    _, labeled, parallel, dev = _train_inputs(args, cfg.replace(w_t=0.0))
    cells = [(cfg, w, args.classifier, labeled, parallel, dev) for w in combos]
    if args.threads > 1:
        with ProcessPoolExecutor(args.threads) as pool:
            scores = list(pool.map(_grid_cell, *zip(*cells)))
    else:
        scores = [_grid_cell(*c) for c in cells]
    best_i = max(range(len(scores)), key=lambda i: (scores[i], -i))
    rows = ["w_t\tw_c\tw_sr\tw_cr\tdev_bleu"]
    rows += [f"{w.w_t}\t{w.w_c}\t{w.w_sr}\t{w.w_cr}\t{s:.4f}" for w, s in zip(combos, scores)]
    text = "\n".join(rows) + "\n"
    if args.results:
        Path(args.results).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    b = combos[best_i]
    print(f"best w_t={b.w_t} w_c={b.w_c} w_sr={b.w_sr} w_cr={b.w_cr} dev_bleu={scores[best_i]:.4f}")
    return 0


# ---------------------------------------------------------------- parser


def _common(p, config=True):
    if config:
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="styleshift", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy-corpus", help="write the synthetic cipher corpora")
    p.add_argument("--out", required=True)
    _common(p, config=False)
    p.set_defaults(fn=cmd_gen_toy_corpus)

    p = sub.add_parser("train-classifier", help="pretrain the CNN style classifier")
    p.add_argument("--labeled", required=True)
    p.add_argument("--parallel", help="parallel TSV whose tokens join the vocabulary")
    p.add_argument("--out", required=True)
    p.add_argument("--max-steps", type=int)
    _common(p)
    p.set_defaults(fn=cmd_train_classifier)

    p = sub.add_parser("pseudo-label", help="label unlabeled text with a confident classifier")
    p.add_argument("--input", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--threshold", type=float, default=0.995)
    p.set_defaults(fn=cmd_pseudo_label)

    p = sub.add_parser("train", help="joint seq2seq training")
    p.add_argument("--labeled", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--parallel")
    p.add_argument("--dev")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-steps", type=int)
    _common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("transfer", help="rewrite sentences into a target style")
    p.add_argument("--model", required=True)
    p.add_argument("--direction", required=True, help="target style name")
    p.add_argument("--input", help="input file (default: stdin)")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--length-penalty", type=float, default=1.0)
    p.add_argument("--filter-classifier")
    p.add_argument("--gec-cmd")
    p.set_defaults(fn=cmd_transfer)

    p = sub.add_parser("evaluate", help="BLEU / GLEU / accuracy / G-score report")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", action="append", default=[])
    p.add_argument("--src")
    p.add_argument("--classifier")
    p.add_argument("--target-style")
    p.add_argument("--quiet", action="store_true", help="print only the key=value record")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("grid-search", help="search loss weights by dev BLEU")
    p.add_argument("--labeled", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--parallel")
    p.add_argument("--dev")
    p.add_argument("--candidates", default=",".join(str(v) for v in GRID_VALUES))
    for w in ("w_t", "w_c", "w_sr", "w_cr"):
        p.add_argument(f"--candidates-{w.replace('_', '-')}", dest=f"candidates_{w}")
    p.add_argument("--results", help="write the results TSV here instead of stdout")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--threads", type=int, default=1)
    _common(p)
    p.set_defaults(fn=cmd_grid_search)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (GECHookError, RuntimeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
