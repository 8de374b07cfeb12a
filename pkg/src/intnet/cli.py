"""``intnet`` command line: train, eval, tag, probe, gradcheck and stats.

Exit codes: 0 success, 1 user or configuration error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .autodiff import (ConfigError, DimensionError, EmptyWordError, NonFiniteError, RngState,
                       no_grad)
from .config import ExperimentConfig, load_config
from .data import (BIOES_TASKS, EmptyCorpusError, ParseError, TagSetError,
                   build_corpus, convert_labels, corpus_stats, embedding_matrix, load_embeddings,
                   parse_conll, read_conll, sample_dev_split, to_bioes, write_conll)
from .encoders import EncoderConfig
from .evaluation import evaluate, nearest_neighbors
from .tagger import SequenceTagger, load_checkpoint, save_checkpoint
from .training import TrainingDivergedError, evaluate_model, train

log = logging.getLogger("intnet")

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 1, 2
USER_ERRORS = (ConfigError, ParseError, TagSetError, EmptyCorpusError, EmptyWordError,
               DimensionError, OSError, ValueError)
NUMERIC_ERRORS = (TrainingDivergedError, NonFiniteError, FloatingPointError)

CHECKPOINT_NAME = "checkpoint.zip"
HISTORY_NAME = "history.jsonl"
RESOLVED_CONFIG_NAME = "resolved-config.json"
ENCODER_CHOICES = ("intnet5", "intnet9", "charlstm", "charcnn", "none")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for numeric failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# shared plumbing


def load_experiment(cfg: ExperimentConfig):
    """Read the corpora and embeddings named by ``cfg``; returns ``(corpus, embeddings)``."""
    d = cfg.data
    read = lambda p: read_conll(p, d.token_column, d.label_column) if p else []
    train_sents, dev_sents, test_sents = read(d.train), read(d.dev), read(d.test)
    if not dev_sents and d.dev_sample > 0:
        train_sents, dev_sents = sample_dev_split(train_sents, d.dev_sample, cfg.train.seed)
    embeddings = None
    if d.embeddings:
        if not Path(d.embeddings).is_file():
            raise ConfigError(f"embedding file not found: {d.embeddings}")
        gen = RngState(cfg.train.seed).generator("embeddings/unknown")
        embeddings = load_embeddings(d.embeddings, cfg.tagger.word_dim, gen, d.lowercase_fallback)
    corpus = build_corpus(train_sents, dev_sents, test_sents, d.task, embeddings)
    return corpus, embeddings


def build_model(cfg: ExperimentConfig, corpus, embeddings, seed: int) -> SequenceTagger:
    rng = RngState(seed)
    vectors = None
    if embeddings is not None and cfg.tagger.use_word_embeddings:
        vectors = embedding_matrix(corpus.word_vocab, embeddings, rng.generator("init/word_embedding.fresh"))
    return SequenceTagger(cfg.tagger, cfg.encoder, corpus.word_vocab, corpus.char_vocab, corpus.tag_set,
                          rng, cfg.dtype, vectors)


def embedding_words(corpus, embeddings) -> list:
    """Vocabulary words that have a pretrained vector, kept for the OOV breakdown."""
    if embeddings is None:
        return []
    return sorted(w for w in corpus.word_vocab.words[1:] if w in embeddings)


def _read_lines(path):
    if path in (None, "-"):
        return contextlib.nullcontext(sys.stdin)
    return open(path, encoding="utf-8", newline="")


def _auto_label_column(lines, requested):
    """Peek at the first token line: a lone column means no gold labels."""
    lines = iter(lines)
    head = []
    for raw in lines:
        head.append(raw)
        cols = raw.split()
        if cols and cols[0] != "-DOCSTART-":
            if requested == "auto":
                requested = -1 if len(cols) > 1 else None
            break
    if requested == "auto":
        requested = None
    return itertools.chain(head, lines), requested


def _label_column_arg(value):
    if value in ("auto", "none"):
        return None if value == "none" else "auto"
    return int(value)


def _print_json(obj, stream=None):
    (stream or sys.stdout).write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def _train_one(cfg: ExperimentConfig, corpus, embeddings, run_dir: Path, seed: int) -> dict:
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.train.seed = seed
    (run_dir / RESOLVED_CONFIG_NAME).write_text(cfg.to_json(), encoding="utf-8")
    model = build_model(cfg, corpus, embeddings, seed)
    extra = {"task": corpus.task, "train_words": sorted(corpus.train_words),
             "embedding_words": embedding_words(corpus, embeddings)}
    history_path = run_dir / HISTORY_NAME
    with open(history_path, "w", encoding="utf-8") as hist:
        def on_epoch(entry):
            hist.write(json.dumps(entry, sort_keys=True) + "\n")
            hist.flush()

        try:
            result = train(model, corpus, cfg.train, on_epoch, frozenset(extra["embedding_words"]))
        except TrainingDivergedError as e:
            save_checkpoint(run_dir / CHECKPOINT_NAME, model, e.best_state, extra)
            raise
    save_checkpoint(run_dir / CHECKPOINT_NAME, model, result.best_state, extra)
    summary = {"seed": seed, "run_dir": str(run_dir), "best_epoch": result.best_epoch,
               "dev": result.best_metrics, "epochs": len(result.history)}
    if corpus.test:
        model.load_state_dict(result.best_state)
        report, _ = evaluate_model(model, corpus.test, corpus.task, frozenset(extra["embedding_words"]),
                                   corpus.train_words)
        summary["test"] = report.to_dict()
    return summary


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.encoder:
        cfg.encoder = EncoderConfig.preset(args.encoder)
    if args.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    corpus, embeddings = load_experiment(cfg)
    root = Path(args.run_dir).resolve() if args.run_dir else Path(cfg.output.run_dir)
    base_seed = cfg.train.seed
    summaries = []
    for i in range(args.seeds):
        seed = base_seed + i
        run_dir = root if args.seeds == 1 else root / f"seed-{seed}"
        log.info("training seed %d into %s", seed, run_dir)
        summaries.append(_train_one(cfg, corpus, embeddings, run_dir, seed))
    if len(summaries) > 1:
        f1s = np.array([s["dev"].get("f1", 0.0) for s in summaries])
        _print_json({"runs": summaries, "dev_f1_mean": float(f1s.mean()), "dev_f1_std": float(f1s.std())})
    else:
        _print_json(summaries[0])
    return EXIT_OK


def _read_eval_data(args, task):
    with _read_lines(args.data) as fh:
        text = list(fh)
    lines, label_col = _auto_label_column(text, args.label_column)
    if label_col is None:
        raise UsageError("evaluation data needs a gold label column")
    gold = convert_labels(list(parse_conll(lines, args.token_column, label_col, path=args.data)), task)
    preds = None
    if args.pred_column is not None:
        preds = [s.labels for s in parse_conll(text, args.token_column, args.pred_column, path=args.data)]
        if task in BIOES_TASKS:
            preds = [to_bioes(p) for p in preds]
    return gold, preds


def cmd_eval(args) -> int:
    model, extra = (None, {})
    if args.checkpoint:
        model, extra = load_checkpoint(args.checkpoint)
    elif args.pred_column is None:
        raise UsageError("eval needs --checkpoint, or --pred-column to score existing predictions")
    task = args.task or extra.get("task", "ner")
    gold, pred = _read_eval_data(args, task)
    if not gold:
        raise EmptyCorpusError(f"no sentences in {args.data}")
    if pred is None:
        unseen = sorted({y for s in gold for y in s.labels if y not in model.tag_set})
        if unseen:
            raise TagSetError(f"labels in {args.data} are not in the checkpoint's tag set: {unseen}")
        pred = model.predict(gold)
    train_vocab = frozenset(extra.get("train_words", []))
    emb_vocab = frozenset(extra.get("embedding_words", []))
    report = evaluate([s.tokens for s in gold], [s.labels for s in gold], pred, task, train_vocab, emb_vocab)
    if args.format == "conll":
        sys.stdout.write(write_conll((s.tokens, s.labels, p) for s, p in zip(gold, pred)))
    else:
        _print_json(report.to_dict())
    return EXIT_OK


def cmd_tag(args) -> int:
    model, extra = load_checkpoint(args.checkpoint)
    task = extra.get("task", "ner")
    with _read_lines(args.data) as fh:
        lines, label_col = _auto_label_column(fh, args.label_column)
        for sent in parse_conll(lines, args.token_column, label_col, path=args.data or "<stdin>"):
            pred = model.predict([sent])[0]
            if sent.labels:
                gold = to_bioes(sent.labels) if task in BIOES_TASKS else sent.labels
                columns = (sent.tokens, gold, pred)
            else:
                columns = (sent.tokens, pred)
            sys.stdout.write(write_conll([columns]))
            sys.stdout.flush()
    return EXIT_OK


def _probe_model(args):
    if args.checkpoint:
        return load_checkpoint(args.checkpoint)[0]
    if not args.config:
        raise UsageError("probe needs --checkpoint or --config")
    cfg = load_config(args.config)
    if args.encoder:
        cfg.encoder = EncoderConfig.preset(args.encoder)
    corpus, embeddings = load_experiment(cfg)
    model = build_model(cfg, corpus, embeddings, cfg.train.seed)
    if model.encoder is not None:
        # an untrained encoder has no running BN statistics yet; take them from one
        # training-mode pass over the vocabulary (no dropout, no parameter change)
        with no_grad():
            model.encoder.encode_words(model.word_vocab.words[1:], model.char_vocab, training=True)
    return model


def cmd_probe(args) -> int:
    if args.k < 1:
        raise UsageError("-k must be at least 1")
    model = _probe_model(args)
    if args.words:
        queries = list(args.words)
    else:
        with _read_lines(args.data) as fh:
            queries = [line.split()[0] for line in fh if line.strip()]
    candidates = model.word_vocab.words[1:]
    if args.candidates:
        with open(args.candidates, encoding="utf-8") as fh:
            candidates = [line.split()[0] for line in fh if line.strip()]
    encode = lambda words: model.encode_words(list(words))
    out = {}
    for q in queries:
        out[q] = [{"word": w, "cosine": s} for w, s in nearest_neighbors(q, candidates, encode, args.k)]
    if args.dump_vectors:
        words = sorted(set(queries) | set(candidates))
        vecs = encode(words)
        with open(args.dump_vectors, "w", encoding="utf-8") as fh:
            for w, v in zip(words, vecs):
                fh.write(w + "\t" + " ".join(repr(float(x)) for x in v) + "\n")
    _print_json(out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    result = gradcheck.run_all(seed=args.seed)
    out = {
        "worst_op": result["worst_op"],
        "worst_encoder": result["worst_encoder"],
        "model": result["model"],
        "skipped_coordinates": result["skipped_coordinates"],
        "passed": result["passed"],
        "ops": result["ops"],
        "encoders": result["encoders"],
    }
    _print_json(json.loads(json.dumps(out, default=float)))
    print(f"max relative error {max(result['worst_op'], result['worst_encoder'], result['model']):.3e}",
          file=sys.stderr)
    return EXIT_OK if result["passed"] else EXIT_NUMERIC


def cmd_stats(args) -> int:
    cfg = load_config(args.config)
    corpus, embeddings = load_experiment(cfg)
    _print_json(corpus_stats(corpus, embeddings))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="intnet", description="IntNet character encoder + BiLSTM-CRF sequence tagger")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model from an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--encoder", choices=ENCODER_CHOICES, help="override the configured encoder")
    p.add_argument("--seeds", type=int, default=1, help="train this many consecutive seeds")
    p.add_argument("--run-dir", help="override the configured run directory")
    p.set_defaults(func=cmd_train)

    def data_columns(p):
        p.add_argument("--token-column", type=int, default=0)
        p.add_argument("--label-column", type=_label_column_arg, default="auto",
                       help="gold label column, 'auto' (last, when present) or 'none'")

    p = sub.add_parser("eval", help="score a checkpoint (or existing predictions) on labelled data")
    p.add_argument("--checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("json", "conll"), default="json")
    p.add_argument("--pred-column", type=int, help="read predictions from this column instead of a model")
    p.add_argument("--task", choices=("ner", "chunk", "pos"), help="defaults to the checkpoint's task")
    data_columns(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tag", help="tag CoNLL tokens (one per line) with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default="-", help="input file, '-' for stdin")
    data_columns(p)
    p.set_defaults(func=cmd_tag)

    p = sub.add_parser("probe", help="nearest neighbours of words under the character encoder")
    p.add_argument("--checkpoint")
    p.add_argument("--config", help="probe an untrained model built from this config")
    p.add_argument("--encoder", choices=ENCODER_CHOICES)
    p.add_argument("--data", help="query words, one per line")
    p.add_argument("--candidates", help="candidate words file (default: the model vocabulary)")
    p.add_argument("-k", type=int, default=5)
    p.add_argument("--dump-vectors", help="write word<TAB>vector lines for queries and candidates")
    p.add_argument("words", nargs="*")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the full loss")
    p.add_argument("--config", help="accepted for symmetry; the check uses a fixed fixture")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("stats", help="corpus statistics for an experiment config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as e:
        sys.stderr.write(f"intnet {args.command}: {e}\n")
        parser._subparsers._group_actions[0].choices[args.command].print_usage(sys.stderr)
        return EXIT_USER
    except NUMERIC_ERRORS as e:
        sys.stderr.write(f"intnet {args.command}: numeric failure: {e}\n")
        return EXIT_NUMERIC
    except USER_ERRORS as e:
        sys.stderr.write(f"intnet {args.command}: {e}\n")
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
