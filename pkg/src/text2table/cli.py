"""Command-line surface: train, generate, evaluate, datagen, reorder-study.

Every command is deterministic given its flags; the only seed is the
--seed flag.  Failures exit with a code that identifies the class of
problem: 2 usage, 3 missing file, 4 bad config, 5 checkpoint mismatch,
6 bad dataset or spec, 7 numeric failure during training.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .autodiff import NumericError, load_params, save_params
from .config import ConfigError, load_config
from .datagen import DatasetPair, SynthSpec, generate, reorder_study, write_pair
from .decoding import generate_table, parallel_decode_steps, seq2seq_baseline_steps
from .evaluation import evaluate_corpus
from .model import CheckpointMismatch, ModelParams
from .tables import FormatReport, parse_table, serialize_table, validate
from .tokenizer import load_vocab, save_vocab, train_vocab
from .training import build_instance, train

EXIT_MISSING_FILE = 3
EXIT_BAD_CONFIG = 4
EXIT_CHECKPOINT_MISMATCH = 5
EXIT_BAD_DATA = 6
EXIT_NUMERIC = 7

VOCAB_SUFFIX = ".vocab"
METRICS_SUFFIX = ".metrics.tsv"
LOSS_PNG_SUFFIX = ".loss.png"

STEPS_HEADER = "index\trows\tcolumns\tparallel_steps\tbaseline_steps\tspeedup"


def _read_lines(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def _load_dataset(source_path, target_path):
    return DatasetPair(Path(source_path), Path(target_path)).load()


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip() != ""]


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.steps is not None:
        overrides["max_steps"] = args.steps
    if args.lambda_weight is not None:
        overrides["lambda_weight"] = args.lambda_weight
    if args.null_scale is not None:
        overrides["null_scale"] = args.null_scale
    if args.rows_m is not None:
        overrides["max_rows"] = args.rows_m
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)

    sources, tables = _load_dataset(args.source, args.target)
    if not sources:
        raise ValueError("training dataset is empty")
    corpus = sources + [serialize_table(t) for t in tables]
    vocab = train_vocab(corpus, max_size=cfg.max_vocab)
    mcfg = _model_config(cfg, vocab.size)

    instances = [
        build_instance(vocab, mcfg, src, table)
        for src, table in zip(sources, tables)
    ]
    # hold out a small validation tail so "best checkpoint" means something
    n_val = min(100, len(instances) // 20) if len(instances) >= 20 else 0
    train_set = instances[: len(instances) - n_val] if n_val else instances
    val_set = instances[len(instances) - n_val :] if n_val else []

    checkpoint = Path(args.checkpoint)
    checkpoint.parent.mkdir(parents=True, exist_ok=True)
    metrics_path = Path(str(checkpoint) + METRICS_SUFFIX)

    params = ModelParams.create(mcfg, seed=args.seed)
    result = train(
        params,
        train_set,
        cfg.train_config(args.seed),
        val_set=val_set,
        metrics_path=metrics_path,
    )

    save_params(result.best_arrays, checkpoint)
    save_vocab(vocab, str(checkpoint) + VOCAB_SUFFIX)
    from .plots import plot_loss_curve

    plot_loss_curve(metrics_path, str(checkpoint) + LOSS_PNG_SUFFIX)
    print(
        f"trained {cfg.max_steps} steps on {len(train_set)} instances "
        f"({n_val} held out); best step {result.best_step}"
        + (f", val loss {result.best_val_loss:.4f}" if val_set else "")
    )
    print(f"checkpoint: {checkpoint}")
    return 0


def _model_config(cfg, vocab_size):
    try:
        return cfg.model_config(vocab_size)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    vocab = load_vocab(str(Path(args.checkpoint)) + VOCAB_SUFFIX)
    mcfg = _model_config(cfg, vocab.size)
    params = ModelParams.from_arrays(mcfg, load_params(args.checkpoint))

    sources = _read_lines(args.source)
    out_lines = []
    steps_rows = []
    for i, text in enumerate(sources):
        result = generate_table(params, vocab, text)
        out_lines.append(serialize_table(result.table))
        if args.steps_out:
            baseline = seq2seq_baseline_steps(vocab, result.table)
            ratio = baseline / result.sequential_steps if result.sequential_steps else 0.0
            steps_rows.append(
                (i, result.table.n_rows, result.table.n_columns,
                 result.sequential_steps, baseline, ratio)
            )
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("".join(line + "\n" for line in out_lines), encoding="utf-8")
    print(f"generated {len(out_lines)} tables -> {out_path}")

    if args.steps_out:
        steps_path = Path(args.steps_out)
        lines = [STEPS_HEADER] + [
            f"{i}\t{r}\t{c}\t{s}\t{b}\t{ratio:.4f}"
            for i, r, c, s, b, ratio in steps_rows
        ]
        steps_path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")
        if steps_rows:
            from .plots import plot_speedup

            plot_speedup(
                [row[1] for row in steps_rows],
                [row[3] for row in steps_rows],
                [row[4] for row in steps_rows],
                str(steps_path) + ".png",
            )
        print(f"step counts -> {steps_path}")
    return 0


def cmd_evaluate(args) -> int:
    _, golds = _load_dataset(args.source, args.gold) if args.source else (None, None)
    if golds is None:
        golds = _parse_strict(args.gold)
    preds = []
    for line in _read_lines(args.preds):
        parsed = parse_table(line)
        if isinstance(parsed, FormatReport) or not validate(parsed).well_formed:
            preds.append(None)
        else:
            preds.append(parsed)
    report = evaluate_corpus(preds, golds)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(report.as_text(), encoding="utf-8")
    Path(str(out_path) + ".tsv").write_text(report.as_kv(), encoding="utf-8")
    from .plots import plot_f1_bars

    plot_f1_bars(report, str(out_path) + ".png")
    sys.stdout.write(report.as_text())
    return 0


def _parse_strict(path):
    tables = []
    for i, line in enumerate(_read_lines(path)):
        parsed = parse_table(line)
        report = parsed if isinstance(parsed, FormatReport) else validate(parsed)
        if not report.well_formed:
            raise ValueError(f"{path} line {i + 1}: {report.violations[0][1]}")
        tables.append(parsed)
    if not tables:
        raise ValueError(f"{path}: no gold tables")
    return tables


def cmd_datagen(args) -> int:
    spec = SynthSpec(
        n_instances=args.n,
        rows_min=args.rows_min,
        rows_max=args.rows_max,
        columns=tuple(c.strip() for c in args.columns.split(",") if c.strip()),
        name_pool=args.name_pool,
        shuffle_sentences=not args.no_shuffle,
        distractor_sentences=args.distractors,
        seed=args.seed,
    )
    sources, tables = generate(spec)
    pair = write_pair(sources, tables, args.source, args.target)
    print(f"wrote {spec.n_instances} instances -> {pair.source_path} / {pair.target_path}")
    return 0


def cmd_reorder_study(args) -> int:
    pair = DatasetPair(Path(args.source), Path(args.target))
    copies = reorder_study(pair, _int_list(args.seeds))
    for copy in copies:
        print(f"wrote {copy.target_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="text2table",
        description="Train and run a text-to-table model with parallel row decoding.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--source", required=True, help="one source document per line")
    p.add_argument("--target", required=True, help="one serialized table per line")
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=None, help="override max_steps")
    p.add_argument("--lambda", dest="lambda_weight", type=float, default=None,
                   help="override header/body loss balance")
    p.add_argument("--null-scale", type=float, default=None)
    p.add_argument("--rows-m", type=int, default=None, help="override row slot count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="decode tables for a source file")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--out", required=True, help="output tables path")
    p.add_argument("--steps-out", default=None,
                   help="also write per-instance step counts and a speedup figure")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score predictions against gold tables")
    p.add_argument("--gold", required=True)
    p.add_argument("--preds", required=True)
    p.add_argument("--out", required=True, help="report path (.tsv/.png siblings)")
    p.add_argument("--source", default=None,
                   help="optional source file to cross-check gold line count")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("datagen", help="write a synthetic corpus")
    p.add_argument("--source", required=True, help="output source path")
    p.add_argument("--target", required=True, help="output tables path")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--rows-min", type=int, default=2)
    p.add_argument("--rows-max", type=int, default=6)
    p.add_argument("--columns", default="points,assists")
    p.add_argument("--name-pool", type=int, default=576)
    p.add_argument("--distractors", type=int, default=1)
    p.add_argument("--no-shuffle", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("reorder-study", help="write row-shuffled dataset copies")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--seeds", required=True, help="comma-separated list")
    p.set_defaults(func=cmd_reorder_study)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except ConfigError as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except CheckpointMismatch as exc:
        print(f"error: checkpoint mismatch: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT_MISMATCH
    except NumericError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_DATA


if __name__ == "__main__":
    sys.exit(main())
