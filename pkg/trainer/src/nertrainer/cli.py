"""Command-line interface: ``nertrainer train`` and ``nertrainer predict``.

Exit codes follow the convention shared with the companion augmentation CLI:
0 success, 2 configuration or usage error, 3 data error (missing or
malformed files, labels outside the schema, unreadable model files).
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .data import DataError, read_conll, read_schema, write_conll
from .training import ModelArtifact, TrainConfig, predict, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nertrainer",
        description="Train and run a token-classification tagger over CoNLL files.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train_p = sub.add_parser("train", help="fit a tagger on a BIO-tagged corpus")
    train_p.add_argument("--train", required=True, help="training corpus (CoNLL)")
    train_p.add_argument("--schema", required=True, help="entity-type schema (JSON)")
    train_p.add_argument("--out", required=True, help="where to write the model file")
    train_p.add_argument("--dev", help="optional dev corpus for best-epoch selection")
    train_p.add_argument("--encoder", default="tiny",
                         help="size recipe (tiny/small) or a model file to warm-start")
    train_p.add_argument("--batch-size", type=int, default=8)
    train_p.add_argument("--lr", type=float, default=3e-5)
    train_p.add_argument("--epochs", type=int, default=100)
    train_p.add_argument("--seed", type=int, default=0)
    train_p.add_argument("--min-word-freq", type=int, default=2,
                         help="words rarer than this split into character pieces")

    predict_p = sub.add_parser("predict", help="tag a corpus with a trained model")
    predict_p.add_argument("--model", required=True, help="model file from 'train'")
    predict_p.add_argument("--input", required=True,
                           help="CoNLL file to tag (existing tags are ignored)")
    predict_p.add_argument("--out", required=True, help="where to write predictions")
    return parser


def _cmd_train(args: argparse.Namespace) -> int:
    config = TrainConfig(
        encoder=args.encoder,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        epochs=args.epochs,
        seed=args.seed,
        min_word_freq=args.min_word_freq,
    )
    sentences = read_conll(args.train)
    type_names = read_schema(args.schema)
    dev = read_conll(args.dev) if args.dev else None
    artifact = train(sentences, type_names, config, dev=dev)
    artifact.save(args.out)
    final = artifact.epoch_losses[-1] if artifact.epoch_losses else float("nan")
    best_dev = max(artifact.dev_f1_history) if artifact.dev_f1_history else None
    summary = f"trained {len(sentences)} sentences, final loss {final:.6f}"
    if best_dev is not None:
        summary += f", best dev F1 {best_dev:.4f}"
    print(f"{summary}; wrote {args.out}")
    return EXIT_OK


def _cmd_predict(args: argparse.Namespace) -> int:
    artifact = ModelArtifact.load(args.model)
    sentences = read_conll(args.input)
    tagged = predict(artifact, [surfaces for surfaces, _ in sentences])
    write_conll(tagged, args.out)
    print(f"tagged {len(tagged)} sentences; wrote {args.out}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args)
        return _cmd_predict(args)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
