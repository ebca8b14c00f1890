"""Command-line entry point: ``todynet {train,eval,inspect-graph}``.

Exit codes: 0 success, 1 data or runtime failure, 2 usage or configuration
error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, artifact_version
from .data import DATA_DIR_ENV, load_uea
from .errors import ConfigurationError, DataError, TodyNetError
from .graph import format_edge_list
from .model import ModelConfig
from .train import evaluate, load_checkpoint, save_checkpoint, train

METRICS_SCHEMA = "todynet.metrics/1"
CHECKPOINT_NAME = "model.ckpt"
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

_DEFAULTS = ModelConfig()


class UsageError(Exception):
    """Bad flag combination detected after parsing."""


def _add_data_flags(p, required):
    p.add_argument("--dataset", required=required, metavar="NAME",
                   help="UEA dataset name; files <NAME>_TRAIN.ts / <NAME>_TEST.ts"
                        + ("" if required else " (default: the one stored in the checkpoint)"))
    p.add_argument("--data-dir", metavar="DIR",
                   help=f"directory holding the .ts files (default: ${DATA_DIR_ENV}, then bundled data)")


def _add_output_flags(p, out_help, out_default):
    p.add_argument("--out", metavar="PATH", default=out_default, help=out_help)
    p.add_argument("--format", choices=("text", "json"), default="text",
                   help="standard-output format (default: %(default)s)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="todynet", description="Dynamic graph network for multivariate time series classification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{train,eval,inspect-graph}")
    sub.required = True

    t = sub.add_parser("train", help="train on <NAME>_TRAIN.ts and evaluate on <NAME>_TEST.ts",
                       description="Train a model, evaluate it on the test split, write metrics and a checkpoint.")
    _add_data_flags(t, required=True)
    t.add_argument("--epochs", type=int, default=_DEFAULTS.epochs, help="training epochs (default: %(default)s)")
    t.add_argument("--batch-size", type=int, default=_DEFAULTS.batch_size, help="batch size (default: %(default)s)")
    t.add_argument("--lr", type=float, default=_DEFAULTS.lr, help="Adam learning rate (default: %(default)s)")
    t.add_argument("--num-graphs", type=int, default=_DEFAULTS.num_graphs,
                   help="number of dynamic graphs / time slots; 1 gives a static graph (default: %(default)s)")
    t.add_argument("--topk", type=int, default=_DEFAULTS.topk,
                   help="neighbours kept per node (default: %(default)s)")
    t.add_argument("--pool-ratio", type=float, default=_DEFAULTS.pool_ratio,
                   help="fraction of nodes kept by each pooling layer, in (0, 1] (default: %(default)s)")
    t.add_argument("--seed", type=int, default=_DEFAULTS.seed, help="random seed (default: %(default)s)")
    t.add_argument("--precision", choices=("f32", "f64"), default=_DEFAULTS.precision,
                   help="floating-point precision (default: %(default)s)")
    t.add_argument("--no-graph", action="store_true", help="ablation: temporal convolutions only")
    t.add_argument("--no-dygraph", action="store_true", help="ablation: one static graph (forces 1 slot)")
    t.add_argument("--no-gpool", action="store_true", help="ablation: no graph pooling")
    _add_output_flags(t, "output directory for metrics.json and model.ckpt (default: %(default)s)", "todynet-run")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a test split",
                       description="Evaluate a checkpoint and print accuracy=<float>.")
    e.add_argument("--checkpoint", required=True, metavar="FILE", help="checkpoint written by train")
    _add_data_flags(e, required=False)
    _add_output_flags(e, "directory for eval_metrics.json (default: the checkpoint's directory)", None)

    g = sub.add_parser("inspect-graph", help="dump a learned adjacency as an edge list",
                       description="Print the sparsified, normalised adjacency of one layer and slot.")
    g.add_argument("--checkpoint", required=True, metavar="FILE", help="checkpoint written by train")
    g.add_argument("--layer", type=int, default=1, help="1-based block index (default: %(default)s)")
    g.add_argument("--slot", type=int, default=1, help="1-based time slot (default: %(default)s)")
    _add_output_flags(g, "write the edge list to this file instead of standard output", None)
    return parser


# ---------------------------------------------------------------- helpers


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _config_from_args(args):
    return ModelConfig(
        num_graphs=args.num_graphs, topk=args.topk, pool_ratio=args.pool_ratio,
        batch_size=args.batch_size, lr=args.lr, epochs=args.epochs, seed=args.seed,
        precision=args.precision, no_graph=args.no_graph, no_dygraph=args.no_dygraph,
        no_gpool=args.no_gpool,
    )


def _manifest(command, cfg, dataset, digest, started):
    return {
        "command": command,
        "config": cfg.to_dict(),
        "dataset": {"name": dataset, "digest": digest},
        "seed": cfg.seed,
        "started_at": started,
        "finished_at": _now(),
        "version": artifact_version(),
    }


def _write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _emit(args, text_lines, doc):
    if args.format == "json":
        print(json.dumps(doc, sort_keys=True))
    else:
        for line in text_lines:
            print(line)


# ---------------------------------------------------------------- commands


def cmd_train(args):
    try:
        cfg = _config_from_args(args)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc
    started = _now()
    t0 = time.perf_counter()
    train_ds, test_ds, digest = load_uea(args.dataset, args.data_dir, normalize=cfg.normalize)
    model, report = train(train_ds, cfg, test_ds)
    out = Path(args.out)
    ckpt = save_checkpoint(model, out / CHECKPOINT_NAME,
                           meta={"dataset": args.dataset, "digest": digest,
                                 "class_labels": list(train_ds.header.class_labels)})
    metrics = {
        "schema": METRICS_SCHEMA,
        "manifest": _manifest("train", cfg, args.dataset, digest, started),
        "accuracy": report.test_accuracy,
        "train_accuracy": report.train_accuracy,
        "best_epoch": report.best_epoch,
        "loss_curve": report.loss_curve,
        "checkpoint": ckpt.name,
        "runtime_s": time.perf_counter() - t0,
    }
    path = _write_json(out / "metrics.json", metrics)
    _emit(args, [f"accuracy={metrics['accuracy']!r}", f"train_accuracy={report.train_accuracy!r}",
                 f"metrics={path}", f"checkpoint={ckpt}"],
          {"accuracy": metrics["accuracy"], "train_accuracy": report.train_accuracy,
           "metrics": str(path), "checkpoint": str(ckpt)})
    return EXIT_OK


def cmd_eval(args):
    started = _now()
    t0 = time.perf_counter()
    model, header = load_checkpoint(args.checkpoint)
    meta = header.get("meta", {})
    dataset = args.dataset or meta.get("dataset")
    if not dataset:
        raise UsageError("--dataset is required: the checkpoint does not name one")
    cfg = model.cfg
    _, test_ds, digest = load_uea(dataset, args.data_dir, normalize=cfg.normalize)
    labels = meta.get("class_labels")
    if labels is not None and list(test_ds.header.class_labels) != list(labels):
        raise DataError(f"checkpoint classes {labels} do not match dataset classes "
                        f"{list(test_ds.header.class_labels)}")
    acc = evaluate(model, test_ds)
    metrics = {
        "schema": METRICS_SCHEMA,
        "manifest": _manifest("eval", cfg, dataset, digest, started),
        "accuracy": acc,
        "loss_curve": [],
        "checkpoint": str(args.checkpoint),
        "runtime_s": time.perf_counter() - t0,
    }
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    path = _write_json(out / "eval_metrics.json", metrics)
    _emit(args, [f"accuracy={acc!r}"], {"accuracy": acc, "metrics": str(path)})
    return EXIT_OK


def cmd_inspect_graph(args):
    model, _ = load_checkpoint(args.checkpoint)
    if model.cfg.no_graph:
        raise UsageError("the checkpoint was trained with --no-graph; it has no adjacency")
    layers = len(model.blocks)
    slots = model.cfg.num_slots
    if not 1 <= args.layer <= layers:
        raise UsageError(f"--layer must be in 1..{layers}, got {args.layer}")
    if not 1 <= args.slot <= slots:
        raise UsageError(f"--slot must be in 1..{slots}, got {args.slot}")
    adj = model.normalized_adjacency(args.layer)
    if args.format == "json":
        A = adj[args.slot - 1]
        edges = [[args.slot, int(i), int(j), float(A[i, j])] for i, j in zip(*A.nonzero())]
        text = json.dumps({"layer": args.layer, "slot": args.slot, "columns": ["slot", "src", "dst", "weight"],
                           "edges": edges}, sort_keys=True) + "\n"
    else:
        text = format_edge_list(adj, slots=[args.slot])
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "inspect-graph": cmd_inspect_graph}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on bad flags
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigurationError) as exc:
        parser.exit(EXIT_USAGE, f"{parser.prog} {args.command}: error: {exc}\n")
    except (TodyNetError, OSError, ValueError, FloatingPointError) as exc:
        print(f"{parser.prog} {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as exc:  # never leak an exit code other than 0/1/2
        print(f"{parser.prog} {args.command}: unexpected {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
