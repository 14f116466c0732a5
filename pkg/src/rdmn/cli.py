"""Command line: ``rdmn {gen,train,eval,predict,inspect}``.

Options come from three places, highest precedence first: command-line
flags, a ``--config`` file, built-in defaults. The config file holds one
``key = value`` per line, keys spelled like the long flags with dashes or
underscores (``hops = 4``, ``edge-prob = 0.3``); ``#`` starts a comment.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import tasks
from .graphs import DatasetError, load_dataset, save_dataset, split_dataset
from .model import ModelConfig, ModelError, RDMN, load_model, save_model
from .training import TrainConfig, TrainingError, evaluate, predict, train, write_history

log = logging.getLogger("rdmn")

DEFAULTS = {
    # shared
    "seed": 0,
    "hops": 10,
    "heads": 1,
    "dropout": 0.2,
    "lr": 1e-3,
    "epochs": 50,
    "patience": 5,
    # model / training
    "d_q": 64,
    "d_m": 64,
    "d_a": 32,
    "batch_size": 16,
    # generation
    "family": "multitask",
    "n": 1000,
    "colors": 4,
    "tasks": 3,
    "relations": 1,
    "min_nodes": 4,
    "max_nodes": 8,
    "edge_prob": 0.3,
    "positive_rate": 0.5,
    "side_info": False,
    "split": "0.8,0.1,0.1",
    # inspect
    "index": 0,
}

DATA_FILES = ("train.jsonl", "valid.jsonl", "test.jsonl")


class UsageError(Exception):
    pass


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def read_config_file(path):
    """Parse a sectionless ``key = value`` file into a dict with typed values."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.read_string("[rdmn]\n" + path.read_text(encoding="utf-8"), source=str(path))
    out = {}
    for key, raw in parser["rdmn"].items():
        name = key.replace("-", "_")
        if name not in DEFAULTS:
            raise UsageError(f"{path}: unknown option {key!r}")
        default = DEFAULTS[name]
        try:
            if isinstance(default, bool):
                out[name] = _bool(raw)
            elif isinstance(default, int):
                out[name] = int(raw)
            elif isinstance(default, float):
                out[name] = float(raw)
            else:
                out[name] = raw.strip()
        except ValueError:
            raise UsageError(f"{path}: bad value for {key}: {raw!r}") from None
    return out


def resolve(args):
    """Merge defaults < config file < explicit flags."""
    opts = dict(DEFAULTS)
    if args.config:
        opts.update(read_config_file(args.config))
    for name in DEFAULTS:
        val = getattr(args, name, None)
        if val is not None:
            opts[name] = val
    return opts


# ---------------------------------------------------------------- commands


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(args):
    if not args.out:
        raise UsageError("--out DIR is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args, opts):
    out = _out_dir(args)
    spec = tasks.TaskSpec(
        family=opts["family"],
        n_instances=opts["n"],
        min_nodes=opts["min_nodes"],
        max_nodes=opts["max_nodes"],
        n_colors=opts["colors"],
        n_relations=max(opts["relations"], 2) if opts["family"] == "relation" else opts["relations"],
        n_tasks=opts["tasks"] if opts["family"] == "multitask" else 1,
        edge_prob=opts["edge_prob"],
        positive_rate=opts["positive_rate"],
        side_info=opts["side_info"],
        seed=opts["seed"],
    )
    try:
        fractions = tuple(float(x) for x in opts["split"].split(","))
    except ValueError:
        raise UsageError(f"--split must be three comma-separated fractions, got {opts['split']!r}") from None
    data, schema = tasks.generate(spec)
    splits = split_dataset(data, fractions, seed=opts["seed"])
    manifest = {"spec": asdict(spec), "schema": schema.to_dict(), "seed": opts["seed"], "files": {}}
    for name, part in zip(DATA_FILES, splits):
        save_dataset(out / name, part, schema)
        labels = [inst.label for inst in part]
        manifest["files"][name] = {
            "count": len(part),
            "positive_rate": float(np.mean(labels)) if labels else None,
        }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {len(data)} instances to {out}: " + ", ".join(f"{k}={v['count']}" for k, v in manifest["files"].items()))
    return 0


def _load_split(path, schema=None):
    path = Path(path)
    if path.is_dir():
        raise UsageError(f"{path} is a directory; pass a .jsonl file")
    data, header = load_dataset(path, schema)
    return data, header


def _report_rows(report):
    rows = [("all", report.count, report.loss, report.auc, report.micro_f1, report.macro_f1)]
    for task, r in sorted(report.per_task.items()):
        rows.append((f"task{task}", r.count, r.loss, r.auc, r.micro_f1, r.macro_f1))
    return rows


def _print_report(report, stream=None):
    stream = stream or sys.stdout
    print(f"{'subset':<8} {'n':>6} {'loss':>8} {'auc':>8} {'micro_f1':>9} {'macro_f1':>9}", file=stream)
    for name, n, loss, auc, mi, ma in _report_rows(report):
        print(f"{name:<8} {n:>6d} {loss:>8.4f} {auc:>8.4f} {mi:>9.4f} {ma:>9.4f}", file=stream)


def _write_report(path, report):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subset", "count", "loss", "auc", "micro_f1", "macro_f1"])
        for row in _report_rows(report):
            w.writerow([row[0], row[1]] + [repr(float(x)) for x in row[2:]])


def cmd_train(args, opts):
    if not args.data:
        raise UsageError("--data DIR (holding train/valid/test.jsonl) is required")
    out = _out_dir(args)
    data_dir = Path(args.data)
    train_data, schema = _load_split(data_dir / "train.jsonl")
    valid_data, _ = _load_split(data_dir / "valid.jsonl", schema)
    test_path = data_dir / "test.jsonl"
    test_data = _load_split(test_path, schema)[0] if test_path.exists() else []
    if not train_data or not valid_data:
        raise UsageError("training needs non-empty train.jsonl and valid.jsonl")
    mcfg = ModelConfig.for_schema(
        schema,
        d_q=opts["d_q"],
        d_m=opts["d_m"],
        d_a=opts["d_a"],
        hops=opts["hops"],
        heads=opts["heads"],
        dropout=opts["dropout"],
        seed=opts["seed"],
    )
    tcfg = TrainConfig(
        lr=opts["lr"], batch_size=opts["batch_size"], epochs=opts["epochs"], patience=opts["patience"], seed=opts["seed"]
    )
    model = RDMN(mcfg)
    _, history = train(model, train_data, valid_data, tcfg)
    model_path = Path(args.model) if args.model else out / "model.json"
    save_model(model, model_path)
    write_history(out / "history.csv", history)
    print(f"saved {model_path} after {len(history)} epochs")
    if test_data:
        report = evaluate(model, test_data)
        _write_report(out / "test_report.csv", report)
        _print_report(report)
    return 0


def _model_and_data(args):
    if not args.model:
        raise UsageError("--model PATH is required")
    if not args.data:
        raise UsageError("--data PATH (a .jsonl dataset) is required")
    model = load_model(args.model)
    data, schema = _load_split(args.data)
    if not model.config.compatible_with(schema):
        raise ModelError(
            f"dataset schema {schema.to_dict()} does not match the model "
            f"(d_x={model.config.d_x}, n_relations={model.config.n_relations}, n_classes={model.config.n_classes}, "
            f"n_tasks={model.config.n_tasks}, query_dim={model.config.query_dim})"
        )
    return model, data


def cmd_eval(args, opts):
    model, data = _model_and_data(args)
    if not data:
        raise UsageError(f"{args.data} holds no instances")
    report = evaluate(model, data)
    _print_report(report)
    if args.out:
        _write_report(_out_dir(args) / "eval_report.csv", report)
    return 0


def cmd_predict(args, opts):
    model, data = _model_and_data(args)
    if not data:
        raise UsageError(f"{args.data} holds no instances")
    probs = predict(model, data)
    stream = open(_out_dir(args) / "predictions.csv", "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["id", "label"] + [f"p{c}" for c in range(probs.shape[1])] + ["predicted"])
        for inst, p in zip(data, probs):
            pred = int(p[1] >= 0.5) if probs.shape[1] == 2 else int(np.argmax(p))
            w.writerow([inst.id, inst.label] + [repr(float(x)) for x in p] + [pred])
    finally:
        if stream is not sys.stdout:
            stream.close()
    return 0


def attention_rows(trace):
    """``(hop, component, head, weights)`` sorted by hop, component, head."""
    return [(t, c, k, a) for (t, c, k), a in sorted(trace.attention.items())]


def cmd_inspect(args, opts):
    model, data = _model_and_data(args)
    idx = opts["index"]
    if not 0 <= idx < len(data):
        raise UsageError(f"--index {idx} outside 0..{len(data) - 1}")
    inst = data[idx]
    probs, trace = model.forward(inst)
    rows = attention_rows(trace)
    width = max(len(a) for *_, a in rows) if rows else 0
    stream = open(_out_dir(args) / "attention.csv", "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["hop", "component", "head"] + [f"cell{i}" for i in range(width)])
        for t, c, k, a in rows:
            w.writerow([t, c, k] + [repr(float(x)) for x in a] + [""] * (width - len(a)))
    finally:
        if stream is not sys.stdout:
            stream.close()
    log.info("instance %s: probabilities %s", inst.id, probs.value.tolist())
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "inspect": cmd_inspect}


def build_parser():
    parser = argparse.ArgumentParser(prog="rdmn", description="Relational dynamic memory networks on graph sets.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    shared = argparse.ArgumentParser(add_help=False)
    g = shared.add_argument_group("shared options")
    g.add_argument("--config", metavar="PATH", help="key = value option file (flags override it)")
    g.add_argument("--data", metavar="PATH", help="dataset directory (train) or .jsonl file (eval/predict/inspect)")
    g.add_argument("--out", metavar="DIR", help="output directory")
    g.add_argument("--model", metavar="PATH", help="model file to read, or to write for train")
    g.add_argument("--seed", type=int, help=f"random seed (default {DEFAULTS['seed']})")
    g.add_argument("--hops", type=int, help=f"reasoning steps T (default {DEFAULTS['hops']})")
    g.add_argument("--heads", type=int, help=f"read heads K (default {DEFAULTS['heads']})")
    g.add_argument("--dropout", type=float, help=f"dropout rate (default {DEFAULTS['dropout']})")
    g.add_argument("--lr", type=float, help=f"Adam learning rate (default {DEFAULTS['lr']})")
    g.add_argument("--epochs", type=int, help=f"max epochs (default {DEFAULTS['epochs']})")
    g.add_argument("--patience", type=int, help=f"early-stopping patience (default {DEFAULTS['patience']})")

    p = sub.add_parser("gen", parents=[shared], help="generate a synthetic dataset")
    p.add_argument("--family", choices=tasks.FAMILIES, help=f"task family (default {DEFAULTS['family']})")
    p.add_argument("--n", type=int, help=f"instance count (default {DEFAULTS['n']})")
    p.add_argument("--colors", type=int, help=f"node color alphabet (default {DEFAULTS['colors']})")
    p.add_argument("--tasks", type=int, help=f"tasks for the multitask family (default {DEFAULTS['tasks']})")
    p.add_argument("--relations", type=int, help=f"relation types (default {DEFAULTS['relations']}; relation family uses >= 2)")
    p.add_argument("--min-nodes", dest="min_nodes", type=int, help=f"default {DEFAULTS['min_nodes']}")
    p.add_argument("--max-nodes", dest="max_nodes", type=int, help=f"default {DEFAULTS['max_nodes']}")
    p.add_argument("--edge-prob", dest="edge_prob", type=float, help=f"default {DEFAULTS['edge_prob']}")
    p.add_argument("--positive-rate", dest="positive_rate", type=float, help=f"default {DEFAULTS['positive_rate']}")
    p.add_argument("--side-info", dest="side_info", action="store_true", default=None, help="dense side-information queries (pair family)")
    p.add_argument("--split", help=f"train,valid,test fractions (default {DEFAULTS['split']})")

    p = sub.add_parser("train", parents=[shared], help="train a model on DIR/{train,valid,test}.jsonl")
    p.add_argument("--d-q", dest="d_q", type=int, help=f"controller/query size (default {DEFAULTS['d_q']})")
    p.add_argument("--d-m", dest="d_m", type=int, help=f"memory cell size (default {DEFAULTS['d_m']})")
    p.add_argument("--d-a", dest="d_a", type=int, help=f"attention score size (default {DEFAULTS['d_a']})")
    p.add_argument("--batch-size", dest="batch_size", type=int, help=f"instances per update (default {DEFAULTS['batch_size']})")

    sub.add_parser("eval", parents=[shared], help="evaluate --model on --data")
    sub.add_parser("predict", parents=[shared], help="write class probabilities for --data")
    p = sub.add_parser("inspect", parents=[shared], help="dump attention weights for one instance")
    p.add_argument("--index", type=int, help="instance position in --data (default 0)")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        opts = resolve(args)
        return COMMANDS[args.command](args, opts)
    except UsageError as exc:
        print(f"rdmn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, ModelError, TrainingError, tasks.GenerationError, FileNotFoundError, ValueError) as exc:
        print(f"rdmn {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
