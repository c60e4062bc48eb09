"""Operator command line: prepare, check-grad, train, evaluate, sweep.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.  All
randomness flows from the single root seed recorded in the run manifest;
given the manifest and the prepared data, a run reproduces bit-identical
checkpoints and reports.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__, config as config_mod, training
from .config import Config, ConfigError
from .data import (
    Dataset,
    IdIndex,
    ParseError,
    build_index,
    canonical_social_edges,
    count_social_relations,
    load_interactions,
    load_social,
    read_split_manifest,
    split_interactions,
    write_split_manifest,
)
from .evaluation import evaluate_params, format_report, machine_lines
from .gradcheck import check_gradients
from .training import CheckpointError, TrainingError, load_checkpoint, save_checkpoint

USERS_FILE = "users.tsv"
ITEMS_FILE = "items.tsv"
SPLIT_FILE = "split_manifest.tsv"
SOCIAL_FILE = "social_edges.tsv"
OUT_ROOT_ENV = "DISREC_OUT_ROOT"


class UsageError(Exception):
    """Bad invocation: missing files, unknown keys, malformed flags."""


# ---------------------------------------------------------------------------
# prepared-data directory


def _require_file(path) -> str:
    if not os.path.isfile(path):
        raise UsageError(f"file not found: {path}")
    return path


def write_prepared(out_dir, index: IdIndex, split, social_edges) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "users": os.path.join(out_dir, USERS_FILE),
        "items": os.path.join(out_dir, ITEMS_FILE),
        "split": os.path.join(out_dir, SPLIT_FILE),
        "social": os.path.join(out_dir, SOCIAL_FILE),
    }
    with open(paths["users"], "w", encoding="utf-8") as fh:
        fh.writelines(f"{raw}\n" for raw in index.user_ids())
    with open(paths["items"], "w", encoding="utf-8") as fh:
        fh.writelines(f"{raw}\n" for raw in index.item_ids())
    write_split_manifest(paths["split"], split, index)
    with open(paths["social"], "w", encoding="utf-8") as fh:
        fh.writelines(f"{u}\t{v}\n" for u, v in social_edges)
    return paths


def load_prepared(data_dir) -> Dataset:
    for name in (USERS_FILE, ITEMS_FILE, SPLIT_FILE, SOCIAL_FILE):
        _require_file(os.path.join(data_dir, name))
    with open(os.path.join(data_dir, USERS_FILE), encoding="utf-8") as fh:
        user_map = {line.rstrip("\n"): i for i, line in enumerate(fh) if line.rstrip("\n")}
    with open(os.path.join(data_dir, ITEMS_FILE), encoding="utf-8") as fh:
        item_map = {line.rstrip("\n"): i for i, line in enumerate(fh) if line.rstrip("\n")}
    index = IdIndex(user_map, item_map)
    split = read_split_manifest(os.path.join(data_dir, SPLIT_FILE), index)
    social = []
    with open(os.path.join(data_dir, SOCIAL_FILE), encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                u, v = line.split("\t")
                social.append((int(u), int(v)))
    edges = np.array(social, dtype=np.int64) if social else np.empty((0, 2), dtype=np.int64)
    return Dataset(
        num_users=index.num_users,
        num_items=index.num_items,
        split=split,
        social_edges=edges,
        index=index,
    )


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, config: Config, data_dir, outputs: dict[str, str]) -> None:
    manifest = {
        "version": __version__,
        "seed": config.seed,
        "config": config_mod.to_dict(config),
        "data_checksums": {
            name: _sha256(os.path.join(data_dir, name))
            for name in (USERS_FILE, ITEMS_FILE, SPLIT_FILE, SOCIAL_FILE)
        },
        "outputs": outputs,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# shared flag handling


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="config file of 'key = value' lines")
    parser.add_argument("--dim", type=int)
    parser.add_argument("--item-layers", type=int, dest="item_layers")
    parser.add_argument("--social-layers", type=int, dest="social_layers")
    parser.add_argument("--projector", choices=["on", "off"])
    parser.add_argument("--projector-depth", type=int, dest="projector_depth")
    parser.add_argument("--tau", type=float)
    parser.add_argument("--lambda1", type=float)
    parser.add_argument("--lambda2", type=float)
    parser.add_argument("--lambda3", type=float)
    parser.add_argument("--negatives-scope", choices=["batch", "full"], dest="negatives_scope")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int, dest="batch_size")
    parser.add_argument("--lr", type=float)
    parser.add_argument("--patience", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--eval-k", type=int, dest="eval_k")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any namespaced config key, e.g. aug.social.view2=edge_add:0.2",
    )


_FLAG_TO_KEY = {
    "dim": "model.dim",
    "item_layers": "model.item_layers",
    "social_layers": "model.social_layers",
    "projector": "model.projector",
    "projector_depth": "model.projector_depth",
    "tau": "loss.tau",
    "lambda1": "loss.lambda1",
    "lambda2": "loss.lambda2",
    "lambda3": "loss.lambda3",
    "negatives_scope": "loss.negatives_scope",
    "epochs": "train.epochs",
    "batch_size": "train.batch_size",
    "lr": "train.lr",
    "patience": "train.patience",
    "seed": "train.seed",
    "eval_k": "eval.k",
}


def _build_config(args) -> Config:
    config = config_mod.from_file(_require_file(args.config)) if args.config else Config()
    overrides: dict[str, str] = {}
    for flag, key in _FLAG_TO_KEY.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    return config_mod.apply_overrides(config, overrides)


def _run_dir(args, config: Config) -> str:
    if args.out:
        return args.out
    root = os.environ.get(OUT_ROOT_ENV, "runs")
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return os.path.join(root, f"{stamp}-seed{config.seed}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_prepare(args) -> int:
    records = load_interactions(_require_file(args.ratings), min_rating=args.min_rating)
    if len(records) < 10:
        raise UsageError(f"only {len(records)} interactions survive the rating filter")
    index = build_index(records)
    relations = 0
    social_edges = np.empty((0, 2), dtype=np.int64)
    if args.social:
        social_records = load_social(_require_file(args.social), index)
        relations = count_social_relations(args.social, index)
        social_edges = canonical_social_edges(social_records, index)
    if len(social_edges) == 0:
        print("warning: no usable social relations; social-free mode", file=sys.stderr)
    split = split_interactions(records, (8, 1, 1), seed=args.seed, index=index)
    write_prepared(args.out, index, split, social_edges)

    m, n, r = index.num_users, index.num_items, len(records)
    density = 100.0 * r / (m * n)
    header = f"{'#Users':>10}  {'#Items':>10}  {'#Ratings':>10}  {'#Relations':>10}  {'Density':>8}"
    row = f"{m:>10,}  {n:>10,}  {r:>10,}  {relations:>10,}  {density:>7.3f}%"
    print(header)
    print(row)
    print(f"split sizes: train={len(split.train)} validation={len(split.validation)} test={len(split.test)}")
    print(f"prepared data written to {args.out}")
    return 0


def cmd_check_grad(args) -> int:
    report = check_gradients(
        seed=args.seed,
        tolerance=args.tolerance,
        epsilon=args.epsilon,
        with_social=not args.no_social,
    )
    print(report.render(), end="")
    return 0 if report.passed else 1


def cmd_train(args) -> int:
    dataset = load_prepared(args.data)
    config = _build_config(args)
    run_dir = _run_dir(args, config)
    os.makedirs(run_dir, exist_ok=True)
    outputs = {
        "checkpoint": os.path.join(run_dir, "checkpoint.bin"),
        "trainlog": os.path.join(run_dir, "trainlog.tsv"),
        "config": os.path.join(run_dir, "config.txt"),
    }
    write_manifest(os.path.join(run_dir, "manifest.json"), config, args.data, outputs)
    with open(outputs["config"], "w", encoding="utf-8") as fh:
        fh.write(config_mod.to_text(config))

    def progress(record):
        print(
            f"epoch {record.epoch:4d}  main={record.main:.4f}  "
            f"collab={record.collaborative:.4f}  social={record.social:.4f}  "
            f"cross={record.cross_domain:.4f}  reg={record.regularizer:.4f}  "
            f"total={record.total:.4f}  val_recall@{config.eval_k}={record.val_metric:.4f}"
        )

    result = training.fit(dataset, config, progress=progress)
    save_checkpoint(outputs["checkpoint"], result.params, result.state, max(result.log.best_epoch, 0), config)
    result.log.to_tsv(outputs["trainlog"])
    print(
        f"best epoch {result.log.best_epoch} "
        f"(val recall@{config.eval_k} = {result.log.best_metric:.4f}); "
        f"artifacts in {run_dir}"
    )
    return 0


def cmd_evaluate(args) -> int:
    path = args.checkpoint
    if not os.path.isfile(path):
        raise UsageError(f"checkpoint not found: {path}")
    params, _, _, config = load_checkpoint(path)
    dataset = load_prepared(args.data)
    if params.user_emb.shape[0] != dataset.num_users or params.item_emb.shape[0] != dataset.num_items:
        raise CheckpointError(
            f"checkpoint was trained on {params.user_emb.shape[0]} users / "
            f"{params.item_emb.shape[0]} items, data has {dataset.num_users} / {dataset.num_items}"
        )
    report = evaluate_params(
        dataset,
        params,
        config,
        fold=args.fold,
        k=args.k,
        exclude_train=not args.include_train_items,
        collect_per_user=args.per_user is not None,
    )
    text = format_report(report, title=f"fold: {args.fold}") + machine_lines(report)
    print(text, end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    if args.per_user:
        with open(args.per_user, "w", encoding="utf-8") as fh:
            fh.write("user\tndcg\trecall\tprecision\n")
            for user, (ndcg, recall, precision) in report.per_user:
                fh.write(f"{user}\t{ndcg:.10f}\t{recall:.10f}\t{precision:.10f}\n")
    return 0


def cmd_sweep(args) -> int:
    dataset = load_prepared(args.data)
    base = _build_config(args)
    grid1 = [float(x) for x in args.lambda1_grid.split(",")]
    grid2 = [float(x) for x in args.lambda2_grid.split(",")]
    rows = []
    for l1 in grid1:
        for l2 in grid2:
            config = dataclasses.replace(base, lambda1=l1, lambda2=l2)
            try:
                result = training.fit(dataset, config)
                report = evaluate_params(dataset, result.params, config, fold=args.fold)
                rows.append((l1, l2, report.ndcg, report.recall, report.precision, ""))
                status = f"ndcg={report.ndcg:.5f}"
            except Exception as exc:  # keep sweeping on per-cell failure
                rows.append((l1, l2, float("nan"), float("nan"), float("nan"), str(exc)))
                status = f"FAILED ({exc})"
            print(f"cell lambda1={l1:g} lambda2={l2:g}: {status}", file=sys.stderr)
    rows.sort(key=lambda r: (-(r[2] if np.isfinite(r[2]) else -np.inf), r[0], r[1]))
    lines = [f"{'lambda1':>9}  {'lambda2':>9}  {'ndcg':>9}  {'recall':>9}  {'precision':>9}  note"]
    for l1, l2, ndcg, recall, precision, note in rows:
        lines.append(
            f"{l1:>9g}  {l2:>9g}  {ndcg:>9.5f}  {recall:>9.5f}  {precision:>9.5f}  {note}"
        )
    table = "\n".join(lines) + "\n"
    print(table, end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table)
    return 0


# ---------------------------------------------------------------------------
# parser and entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="disrec",
        description="Disentangled contrastive social recommendation engine",
    )
    parser.add_argument("--version", action="version", version=f"disrec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="filter, index, split and write prepared data")
    p.add_argument("--ratings", required=True, help="ratings file: user item rating")
    p.add_argument("--social", help="relations file: user friend")
    p.add_argument("--min-rating", type=float, default=4.0, dest="min_rating")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory for prepared data")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("check-grad", help="verify tape gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--no-social", action="store_true", dest="no_social")
    p.set_defaults(func=cmd_check_grad)

    p = sub.add_parser("train", help="train on prepared data")
    p.add_argument("--data", required=True, help="prepared data directory")
    p.add_argument("--out", help=f"run directory (default: ${OUT_ROOT_ENV}/<timestamp>-seed<k>)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on one fold")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--fold", choices=["train", "validation", "test"], default="test")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", help="also write the report to this file")
    p.add_argument("--per-user", dest="per_user", help="write per-user metrics to this file")
    p.add_argument(
        "--include-train-items",
        action="store_true",
        dest="include_train_items",
        help="debug: rank training items too instead of excluding them",
    )
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="grid-search lambda1 x lambda2")
    p.add_argument("--data", required=True)
    p.add_argument("--lambda1-grid", default="0,0.001,0.01,0.1,1,10", dest="lambda1_grid")
    p.add_argument("--lambda2-grid", default="0,0.001,0.01,0.1,1,10", dest="lambda2_grid")
    p.add_argument("--fold", choices=["validation", "test"], default="test")
    p.add_argument("--out", help="write the summary table to this file")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, ParseError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
