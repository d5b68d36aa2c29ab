"""Command line interface.

    ecpe prepare --corpus F --embeddings F --seed N [--out DIR]
    ecpe train --config F --split K --variant {pext-e,pext-c,cext,eext}
    ecpe eval --checkpoint F --mode {ecpe,ece}
    ecpe ablate-positional --config F
    ecpe sweep-loss-weight --config F --weights 0.1,0.2,...
    ecpe report --reports R [R ...] [--checkpoint F]

Exit codes: 0 success, 1 operational failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint
from .corpus import CorpusError
from .encoder import Variant
from .experiments import (
    Prepared,
    ablate_positional,
    all_splits,
    prepare,
    run_eval,
    run_train,
    run_train_splits,
    sweep_loss_weight,
)
from .metrics import EvaluationReport, aggregate_splits, format_table
from .training import ConfigError, TrainConfig, TrainingDiverged, count_trainable_params

logger = logging.getLogger("ecpe")

DEFAULT_SWEEP = [round(0.1 * k, 1) for k in range(1, 11)]

# CLI flag -> TrainConfig field
OVERRIDES = {
    "learning_rate": float, "batch_size": int, "epochs": int, "seed": int,
    "lambda_c": float, "lambda_e": float, "lambda_p": float, "loss_weight": float,
    "dropout": float, "l2": float, "h_w": int, "h_c": int, "d_p": int, "hidden_p": int,
    "pair_depth": int, "threshold": float,
}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def read_config(path: str | None) -> dict:
    """Flat key-value config: a JSON object, or ``key = value`` lines (# comments)."""
    if path is None:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        if any(isinstance(v, (dict, list)) for v in data.values()):
            raise ConfigError(f"{path}: config must be flat key-value")
        return data
    data = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        data[key] = _parse_value(value)
    return data


def build_config(args) -> TrainConfig:
    data = read_config(getattr(args, "config", None))
    for key in OVERRIDES:
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if getattr(args, "variant", None):
        data["variant"] = args.variant
    if getattr(args, "gold_labels", False):
        data["gold_labels_available"] = True
    if getattr(args, "no_positional", False):
        data["use_positional"] = False
    if getattr(args, "detach_signal", False):
        data["detach_signal"] = True
    return TrainConfig.from_mapping(data)


def _weights(text: str) -> list[float]:
    try:
        return [float(w) for w in text.split(",") if w.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad weight list {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(w) for w in text.split(",") if w.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None


def _add_train_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key-value config file")
    p.add_argument("--prepared", default="prepared", help="directory written by `ecpe prepare`")
    p.add_argument("--split", type=int, default=0)
    for key, typ in OVERRIDES.items():
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ)
    p.add_argument("--detach-signal", action="store_true",
                   help="stop gradients through the interactive auxiliary signal")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ecpe", description="End-to-end emotion-cause pair extraction")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="validate corpus, write splits, vocabularies and embeddings cache")
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--out", default="prepared")

    p = sub.add_parser("train", help="train one split (or all with --all-splits)")
    _add_train_options(p)
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--gold-labels", action="store_true",
                   help="declare gold auxiliary labels available (required by cext/eext)")
    p.add_argument("--no-positional", action="store_true")
    p.add_argument("--all-splits", action="store_true")
    p.add_argument("--out")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True,
                   help="checkpoint file, or a run directory with split_XX/ when --all-splits")
    p.add_argument("--mode", choices=["ecpe", "ece"], required=True)
    p.add_argument("--split", type=int)
    p.add_argument("--subset", choices=["train", "val", "test"], default="test")
    p.add_argument("--prepared")
    p.add_argument("--predictions", help="write a JSON-lines prediction dump")
    p.add_argument("--all-splits", action="store_true")
    p.add_argument("--out", help="write the report JSON here")

    p = sub.add_parser("ablate-positional", help="train with and without positional embeddings")
    _add_train_options(p)
    p.add_argument("--out", default="runs/ablate-positional")

    p = sub.add_parser("sweep-loss-weight", help="train+eval across negative-example loss weights")
    _add_train_options(p)
    p.add_argument("--weights", type=_weights, default=DEFAULT_SWEEP)
    p.add_argument("--seeds", type=_ints, help="comma-separated seeds averaged per weight")
    p.add_argument("--out", default="runs/sweep-loss-weight")

    p = sub.add_parser("report", help="aggregate per-split reports and count parameters")
    p.add_argument("--reports", nargs="*", default=[])
    p.add_argument("--expect-splits", type=int, help="require splits 0..N-1")
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    return ap


def _emit(data, out: str | None) -> None:
    text = json.dumps(data, indent=1)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    print(text)


def cmd_prepare(args) -> None:
    manifest = prepare(args.corpus, args.embeddings, args.seed, args.out, args.min_count)
    print(f"prepared {manifest['documents']} documents, {manifest['embedding_vectors']} vectors -> {args.out}")


def cmd_train(args) -> None:
    config = build_config(args)
    prepared = Prepared.open(args.prepared)
    out = Path(args.out or f"runs/{config.variant}")
    if args.all_splits:
        summary = run_train_splits(prepared, config, all_splits(), out)
        print(format_table(summary))
        return
    run_dir = out if args.out else out / f"split_{args.split:02d}"
    try:
        result = run_train(prepared, config, args.split, run_dir)
    except TrainingDiverged as exc:
        raise RuntimeError(f"training diverged ({exc}); partial state in {run_dir}/train_state.json") from exc
    _emit({"checkpoint": str(run_dir / "checkpoint.npz"),
           "best_epoch": result["state"].best_epoch,
           "test": result["reports"]["test"].to_json(),
           "params": result["params"]}, None)


def cmd_eval(args) -> None:
    if args.all_splits:
        root = Path(args.checkpoint)
        reports = [run_eval(root / f"split_{k:02d}" / "checkpoint.npz", args.mode, k, args.subset,
                            args.prepared) for k in all_splits()]
        summary = aggregate_splits(reports, expected_splits=all_splits())
        _emit(summary, args.out)
        return
    report = run_eval(args.checkpoint, args.mode, args.split, args.subset, args.prepared, args.predictions)
    _emit(report.to_json(), args.out)


def cmd_ablate(args) -> None:
    result = ablate_positional(Prepared.open(args.prepared), build_config(args), args.split, args.out)
    _emit(result, None)


def cmd_sweep(args) -> None:
    if len(args.weights) < 2 or any(not 0 < w <= 1 for w in args.weights):
        raise _Usage("--weights needs at least two values in (0, 1]")
    result = sweep_loss_weight(Prepared.open(args.prepared), build_config(args), args.weights,
                               args.split, args.out, args.seeds)
    _emit(result["rows"], None)


def cmd_report(args) -> None:
    out = {}
    if args.reports:
        reports = [EvaluationReport.from_json(json.loads(Path(p).read_text(encoding="utf-8")))
                   for p in args.reports]
        expected = range(args.expect_splits) if args.expect_splits else None
        out["summary"] = aggregate_splits(reports, expected)
        print(format_table(out["summary"]), file=sys.stderr)
    if args.checkpoint:
        model, _, meta = load_checkpoint(args.checkpoint)
        out["parameters"] = {"variant": meta["model"]["variant"], **count_trainable_params(model)}
    if not out:
        raise _Usage("report needs --reports and/or --checkpoint")
    _emit(out, args.out)


class _Usage(Exception):
    pass


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate-positional": cmd_ablate,
    "sweep-loss-weight": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        print(f"ecpe {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, CorpusError, ConfigError, CheckpointError, RuntimeError, ValueError) as exc:
        print(f"ecpe {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
