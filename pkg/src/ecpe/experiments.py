"""Prepared-data workspaces and the train / eval / ablation / sweep runners behind the CLI.

Every runner writes deterministic artifacts; wall-clock metadata goes to a
``meta.json`` sidecar only.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import torch

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import (
    NUM_SPLITS,
    CorpusError,
    SplitSet,
    Vocabulary,
    build_vocabulary,
    filter_embedding_file,
    load_embeddings,
    make_splits,
    parse_corpus,
    select,
)
from .metrics import EvaluationReport, aggregate_splits
from .training import (
    ConfigError,
    TrainConfig,
    count_trainable_params,
    evaluate,
    evaluate_predictions,
    predict,
    train,
)

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")


def write_sidecar(out_dir: Path, **info) -> None:
    write_json(out_dir / "meta.json", {
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "ecpe": __version__, "torch": torch.__version__, "python": platform.python_version(),
        **info,
    })


# --------------------------------------------------------------------------
# prepared workspace


def prepare(corpus_path: str | Path, embeddings_path: str | Path, seed: int, out_dir: str | Path,
            min_count: int = 1) -> dict:
    """Validate inputs, write splits, per-split vocabularies and a filtered embedding file."""
    out = Path(out_dir)
    corpus_path, embeddings_path = Path(corpus_path), Path(embeddings_path)
    for p in (corpus_path, embeddings_path):
        if not p.is_file():
            raise FileNotFoundError(f"no such file: {p}")
    docs = parse_corpus(corpus_path)
    splits = make_splits(docs, seed)
    out.mkdir(parents=True, exist_ok=True)
    (out / "vocab").mkdir(exist_ok=True)
    splits.save(out / "splits.json")
    vocab_files = []
    for k, split in enumerate(splits.splits):
        vocab = build_vocabulary(select(docs, split.train), min_count)
        name = f"vocab/split_{k:02d}.json"
        vocab.save(out / name)
        vocab_files.append(name)
    tokens = {t for d in docs for c in d.clauses for t in c.tokens}
    n_vectors = filter_embedding_file(embeddings_path, out / "embeddings.txt", tokens)
    manifest = {
        "corpus": str(corpus_path.resolve()),
        "embeddings_source": str(embeddings_path.resolve()),
        "embeddings": "embeddings.txt",
        "splits": "splits.json",
        "vocab": vocab_files,
        "seed": seed,
        "min_count": min_count,
        "documents": len(docs),
        "embedding_vectors": n_vectors,
    }
    write_json(out / MANIFEST, manifest)
    return manifest


@dataclass
class Prepared:
    root: Path

    @classmethod
    def open(cls, root: str | Path) -> "Prepared":
        root = Path(root)
        if not (root / MANIFEST).is_file():
            raise FileNotFoundError(f"{root} is not a prepared directory (run `ecpe prepare` first)")
        return cls(root)

    @cached_property
    def manifest(self) -> dict:
        return json.loads((self.root / MANIFEST).read_text(encoding="utf-8"))

    @cached_property
    def corpus(self):
        return parse_corpus(self.manifest["corpus"])

    @cached_property
    def splits(self) -> SplitSet:
        return SplitSet.load(self.root / self.manifest["splits"])

    def vocab(self, split: int) -> Vocabulary:
        self._check_split(split)
        return Vocabulary.load(self.root / self.manifest["vocab"][split])

    def embeddings(self, vocab: Vocabulary, seed: int, dim: int = 200):
        return load_embeddings(self.root / self.manifest["embeddings"], vocab, seed, dim)

    def docs(self, split: int, subset: str):
        self._check_split(split)
        return select(self.corpus, self.splits[split].subset(subset))

    def _check_split(self, split: int) -> None:
        if not 0 <= split < len(self.splits):
            raise CorpusError(f"split {split} out of range [0, {len(self.splits)})")


# --------------------------------------------------------------------------
# runners


def run_train(prepared: Prepared, config: TrainConfig, split: int, out_dir: str | Path) -> dict:
    """Train one split; write checkpoint, epoch log, state and val/test reports."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = prepared.vocab(split)
    emb = prepared.embeddings(vocab, config.seed, config.embed_dim)
    train_docs = prepared.docs(split, "train")
    val_docs = prepared.docs(split, "val")
    write_json(out / "config.json", config.to_json())
    model, state = train(train_docs, val_docs, vocab, emb, config,
                         log_path=out / "train_log.jsonl", state_path=out / "train_state.json")
    save_checkpoint(out / "checkpoint.npz", model, vocab, config.to_json(),
                    extra={"prepared": str(prepared.root.resolve()), "split": split,
                           "best_epoch": state.best_epoch})
    reports = {}
    for subset in ("val", "test"):
        docs = prepared.docs(split, subset)
        report = evaluate(model, docs, vocab, config, split=split, subset=subset)
        write_json(out / f"report_{subset}.json", report.to_json())
        reports[subset] = report
    params = count_trainable_params(model)
    write_json(out / "params.json", params)
    write_sidecar(out, command="train", split=split)
    return {"reports": reports, "state": state, "params": params, "model": model}


def run_train_splits(prepared: Prepared, config: TrainConfig, splits: Sequence[int], out_dir: str | Path) -> dict:
    out = Path(out_dir)
    reports = []
    for k in splits:
        reports.append(run_train(prepared, config, k, out / f"split_{k:02d}")["reports"]["test"])
    summary = aggregate_splits(reports, expected_splits=splits)
    write_json(out / "summary.json", summary)
    return summary


def check_mode(variant: str, mode: str) -> None:
    if mode == "ecpe" and variant in ("cext", "eext"):
        raise ConfigError(f"{variant} consumes gold labels and cannot run in ecpe mode")
    if mode == "ece" and variant not in ("cext", "eext"):
        raise ConfigError(f"ece mode needs a label-injecting variant (cext/eext), checkpoint is {variant}")
    if mode not in ("ecpe", "ece"):
        raise ConfigError(f"unknown mode {mode!r}")


def run_eval(checkpoint: str | Path, mode: str, split: Optional[int] = None, subset: str = "test",
             prepared: Optional[str | Path] = None, predictions_path: Optional[str | Path] = None) -> EvaluationReport:
    model, vocab, meta = load_checkpoint(checkpoint)
    config = TrainConfig.from_mapping(meta["train"])
    check_mode(config.variant, mode)
    extra = meta.get("extra", {})
    split = extra.get("split", 0) if split is None else split
    prep = Prepared.open(prepared or extra.get("prepared", "prepared"))
    docs = prep.docs(split, subset)
    preds = predict(model, docs, vocab, config.batch_size, config.threshold,
                    config.max_clauses, config.max_tokens)
    if predictions_path:
        with open(predictions_path, "w", encoding="utf-8") as f:
            for p in preds:
                f.write(json.dumps(p.to_json()) + "\n")
    return evaluate_predictions(preds, docs, config.threshold, split=split,
                                variant=config.variant, subset=subset)


def ablate_positional(prepared: Prepared, config: TrainConfig, split: int, out_dir: str | Path) -> dict:
    """Train with and without positional embeddings on the same seed and split."""
    out = Path(out_dir)
    runs = {}
    for name, flag in (("with_pe", True), ("without_pe", False)):
        runs[name] = run_train(prepared, config.replace(use_positional=flag), split, out / name)
    result = {"seed": config.seed, "split": split}
    for subset in ("val", "test"):
        f_with = runs["with_pe"]["reports"][subset].pair.f1
        f_without = runs["without_pe"]["reports"][subset].pair.f1
        result[subset] = {"f1_with": f_with, "f1_without": f_without, "delta": f_with - f_without}
    result["params_with"] = runs["with_pe"]["params"]
    result["params_without"] = runs["without_pe"]["params"]
    write_json(out / "ablation.json", result)
    write_sidecar(out, command="ablate-positional")
    return result


def _sweep_point(args) -> dict:
    root, config_json, split, point_dir = args
    prepared = Prepared.open(root)
    config = TrainConfig.from_mapping(config_json)
    run = run_train(prepared, config, split, point_dir)
    row = {"loss_weight": config.loss_weight, "seed": config.seed}
    for subset, report in run["reports"].items():
        row[subset] = {"precision": report.pair.precision, "recall": report.pair.recall,
                       "f1": report.pair.f1, "predicted_count": report.pair.proposed}
    return row


def num_workers() -> int:
    try:
        return max(1, int(os.environ.get("ECPE_NUM_WORKERS", "1")))
    except ValueError:
        return 1


def sweep_loss_weight(prepared: Prepared, config: TrainConfig, weights: Sequence[float],
                      split: int, out_dir: str | Path, seeds: Optional[Sequence[int]] = None,
                      workers: Optional[int] = None) -> dict:
    """One train+eval per (weight, seed); rows average the seeds, sorted by weight."""
    if len(weights) < 2:
        raise ConfigError("the sweep needs at least two loss weights")
    if any(not 0.0 < w <= 1.0 for w in weights):
        raise ConfigError("loss weights must lie in (0, 1]")
    seeds = list(seeds) if seeds else [config.seed]
    weights = sorted(set(weights))
    out = Path(out_dir)
    jobs = [
        (str(prepared.root), config.replace(loss_weight=w, seed=s).to_json(), split,
         str(out / "points" / f"lw_{w:g}_seed_{s}"))
        for w in weights for s in seeds
    ]
    workers = workers or num_workers()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_sweep_point, jobs))
    else:
        points = [_sweep_point(j) for j in jobs]

    rows = {"val": [], "test": []}
    for w in weights:
        mine = [p for p in points if p["loss_weight"] == w]
        for subset in rows:
            avg = {k: sum(p[subset][k] for p in mine) / len(mine)
                   for k in ("precision", "recall", "f1", "predicted_count")}
            rows[subset].append({"loss_weight": w, **avg})
    for subset, name in (("val", "sweep.csv"), ("test", "sweep_test.csv")):
        with open(out / name, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["weight", "P", "R", "F1", "predicted_count"])
            for r in rows[subset]:
                writer.writerow([r["loss_weight"], r["precision"], r["recall"], r["f1"], r["predicted_count"]])
    result = {"split": split, "seeds": seeds, "rows": rows, "points": points}
    write_json(out / "sweep.json", result)
    write_json(out / "plot.json", plot_spec("sweep.csv"))
    write_sidecar(out, command="sweep-loss-weight")
    return result


def plot_spec(csv_name: str) -> dict:
    """Vega-Lite spec: P, R and F1 against the negative-example loss weight."""
    return {
        "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
        "data": {"url": csv_name, "format": {"type": "csv"}},
        "transform": [{"fold": ["P", "R", "F1"], "as": ["metric", "value"]}],
        "mark": {"type": "line", "point": True},
        "encoding": {
            "x": {"field": "weight", "type": "quantitative", "title": "weight of negative examples"},
            "y": {"field": "value", "type": "quantitative"},
            "color": {"field": "metric", "type": "nominal"},
        },
    }


def all_splits() -> list[int]:
    return list(range(NUM_SPLITS))
