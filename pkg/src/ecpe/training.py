"""Multi-task losses, initialization, the training loop, prediction and evaluation."""

from __future__ import annotations

import copy
import json
import logging
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .batching import Batch, iter_batches
from .corpus import Document, Vocabulary, derive_clause_labels
from .encoder import Variant
from .metrics import EvaluationReport, clause_prf, pair_prf
from .model import E2EModel, ModelConfig, ModelOutput, count_parameters
from .pairing import extract_pairs_with_probs

logger = logging.getLogger(__name__)

EPS = 1e-7
REFERENCE_PARAM_COUNT = 790_257


class ConfigError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, state: "TrainState"):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class LossWeights:
    lambda_c: float = 1.0
    lambda_e: float = 1.0
    lambda_p: float = 2.5
    loss_weight: float = 0.4

    def __post_init__(self):
        if min(self.lambda_c, self.lambda_e, self.lambda_p) < 0:
            raise ConfigError("task weights must be nonnegative")
        if not 0.0 <= self.loss_weight <= 1.0:
            raise ConfigError("loss_weight must lie in [0, 1]")
        if self.lambda_p == 0:
            logger.warning("lambda_p = 0: the pair head receives no training signal")


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    batch_size: int = 32
    epochs: int = 15
    dropout: float = 0.8
    dropout_is_keep_prob: bool = True
    l2: float = 1e-5
    init_bound: float = 0.10
    seed: int = 42
    variant: str = "pext-e"
    gold_labels_available: bool = False
    detach_signal: bool = False
    lambda_c: float = 1.0
    lambda_e: float = 1.0
    lambda_p: float = 2.5
    loss_weight: float = 0.4
    embed_dim: int = 200
    h_w: int = 100
    h_c: int = 100
    d_p: int = 50
    hidden_p: int = 100
    pair_depth: int = 2
    use_positional: bool = True
    clip_distance: int = 10
    threshold: float = 0.5
    max_clauses: int = 30
    max_tokens: int = 40
    min_count: int = 1
    dtype: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        try:
            self.variant = Variant.parse(self.variant).value
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (self.learning_rate > 0 and self.init_bound > 0 and self.l2 >= 0):
            raise ConfigError("learning_rate and init_bound must be positive, l2 nonnegative")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ConfigError(f"dropout {self.dropout} gives keep probability {self.keep_prob}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        self.loss_weights  # noqa: B018  (validates the weights)

    @property
    def keep_prob(self) -> float:
        return self.dropout if self.dropout_is_keep_prob else 1.0 - self.dropout

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_c, self.lambda_e, self.lambda_p, self.loss_weight)

    @property
    def torch_dtype(self) -> torch.dtype:
        return getattr(torch, self.dtype)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size, embed_dim=self.embed_dim, h_w=self.h_w, h_c=self.h_c,
            d_p=self.d_p, hidden_p=self.hidden_p, pair_depth=self.pair_depth,
            use_positional=self.use_positional, clip_distance=self.clip_distance,
            keep_prob=self.keep_prob, variant=self.variant, detach_signal=self.detach_signal,
        )

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    def replace(self, **changes) -> "TrainConfig":
        d = self.to_json()
        d.update(changes)
        return TrainConfig.from_mapping(d)


@dataclass
class TrainState:
    epoch: int = 0
    history: list = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_val_pair_f1: Optional[float] = None
    diverged: bool = False

    def to_json(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# losses


def _cross_entropy(probs: torch.Tensor, gold: torch.Tensor) -> torch.Tensor:
    p = probs.gather(-1, gold.long().unsqueeze(-1)).squeeze(-1)
    return -torch.log(p.clamp(EPS, 1.0 - EPS))


def _masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    if not mask.any():
        return x.new_zeros(())
    return x[mask].mean()


def clause_loss(probs: torch.Tensor, gold: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over real clauses."""
    return _masked_mean(_cross_entropy(probs, gold), mask)


def pair_loss(pair_probs: torch.Tensor, gold: torch.Tensor, mask: Optional[torch.Tensor] = None,
              loss_weight: float = 0.4):
    """Return (L_pos, L_neg, L_p) with L_p = L_pos + loss_weight * L_neg.

    L_pos and L_neg are mean cross-entropies over the positive and the
    negative cells selected by ``mask``; an empty class contributes 0.
    """
    if mask is None:
        mask = torch.ones_like(gold, dtype=torch.bool)
    ce = _cross_entropy(pair_probs, gold)
    pos = mask & (gold == 1)
    neg = mask & (gold == 0)
    l_pos = _masked_mean(ce, pos)
    l_neg = _masked_mean(ce, neg)
    return l_pos, l_neg, l_pos + loss_weight * l_neg


def total_loss(l_e, l_c, l_p, weights: LossWeights):
    for name, value in (("L_e", l_e), ("L_c", l_c), ("L_p", l_p)):
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(v):
            raise FloatingPointError(f"non-finite loss component {name} = {v}")
    return weights.lambda_c * l_c + weights.lambda_e * l_e + weights.lambda_p * l_p


def l2_penalty(model: E2EModel, coefficient: float) -> torch.Tensor:
    return coefficient * sum((w ** 2).sum() for w in model.softmax_weights())


def gold_inputs(model: E2EModel, batch: Batch) -> dict:
    gold = model.variant_config.gold_labels
    if gold is None:
        return {}
    labels = getattr(batch, gold)
    if labels is None:
        raise ConfigError(f"variant {model.config.variant.value} needs gold {gold} labels")
    return {f"gold_{gold}": labels}


def compute_losses(model: E2EModel, batch: Batch, weights: LossWeights, l2: float = 0.0,
                   out: Optional[ModelOutput] = None) -> dict:
    if out is None:
        out = model(batch, **gold_inputs(model, batch))
    mask = batch.clause_mask
    zero = out.pairs.new_zeros(())
    l_e = zero if out.injected == "emotion" else clause_loss(out.emotion, batch.emotion, mask)
    l_c = zero if out.injected == "cause" else clause_loss(out.cause, batch.cause, mask)
    l_pos, l_neg, l_p = pair_loss(out.pairs, batch.pairs, batch.pair_mask, weights.loss_weight)
    l_total = total_loss(l_e, l_c, l_p, weights)
    reg = l2_penalty(model, l2) if l2 else zero
    return {"L_e": l_e, "L_c": l_c, "L_pos": l_pos, "L_neg": l_neg, "L_p": l_p,
            "L_total": l_total, "L2": reg, "objective": l_total + reg}


# --------------------------------------------------------------------------
# initialization


def init_params(model: torch.nn.Module, seed: int, bound: float = 0.10,
                include_embeddings: bool = False) -> torch.nn.Module:
    """Draw every trainable tensor from U(-bound, bound) in a seeded, name-ordered pass.

    Word embeddings are skipped unless ``include_embeddings``; they are
    normally copied from pretrained vectors.
    """
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in sorted(model.named_parameters()):
            if name.endswith("embed.weight") and not include_embeddings:
                continue
            p.copy_(torch.rand(p.shape, generator=g, dtype=torch.float64).mul_(2 * bound).sub_(bound))
            if name.endswith("embed.weight"):
                p[0].zero_()
    return model


def build_model(config: TrainConfig, vocab_size: int, embeddings=None) -> E2EModel:
    model = E2EModel(config.model_config(vocab_size)).to(config.torch_dtype)
    init_params(model, config.seed, config.init_bound, include_embeddings=embeddings is None)
    if embeddings is not None:
        model.set_embeddings(embeddings)
    return model


@contextmanager
def deterministic_mode():
    threads = torch.get_num_threads()
    flag = torch.are_deterministic_algorithms_enabled()
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.set_num_threads(threads)
        torch.use_deterministic_algorithms(flag)


# --------------------------------------------------------------------------
# prediction and evaluation


@dataclass
class DocumentPrediction:
    doc_id: str
    pairs: dict  # (i, j) -> positive-class probability, predicted pairs only
    emotion: list
    cause: list

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "pairs": [[i, j, p] for (i, j), p in sorted(self.pairs.items())],
            "emotion": self.emotion,
            "cause": self.cause,
        }


def predict(model: E2EModel, docs: Sequence[Document], vocab: Vocabulary, batch_size: int = 32,
            threshold: float = 0.5, max_clauses: int = 30, max_tokens: int = 40) -> list[DocumentPrediction]:
    """Score documents. Gold labels are read only by variants that inject them."""
    needs_gold = model.variant_config.gold_labels is not None
    was_training = model.training
    model.eval()
    preds = []
    with torch.no_grad():
        for batch in iter_batches(docs, vocab, batch_size, max_clauses=max_clauses,
                                  max_tokens=max_tokens, with_labels=needs_gold):
            out = model(batch, **gold_inputs(model, batch))
            for b, doc_id in enumerate(batch.doc_ids):
                d = int(batch.doc_lengths[b])
                grid = out.pairs[b, :d, :d, 1].double()
                preds.append(DocumentPrediction(
                    doc_id,
                    extract_pairs_with_probs(grid, threshold),
                    out.emotion[b, :d, 1].double().tolist(),
                    out.cause[b, :d, 1].double().tolist(),
                ))
    model.train(was_training)
    return preds


def evaluate_predictions(preds: Sequence[DocumentPrediction], docs: Sequence[Document],
                         threshold: float = 0.5, **report_fields) -> EvaluationReport:
    by_id = {p.doc_id: p for p in preds}
    proposed, gold = set(), set()
    e_pred, e_gold, c_pred, c_gold = [], [], [], []
    for doc in docs:
        p = by_id[doc.doc_id]
        proposed |= {(doc.doc_id, i, j) for i, j in p.pairs}
        gold |= {(doc.doc_id, i, j) for i, j in doc.gold_pairs}
        labels = derive_clause_labels(doc)
        pad = len(doc) - len(p.emotion)
        e_pred += [int(x > threshold) for x in p.emotion] + [0] * pad
        c_pred += [int(x > threshold) for x in p.cause] + [0] * pad
        e_gold += labels.emotion
        c_gold += labels.cause
    return EvaluationReport(pair_prf(proposed, gold), clause_prf(e_pred, e_gold),
                            clause_prf(c_pred, c_gold), **report_fields)


def evaluate(model: E2EModel, docs: Sequence[Document], vocab: Vocabulary, config: TrainConfig,
             **report_fields) -> EvaluationReport:
    preds = predict(model, docs, vocab, config.batch_size, config.threshold,
                    config.max_clauses, config.max_tokens)
    report_fields.setdefault("variant", config.variant)
    return evaluate_predictions(preds, docs, config.threshold, **report_fields)


# --------------------------------------------------------------------------
# training loop


def _epoch_record(epoch: int, sums: dict, n_batches: int, report: Optional[EvaluationReport]) -> dict:
    rec = {"epoch": epoch}
    rec.update({k: v / n_batches for k, v in sums.items() if k != "objective"})
    if report is not None:
        for block in ("pair", "emotion", "cause"):
            m = getattr(report, block)
            rec[f"val_{block}_p"] = m.precision
            rec[f"val_{block}_r"] = m.recall
            rec[f"val_{block}_f1"] = m.f1
    return rec


def train(train_docs: Sequence[Document], val_docs: Sequence[Document], vocab: Vocabulary,
          embeddings, config: TrainConfig, log_path: Optional[str | Path] = None,
          state_path: Optional[str | Path] = None):
    """Train for ``config.epochs`` epochs; return the best-validation model and the TrainState.

    With no validation documents the final epoch is kept. On a non-finite
    loss the partial state is written to ``state_path`` and TrainingDiverged
    is raised.
    """
    if not train_docs:
        raise ConfigError("empty training set")
    if config.variant in ("cext", "eext") and not config.gold_labels_available:
        raise ConfigError(f"variant {config.variant} requires gold_labels_available")
    weights = config.loss_weights
    state = TrainState()
    log = open(log_path, "w", encoding="utf-8") if log_path else None

    def persist():
        if state_path:
            Path(state_path).write_text(json.dumps(state.to_json(), indent=1) + "\n", encoding="utf-8")

    try:
        with deterministic_mode():
            torch.manual_seed(config.seed)
            model = build_model(config, len(vocab), embeddings)
            opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                                   betas=(0.9, 0.999), eps=1e-8)
            rng = np.random.default_rng(config.seed)
            best = None
            for epoch in range(1, config.epochs + 1):
                model.train()
                sums, n_batches = {}, 0
                order = rng.permutation(len(train_docs))
                for batch in iter_batches(train_docs, vocab, config.batch_size, order,
                                          max_clauses=config.max_clauses, max_tokens=config.max_tokens):
                    try:
                        losses = compute_losses(model, batch, weights, config.l2)
                    except FloatingPointError as exc:
                        state.diverged = True
                        persist()
                        raise TrainingDiverged(f"epoch {epoch}: {exc}", state) from exc
                    opt.zero_grad()
                    losses["objective"].backward()
                    opt.step()
                    for k, v in losses.items():
                        sums[k] = sums.get(k, 0.0) + float(v.detach())
                    n_batches += 1
                report = evaluate(model, val_docs, vocab, config, subset="val") if val_docs else None
                rec = _epoch_record(epoch, sums, n_batches, report)
                state.history.append(rec)
                state.epoch = epoch
                f1 = report.pair.f1 if report is not None else None
                if best is None or (f1 is not None and f1 > state.best_val_pair_f1) or f1 is None:
                    best = copy.deepcopy(model.state_dict())
                    state.best_epoch = epoch
                    state.best_val_pair_f1 = f1
                if log:
                    log.write(json.dumps(rec) + "\n")
                    log.flush()
                logger.info("epoch %d  L_total %.4f  val pair F1 %s", epoch, rec["L_total"],
                            "n/a" if f1 is None else f"{f1:.4f}")
            model.load_state_dict(best)
    finally:
        if log:
            log.close()
    persist()
    return model, state


def count_trainable_params(model: E2EModel) -> dict:
    return {
        "with_embeddings": count_parameters(model, include_embeddings=True),
        "without_embeddings": count_parameters(model, include_embeddings=False),
        "reference_e2e_pext_e": REFERENCE_PARAM_COUNT,
    }
