"""The end-to-end emotion-cause pair extraction network."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .batching import Batch
from .encoder import ClauseEncoder, ClauseHead, Variant, VariantConfig, WordEncoder, wire_variant
from .pairing import CLIP_DISTANCE, PairClassifier, PositionalEmbedding, pair_grid


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 200
    h_w: int = 100
    h_c: int = 100
    d_p: int = 50
    hidden_p: int = 100
    pair_depth: int = 2
    use_positional: bool = True
    clip_distance: int = CLIP_DISTANCE
    keep_prob: float = 0.8
    variant: Variant = Variant.PEXT_E
    detach_signal: bool = False

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)

    @property
    def variant_config(self) -> VariantConfig:
        return VariantConfig(self.variant, self.detach_signal)

    @property
    def pair_in_dim(self) -> int:
        extra = 2 if self.variant_config.gold_labels else 0
        return 4 * self.h_c + (self.d_p if self.use_positional else 0) + extra

    def to_json(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d


@dataclass
class ModelOutput:
    emotion: torch.Tensor    # (B, D, 2)
    cause: torch.Tensor      # (B, D, 2)
    pairs: torch.Tensor      # (B, D, D, 2)
    attention: torch.Tensor  # (B, D, T)
    clause_vectors: torch.Tensor
    r_e: torch.Tensor
    r_c: torch.Tensor
    injected: Optional[str] = None  # which of emotion/cause are gold one-hots
    extras: dict = field(default_factory=dict)


class E2EModel(nn.Module):
    def __init__(self, config: ModelConfig, embeddings=None):
        super().__init__()
        self.config = config
        vc = config.variant_config
        self.word = WordEncoder(config.vocab_size, config.embed_dim, config.h_w, config.keep_prob)
        s_dim = self.word.out_dim
        self.emo_rnn = ClauseEncoder(s_dim, config.h_c, signal_dim=2 if vc.first == "cause" else 0)
        self.cause_rnn = ClauseEncoder(s_dim, config.h_c, signal_dim=2 if vc.first == "emotion" else 0)
        gold = vc.gold_labels
        self.emo_head = ClauseHead(2 * config.h_c) if gold != "emotion" else None
        self.cause_head = ClauseHead(2 * config.h_c) if gold != "cause" else None
        self.pos = PositionalEmbedding(config.d_p, config.clip_distance) if config.use_positional else None
        self.pair = PairClassifier(config.pair_in_dim, config.hidden_p, config.pair_depth)
        if embeddings is not None:
            self.set_embeddings(embeddings)

    @property
    def variant_config(self) -> VariantConfig:
        return self.config.variant_config

    def plan(self, labels_available: bool = False):
        return wire_variant(self.variant_config, labels_available)

    def set_embeddings(self, matrix) -> None:
        m = torch.as_tensor(matrix)
        w = self.word.embed.weight
        if tuple(m.shape) != tuple(w.shape):
            raise ValueError(f"embedding matrix shape {tuple(m.shape)} != {tuple(w.shape)}")
        with torch.no_grad():
            w.copy_(m.to(w.dtype))
            w[0].zero_()

    def softmax_weights(self) -> list[torch.Tensor]:
        """Classifier weight matrices that carry the L2 penalty."""
        ws = [h.linear.weight for h in (self.emo_head, self.cause_head) if h is not None]
        return ws + self.pair.softmax_weights()

    def encode_clauses(self, batch: Batch):
        mask = batch.clause_mask
        B, D, T = batch.tokens.shape
        s_flat, a_flat = self.word(batch.tokens[mask], batch.token_lengths[mask])
        idx = mask.nonzero(as_tuple=True)
        s = s_flat.new_zeros(B, D, s_flat.shape[-1]).index_put(idx, s_flat)
        alpha = a_flat.new_zeros(B, D, T).index_put(idx, a_flat)
        return s, alpha

    def forward(self, batch: Batch, gold_emotion: Optional[torch.Tensor] = None,
                gold_cause: Optional[torch.Tensor] = None) -> ModelOutput:
        vc = self.variant_config
        gold = vc.gold_labels
        gold_tensor = {"emotion": gold_emotion, "cause": gold_cause}.get(gold) if gold else None
        if gold is not None and gold_tensor is None:
            wire_variant(vc, labels_available=False)  # raises

        s, alpha = self.encode_clauses(batch)
        lengths = batch.doc_lengths
        enc = {"emotion": self.emo_rnn, "cause": self.cause_rnn}
        head = {"emotion": self.emo_head, "cause": self.cause_head}

        r_first = enc[vc.first](s, lengths)
        if gold_tensor is None:
            first_probs = head[vc.first](r_first)
            signal = first_probs.detach() if vc.detach_signal else first_probs
        else:
            signal = F.one_hot(gold_tensor.long(), 2).to(s.dtype)
            first_probs = signal
        r_second = enc[vc.second](s, lengths, signal)
        second_probs = head[vc.second](r_second)

        r = {vc.first: r_first, vc.second: r_second}
        probs = {vc.first: first_probs, vc.second: second_probs}
        D = s.shape[1]
        pe = self.pos(D) if self.pos is not None else None
        extra_e = signal if gold == "emotion" else None
        extra_c = signal if gold == "cause" else None
        rep = pair_grid(r["emotion"], r["cause"], pe, extra_e, extra_c)
        pair_probs = self.pair(rep)
        return ModelOutput(probs["emotion"], probs["cause"], pair_probs, alpha, s,
                           r["emotion"], r["cause"], injected=gold)


def count_parameters(model: nn.Module, include_embeddings: bool = True) -> int:
    n = 0
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        if not include_embeddings and name == "word.embed.weight":
            continue
        n += p.numel()
    return n
