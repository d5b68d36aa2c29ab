"""Hierarchical clause encoders.

A word-level BiLSTM with additive attention pooling turns each clause into a
vector; two clause-level BiLSTMs contextualize those vectors for the emotion
and cause tasks. Which auxiliary signal feeds which clause encoder is fixed
by the model variant (see ``wire_variant``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence


class Variant(str, enum.Enum):
    PEXT_E = "pext-e"
    PEXT_C = "pext-c"
    CEXT = "cext"
    EEXT = "eext"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "-")
        aliases = {"e2e-pext-e": "pext-e", "e2e-pext-c": "pext-c", "e2e-cext": "cext", "e2e-eext": "eext"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown variant {value!r}; expected one of "
                             f"{', '.join(v.value for v in cls)}") from None


class VariantError(ValueError):
    pass


@dataclass(frozen=True)
class VariantConfig:
    variant: Variant = Variant.PEXT_E
    detach_signal: bool = False

    @property
    def first(self) -> str:
        """Auxiliary task whose encoder runs on the bare clause vectors."""
        return "emotion" if self.variant in (Variant.PEXT_E, Variant.CEXT) else "cause"

    @property
    def second(self) -> str:
        return "cause" if self.first == "emotion" else "emotion"

    @property
    def gold_labels(self):
        """Which gold clause labels the variant consumes, or None."""
        return {Variant.CEXT: "emotion", Variant.EEXT: "cause"}.get(self.variant)


@dataclass(frozen=True)
class DataflowPlan:
    variant: Variant
    first_encoder: str
    second_encoder: str
    signal: str
    pair_extra: str | None
    detach_signal: bool
    edges: tuple[tuple[str, str], ...]

    def has_edge(self, src: str, dst: str) -> bool:
        return (src, dst) in self.edges


def wire_variant(config: VariantConfig, labels_available: bool = False) -> DataflowPlan:
    """Resolve a variant into the dataflow between encoders, heads and the pair head."""
    first, second = config.first, config.second
    gold = config.gold_labels
    if gold is not None and not labels_available:
        raise VariantError(f"variant {config.variant.value} needs gold {gold} labels at run time")
    signal = f"gold_{gold}" if gold else f"{first}_head"
    edges = [
        ("clause_vectors", f"{first}_encoder"),
        ("clause_vectors", f"{second}_encoder"),
        (signal, f"{second}_encoder"),
        (f"{second}_encoder", f"{second}_head"),
        ("emotion_encoder", "pair_input"),
        ("cause_encoder", "pair_input"),
        ("positional", "pair_input"),
        ("pair_input", "pair_head"),
    ]
    if gold is None:
        edges.insert(1, (f"{first}_encoder", f"{first}_head"))
    else:
        edges.append((signal, "pair_input"))
    return DataflowPlan(config.variant, f"{first}_encoder", f"{second}_encoder", signal,
                        signal if gold else None, config.detach_signal, tuple(edges))


def _run_lstm(lstm: nn.LSTM, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Run a bidirectional LSTM over padded sequences using their true lengths."""
    packed = pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
    out, _ = lstm(packed)
    out, _ = pad_packed_sequence(out, batch_first=True, total_length=x.shape[1])
    return out


class AdditiveAttention(nn.Module):
    """score_t = ctx . tanh(W h_t + b), softmax over unmasked positions."""

    def __init__(self, dim: int):
        super().__init__()
        self.proj = nn.Linear(dim, dim)
        self.ctx = nn.Parameter(torch.empty(dim))
        nn.init.uniform_(self.ctx, -0.1, 0.1)

    def forward(self, h: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        scores = torch.tanh(self.proj(h)) @ self.ctx
        scores = scores.masked_fill(~mask, float("-inf"))
        alpha = torch.softmax(scores, dim=-1)
        return (alpha.unsqueeze(-1) * h).sum(dim=-2), alpha


class WordEncoder(nn.Module):
    """Embedding lookup, word-level BiLSTM and attention pooling to clause vectors."""

    def __init__(self, vocab_size: int, embed_dim: int = 200, hidden: int = 100,
                 keep_prob: float = 0.8):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, embed_dim, padding_idx=0)
        self.dropout = nn.Dropout(1.0 - keep_prob)
        self.rnn = nn.LSTM(embed_dim, hidden, batch_first=True, bidirectional=True)
        self.attn = AdditiveAttention(2 * hidden)
        self.out_dim = 2 * hidden

    def forward(self, tokens: torch.Tensor, lengths: torch.Tensor):
        """tokens: (N, T) ids, lengths: (N,) all >= 1. Returns (N, 2h) and (N, T) weights."""
        if (lengths < 1).any():
            raise ValueError("cannot encode an empty clause")
        x = self.dropout(self.embed(tokens))
        h = _run_lstm(self.rnn, x, lengths)
        mask = torch.arange(tokens.shape[1], device=tokens.device)[None, :] < lengths[:, None]
        return self.attn(h, mask)

    def encode_clause(self, token_ids) -> tuple[torch.Tensor, torch.Tensor]:
        ids = torch.as_tensor(token_ids, dtype=torch.long)
        ids = ids[ids != 0]
        if ids.numel() == 0:
            raise ValueError("cannot encode an empty clause")
        s, alpha = self(ids[None], torch.tensor([ids.numel()]))
        return s[0], alpha[0]


class ClauseEncoder(nn.Module):
    """Document-level BiLSTM over clause vectors, optionally with an auxiliary signal appended."""

    def __init__(self, in_dim: int, hidden: int = 100, signal_dim: int = 0):
        super().__init__()
        self.signal_dim = signal_dim
        self.rnn = nn.LSTM(in_dim + signal_dim, hidden, batch_first=True, bidirectional=True)
        self.out_dim = 2 * hidden

    def forward(self, clauses: torch.Tensor, lengths: torch.Tensor, signal: torch.Tensor | None = None):
        """clauses: (B, D, in_dim); signal: (B, D, signal_dim) when the encoder takes one."""
        if self.signal_dim:
            if signal is None or signal.shape[:2] != clauses.shape[:2] or signal.shape[-1] != self.signal_dim:
                raise ValueError("auxiliary signal must give one "
                                 f"{self.signal_dim}-vector per clause")
            clauses = torch.cat([clauses, signal], dim=-1)
        elif signal is not None:
            raise ValueError("this encoder takes no auxiliary signal")
        return _run_lstm(self.rnn, clauses, lengths)


class ClauseHead(nn.Module):
    """Binary clause classifier: softmax(W r + b)."""

    def __init__(self, in_dim: int):
        super().__init__()
        self.linear = nn.Linear(in_dim, 2)

    def logits(self, r: torch.Tensor) -> torch.Tensor:
        return self.linear(r)

    def forward(self, r: torch.Tensor) -> torch.Tensor:
        return F.softmax(self.linear(r), dim=-1)
