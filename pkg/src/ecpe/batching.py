"""Padding documents into fixed-shape tensors."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import torch

from .corpus import Document, Vocabulary, derive_clause_labels

logger = logging.getLogger(__name__)

MAX_CLAUSES = 30
MAX_TOKENS = 40


@dataclass
class Batch:
    doc_ids: list[str]
    tokens: torch.Tensor        # (B, D, T) token ids, 0 = PAD
    token_lengths: torch.Tensor  # (B, D), 0 for padded clauses
    doc_lengths: torch.Tensor   # (B,)
    emotion: Optional[torch.Tensor] = None  # (B, D) gold clause labels
    cause: Optional[torch.Tensor] = None
    pairs: Optional[torch.Tensor] = None    # (B, D, D) gold pair labels

    @property
    def clause_mask(self) -> torch.Tensor:
        D = self.tokens.shape[1]
        return torch.arange(D)[None, :] < self.doc_lengths[:, None]

    @property
    def pair_mask(self) -> torch.Tensor:
        m = self.clause_mask
        return m[:, :, None] & m[:, None, :]

    def without_labels(self) -> "Batch":
        return Batch(self.doc_ids, self.tokens, self.token_lengths, self.doc_lengths)

    def __len__(self) -> int:
        return len(self.doc_ids)


def make_batch(docs: Sequence[Document], vocab: Vocabulary, max_clauses: int = MAX_CLAUSES,
               max_tokens: int = MAX_TOKENS, pad_clauses: int | None = None,
               pad_tokens: int | None = None, with_labels: bool = True) -> Batch:
    """Encode documents, truncating to the caps and padding to the batch maximum.

    ``pad_clauses``/``pad_tokens`` force larger padded shapes. Gold pairs that
    point past the clause cap are dropped from the targets.
    """
    enc = []
    for doc in docs:
        clauses = doc.clauses
        if len(clauses) > max_clauses:
            logger.warning("doc %s: truncated %d clauses to %d", doc.doc_id, len(clauses), max_clauses)
            clauses = clauses[:max_clauses]
        ids = []
        for k, c in enumerate(clauses):
            if len(c.tokens) > max_tokens:
                logger.warning("doc %s clause %d: truncated %d tokens to %d",
                               doc.doc_id, k, len(c.tokens), max_tokens)
            ids.append(vocab.encode(c.tokens[:max_tokens]))
        enc.append(ids)

    B = len(docs)
    D = max(len(ids) for ids in enc)
    T = max(len(t) for ids in enc for t in ids)
    if pad_clauses is not None:
        D = max(D, pad_clauses)
    if pad_tokens is not None:
        T = max(T, pad_tokens)
    tokens = torch.zeros(B, D, T, dtype=torch.long)
    token_lengths = torch.zeros(B, D, dtype=torch.long)
    doc_lengths = torch.zeros(B, dtype=torch.long)
    for b, ids in enumerate(enc):
        doc_lengths[b] = len(ids)
        for k, t in enumerate(ids):
            tokens[b, k, : len(t)] = torch.tensor(t, dtype=torch.long)
            token_lengths[b, k] = len(t)

    batch = Batch([d.doc_id for d in docs], tokens, token_lengths, doc_lengths)
    if not with_labels:
        return batch
    batch.emotion = torch.zeros(B, D, dtype=torch.long)
    batch.cause = torch.zeros(B, D, dtype=torch.long)
    batch.pairs = torch.zeros(B, D, D, dtype=torch.long)
    for b, doc in enumerate(docs):
        d = int(doc_lengths[b])
        labels = derive_clause_labels(doc)
        batch.emotion[b, :d] = torch.tensor(labels.emotion[:d])
        batch.cause[b, :d] = torch.tensor(labels.cause[:d])
        for i, j in doc.gold_pairs:
            if i < d and j < d:
                batch.pairs[b, i, j] = 1
            else:
                logger.warning("doc %s: gold pair (%d, %d) lost to truncation", doc.doc_id, i, j)
    return batch


def iter_batches(docs: Sequence[Document], vocab: Vocabulary, batch_size: int, order=None, **kw):
    order = range(len(docs)) if order is None else order
    order = list(order)
    for start in range(0, len(order), batch_size):
        yield make_batch([docs[k] for k in order[start : start + batch_size]], vocab, **kw)

