"""Relative positional embeddings, pair representations and the pair classifier."""

from __future__ import annotations

from typing import Optional

import torch
import torch.nn as nn

CLIP_DISTANCE = 10
THRESHOLD = 0.5


def relative_bucket(i: int, j: int, k: int = CLIP_DISTANCE) -> int:
    """Bucket of the signed offset j - i clipped to [-k, k], shifted to [0, 2k]."""
    if k < 1:
        raise ValueError("clip distance must be >= 1")
    return max(-k, min(k, j - i)) + k


def bucket_grid(d: int, k: int = CLIP_DISTANCE, device=None) -> torch.Tensor:
    """d x d tensor of relative buckets, row = emotion index, column = cause index."""
    pos = torch.arange(d, device=device)
    return torch.clamp(pos[None, :] - pos[:, None], -k, k) + k


class PositionalEmbedding(nn.Module):
    """Learned table of 2k+1 vectors indexed by clipped signed clause offset."""

    def __init__(self, dim: int, clip: int = CLIP_DISTANCE):
        super().__init__()
        self.clip = clip
        self.weight = nn.Parameter(torch.empty(2 * clip + 1, dim))
        nn.init.uniform_(self.weight, -0.1, 0.1)

    def lookup(self, offset: int) -> torch.Tensor:
        return self.weight[max(-self.clip, min(self.clip, offset)) + self.clip]

    def forward(self, d: int) -> torch.Tensor:
        return self.weight[bucket_grid(d, self.clip, self.weight.device)]


def pair_representation(r_e: torch.Tensor, r_c: torch.Tensor, pe: Optional[torch.Tensor] = None,
                        extra_labels: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Concatenate emotion part, cause part, positional part and optional labels.

    Works on single vectors as well as broadcast grids, as long as leading
    dimensions agree.
    """
    parts = [r_e, r_c]
    if pe is not None:
        parts.append(pe)
    if extra_labels is not None:
        parts.append(extra_labels)
    lead = r_e.shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ValueError(f"pair part shape {tuple(p.shape)} does not match {tuple(r_e.shape)}")
    return torch.cat(parts, dim=-1)


def pair_grid(r_e: torch.Tensor, r_c: torch.Tensor, pe: Optional[torch.Tensor],
              extra_e: Optional[torch.Tensor] = None, extra_c: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Batched pair representations of shape (B, D, D, width).

    r_e, r_c: (B, D, h). pe: (D, D, d_p). extra_e labels ride with the emotion
    clause (row index), extra_c with the cause clause (column index).
    """
    B, D, _ = r_e.shape
    e = r_e[:, :, None, :].expand(B, D, D, r_e.shape[-1])
    c = r_c[:, None, :, :].expand(B, D, D, r_c.shape[-1])
    p = pe[None].expand(B, D, D, pe.shape[-1]) if pe is not None else None
    extra = None
    if extra_e is not None:
        extra = extra_e[:, :, None, :].expand(B, D, D, extra_e.shape[-1])
    elif extra_c is not None:
        extra = extra_c[:, None, :, :].expand(B, D, D, extra_c.shape[-1])
    return pair_representation(e, c, p, extra)


class PairClassifier(nn.Module):
    """softmax(W_p2 . relu(W_p1 . x + b_p1) + b_p2), or a single softmax layer when depth=1."""

    def __init__(self, in_dim: int, hidden: int = 100, depth: int = 2):
        super().__init__()
        if depth not in (1, 2):
            raise ValueError("pair classifier depth must be 1 or 2")
        self.in_dim = in_dim
        self.depth = depth
        if depth == 2:
            self.hidden = nn.Linear(in_dim, hidden)
            self.out = nn.Linear(hidden, 2)
        else:
            self.hidden = None
            self.out = nn.Linear(in_dim, 2)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"pair representation width {x.shape[-1]} != {self.in_dim}")
        if self.hidden is not None:
            x = torch.relu(self.hidden(x))
        return self.out(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(x), dim=-1)

    def softmax_weights(self) -> list[torch.Tensor]:
        return [self.out.weight] if self.hidden is None else [self.hidden.weight, self.out.weight]


def extract_pairs(grid, threshold: float = THRESHOLD, mask=None) -> set[tuple[int, int]]:
    """Pairs whose positive-class probability is strictly above ``threshold``.

    ``grid`` is a d x d array of positive-class probabilities (or d x d x 2
    distributions); ``mask`` optionally restricts the cells considered.
    """
    g = torch.as_tensor(grid)
    if g.dim() == 3:
        g = g[..., 1]
    keep = g > threshold
    if mask is not None:
        keep &= torch.as_tensor(mask, dtype=torch.bool)
    return {(int(i), int(j)) for i, j in keep.nonzero().tolist()}


def extract_pairs_with_probs(grid, threshold: float = THRESHOLD) -> dict[tuple[int, int], float]:
    g = torch.as_tensor(grid)
    if g.dim() == 3:
        g = g[..., 1]
    return {p: float(g[p]) for p in sorted(extract_pairs(g, threshold))}

