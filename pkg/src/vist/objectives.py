"""Contrastive visual-text alignment with frequency-based masking."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .tensorcore import Tensor


@dataclass(frozen=True)
class PveConfig:
    tau: float = 0.07
    mask_rate: float = 0.5
    mask_kappa: float = 1.0
    similarity: str = "cosine"  # or "dot"
    symmetric: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ValueError("mask_rate must be in [0, 1]")
        if self.similarity not in ("cosine", "dot"):
            raise ValueError(f"unknown similarity {self.similarity!r}")


def text_anchor(token_embeddings: Tensor, mask=None) -> Tensor:
    """Mean of the unmasked rows (mask True = dropped). Works on (T, D) or (B, T, D)."""
    if mask is None:
        return tc.mean_pool(token_embeddings, axis=-2)
    keep = ~np.asarray(mask, dtype=bool)
    if (keep.sum(axis=-1) == 0).any():
        raise ValueError("text_anchor: every position is masked")
    return tc.mean_pool(token_embeddings, mask=keep, axis=-2)


def similarity_matrix(visual: Tensor, text: Tensor, similarity="cosine") -> Tensor:
    if similarity == "cosine":
        visual, text = tc.l2_normalize(visual), tc.l2_normalize(text)
    return tc.matmul(visual, tc.transpose(text))


def pve_loss(visual_batch: Tensor, text_batch: Tensor, tau=0.07, similarity="cosine", symmetric=False) -> Tensor:
    """Row-wise InfoNCE: mean_i -log softmax(sim[i] / tau)[i]."""
    visual_batch = tc._wrap(visual_batch)
    text_batch = tc._wrap(text_batch, visual_batch.dtype)
    if tau <= 0:
        raise ValueError("pve_loss: tau must be positive")
    B = visual_batch.shape[0]
    if B < 1 or text_batch.shape[0] != B:
        raise ValueError("pve_loss: batch sizes differ or are empty")
    sim = tc.scale(similarity_matrix(visual_batch, text_batch, similarity), 1.0 / tau)
    if not np.all(np.isfinite(sim.data)):
        raise FloatingPointError("pve_loss: non-finite similarities")
    labels = np.arange(B)
    loss = tc.cross_entropy(sim, labels)
    if symmetric:
        loss = tc.scale(tc.add(loss, tc.cross_entropy(tc.transpose(sim), labels)), 0.5)
    return loss


def joint_loss(lm: Tensor, pve: Tensor, lam=1.0) -> Tensor:
    if lam < 0:
        raise ValueError("joint_loss: lambda must be >= 0")
    if lam == 0:
        return lm
    return tc.add(lm, tc.scale(pve, lam))


def semantic_distance(visual, text) -> float:
    """Cosine distance 1 - cos(visual, text)."""
    v = np.asarray(getattr(visual, "data", visual), dtype=np.float64)
    t = np.asarray(getattr(text, "data", text), dtype=np.float64)
    nv, nt = np.linalg.norm(v), np.linalg.norm(t)
    if nv == 0 or nt == 0:
        raise ValueError("semantic_distance: zero vector")
    return float(1.0 - np.dot(v, t) / (nv * nt))
