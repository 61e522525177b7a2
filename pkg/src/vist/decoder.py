"""Slow path: causal decoder with gated cross-attention to visual tokens."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .layers import Attention, Block, LayerNorm, Linear, Module, causal_mask, key_mask
from .tensorcore import Tensor


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 512
    d_model: int = 256
    layers: int = 4
    heads: int = 4
    max_positions: int = 1024
    cross_stride: int = 2
    d_visual: int = 128
    gate_init: float = 0.0
    cross_include_cls: bool = True
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if self.cross_stride < 1 or self.cross_stride > self.layers:
            raise ValueError("cross_stride must be in [1, layers] so at least one cross-attention layer exists")

    @property
    def cross_layers(self) -> list[int]:
        return [i for i in range(self.layers) if (i + 1) % self.cross_stride == 0]


class CrossBlock(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        self.ln = LayerNorm(cfg.d_model, dtype)
        self.attn = Attention(cfg.d_model, cfg.heads, rng, dtype)
        self.gate = Tensor(np.full((1,), cfg.gate_init, dtype=dtype), requires_grad=True)

    def __call__(self, x, vis, mask, present, keep_probs=False):
        y = self.attn(self.ln(x), ctx=vis, mask=mask, keep_probs=keep_probs)
        if present is not None:
            y = tc.mul(y, Tensor(present))
        return tc.add(x, tc.mul(y, self.gate))


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        self.cfg = cfg
        D = cfg.d_model
        self.tok_emb = Tensor(rng.normal(0, 0.02 * 5, size=(cfg.vocab_size, D)).astype(dtype), requires_grad=True)
        self.pos_emb = Tensor(rng.normal(0, 0.02 * 5, size=(cfg.max_positions, D)).astype(dtype), requires_grad=True)
        self.blocks = [Block(D, cfg.heads, rng, dtype, cfg.mlp_ratio) for _ in range(cfg.layers)]
        self.cross = [CrossBlock(cfg, rng, dtype) for _ in cfg.cross_layers]
        self.visual_proj = Linear(cfg.d_visual, D, rng, dtype)
        self.ln_f = LayerNorm(D, dtype)

    @property
    def dtype(self):
        return self.tok_emb.dtype

    def gates(self):
        return [c.gate for c in self.cross]

    def self_attention_parameters(self):
        out = [self.tok_emb, self.pos_emb] + self.ln_f.parameters()
        for b in self.blocks:
            out += b.parameters()
        return out

    def __call__(self, ids, visual=None, visual_valid=None, keep_probs=False):
        """ids (B, T) ints; visual (B, S, D_v) Tensor; visual_valid (B, S) bool.

        Returns logits (B, T, V).
        """
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        B, T = ids.shape
        if T > self.cfg.max_positions:
            raise ValueError(f"sequence length {T} exceeds max_positions {self.cfg.max_positions}")
        x = tc.add(tc.embedding(self.tok_emb, ids), self.pos_emb[:T])
        mask = causal_mask(T, self.dtype)
        vis = vmask = present = None
        if visual is not None and visual.shape[1] > 0:
            if visual.shape[-1] != self.cfg.d_visual:
                raise ValueError(f"visual dim {visual.shape[-1]} != {self.cfg.d_visual}")
            if visual_valid is None:
                visual_valid = np.ones(visual.shape[:2], dtype=bool)
            visual_valid = np.asarray(visual_valid, dtype=bool).copy()
            has = visual_valid.any(axis=1)
            present = None
            if not has.all():
                # samples with no images get a dummy key and a zeroed residual
                visual_valid[~has, 0] = True
                present = has.astype(self.dtype)[:, None, None]
            vis = self.visual_proj(visual)
            vmask = key_mask(visual_valid, self.dtype)
        ci = 0
        for i, blk in enumerate(self.blocks):
            x = blk(x, mask=mask)
            if i in self.cfg.cross_layers:
                if vis is not None:
                    x = self.cross[ci](x, vis, vmask, present, keep_probs)
                ci += 1
        h = self.ln_f(x)
        return tc.matmul(h, tc.transpose(self.tok_emb))


def lm_loss(logits: Tensor, targets, loss_mask=None) -> Tensor:
    """Mean cross-entropy of ``logits[..., t, :]`` against ``targets[..., t]``.

    ``targets`` are already shifted (targets[t] = next token after input t).
    """
    t = np.asarray(targets)
    w = None if loss_mask is None else np.asarray(loss_mask, dtype=logits.dtype)
    if w is not None and w.sum() <= 0:
        raise ValueError("lm_loss: empty loss mask")
    return tc.cross_entropy(logits, t, w)


def generate(decoder: Decoder, prompt, visual=None, visual_valid=None, max_new=16):
    """Greedy decoding; recomputes the full forward each step."""
    seq = list(prompt)
    if len(seq) + max_new > decoder.cfg.max_positions:
        raise ValueError("generate: prompt + max_new exceeds max_positions")
    with tc.no_grad():
        for _ in range(max_new):
            logits = decoder(np.array([seq]), visual, visual_valid)
            seq.append(int(np.argmax(logits.data[0, -1])))
    return seq
