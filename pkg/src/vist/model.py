"""The assembled slow-fast model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .config import RunConfig
from .decoder import Decoder
from .layers import Linear, Module
from .render import PatchGrid
from .tensorcore import Tensor
from .vision import Resampler, VisionEncoder, VisualFeatures, encode_images, pool_groups


@dataclass
class Context:
    """Resampled visual tokens for a batch: images concatenated in sample order."""

    tokens: Tensor  # (sum M, N+1, D_v)
    counts: list  # images per sample

    @property
    def batch(self) -> int:
        return len(self.counts)


def compact(F, valid):
    """Move valid rows to the front and trim the all-invalid tail columns.

    Invalid keys get zero attention weight, so dropping them leaves the
    resampler output unchanged up to summation order.
    """
    n = valid.sum(axis=1)
    width = int(n.max())
    if width == valid.shape[1]:
        return F, valid
    order = np.argsort(~valid, axis=1, kind="stable")[:, :width]
    Fc = np.take_along_axis(F, order[:, :, None], axis=1)
    vc = np.arange(width)[None, :] < n[:, None]
    return Fc, vc


class VistModel(Module):
    def __init__(self, cfg: RunConfig, seed: int = 0):
        self.cfg = cfg
        dtype = cfg.dtype
        rng = np.random.default_rng([seed, 7])
        self.encoder = VisionEncoder(cfg.vision(), rng, dtype)
        self.resampler = Resampler(cfg.resampler(), rng, dtype)
        self.decoder = Decoder(cfg.model(), rng, dtype)
        self.pve_proj = Linear(cfg.d_visual, cfg.d_model, rng, dtype)
        self.encoder.set_trainable(False)
        if not cfg.train_self_attention:
            for p in self.decoder.self_attention_parameters():
                p.requires_grad = False

    @property
    def dtype(self):
        return self.decoder.dtype

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    # ---- fast path
    def image_features(self, grids: list[PatchGrid]) -> VisualFeatures:
        with tc.no_grad():
            return encode_images(grids, self.encoder)

    def context(self, feats: list[VisualFeatures]) -> Context:
        counts = [f.num_images for f in feats]
        L, D = self.encoder.cfg.seq_len, self.cfg.d_visual
        if sum(counts) == 0:
            return Context(Tensor(np.zeros((0, self.resampler.cfg.tokens_per_image, D), dtype=self.dtype)), counts)
        F = np.concatenate([f.F.data for f in feats if f.num_images], axis=0)
        valid = np.concatenate([f.valid for f in feats if f.num_images], axis=0)
        F, valid = compact(F, valid)
        tokens = self.resampler(VisualFeatures(Tensor(F), valid))
        return Context(tokens, counts)

    def decoder_visual(self, ctx: Context):
        """Pad per-sample visual tokens to (B, S_max, D_v) plus a validity mask."""
        toks = ctx.tokens
        if not self.cfg.cross_include_cls and toks.shape[0]:
            toks = toks[:, 1:, :]
        per = toks.shape[1]
        S = max(ctx.counts) * per if ctx.counts else 0
        if S == 0:
            return None, None
        D = toks.shape[2]
        flat = tc.reshape(toks, (-1, D))
        pad_row = flat.shape[0]
        flat = tc.concat([flat, Tensor(np.zeros((1, D), dtype=self.dtype))], axis=0)
        idx = np.full((ctx.batch, S), pad_row, dtype=np.int64)
        valid = np.zeros((ctx.batch, S), dtype=bool)
        start = 0
        for b, c in enumerate(ctx.counts):
            n = c * per
            idx[b, :n] = np.arange(start, start + n)
            valid[b, :n] = True
            start += n
        return tc.slice_(flat, idx), valid

    def pooled_visual(self, ctx: Context) -> Tensor:
        """Projected mean-of-CLS per sample, (B, D_m)."""
        cls = ctx.tokens[:, 0, :]
        return self.pve_proj(pool_groups(cls, ctx.counts))

    def text_embeddings(self, ids) -> Tensor:
        return tc.embedding(self.decoder.tok_emb, np.asarray(ids, dtype=np.int64))

    # ---- slow path
    def logits(self, dec_ids, ctx: Context | None = None, keep_probs=False) -> Tensor:
        vis = valid = None
        if ctx is not None:
            vis, valid = self.decoder_visual(ctx)
        return self.decoder(dec_ids, vis, valid, keep_probs=keep_probs)

    def zero_gates(self):
        for g in self.decoder.gates():
            g.data[...] = 0.0

    def gate_values(self):
        return [float(g.data[0]) for g in self.decoder.gates()]
