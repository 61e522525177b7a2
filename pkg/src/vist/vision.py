"""Fast path: small ViT over patch grids and a Perceiver-style resampler."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .layers import MLP, Attention, Block, LayerNorm, Linear, Module, key_mask
from .render import PatchGrid
from .tensorcore import Tensor


@dataclass(frozen=True)
class VisionConfig:
    patch_dim: int = 14 * 14 * 3
    num_patches: int = 256
    d_model: int = 128
    layers: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    frozen: bool = True
    pretrain_mode: str = "frozen-random"  # or "masked-pixel-reconstruction"

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError("vision d_model must be divisible by heads")
        if self.pretrain_mode not in ("frozen-random", "masked-pixel-reconstruction"):
            raise ValueError(f"unknown pretrain_mode {self.pretrain_mode!r}")

    @property
    def seq_len(self) -> int:
        return self.num_patches + 1


@dataclass(frozen=True)
class ResamplerConfig:
    latents: int = 64  # N; one extra CLS latent is always added
    d_model: int = 128
    depth: int = 2
    heads: int = 4
    mlp_ratio: int = 4
    latent_self_attention: bool = False

    @property
    def tokens_per_image(self) -> int:
        return self.latents + 1


@dataclass
class VisualFeatures:
    F: Tensor  # (M, L, D_v)
    valid: np.ndarray  # (M, L) bool; CLS column always True

    @property
    def num_images(self) -> int:
        return self.valid.shape[0]


class VisionEncoder(Module):
    def __init__(self, cfg: VisionConfig, rng, dtype=np.float32):
        self.cfg = cfg
        D = cfg.d_model
        self.patch_embed = Linear(cfg.patch_dim, D, rng, dtype)
        self.cls = Tensor(rng.normal(0, 0.5, size=(1, 1, D)).astype(dtype), requires_grad=True)
        self.pos = Tensor(rng.normal(0, 0.5, size=(1, cfg.seq_len, D)).astype(dtype), requires_grad=True)
        self.mask_token = Tensor(np.zeros((1, 1, D), dtype=dtype), requires_grad=True)
        self.blocks = [Block(D, cfg.heads, rng, dtype, cfg.mlp_ratio) for _ in range(cfg.layers)]
        self.ln_f = LayerNorm(D, dtype)

    @property
    def dtype(self):
        return self.pos.dtype

    def __call__(self, patches, empty, hide=None):
        """patches (M, L_p, pd) intensities; empty (M, L_p) bool.

        ``hide`` (M, L_p) bool swaps those patch embeddings for the mask
        token (reconstruction pretraining only).
        """
        M = patches.shape[0]
        ink = Tensor((1.0 - np.asarray(patches)).astype(self.dtype))
        x = self.patch_embed(ink)
        if hide is not None:
            h = hide[:, :, None].astype(self.dtype)
            x = tc.add(tc.mul(x, Tensor(1.0 - h)), tc.mul(self.mask_token, Tensor(h)))
        cls = tc.mul(self.cls, Tensor(np.ones((M, 1, 1), dtype=self.dtype)))
        x = tc.add(tc.concat([cls, x], axis=1), self.pos)
        valid = np.concatenate([np.ones((M, 1), dtype=bool), ~np.asarray(empty, dtype=bool)], axis=1)
        if not tc.grad_enabled() and hide is None:
            return self._forward_compact(x, valid), valid
        mask = key_mask(valid, self.dtype)
        for blk in self.blocks:
            x = blk(x, mask=mask)
        return self.ln_f(x), valid

    def _forward_compact(self, x, valid):
        # inference: empty patches are never attended to, so run the blocks
        # on the valid rows only and scatter back
        n = valid.sum(axis=1)
        width = int(n.max())
        order = np.argsort(~valid, axis=1, kind="stable")[:, :width]
        xc = Tensor(np.take_along_axis(x.data, order[:, :, None], axis=1))
        vc = np.arange(width)[None, :] < n[:, None]
        mask = key_mask(vc, self.dtype)
        for blk in self.blocks:
            xc = blk(xc, mask=mask)
        out = np.zeros_like(x.data)
        y = self.ln_f(xc).data
        for i in range(x.shape[0]):
            out[i, order[i, : n[i]]] = y[i, : n[i]]
        return Tensor(out)


def encode_images(grids: list[PatchGrid], encoder: VisionEncoder) -> VisualFeatures:
    D = encoder.cfg.d_model
    L = encoder.cfg.seq_len
    if not grids:
        return VisualFeatures(Tensor(np.zeros((0, L, D), dtype=encoder.dtype)), np.zeros((0, L), dtype=bool))
    for g in grids:
        if g.empty_mask.all():
            raise ValueError("encode_images: grid has no non-empty patch")
        if g.patches.shape != (encoder.cfg.num_patches, encoder.cfg.patch_dim):
            raise ValueError(f"encode_images: patch grid shape {g.patches.shape} mismatch")
    patches = np.stack([g.patches for g in grids])
    empty = np.stack([g.empty_mask for g in grids])
    if encoder.cfg.frozen:
        with tc.no_grad():
            F, valid = encoder(patches, empty)
    else:
        F, valid = encoder(patches, empty)
    return VisualFeatures(F, valid)


class ResamplerBlock(Module):
    def __init__(self, cfg: ResamplerConfig, rng, dtype):
        D = cfg.d_model
        self.ln_q = LayerNorm(D, dtype)
        self.ln_kv = LayerNorm(D, dtype)
        self.xattn = Attention(D, cfg.heads, rng, dtype)
        self.ln_ff = LayerNorm(D, dtype)
        self.mlp = MLP(D, cfg.mlp_ratio * D, rng, dtype)
        if cfg.latent_self_attention:
            self.ln_sa = LayerNorm(D, dtype)
            self.sattn = Attention(D, cfg.heads, rng, dtype)

    def __call__(self, lat, feats, mask):
        lat = tc.add(lat, self.xattn(self.ln_q(lat), ctx=self.ln_kv(feats), mask=mask))
        if hasattr(self, "sattn"):
            lat = tc.add(lat, self.sattn(self.ln_sa(lat)))
        return tc.add(lat, self.mlp(self.ln_ff(lat)))


class Resampler(Module):
    """N+1 learned queries (CLS first) cross-attending to one image's valid features."""

    def __init__(self, cfg: ResamplerConfig, rng, dtype=np.float32):
        self.cfg = cfg
        D = cfg.d_model
        self.latents = Tensor(rng.normal(0, 1.0, size=(1, cfg.tokens_per_image, D)).astype(dtype), requires_grad=True)
        self.blocks = [ResamplerBlock(cfg, rng, dtype) for _ in range(cfg.depth)]
        self.ln_f = LayerNorm(D, dtype)

    def __call__(self, feats: VisualFeatures) -> Tensor:
        M = feats.num_images
        D = self.cfg.d_model
        if M == 0:
            return Tensor(np.zeros((0, self.cfg.tokens_per_image, D), dtype=self.latents.dtype))
        lat = tc.mul(self.latents, Tensor(np.ones((M, 1, 1), dtype=self.latents.dtype)))
        mask = key_mask(feats.valid, self.latents.dtype)
        for blk in self.blocks:
            lat = blk(lat, feats.F, mask)
        return self.ln_f(lat)


def resample(feats: VisualFeatures, resampler: Resampler) -> Tensor:
    return resampler(feats)


def pool_visual(tokens: Tensor) -> Tensor:
    """Mean of the per-image CLS outputs, (M, N+1, D) -> (D,)."""
    if tokens.shape[0] == 0:
        raise ValueError("pool_visual: no images")
    return tc.mean_pool(tokens[:, 0, :], axis=0)


def pool_groups(cls: Tensor, counts) -> Tensor:
    """Per-sample mean of CLS rows; ``counts`` images per sample, concatenated."""
    counts = list(counts)
    G = np.zeros((len(counts), cls.shape[0]), dtype=cls.dtype)
    start = 0
    for i, c in enumerate(counts):
        if c == 0:
            raise ValueError("pool_groups: sample without images")
        G[i, start : start + c] = 1.0 / c
        start += c
    return tc.matmul(Tensor(G), cls)


# ------------------------------------------------------------- pretraining


def param_checksum(module: Module) -> str:
    import hashlib

    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def reconstruction_error(encoder: VisionEncoder, head: Linear, grids, rng, hide_frac=0.5):
    """Mean squared pixel error on randomly hidden non-empty patches."""
    patches = np.stack([g.patches for g in grids])
    empty = np.stack([g.empty_mask for g in grids])
    hide = (rng.random(empty.shape) < hide_frac) & ~empty
    for i in range(hide.shape[0]):
        if not hide[i].any():
            hide[i, int(np.flatnonzero(~empty[i])[0])] = True
    feats, _ = encoder(patches, empty | hide, hide=hide)
    pred = head(feats[:, 1:, :])
    target = Tensor((1.0 - patches).astype(encoder.dtype))
    diff = tc.add(pred, tc.scale(target, -1.0))
    sq = tc.mean_pool(tc.mul(diff, diff), axis=-1)  # (M, L_p)
    return tc.sum_(tc.mean_pool(tc.reshape(sq, (-1, 1)), mask=hide.reshape(-1), axis=0))


def pretrain_vision(grids, cfg: VisionConfig, steps=200, batch=8, lr=1e-3, seed=0,
                    train_encoder=True, encoder=None, dtype=np.float32):
    """Masked-pixel reconstruction, then freeze. Returns (encoder, head, losses).

    Hidden patches are also excluded as attention keys, so the encoder
    has to infer them from visible neighbours.
    """
    from .optim import AdamW

    if not grids:
        raise ValueError("pretrain_vision: empty image corpus")
    rng = np.random.default_rng(seed)
    if encoder is None:
        encoder = VisionEncoder(cfg, rng, dtype)
    head = Linear(cfg.d_model, cfg.patch_dim, rng, dtype)
    encoder.set_trainable(train_encoder)
    params = head.parameters() + (encoder.parameters() if train_encoder else [])
    opt = AdamW(params, lr=lr, weight_decay=0.0)
    losses = []
    if cfg.pretrain_mode == "masked-pixel-reconstruction" or not train_encoder:
        for step in range(steps):
            idx = rng.choice(len(grids), size=min(batch, len(grids)), replace=False)
            loss = reconstruction_error(encoder, head, [grids[i] for i in idx], rng)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
    encoder.set_trainable(False)
    return encoder, head, losses
