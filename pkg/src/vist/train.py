"""Batching, the joint training step, the training loop, and checkpoints."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensorcore as tc
from .config import RunConfig, config_from_dict
from .corpus import FreqTable, Tokenizer, build_tokenizer, count_frequencies, sample_mask
from .decoder import lm_loss
from .model import VistModel
from .objectives import joint_loss, pve_loss, text_anchor
from .optim import AdamW, lr_at
from .render import PatchGrid, grids_for
from .vision import VisualFeatures, param_checksum, pretrain_vision

log = logging.getLogger(__name__)

MAGIC = b"VISTCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ShapeManifestError(CheckpointError):
    pass


class TrainingDiverged(RuntimeError):
    pass


# ------------------------------------------------------------------ batching


@dataclass
class Batch:
    grids: list  # per sample: list[PatchGrid]
    enc_ids: np.ndarray  # (B, T_e)
    dec_ids: np.ndarray  # (B, T_d)
    targets: np.ndarray  # (B, T_d)
    skipped: int = 0
    feats: list | None = None  # per sample VisualFeatures, if precomputed


def split_sample(tokens, t_e, t_d):
    """(encoder ids, decoder ids, next-token targets) or None when too short."""
    if len(tokens) < t_e + t_d + 1:
        return None
    enc = list(tokens[:t_e])
    dec = list(tokens[t_e : t_e + t_d])
    tgt = list(tokens[t_e + 1 : t_e + t_d + 1])
    return enc, dec, tgt


def make_batch(samples, tokenizer: Tokenizer, cfg: RunConfig, render_images=True) -> Batch:
    """Split token samples into rendered context, decoder input and targets.

    Samples shorter than t_e + t_d + 1 are skipped and counted.
    """
    rcfg = cfg.render()
    grids, enc, dec, tgt = [], [], [], []
    skipped = 0
    for s in samples:
        parts = split_sample(s, cfg.t_e, cfg.t_d)
        if parts is None:
            skipped += 1
            continue
        e, d, t = parts
        grids.append(grids_for(e, tokenizer, rcfg) if render_images else [])
        enc.append(e)
        dec.append(d)
        tgt.append(t)
    B = len(enc)
    return Batch(
        grids,
        np.array(enc, dtype=np.int64).reshape(B, cfg.t_e),
        np.array(dec, dtype=np.int64).reshape(B, cfg.t_d),
        np.array(tgt, dtype=np.int64).reshape(B, cfg.t_d),
        skipped,
    )


class Dataset:
    """Tokenized samples with a cache of frozen-encoder features."""

    CACHE_LIMIT = 1024

    def __init__(self, token_samples, tokenizer, cfg: RunConfig, cache=None):
        self.tokenizer = tokenizer
        self.cfg = cfg
        need = cfg.t_e + cfg.t_d + 1
        self.samples = [list(s) for s in token_samples if len(s) >= need]
        self.skipped = len(token_samples) - len(self.samples)
        # features are ~66 KB per image at d_visual 64; past the limit re-render
        self.cache = len(self.samples) <= self.CACHE_LIMIT if cache is None else cache
        self._grids = {}
        self._feats = {}

    def __len__(self):
        return len(self.samples)

    def _render(self, i) -> list[PatchGrid]:
        return grids_for(self.samples[i][: self.cfg.t_e], self.tokenizer, self.cfg.render())

    def grids(self, i) -> list[PatchGrid]:
        g = self._grids.get(i)
        if g is None:
            g = self._render(i)
            if self.cache:
                self._grids[i] = g
        return g

    def features(self, model: VistModel, i) -> VisualFeatures:
        # only the (much smaller) features are kept once a model is known
        f = self._feats.get(i)
        if f is None:
            g = self._grids.get(i)
            f = model.image_features(g if g is not None else self._render(i))
            f = VisualFeatures(tc.Tensor(f.F.data), f.valid)
            if self.cache:
                self._feats[i] = f
        return f

    def batch(self, idx, model: VistModel | None = None) -> Batch:
        b = make_batch([self.samples[i] for i in idx], self.tokenizer, self.cfg, render_images=False)
        if model is not None:
            b.feats = [self.features(model, i) for i in idx]
        else:
            b.grids = [self.grids(i) for i in idx]
        return b


# ------------------------------------------------------------------ training


def batch_indices(n, batch_size, seed, step):
    rng = np.random.default_rng([seed, step, 0])
    return rng.choice(n, size=batch_size, replace=n < batch_size)


def compute_losses(model: VistModel, batch: Batch, cfg: RunConfig, freq: FreqTable | None, mask_seed):
    """Forward pass of the joint objective; returns (joint, lm, pve) Tensors."""
    feats = batch.feats
    if feats is None:
        feats = [model.image_features(g) for g in batch.grids]
    has_images = any(f.num_images for f in feats)
    ctx = model.context(feats) if has_images else None
    logits = model.logits(batch.dec_ids, ctx)
    lm = lm_loss(logits, batch.targets)
    pve = None
    if cfg.lam > 0 and has_images and all(f.num_images for f in feats) and cfg.t_e > 0:
        pc = cfg.pve()
        visual = model.pooled_visual(ctx)
        emb = model.text_embeddings(batch.enc_ids)
        rng = np.random.default_rng(mask_seed)
        masks = []
        for row in batch.enc_ids:
            scores = freq.scores(row) if freq is not None else np.zeros(len(row))
            masks.append(sample_mask(scores, pc.mask_rate, pc.mask_kappa, rng))
        masks = np.array(masks)
        # keep at least one token per row
        full = masks.all(axis=1)
        masks[full, 0] = False
        text = text_anchor(emb, masks)
        pve = pve_loss(visual, text, pc.tau, pc.similarity, pc.symmetric)
    joint = joint_loss(lm, pve, cfg.lam) if pve is not None else lm
    return joint, lm, pve


def clip_gradients(params, max_norm):
    if max_norm <= 0:
        return 0.0
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = total**0.5
    if norm > max_norm:
        s = max_norm / (norm + 1e-6)
        for p in params:
            if p.grad is not None:
                p.grad *= p.grad.dtype.type(s)
    return norm


def train_step(model: VistModel, batch: Batch, opt: AdamW, cfg: RunConfig, step: int, freq=None):
    """One optimizer update on every trainable parameter; returns metrics."""
    opt.zero_grad()
    try:
        joint, lm, pve = compute_losses(model, batch, cfg, freq, [cfg.seed, step, 1])
    except FloatingPointError as e:
        raise TrainingDiverged(f"non-finite values at step {step}: {e}") from e
    vals = {"lm_loss": float(lm.data), "pve_loss": float(pve.data) if pve is not None else 0.0, "joint": float(joint.data)}
    if not all(np.isfinite(v) for v in vals.values()):
        raise TrainingDiverged(f"non-finite loss at step {step}: {vals}")
    joint.backward()
    gnorm = clip_gradients(opt.params, cfg.grad_clip)
    lr = lr_at(step, cfg.lr, cfg.warmup, cfg.steps)
    opt.step(lr)
    vals["lr"] = lr
    vals["grad_norm"] = gnorm
    return vals


def make_optimizer(model: VistModel, cfg: RunConfig) -> AdamW:
    return AdamW(model.trainable_parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)


@dataclass
class TrainResult:
    model: VistModel
    tokenizer: Tokenizer
    freq: FreqTable
    metrics: list = field(default_factory=list)
    checkpoint: Path | None = None
    encoder_checksum: str = ""
    dataset: Dataset | None = None


METRIC_FIELDS = ["step", "lm_loss", "pve_loss", "joint", "lr"]


def _fmt(x):
    return repr(float(x)) if isinstance(x, float) else str(x)


def prepare(cfg: RunConfig, texts, tokenizer=None):
    tok = tokenizer or build_tokenizer(texts, cfg.vocab_size)
    if tok.vocab_size > cfg.vocab_size:
        raise ValueError(f"tokenizer has {tok.vocab_size} ids but vocab_size is {cfg.vocab_size}")
    token_samples = [tok.encode(t) for t in texts]
    freq = count_frequencies(token_samples)
    return tok, token_samples, freq


def run_training(cfg: RunConfig, texts, out_dir=None, tokenizer=None, resume=None, dataset=None,
                 model=None, progress=None) -> TrainResult:
    """Train for ``cfg.steps`` steps; with ``out_dir`` write metrics and checkpoints.

    ``resume`` is a loaded Checkpoint; training picks up at its step with
    identical batches and masks, since both derive from (seed, step).
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved.cfg").write_text(cfg.dumps())
    if resume is not None:
        tok, freq = resume.tokenizer, resume.freq
        token_samples = [tok.encode(t) for t in texts]
    else:
        tok, token_samples, freq = prepare(cfg, texts, tokenizer)
    ds = dataset or Dataset(token_samples, tok, cfg)
    if len(ds) == 0:
        raise ValueError("run_training: corpus yields no sample long enough for t_e + t_d + 1")
    if model is None:
        model = VistModel(cfg, seed=cfg.seed)
    if resume is None and cfg.vision_pretrain == "masked-pixel-reconstruction" and cfg.t_e > 0:
        grids = [g for i in range(min(len(ds), 256)) for g in ds.grids(i)]
        pretrain_vision(grids, cfg.vision(), steps=cfg.vision_pretrain_steps, seed=cfg.seed,
                        encoder=model.encoder, dtype=cfg.dtype)
    model.encoder.set_trainable(False)
    opt = make_optimizer(model, cfg)
    start = 0
    if resume is not None:
        restore(model, resume, opt)
        start = resume.step
    checksum = param_checksum(model.encoder)
    metrics = []
    mf = tf = None
    if out is not None:
        mode = "a" if resume is not None and (out / "metrics.csv").exists() else "w"
        mf = open(out / "metrics.csv", mode, newline="")
        tf = open(out / "timing.csv", mode, newline="")
        mw, tw = csv.writer(mf), csv.writer(tf)
        if mode == "w":
            mw.writerow(METRIC_FIELDS)
            tw.writerow(["step", "wall_seconds"])
    t0 = time.perf_counter()
    try:
        for step in range(start, cfg.steps):
            idx = batch_indices(len(ds), cfg.batch_size, cfg.seed, step)
            batch = ds.batch(idx, model if cfg.t_e > 0 else None)
            try:
                m = train_step(model, batch, opt, cfg, step, freq)
            except TrainingDiverged:
                if out is not None:
                    dump = {"step": step, "params": {n: float(np.abs(p.data).max()) for n, p in model.named_parameters()}}
                    (out / "diverged.json").write_text(json.dumps(dump, indent=1))
                raise
            m["step"] = step
            metrics.append(m)
            if mf is not None:
                mw.writerow([_fmt(m[k]) for k in METRIC_FIELDS])
                tw.writerow([step, f"{time.perf_counter() - t0:.3f}"])
            if progress is not None:
                progress(m)
            if out is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(make_checkpoint(model, opt, step + 1, cfg, tok, freq), out / f"step{step + 1:06d}.vist")
    finally:
        if mf is not None:
            mf.close()
            tf.close()
    ck_path = None
    if out is not None:
        ck_path = out / "final.vist"
        save_checkpoint(make_checkpoint(model, opt, max(start, cfg.steps), cfg, tok, freq), ck_path)
    if param_checksum(model.encoder) != checksum:
        raise RuntimeError("frozen vision encoder changed during training")
    return TrainResult(model, tok, freq, metrics, ck_path, checksum, ds)


# ---------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    step: int
    config: RunConfig
    params: dict  # name -> array
    opt_state: dict = field(default_factory=dict)
    opt_t: int = 0
    tokenizer: Tokenizer = field(default_factory=Tokenizer)
    freq: FreqTable = field(default_factory=FreqTable)
    rng_state: dict = field(default_factory=dict)


def make_checkpoint(model: VistModel, opt: AdamW | None, step, cfg, tok, freq) -> Checkpoint:
    params = {n: p.data.copy() for n, p in model.named_parameters()}
    rng_state = np.random.default_rng([cfg.seed, step, 0]).bit_generator.state
    return Checkpoint(
        step=step,
        config=cfg,
        params=params,
        opt_state={k: v.copy() for k, v in opt.state_arrays().items()} if opt is not None else {},
        opt_t=opt.t if opt is not None else 0,
        tokenizer=tok,
        freq=freq,
        rng_state=rng_state,
    )


def _header(ck: Checkpoint, arrays):
    manifest, offset = [], 0
    for name, a in arrays:
        manifest.append({"name": name, "dtype": a.dtype.newbyteorder("<").str, "shape": list(a.shape), "offset": offset})
        offset += a.nbytes
    head = {
        "format": FORMAT_VERSION,
        "step": ck.step,
        "opt_t": ck.opt_t,
        "config": ck.config.to_dict(),
        "merges": [list(m) for m in ck.tokenizer.merges],
        "freq": {"samples": ck.freq.sample_count, "counts": sorted([int(k), int(v)] for k, v in ck.freq.counts.items())},
        "rng_state": ck.rng_state,
        "arrays": manifest,
    }
    return json.dumps(head, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(ck: Checkpoint, path) -> None:
    """MAGIC | u32 version | u64 header length | JSON header | arrays | sha256."""
    arrays = [(f"param/{n}", np.ascontiguousarray(a)) for n, a in sorted(ck.params.items())]
    arrays += [(f"opt/{n}", np.ascontiguousarray(a)) for n, a in sorted(ck.opt_state.items())]
    arrays = [(n, a.astype(a.dtype.newbyteorder("<"), copy=False)) for n, a in arrays]
    head = _header(ck, arrays)
    body = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(head)) + head + b"".join(a.tobytes() for _, a in arrays)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 12 + 32 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic or truncated)")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated)")
    version, hlen = struct.unpack_from("<IQ", body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = len(MAGIC) + 12
    head = json.loads(body[start : start + hlen])
    data = body[start + hlen :]
    params, opt = {}, {}
    for e in head["arrays"]:
        dt = np.dtype(e["dtype"])
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        a = np.frombuffer(data, dtype=dt, count=n, offset=e["offset"]).reshape(e["shape"]).astype(dt.newbyteorder("="))
        kind, name = e["name"].split("/", 1)
        (params if kind == "param" else opt)[name] = a
    freq = FreqTable(head["freq"]["samples"], {int(k): int(v) for k, v in head["freq"]["counts"]})
    return Checkpoint(
        step=head["step"],
        config=config_from_dict(head["config"]),
        params=params,
        opt_state=opt,
        opt_t=head["opt_t"],
        tokenizer=Tokenizer(tuple(tuple(m) for m in head["merges"])),
        freq=freq,
        rng_state=head["rng_state"],
    )


def restore(model: VistModel, ck: Checkpoint, opt: AdamW | None = None) -> VistModel:
    """Copy checkpoint arrays into ``model`` after checking the shape manifest."""
    named = dict(model.named_parameters())
    missing = sorted(set(named) - set(ck.params))
    extra = sorted(set(ck.params) - set(named))
    if missing or extra:
        raise ShapeManifestError(f"parameter names differ: missing {missing[:5]}, unexpected {extra[:5]}")
    for n, p in named.items():
        if p.data.shape != ck.params[n].shape:
            raise ShapeManifestError(f"{n}: checkpoint shape {ck.params[n].shape} vs model {p.data.shape}")
    for n, p in named.items():
        p.data[...] = ck.params[n]
    if opt is not None and ck.opt_state:
        opt.load_state_arrays(ck.opt_state, ck.opt_t)
    return model


def model_from_checkpoint(ck: Checkpoint) -> VistModel:
    return restore(VistModel(ck.config, seed=ck.config.seed), ck)
