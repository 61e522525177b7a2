"""Evaluation: last-k perplexity, compression and cost accounting,
synthetic in-context learning, and text-visual distance sweeps."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensorcore as tc
from .config import RunConfig
from .corpus import FreqTable, Tokenizer, frequent_first_mask, mask_count
from .model import VistModel
from .objectives import semantic_distance
from .render import RenderConfig, page_count
from .train import Dataset

MODES = ("rare-first", "frequent-first", "random")


@dataclass
class EvalReport:
    task: str
    ppl: float | None = None
    accuracy: float | None = None
    delta: float | None = None
    flops_estimate: float | None = None
    memory_estimate: int | None = None
    distance_curves: dict = field(default_factory=dict)  # mode -> [(ratio, sum, mean)]
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        d["distance_curves"] = {m: [list(p) for p in pts] for m, pts in self.distance_curves.items()}
        return json.dumps(d, sort_keys=True)

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{self.task}.json"]
        paths[0].write_text(self.to_json() + "\n")
        if self.distance_curves:
            paths.append(out / f"{self.task}_curves.csv")
            write_curves_csv(self.distance_curves, paths[-1])
        return paths


CURVE_COLUMNS = ["mode", "ratio", "distance_sum", "distance_mean", "n_samples"]


def write_curves_csv(curves, path, label=None):
    """One row per (mode, ratio); an absent point has empty distance cells."""
    cols = (["model"] if label is not None else []) + CURVE_COLUMNS
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for mode in sorted(curves):
            for ratio, s, m, n in curves[mode]:
                row = [mode, repr(float(ratio)), "" if s is None else repr(s), "" if m is None else repr(m), n]
                w.writerow(([label] if label is not None else []) + row)


def read_curves_csv(path):
    curves = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            s = float(row["distance_sum"]) if row["distance_sum"] else None
            m = float(row["distance_mean"]) if row["distance_mean"] else None
            curves.setdefault(row["mode"], []).append((float(row["ratio"]), s, m, int(row["n_samples"])))
    return curves


@contextmanager
def gates_zeroed(model: VistModel):
    """Temporarily cut the visual residual: the decoder becomes a plain LM."""
    saved = [g.data.copy() for g in model.decoder.gates()]
    model.zero_gates()
    try:
        yield model
    finally:
        for g, v in zip(model.decoder.gates(), saved):
            g.data[...] = v


def _map(fn, items, workers):
    # results come back in input order whatever the worker count
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------- perplexity


def eval_perplexity(model: VistModel, samples, tokenizer: Tokenizer, t_e: int, t_d: int, last_k: int = 256,
                    batch_size: int = 8, ablate: bool = False, workers: int = 1) -> float:
    """exp(mean next-token cross-entropy over the final ``last_k`` decoder positions).

    The earliest ``t_e`` tokens of each sample are rendered for the
    encoder, the next ``t_d`` go to the decoder.
    """
    if last_k > t_d:
        raise ValueError(f"last_k={last_k} exceeds t_d={t_d}")
    for i, s in enumerate(samples):
        if len(s) < t_e + t_d + 1:
            raise ValueError(f"sample {i} has {len(s)} tokens, needs {t_e + t_d + 1}")
    cfg = model.cfg.replace(t_e=t_e, t_d=t_d)
    ds = Dataset(samples, tokenizer, cfg, cache=False)
    chunks = [list(range(a, min(a + batch_size, len(ds)))) for a in range(0, len(ds), batch_size)]

    def nll(idx):
        b = ds.batch(idx, model if t_e > 0 else None)
        ctx = None
        if t_e > 0 and any(f.num_images for f in b.feats):
            ctx = model.context(b.feats)
        logits = model.logits(b.dec_ids, ctx).data.astype(np.float64)[:, -last_k:]
        tgt = b.targets[:, -last_k:]
        z = logits - logits.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=-1))
        picked = np.take_along_axis(z, tgt[..., None], axis=-1)[..., 0]
        return float((lse - picked).sum())

    with tc.no_grad():
        if ablate:
            with gates_zeroed(model):
                parts = _map(nll, chunks, workers)
        else:
            parts = _map(nll, chunks, workers)
    return math.exp(sum(parts) / (len(ds) * last_k))


# --------------------------------------------------------------- accounting


def compression_report(token_count: int, render_cfg: RenderConfig = RenderConfig(), N: int = 64, n_chars: int | None = None):
    """(M, visual_tokens, delta); CLS latents are not counted as visual tokens.

    ``n_chars`` widens M when the text would overflow the pixel capacity;
    without it only the token bound applies. delta is None for no tokens.
    """
    if token_count < 0:
        raise ValueError("token_count must be >= 0")
    M = page_count(token_count, token_count if n_chars is None else n_chars, render_cfg)
    visual = M * N
    delta = token_count / visual if token_count > 0 and visual > 0 else None
    return M, visual, delta


COST_HEADER = (
    "forward-pass estimate. flops: 2*weights*tokens for every projection, plus "
    "2*s_q*s_k*d per attention map (scores) and the same again for the weighted "
    "sum; encoder and resampler run per image, decoder over t_d tokens, cross-"
    "attention over t_d x M*(N+1) visual tokens; the LM head counts as one "
    "projection. memory: (parameters + per-layer activations + attention maps) "
    "* bytes per value at the configured precision."
)


def _block_weights(d, ratio):
    return 4 * d * d + 2 * ratio * d * d


def cost_estimate(cfg: RunConfig, t_e: int | None = None, t_d: int | None = None, render_cfg: RenderConfig | None = None,
                  N: int | None = None) -> tuple[float, int]:
    """Analytic (flops, memory_bytes) for one forward pass; see COST_HEADER."""
    t_e = cfg.t_e if t_e is None else t_e
    t_d = cfg.t_d if t_d is None else t_d
    rc = render_cfg or cfg.render()
    N = cfg.latents if N is None else N
    vc, mc = cfg.vision(), cfg.model()
    ratio = 4
    M = page_count(t_e, t_e, rc) if t_e > 0 else 0
    L = rc.num_patches + 1
    dv, dm = vc.d_model, mc.d_model
    Q = N + 1
    flops = 0.0
    act = 0.0
    attn_maps = 0.0

    # vision encoder, per image
    if M:
        enc = 2 * rc.patch_dim * dv * rc.num_patches
        enc += vc.layers * (2 * _block_weights(dv, ratio) * L + 2 * 2 * L * L * dv)
        # resampler: queries are the latents, keys/values the image tokens
        kv = L
        per = 2 * (2 * dv * dv * Q + 2 * dv * dv * kv + 2 * ratio * dv * dv * Q) + 2 * 2 * Q * kv * dv
        if cfg.latent_self_attention:
            per += 2 * 4 * dv * dv * Q + 2 * 2 * Q * Q * dv
        enc += cfg.resampler_depth * per
        flops += M * enc
        act += M * (vc.layers * L * dv * (4 + ratio) + cfg.resampler_depth * Q * dv * (4 + ratio))
        attn_maps += M * (vc.layers * vc.heads * L * L + cfg.resampler_depth * cfg.resampler_heads * Q * kv)

    # decoder
    S = M * Q
    dec = mc.layers * (2 * _block_weights(dm, mc.mlp_ratio) * t_d + 2 * 2 * t_d * t_d * dm)
    if S:
        dec += 2 * cfg.d_visual * dm * S  # visual projection
        dec += len(mc.cross_layers) * (2 * 2 * dm * dm * t_d + 2 * 2 * dm * dm * S + 2 * 2 * t_d * S * dm)
        attn_maps += len(mc.cross_layers) * mc.heads * t_d * S
    dec += 2 * dm * mc.vocab_size * t_d
    flops += dec
    act += mc.layers * t_d * dm * (4 + mc.mlp_ratio) + t_d * mc.vocab_size
    attn_maps += mc.layers * mc.heads * t_d * t_d

    params = _param_count(cfg, rc)
    memory = int((params + act + attn_maps) * (cfg.precision // 8))
    return float(flops), memory


def _param_count(cfg: RunConfig, rc: RenderConfig) -> int:
    vc, mc = cfg.vision(), cfg.model()
    dv, dm = vc.d_model, mc.d_model
    blk = lambda d, r: _block_weights(d, r) + (9 + r) * d  # noqa: E731  weights + biases + 2 LN
    n = rc.patch_dim * dv + dv + (rc.num_patches + 3) * dv + vc.layers * blk(dv, 4) + 2 * dv
    per = _block_weights(dv, 4) + (11 + 4) * dv
    if cfg.latent_self_attention:
        per += 4 * dv * dv + 6 * dv
    n += (cfg.latents + 1) * dv + cfg.resampler_depth * per + 2 * dv
    n += mc.vocab_size * dm + mc.max_positions * dm + mc.layers * blk(dm, mc.mlp_ratio) + 2 * dm
    n += cfg.d_visual * dm + dm + len(mc.cross_layers) * (4 * dm * dm + 4 * dm + 2 * dm + 1)
    n += cfg.d_visual * dm + dm  # pve projection
    return int(n)


# -------------------------------------------------------- distance analyses


def order_mask(scores, ratio, mode, rng=None):
    """Mask ``mask_count(n, ratio)`` positions: highest scores first
    (rare-first), lowest first (frequent-first), or uniformly (random)."""
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores)
    k = mask_count(n, ratio)
    mask = np.zeros(n, dtype=bool)
    if k == 0:
        return mask
    if mode == "rare-first":
        idx = np.argsort(-scores, kind="stable")[:k]
    elif mode == "frequent-first":
        idx = np.argsort(scores, kind="stable")[:k]
    elif mode == "random":
        if rng is None:
            raise ValueError("random mode needs an rng")
        idx = rng.choice(n, size=k, replace=False)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    mask[idx] = True
    return mask


def pooled_pairs(model: VistModel, samples, tokenizer, t_e: int, batch_size=16):
    """Per sample: (projected pooled visual vector, encoder token embeddings, ids)."""
    cfg = model.cfg.replace(t_e=t_e, t_d=0)
    ds = Dataset([s for s in samples if len(s) >= t_e], tokenizer, cfg, cache=False)
    out = []
    with tc.no_grad():
        for a in range(0, len(ds), batch_size):
            idx = list(range(a, min(a + batch_size, len(ds))))
            feats = [ds.features(model, i) for i in idx]
            ctx = model.context(feats)
            vis = model.pooled_visual(ctx).data.astype(np.float64)
            for j, i in enumerate(idx):
                ids = np.asarray(ds.samples[i][:t_e])
                emb = model.decoder.tok_emb.data[ids].astype(np.float64)
                out.append((vis[j], emb, ids))
    return out


def distance_sweep(model: VistModel, samples, tokenizer, freq: FreqTable, ratios, mode: str, t_e: int | None = None,
                   seed: int = 0, pairs=None):
    """[(ratio, distance_sum, distance_mean, n)] for one masking mode.

    A ratio that leaves no text token (1.0) is reported with None distances.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    t_e = model.cfg.t_e if t_e is None else t_e
    pairs = pairs if pairs is not None else pooled_pairs(model, samples, tokenizer, t_e)
    curve = []
    for r in ratios:
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"ratio {r} outside [0, 1]")
        rng = np.random.default_rng([seed, int(round(r * 1000))])
        dists = []
        for vis, emb, ids in pairs:
            m = order_mask(freq.scores(ids), r, mode, rng)
            if m.all():
                dists = None
                break
            dists.append(semantic_distance(vis, emb[~m].mean(axis=0)))
        if dists is None:
            curve.append((float(r), None, None, len(pairs)))
        else:
            curve.append((float(r), float(sum(dists)), float(sum(dists) / len(dists)), len(pairs)))
    return curve


def info_gain_profile(tokens, table: FreqTable, rate: float = 0.5):
    """Per token: (id, importance score, flagged) where the most frequent
    ``floor(rate * n)`` tokens are flagged. Flooring keeps a lone token visible."""
    scores = table.scores(tokens)
    flags = frequent_first_mask(scores, rate)
    return [(int(t), float(s), bool(f)) for t, s, f in zip(tokens, scores, flags)]
