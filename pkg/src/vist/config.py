"""Flat run configuration, read from ``key = value`` text files.

Every key below may appear in a config file or as ``--set key=value``.
Unknown keys are rejected. Lines starting with ``#`` are comments.

Render:    tokens_per_image
Vision:    d_visual, vision_layers, vision_heads, vision_pretrain,
           vision_pretrain_steps
Resampler: latents, resampler_depth, resampler_heads, latent_self_attention
Decoder:   vocab_size, d_model, layers, heads, max_positions, cross_stride,
           gate_init, cross_include_cls, train_self_attention
PVE:       tau, lam, mask_rate, mask_kappa, similarity, symmetric
Training:  t_e, t_d, batch_size, lr, beta1, beta2, weight_decay, warmup,
           steps, grad_clip, seed, precision, checkpoint_every
Data:      corpus, n_samples, holdout
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .decoder import ModelConfig
from .objectives import PveConfig
from .render import RenderConfig
from .vision import ResamplerConfig, VisionConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    tokens_per_image: int = 147

    d_visual: int = 128
    vision_layers: int = 4
    vision_heads: int = 4
    vision_pretrain: str = "frozen-random"
    vision_pretrain_steps: int = 200

    latents: int = 64
    resampler_depth: int = 2
    resampler_heads: int = 4
    latent_self_attention: bool = False

    vocab_size: int = 512
    d_model: int = 256
    layers: int = 4
    heads: int = 4
    max_positions: int = 1024
    cross_stride: int = 2
    gate_init: float = 0.0
    cross_include_cls: bool = True
    train_self_attention: bool = True

    tau: float = 0.07
    lam: float = 1.0
    mask_rate: float = 0.5
    mask_kappa: float = 1.0
    similarity: str = "cosine"
    symmetric: bool = False

    t_e: int = 512
    t_d: int = 128
    batch_size: int = 8
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.01
    warmup: int = 100
    steps: int = 1000
    grad_clip: float = 1.0
    seed: int = 0
    precision: int = 32
    checkpoint_every: int = 0

    corpus: str = "synthetic:recall"
    n_samples: int = 512
    holdout: int = 64

    def __post_init__(self):
        if self.t_e < 0 or self.t_d < 0 or self.t_e + self.t_d < 2:
            raise ConfigError("need t_e, t_d >= 0 and t_e + t_d >= 2")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")
        if self.t_d > self.max_positions:
            raise ConfigError("t_d exceeds max_positions")

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    def render(self) -> RenderConfig:
        return RenderConfig(tokens_per_image=self.tokens_per_image)

    def vision(self) -> VisionConfig:
        r = self.render()
        return VisionConfig(
            patch_dim=r.patch_dim,
            num_patches=r.num_patches,
            d_model=self.d_visual,
            layers=self.vision_layers,
            heads=self.vision_heads,
            frozen=True,
            pretrain_mode=self.vision_pretrain,
        )

    def resampler(self) -> ResamplerConfig:
        return ResamplerConfig(
            latents=self.latents,
            d_model=self.d_visual,
            depth=self.resampler_depth,
            heads=self.resampler_heads,
            latent_self_attention=self.latent_self_attention,
        )

    def model(self) -> ModelConfig:
        return ModelConfig(
            vocab_size=self.vocab_size,
            d_model=self.d_model,
            layers=self.layers,
            heads=self.heads,
            max_positions=self.max_positions,
            cross_stride=self.cross_stride,
            d_visual=self.d_visual,
            gate_init=self.gate_init,
            cross_include_cls=self.cross_include_cls,
        )

    def pve(self) -> PveConfig:
        return PveConfig(
            tau=self.tau,
            mask_rate=self.mask_rate,
            mask_kappa=self.mask_kappa,
            similarity=self.similarity,
            symmetric=self.symmetric,
        )

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.to_dict().items())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key, raw: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    typ = _FIELDS[key].type
    raw = raw.strip()
    try:
        if typ in ("bool", bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {raw!r}") from e


def parse_pairs(lines) -> dict:
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        k = k.strip()
        out[k] = _coerce(k, v)
    return out


def load_config(path=None, overrides=(), base: RunConfig | None = None) -> RunConfig:
    """File values first, then ``key=value`` overrides on top."""
    cfg = base or RunConfig()
    kv = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        kv.update(parse_pairs(p.read_text().splitlines()))
    kv.update(parse_pairs(overrides))
    return cfg.replace(**kv)


def config_from_dict(d: dict) -> RunConfig:
    unknown = set(d) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    return RunConfig(**d)
