"""Rasterize text onto a fixed-height strip, fold it square, cut patches."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .glyphs import CELL_H, CELL_W, GLYPHS, REPLACEMENT


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class RenderConfig:
    strip_height: int = 14
    strip_width: int = 3584
    channels: int = 3
    fold_side: int = 224
    patch_size: int = 14
    font: str = "ascii6x11"
    glyph_height: int = CELL_H
    glyph_advance: int = 7
    glyph_top: int = 2
    background_level: float = 1.0
    ink_level: float = 0.0
    empty_threshold: float = 0.98
    # calibrated so that 4096 tokens -> 28 images and 1024 -> 7
    tokens_per_image: int = 147

    def __post_init__(self):
        if self.strip_height * self.strip_width != self.fold_side**2:
            raise RenderError("strip area must equal fold_side^2")
        if self.strip_width % self.fold_side:
            raise RenderError("strip_width must be a multiple of fold_side")
        if self.fold_side % self.patch_size:
            raise RenderError("fold_side must be a multiple of patch_size")
        if self.glyph_top + self.glyph_height > self.strip_height or self.glyph_height > CELL_H:
            raise RenderError("glyphs do not fit the strip height")
        if self.glyph_advance < CELL_W:
            raise RenderError("glyph_advance narrower than the glyph cell")
        if self.tokens_per_image < 1:
            raise RenderError("tokens_per_image must be >= 1")

    @property
    def grid_side(self) -> int:
        return self.fold_side // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_side**2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def chars_per_strip(self) -> int:
        return self.strip_width // self.glyph_advance

    def with_(self, **kw) -> "RenderConfig":
        return replace(self, **kw)


@dataclass
class TextImage:
    pixels: np.ndarray  # (fold_side, fold_side, C) float32 in [0, 1]
    source_span: tuple = (0, 0)


@dataclass
class PatchGrid:
    patches: np.ndarray  # (L_p, P*P*C)
    empty_mask: np.ndarray  # (L_p,) True = empty
    source_span: tuple = field(default=(0, 0))

    @property
    def n_valid(self) -> int:
        return int((~self.empty_mask).sum())


def _bitmap(code: int, height: int) -> np.ndarray:
    hexrows = GLYPHS.get(code, REPLACEMENT)
    rows = [int(hexrows[2 * i : 2 * i + 2], 16) for i in range(CELL_H)][:height]
    bits = [[(r >> (CELL_W - 1 - c)) & 1 for c in range(CELL_W)] for r in rows]
    return np.array(bits, dtype=bool)


_ATLAS: dict = {}


def glyph(ch: str, height: int = CELL_H) -> np.ndarray:
    """Boolean ink mask for one character (tab/newline draw as space)."""
    code = ord(ch)
    if ch in "\t\n\r":
        code = 32
    key = (code if code in GLYPHS else -1, height)
    g = _ATLAS.get(key)
    if g is None:
        g = _bitmap(key[0], height)
        g.setflags(write=False)
        _ATLAS[key] = g
    return g


def render_strip(text: str, cfg: RenderConfig) -> np.ndarray:
    """One line of text on an (H, W) strip of intensities."""
    if len(text) > cfg.chars_per_strip:
        raise RenderError(f"{len(text)} characters overflow one strip (max {cfg.chars_per_strip})")
    strip = np.full((cfg.strip_height, cfg.strip_width), cfg.background_level, dtype=np.float32)
    top = cfg.glyph_top
    for i, ch in enumerate(text):
        if ch == " ":
            continue
        g = glyph(ch, cfg.glyph_height)
        x = i * cfg.glyph_advance
        region = strip[top : top + g.shape[0], x : x + CELL_W]
        region[g] = cfg.ink_level
    return strip


def fold(strip: np.ndarray, cfg: RenderConfig) -> np.ndarray:
    """Cut the strip into fold_side-wide segments and stack them as bands."""
    bands = cfg.strip_width // cfg.fold_side
    sq = strip.reshape(cfg.strip_height, bands, cfg.fold_side).transpose(1, 0, 2)
    return sq.reshape(cfg.fold_side, cfg.fold_side)


def unfold(square: np.ndarray, cfg: RenderConfig) -> np.ndarray:
    bands = cfg.strip_width // cfg.fold_side
    s = square[..., 0] if square.ndim == 3 else square
    return s.reshape(bands, cfg.strip_height, cfg.fold_side).transpose(1, 0, 2).reshape(
        cfg.strip_height, cfg.strip_width
    )


def rasterize(text: str, cfg: RenderConfig = RenderConfig(), source_span=(0, 0)) -> TextImage:
    sq = fold(render_strip(text, cfg), cfg)
    pixels = np.repeat(sq[:, :, None], cfg.channels, axis=2)
    return TextImage(np.ascontiguousarray(pixels), tuple(source_span))


def patchify(img: TextImage, cfg: RenderConfig = RenderConfig()) -> PatchGrid:
    px = img.pixels
    if px.shape != (cfg.fold_side, cfg.fold_side, cfg.channels):
        raise RenderError(f"image shape {px.shape} does not match config geometry")
    g, P, C = cfg.grid_side, cfg.patch_size, cfg.channels
    patches = px.reshape(g, P, g, P, C).transpose(0, 2, 1, 3, 4).reshape(g * g, P * P * C)
    empty = (patches >= cfg.empty_threshold).all(axis=1)
    return PatchGrid(np.ascontiguousarray(patches), empty, img.source_span)


def page_count(n_tokens: int, n_chars: int, cfg: RenderConfig = RenderConfig()) -> int:
    """Images needed: the token capacity bound, widened if the text overflows pixels."""
    if n_tokens <= 0 and n_chars <= 0:
        return 0
    by_tokens = math.ceil(n_tokens / cfg.tokens_per_image)
    by_pixels = math.ceil(n_chars / cfg.chars_per_strip)
    return max(by_tokens, by_pixels, 1)


def split_even(n: int, parts: int) -> list[tuple[int, int]]:
    """Contiguous (start, end) ranges whose lengths differ by at most one."""
    if parts <= 0:
        return []
    q, r = divmod(n, parts)
    out, start = [], 0
    for k in range(parts):
        end = start + q + (1 if k < r else 0)
        out.append((start, end))
        start = end
    return out


def paginate(tokens, tokenizer, cfg: RenderConfig = RenderConfig(), drop_blank=True) -> list[TextImage]:
    """Decode ``tokens`` and spread the text evenly over M images.

    Blank chunks (whitespace only) are dropped: they would yield grids
    with no valid patch.
    """
    tokens = list(tokens)
    if not tokens:
        return []
    pieces = [tokenizer.decode([t]) for t in tokens]
    text = "".join(pieces)
    m = page_count(len(tokens), len(text), cfg)
    # char offset -> token index, for source spans
    ends = np.cumsum([len(p) for p in pieces])
    images = []
    for a, b in split_even(len(text), m):
        chunk = text[a:b]
        if drop_blank and not chunk.strip():
            continue
        t0 = int(np.searchsorted(ends, a, side="right"))
        t1 = int(np.searchsorted(ends, b - 1, side="right")) + 1 if b > a else t0
        images.append(rasterize(chunk, cfg, (t0, min(t1, len(tokens)))))
    return images


def grids_for(tokens, tokenizer, cfg: RenderConfig = RenderConfig()) -> list[PatchGrid]:
    return [patchify(im, cfg) for im in paginate(tokens, tokenizer, cfg)]


# ---------------------------------------------------------------- export


def to_uint8(img: TextImage) -> np.ndarray:
    return np.round(np.clip(img.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(img: TextImage, path) -> None:
    """Binary PGM (P5, maxval 255) of the first channel."""
    a = to_uint8(img)[:, :, 0]
    h, w = a.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + a.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    pos += 1  # single whitespace byte before the raster
    if fields[0] != b"P5":
        raise RenderError(f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise RenderError(f"{path}: maxval {maxval} unsupported")
    return np.frombuffer(raw[pos : pos + w * h], dtype=np.uint8).reshape(h, w)


def write_png(img: TextImage, path) -> None:
    from PIL import Image

    Image.fromarray(to_uint8(img)).save(path)
