"""Tokenization, document-frequency statistics, importance scores, masking."""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")
N_BYTES = 256
_CHUNK_RE = re.compile(rb" ?[^\s]+|\s+")

FREQ_MAGIC = "# vist-freqtable"
FREQ_VERSION = 1


class TokenizerError(ValueError):
    pass


@dataclass(frozen=True)
class Tokenizer:
    """Byte-level BPE. Ids 0..255 are raw bytes, then specials, then merges."""

    merges: tuple[tuple[int, int], ...] = ()

    @property
    def vocab_size(self) -> int:
        return N_BYTES + len(SPECIALS) + len(self.merges)

    @property
    def pad_id(self):
        return N_BYTES

    @property
    def bos_id(self):
        return N_BYTES + 1

    @property
    def eos_id(self):
        return N_BYTES + 2

    @property
    def unk_id(self):
        return N_BYTES + 3

    def _ranks(self):
        r = self.__dict__.get("_rank_cache")
        if r is None:
            first = N_BYTES + len(SPECIALS)
            r = {pair: first + i for i, pair in enumerate(self.merges)}
            object.__setattr__(self, "_rank_cache", r)
            object.__setattr__(self, "_word_cache", {})
        return r

    def _token_bytes(self):
        tb = self.__dict__.get("_bytes_cache")
        if tb is None:
            tb = [bytes([i]) for i in range(N_BYTES)] + [b""] * len(SPECIALS)
            for a, b in self.merges:
                tb.append(tb[a] + tb[b])
            object.__setattr__(self, "_bytes_cache", tb)
        return tb

    @property
    def vocabulary(self) -> dict[str, int]:
        vocab = {s: N_BYTES + i for i, s in enumerate(SPECIALS)}
        for i, b in enumerate(self._token_bytes()):
            if i < N_BYTES or i >= N_BYTES + len(SPECIALS):
                vocab.setdefault(b.decode("latin-1"), i)
        return vocab

    def _encode_chunk(self, chunk: bytes) -> list[int]:
        ranks = self._ranks()
        cache = self.__dict__["_word_cache"]
        hit = cache.get(chunk)
        if hit is not None:
            return hit
        ids = list(chunk)
        while len(ids) > 1:
            best = None
            for i in range(len(ids) - 1):
                r = ranks.get((ids[i], ids[i + 1]))
                if r is not None and (best is None or r < best[0]):
                    best = (r, i)
            if best is None:
                break
            r, _ = best
            pair = self.merges[r - N_BYTES - len(SPECIALS)]
            out, i = [], 0
            while i < len(ids):
                if i < len(ids) - 1 and (ids[i], ids[i + 1]) == pair:
                    out.append(r)
                    i += 2
                else:
                    out.append(ids[i])
                    i += 1
            ids = out
        if len(cache) < 100_000:
            cache[chunk] = ids
        return ids

    def encode(self, text: str) -> list[int]:
        out: list[int] = []
        for chunk in _CHUNK_RE.findall(text.encode("utf-8")):
            out.extend(self._encode_chunk(chunk))
        return out

    def decode_bytes(self, ids: Iterable[int]) -> bytes:
        tb = self._token_bytes()
        return b"".join(tb[i] for i in ids)

    def decode(self, ids: Iterable[int]) -> str:
        return self.decode_bytes(ids).decode("utf-8", errors="replace")

    def token_text(self, i: int) -> str:
        if N_BYTES <= i < N_BYTES + len(SPECIALS):
            return SPECIALS[i - N_BYTES]
        return self._token_bytes()[i].decode("utf-8", errors="replace")

    # persistence: one merge per line
    def save(self, path):
        lines = ["# vist-tokenizer v1"] + [f"{a} {b}" for a, b in self.merges]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0].strip() != "# vist-tokenizer v1":
            raise TokenizerError(f"{path}: not a tokenizer file")
        merges = tuple(tuple(int(x) for x in ln.split()) for ln in lines[1:] if ln.strip())
        return cls(merges=merges)


def build_tokenizer(corpus: Iterable[str], vocab_size: int = 512) -> Tokenizer:
    """Train byte-level BPE merges until ``vocab_size`` ids exist.

    Ties between equally frequent pairs go to the smallest pair, so the
    result depends only on the corpus contents and ``vocab_size``.
    """
    base = N_BYTES + len(SPECIALS)
    if vocab_size < base:
        raise TokenizerError(f"vocab_size {vocab_size} < {base} (bytes + specials)")
    words: Counter = Counter()
    empty = True
    for text in corpus:
        if text:
            empty = False
        words.update(_CHUNK_RE.findall(text.encode("utf-8")))
    if empty:
        raise TokenizerError("empty corpus")
    seqs = [list(w) for w in words]
    freqs = [words[w] for w in words]
    merges = []
    next_id = base
    while next_id < vocab_size:
        pairs: Counter = Counter()
        for s, f in zip(seqs, freqs):
            for i in range(len(s) - 1):
                pairs[(s[i], s[i + 1])] += f
        if not pairs:
            break
        top = max(pairs.values())
        if top < 2:
            break
        pair = min(p for p, c in pairs.items() if c == top)
        merges.append(pair)
        for k, s in enumerate(seqs):
            if len(s) < 2:
                continue
            out, i = [], 0
            while i < len(s):
                if i < len(s) - 1 and s[i] == pair[0] and s[i + 1] == pair[1]:
                    out.append(next_id)
                    i += 2
                else:
                    out.append(s[i])
                    i += 1
            seqs[k] = out
        next_id += 1
    return Tokenizer(merges=tuple(merges))


def read_corpus(path) -> list[str]:
    """One sample per line from a file, or from every .txt file in a directory."""
    p = Path(path)
    files = sorted(p.glob("*.txt")) if p.is_dir() else [p]
    samples = []
    for f in files:
        for line in f.read_text(encoding="utf-8").splitlines():
            if line.strip():
                samples.append(line)
    return samples


@dataclass(frozen=True)
class SlowFastSplit:
    encoder_tokens: list
    decoder_tokens: list


def split_slow_fast(tokens: Sequence[int], t_e: int) -> SlowFastSplit:
    """Earlier ``t_e`` tokens go to the visual path, the rest to the decoder."""
    t_e = max(0, min(t_e, len(tokens)))
    return SlowFastSplit(list(tokens[:t_e]), list(tokens[t_e:]))


# ------------------------------------------------------------------ statistics


@dataclass
class FreqTable:
    """Document frequencies: count(w) = number of samples containing w."""

    sample_count: int = 0
    counts: dict = field(default_factory=dict)

    def add(self, sample: Iterable[int]):
        self.sample_count += 1
        for w in set(sample):
            self.counts[w] = self.counts.get(w, 0) + 1

    def merge(self, other: "FreqTable") -> "FreqTable":
        counts = dict(self.counts)
        for w, c in other.counts.items():
            counts[w] = counts.get(w, 0) + c
        return FreqTable(self.sample_count + other.sample_count, counts)

    def count(self, w: int) -> int:
        return self.counts.get(w, 0)

    def scores(self, ids: Sequence[int]) -> np.ndarray:
        return np.array([importance_score(self, w) for w in ids], dtype=np.float64)

    def save(self, path):
        rows = [FREQ_MAGIC + f" v{FREQ_VERSION}", f"samples\t{self.sample_count}"]
        rows += [f"{w}\t{c}" for w, c in sorted(self.counts.items())]
        Path(path).write_text("\n".join(rows) + "\n")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text().splitlines()
        if len(lines) < 2 or not lines[0].startswith(FREQ_MAGIC):
            raise ValueError(f"{path}: not a frequency table")
        version = int(lines[0].split()[-1].lstrip("v"))
        if version != FREQ_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        key, n = lines[1].split("\t")
        if key != "samples":
            raise ValueError(f"{path}: missing sample count")
        counts = {}
        for ln in lines[2:]:
            if ln.strip():
                w, c = ln.split("\t")
                counts[int(w)] = int(c)
        return cls(int(n), counts)


def count_frequencies(samples: Iterable[Sequence[int]]) -> FreqTable:
    table = FreqTable()
    for s in samples:
        table.add(s)
    return table


def importance_score(table: FreqTable, w: int) -> float:
    """log(|S| / (1 + count(w))); unseen tokens count as 0."""
    if table.sample_count < 1:
        raise ValueError("importance_score: frequency table has no samples")
    return math.log(table.sample_count / (1 + table.count(w)))


def mask_count(n: int, rate: float) -> int:
    return min(n, int(math.floor(rate * n + 0.5)))


def sample_mask(scores, rate: float = 0.5, kappa: float = 1.0, seed=None) -> np.ndarray:
    """Boolean mask (True = masked) with exactly round(rate * n) entries set.

    Positions are drawn without replacement with weight exp(-score / kappa),
    so low-importance (frequent) tokens are the likeliest to go. Uses the
    Gumbel top-k construction, which matches sequential weighted draws.
    """
    s = np.asarray(scores, dtype=np.float64)
    n = s.size
    if n < 1:
        raise ValueError("sample_mask: need at least one position")
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"sample_mask: rate {rate} outside [0, 1]")
    if kappa <= 0:
        raise ValueError("sample_mask: kappa must be positive")
    k = mask_count(n, rate)
    mask = np.zeros(n, dtype=bool)
    if k == 0:
        return mask
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keys = -s / kappa + rng.gumbel(size=n)
    mask[np.argsort(-keys, kind="stable")[:k]] = True
    return mask


def frequent_first_mask(scores, rate: float) -> np.ndarray:
    """Deterministic mask of the floor(rate * n) lowest-score positions."""
    s = np.asarray(scores, dtype=np.float64)
    k = int(math.floor(rate * s.size + 1e-9))
    mask = np.zeros(s.size, dtype=bool)
    mask[np.argsort(s, kind="stable")[:k]] = True
    return mask
