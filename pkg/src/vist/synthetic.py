"""Synthetic corpora for desk-scale runs.

``recall``: a key=value dictionary written out several times; the tail
repeats it, so the values in the decoder window can only be recovered
from the rendered copies. Values are letters drawn from a Zipf law, which
gives the vocabulary a spread of document frequencies.
"""
from __future__ import annotations

import numpy as np

RECALL_KEYS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ012345"
VALUE_ALPHABET = "abcdefghijklmnopqrstuvwxyz"

_FUNCTION = ["the", "of", "and", "a", "to", "in", "is", "that", "with", "for", "as", "on", "was", "it", "by"]
_CONTENT = [
    "river", "engine", "lantern", "quartz", "harbor", "violin", "glacier", "orchid", "falcon", "compass",
    "meadow", "circuit", "canyon", "saffron", "beacon", "tundra", "marble", "cobalt", "nebula", "prism",
    "thicket", "copper", "walrus", "ember", "lattice", "dune", "sapphire", "tempest", "cedar", "vortex",
]


def zipf_probs(n, s=1.1):
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def recall_dictionary(rng, keys=RECALL_KEYS, alphabet=VALUE_ALPHABET, zipf=1.1):
    vals = rng.choice(len(alphabet), size=len(keys), p=zipf_probs(len(alphabet), zipf))
    return "".join(f"{k}={alphabet[v]};" for k, v in zip(keys, vals))


def recall_sample(rng, copies=4, tail=None, **kw):
    """``copies`` dictionary copies for the context, then the query copy."""
    d = recall_dictionary(rng, **kw)
    tail = d + d[:1] if tail is None else tail
    return d * copies + tail


def recall_corpus(n, seed=0, copies=4):
    rng = np.random.default_rng(seed)
    return [recall_sample(rng, copies) for _ in range(n)]


def sentence(rng, n_words=None):
    n_words = int(rng.integers(5, 12)) if n_words is None else n_words
    words = []
    for _ in range(n_words):
        pool = _FUNCTION if rng.random() < 0.45 else _CONTENT
        words.append(pool[int(rng.integers(len(pool)))])
    return " ".join(words).capitalize() + "."


def sentences(n, seed=0):
    rng = np.random.default_rng(seed)
    return [sentence(rng) for _ in range(n)]


def prose_corpus(n, seed=0, min_chars=2000):
    """Lines of synthetic prose long enough for a slow-fast split."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        parts = []
        while sum(len(p) + 1 for p in parts) < min_chars:
            parts.append(sentence(rng))
        out.append(" ".join(parts))
    return out


def copy_corpus(n, seed=0, length=8, alphabet="abcdefgh"):
    """``xyz...|xyz....``: a random string, a bar, the same string again."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        s = "".join(alphabet[i] for i in rng.integers(len(alphabet), size=length))
        out.append(f"{s}|{s}.")
    return out


def make_corpus(spec: str, n: int, seed: int):
    """``synthetic:recall`` / ``synthetic:prose`` / ``synthetic:icl`` / ``synthetic:copy``."""
    kind = spec.split(":", 1)[1]
    if kind == "copy":
        return copy_corpus(n, seed)
    if kind == "recall":
        return recall_corpus(n, seed)
    if kind == "prose":
        return prose_corpus(n, seed)
    if kind == "icl":
        from .icl import icl_corpus

        return icl_corpus(n, seed)
    raise ValueError(f"unknown synthetic corpus {spec!r}")
