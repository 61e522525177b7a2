"""Synthetic in-context learning: two-class label-mapping tasks.

Every episode draws two label words and assigns them to the task's eight
inputs, so the mapping can only be learned from the demos. Demos are
fixed width (``"KQZ->red; "``); encoder demos are written in the task's
canonical input order, decoder demos and the query in random order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .render import grids_for

LABEL_POOL = ("red", "tan", "sky", "fog", "ink", "owl", "map", "jet")
DEMO_SEP = "; "
ARROW = "->"


@dataclass(frozen=True)
class Task:
    name: str
    inputs: tuple  # eight 3-character inputs, canonical order
    rule: str = "mapping"  # "mapping": random balanced split; "parity": count of 'x'

    def classes(self, rng) -> dict:
        if self.rule == "parity":
            return {x: x.count("x") % 2 for x in self.inputs}
        cls = np.array([0, 1] * (len(self.inputs) // 2))
        rng.shuffle(cls)
        return {x: int(c) for x, c in zip(self.inputs, cls)}


TASK_BANK = (
    Task("letters", ("BKQ", "DRV", "FMZ", "GJT", "HPW", "LNS", "CXY", "AEU")),
    Task("digits", ("305", "418", "526", "637", "749", "851", "962", "074")),
    Task("parity", ("ooo", "oox", "oxo", "oxx", "xoo", "xox", "xxo", "xxx"), rule="parity"),
)


@dataclass
class Episode:
    task: Task
    labels: tuple  # (word for class 0, word for class 1)
    mapping: dict  # input -> label word

    def demo(self, x) -> str:
        return f"{x}{ARROW}{self.mapping[x]}{DEMO_SEP}"


def demo_width() -> int:
    return 3 + len(ARROW) + 3 + len(DEMO_SEP)


def episode(task: Task, rng) -> Episode:
    a, b = rng.choice(len(LABEL_POOL), size=2, replace=False)
    labels = (LABEL_POOL[a], LABEL_POOL[b])
    cls = task.classes(rng)
    return Episode(task, labels, {x: labels[c] for x, c in cls.items()})


def prompt(ep: Episode, n_e: int, n_d: int, rng):
    """(encoder text, decoder prefix, query input). The query never
    appears among the decoder demos."""
    task_inputs = ep.task.inputs
    if n_e > len(task_inputs):
        raise ValueError(f"n_e={n_e} exceeds the {len(task_inputs)} task inputs")
    qi = int(rng.integers(len(task_inputs)))
    query = task_inputs[qi]
    others = [i for i in range(len(task_inputs)) if i != qi]
    if n_d > len(others):
        raise ValueError(f"n_d={n_d} exceeds the available decoder demos")
    dec_items = rng.choice(others, size=n_d, replace=False).tolist() if n_d else []
    # drawn last so the query and decoder demos do not depend on n_e
    enc_items = sorted(rng.choice(len(task_inputs), size=n_e, replace=False).tolist()) if n_e else []
    enc = "".join(ep.demo(task_inputs[i]) for i in enc_items)
    dec = "".join(ep.demo(task_inputs[i]) for i in dec_items) + f"{query}{ARROW}"
    return enc, dec, query


def icl_sample(rng, task: Task | None = None, n_dec: int = 8) -> str:
    """Training text: all eight demos in canonical order, then ``n_dec``
    shuffled demos and one trailing character."""
    task = task or TASK_BANK[int(rng.integers(len(TASK_BANK)))]
    ep = episode(task, rng)
    enc = "".join(ep.demo(x) for x in task.inputs)
    idx = rng.choice(len(task.inputs), size=n_dec, replace=False)
    dec = "".join(ep.demo(task.inputs[i]) for i in idx)
    return enc + dec + "."


def icl_corpus(n: int, seed: int = 0, n_dec: int = 8) -> list[str]:
    rng = np.random.default_rng(seed)
    return [icl_sample(rng, n_dec=n_dec) for _ in range(n)]


def icl_split(n_dec: int = 8) -> tuple[int, int]:
    """(t_e, t_d) in byte tokens matching ``icl_sample``."""
    w = demo_width()
    return 8 * w, n_dec * w


def _label_logprob(model, dec_ids, label_ids, ctx):
    seqs = np.array([dec_ids + lab for lab in label_ids])
    logits = model.logits(seqs, ctx).data.astype(np.float64)
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = []
    for k, lab in enumerate(label_ids):
        start = len(dec_ids) - 1
        out.append(sum(logp[k, start + j, t] for j, t in enumerate(lab)))
    return out


def icl_eval(model, tokenizer, n_e: int, n_d: int, seeds=(42, 43, 44), tasks=TASK_BANK, queries: int = 32):
    """Mean accuracy over ``seeds``; per seed, ``queries`` episodes per task.

    The prediction is the label word (of the episode's two) with the
    higher continuation log-probability.
    """
    for w in LABEL_POOL:
        if tokenizer.decode(tokenizer.encode(w)) != w:
            raise ValueError(f"label {w!r} does not round-trip through the tokenizer")
    rcfg = model.cfg.render()
    accs = []
    with tc.no_grad():
        for seed in seeds:
            hits = total = 0
            for ti, task in enumerate(tasks):
                for q in range(queries):
                    # one stream per query: paired episodes across (n_e, n_d)
                    rng = np.random.default_rng([seed, ti, q])
                    ep = episode(task, rng)
                    enc, dec, query = prompt(ep, n_e, n_d, rng)
                    lab_ids = [tokenizer.encode(w) for w in ep.labels]
                    ctx = None
                    if enc:
                        feats = model.image_features(grids_for(tokenizer.encode(enc), tokenizer, rcfg))
                        ctx = model.context([feats] * len(lab_ids))
                    lp = _label_logprob(model, tokenizer.encode(dec), lab_ids, ctx)
                    hits += int(ep.labels[int(np.argmax(lp))] == ep.mapping[query])
                    total += 1
            accs.append(hits / total)
    return float(np.mean(accs)), accs
