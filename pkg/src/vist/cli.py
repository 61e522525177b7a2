"""``vist`` command line: stats, render, mask, train, eval, run, report.

Every subcommand accepts --config, --seed, --out, --workers and repeatable
--set key=value. Failures exit nonzero with one line on stderr:
``vist: error: <Kind>: <message>``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

log = logging.getLogger("vist")

DEFAULT_RATIOS = [round(0.1 * i, 1) for i in range(10)]


class CliError(Exception):
    pass


def _common(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, default=1, help="evaluation threads (default 1)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vist", description="render text as images and train slow-fast models on it")
    sub = ap.add_subparsers(dest="cmd", required=True)

    st = sub.add_parser("stats", help="tokenizer and frequency statistics")
    st_sub = st.add_subparsers(dest="action", required=True)
    b = st_sub.add_parser("build", help="build tokenizer.txt and freq.tsv from the configured corpus")
    _common(b)
    b.add_argument("--corpus", help="file, directory, or synthetic:recall|prose|icl|copy")
    s = st_sub.add_parser("score", help="print importance scores for a text")
    _common(s)
    s.add_argument("--stats", required=True, help="directory from 'stats build'")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--text")
    g.add_argument("--in", dest="infile")

    r = sub.add_parser("render", help="paginate a text file into PGM images")
    _common(r)
    r.add_argument("--in", dest="infile", required=True)
    r.add_argument("--stats", help="tokenizer directory (default: byte tokens)")
    r.add_argument("--png", action="store_true", help="also write PNG copies")

    m = sub.add_parser("mask", help="masking previews")
    m_sub = m.add_subparsers(dest="action", required=True)
    mp = m_sub.add_parser("preview", help="per-token scores and the frequency mask")
    _common(mp)
    mp.add_argument("--stats", required=True)
    g = mp.add_mutually_exclusive_group(required=True)
    g.add_argument("--text")
    g.add_argument("--in", dest="infile")
    mp.add_argument("--rate", type=float, default=0.5)

    t = sub.add_parser("train", help="train a model")
    _common(t)
    t.add_argument("--resume", help="checkpoint to continue from")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e_sub = e.add_subparsers(dest="action", required=True)
    for name in ("ppl", "icl", "distance", "cost"):
        q = e_sub.add_parser(name)
        _common(q)
        q.add_argument("--ckpt", required=name != "cost")
        if name == "ppl":
            q.add_argument("--last-k", type=int, default=None, help="default: t_d")
            q.add_argument("--ablate", action="store_true", help="zero the cross-attention gates")
        if name == "icl":
            q.add_argument("--n-e", type=int, default=8)
            q.add_argument("--n-d", type=int, default=2)
            q.add_argument("--seeds", default="42,43,44")
            q.add_argument("--queries", type=int, default=32)
        if name == "distance":
            q.add_argument("--modes", default="rare-first,frequent-first,random")
            q.add_argument("--ratios", default=",".join(map(str, DEFAULT_RATIOS)))

    rn = sub.add_parser("run", help="train then evaluate; with --ckpt, generate from a context and prompt")
    _common(rn)
    rn.add_argument("--ckpt", help="generate with this checkpoint instead of training")
    rn.add_argument("--ctx", help="long context file, rendered to images")
    rn.add_argument("--prompt", help="prompt file, given to the decoder as text")
    rn.add_argument("--max-new", type=int, default=32)
    rn.add_argument("--dump-logits", action="store_true", help="write the final logits (T, V) to OUT/logits.npy")

    rp = sub.add_parser("report", help="draw figures for a run directory")
    _common(rp)
    rp.add_argument("--in", dest="infile", required=True, help="run directory")
    return ap


# ------------------------------------------------------------------ helpers


def _config(args, base=None):
    from .config import load_config

    sets = list(args.set)
    if args.seed is not None:
        sets.append(f"seed={args.seed}")
    return load_config(args.config, sets, base)


def _out(args, default=None) -> Path:
    out = args.out or default
    if out is None:
        raise CliError("--out is required")
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def load_texts(cfg):
    """(train texts, held-out texts) for the configured corpus."""
    from .corpus import read_corpus
    from .synthetic import make_corpus

    if cfg.corpus.startswith("synthetic:"):
        texts = make_corpus(cfg.corpus, cfg.n_samples + cfg.holdout, cfg.seed)
    else:
        texts = read_corpus(cfg.corpus)
        if not Path(cfg.corpus).exists():
            raise CliError(f"corpus not found: {cfg.corpus}")
    if cfg.holdout >= len(texts):
        raise CliError(f"holdout={cfg.holdout} leaves no training samples out of {len(texts)}")
    cut = len(texts) - cfg.holdout
    return texts[:cut], texts[cut:]


def _read_text(args):
    if getattr(args, "text", None) is not None:
        return args.text
    return Path(args.infile).read_text(encoding="utf-8")


def _load_stats(d):
    from .corpus import FreqTable, Tokenizer

    d = Path(d)
    return Tokenizer.load(d / "tokenizer.txt"), FreqTable.load(d / "freq.tsv")


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


# --------------------------------------------------------------- subcommands


def cmd_stats(args):
    from .corpus import build_tokenizer, count_frequencies

    if args.action == "build":
        cfg = _config(args)
        if args.corpus:
            cfg = cfg.replace(corpus=args.corpus)
        out = _out(args)
        train, _ = load_texts(cfg)
        tok = build_tokenizer(train, cfg.vocab_size)
        freq = count_frequencies(tok.encode(t) for t in train)
        tok.save(out / "tokenizer.txt")
        freq.save(out / "freq.tsv")
        (out / "resolved.cfg").write_text(cfg.dumps())
        _emit({"samples": freq.sample_count, "vocab_size": tok.vocab_size, "distinct_tokens": len(freq.counts)})
        return 0
    tok, freq = _load_stats(args.stats)
    ids = tok.encode(_read_text(args))
    print("index\tid\ttoken\tcount\tscore")
    for i, w in enumerate(ids):
        print(f"{i}\t{w}\t{json.dumps(tok.token_text(w))}\t{freq.count(w)}\t{float(freq.scores([w])[0])!r}")
    return 0


def cmd_render(args):
    from .corpus import build_tokenizer
    from .render import paginate, write_pgm, write_png

    cfg = _config(args)
    out = _out(args)
    tok = _load_stats(args.stats)[0] if args.stats else build_tokenizer(["x"], 260)
    text = _read_text(args)
    ids = tok.encode(text)
    images = paginate(ids, tok, cfg.render())
    if not images:
        print("vist: warning: no text to render; 0 images", file=sys.stderr)
    rows = ["index,token_start,token_end"]
    for i, img in enumerate(images):
        write_pgm(img, out / f"page_{i:03d}.pgm")
        if args.png:
            write_png(img, out / f"page_{i:03d}.png")
        rows.append(f"{i},{img.source_span[0]},{img.source_span[1]}")
    (out / "pages.csv").write_text("\n".join(rows) + "\n")
    (out / "resolved.cfg").write_text(cfg.dumps())
    _emit({"images": len(images), "tokens": len(ids)})
    return 0


def cmd_mask(args):
    from .eval import info_gain_profile
    from .report import plot_info_gain, plot_mask_preview

    cfg = _config(args)
    tok, freq = _load_stats(args.stats)
    ids = tok.encode(_read_text(args))
    prof = info_gain_profile(ids, freq, args.rate)
    texts = [tok.token_text(w) for w in ids]
    print("".join("_" * len(t) if f else t for t, (_, _, f) in zip(texts, prof)))
    if args.out:
        out = _out(args)
        with open(out / "info_gain.csv", "w") as f:
            f.write("index,id,token,score,masked\n")
            for i, ((w, s, m), t) in enumerate(zip(prof, texts)):
                f.write(f"{i},{w},{json.dumps(t)},{s!r},{int(m)}\n")
        plot_info_gain(prof, texts, out / "info_gain.png")
        plot_mask_preview(texts, [m for _, _, m in prof], out / "mask_preview.png")
        (out / "resolved.cfg").write_text(cfg.dumps())
    return 0


def _train(cfg, out, resume=None):
    from .train import load_checkpoint, run_training

    train, _ = load_texts(cfg)
    ck = load_checkpoint(resume) if resume else None
    res = run_training(cfg, train, out, resume=ck)
    last = res.metrics[-1] if res.metrics else {}
    _emit({"steps": cfg.steps, "checkpoint": str(res.checkpoint), "lm_loss": last.get("lm_loss"),
           "encoder_checksum": res.encoder_checksum})
    return res


def cmd_train(args):
    cfg = _config(args)
    _train(cfg, _out(args), args.resume)
    return 0


def _load_model(path):
    from .train import load_checkpoint, model_from_checkpoint

    ck = load_checkpoint(path)
    return ck, model_from_checkpoint(ck)


def _holdout_tokens(cfg, tok):
    _, hold = load_texts(cfg)
    return [tok.encode(t) for t in hold]


def eval_ppl(ck, model, last_k=None, ablate=False, workers=1):
    from .eval import EvalReport, compression_report, eval_perplexity

    cfg = ck.config
    k = cfg.t_d if last_k is None else last_k
    need = cfg.t_e + cfg.t_d + 1
    samples = [s for s in _holdout_tokens(cfg, ck.tokenizer) if len(s) >= need]
    if not samples:
        raise CliError("no held-out sample is long enough for t_e + t_d + 1")
    ppl = eval_perplexity(model, samples, ck.tokenizer, cfg.t_e, cfg.t_d, k, ablate=ablate, workers=workers)
    M, vis, delta = compression_report(cfg.t_e, cfg.render(), cfg.latents)
    return EvalReport("ppl_ablated" if ablate else "ppl", ppl=ppl, delta=delta,
                      extra={"last_k": k, "samples": len(samples), "images": M, "visual_tokens": vis})


def eval_distance(ck, model, modes, ratios):
    from .eval import EvalReport, distance_sweep, pooled_pairs

    cfg = ck.config
    samples = [s for s in _holdout_tokens(cfg, ck.tokenizer) if len(s) >= cfg.t_e]
    pairs = pooled_pairs(model, samples, ck.tokenizer, cfg.t_e)
    curves = {m: distance_sweep(model, samples, ck.tokenizer, ck.freq, ratios, m, seed=cfg.seed, pairs=pairs)
              for m in modes}
    return EvalReport("distance", distance_curves=curves, extra={"samples": len(pairs)})


def eval_cost(cfg):
    from .eval import COST_HEADER, EvalReport, compression_report, cost_estimate

    flops, mem = cost_estimate(cfg)
    _, _, delta = compression_report(cfg.t_e, cfg.render(), cfg.latents)
    return EvalReport("cost", delta=delta, flops_estimate=flops, memory_estimate=mem,
                      extra={"method": COST_HEADER, "t_e": cfg.t_e, "t_d": cfg.t_d})


def cmd_eval(args):
    from .eval import EvalReport
    from .icl import icl_eval

    out = _out(args)
    if args.action == "cost":
        base = _load_model(args.ckpt)[0].config if args.ckpt else None
        cfg = _config(args, base)
        rep = eval_cost(cfg)
    else:
        ck, model = _load_model(args.ckpt)
        # overrides may only touch evaluation data, never the architecture
        ck.config = _config(args, ck.config)
        if args.action == "ppl":
            rep = eval_ppl(ck, model, args.last_k, args.ablate, args.workers)
        elif args.action == "icl":
            seeds = [int(s) for s in args.seeds.split(",")]
            acc, per = icl_eval(model, ck.tokenizer, args.n_e, args.n_d, seeds, queries=args.queries)
            rep = EvalReport("icl", accuracy=acc, extra={"n_e": args.n_e, "n_d": args.n_d, "seeds": seeds, "per_seed": per})
        else:
            ratios = [float(r) for r in args.ratios.split(",")]
            rep = eval_distance(ck, model, args.modes.split(","), ratios)
        (out / "resolved.cfg").write_text(ck.config.dumps())
    rep.write(out)
    print(rep.to_json())
    return 0


def cmd_generate(args):
    import numpy as np

    from . import tensorcore as tc
    from .decoder import generate
    from .render import grids_for

    if not args.ckpt or args.prompt is None:
        raise CliError("generation needs --ckpt and --prompt")
    ck, model = _load_model(args.ckpt)
    tok = ck.tokenizer
    ids = tok.encode(Path(args.prompt).read_text(encoding="utf-8"))
    if not ids:
        raise CliError("empty prompt")
    ctx_ids = tok.encode(Path(args.ctx).read_text(encoding="utf-8")) if args.ctx else []
    vis = valid = None
    with tc.no_grad():
        grids = [g for g in grids_for(ctx_ids, tok, ck.config.render()) if not g.empty_mask.all()]
        if grids:
            vis, valid = model.decoder_visual(model.context([model.image_features(grids)]))
        seq = generate(model.decoder, ids, vis, valid, max_new=args.max_new)
        logits = model.decoder(np.array([seq]), vis, valid).data[0] if args.dump_logits else None
    result = {"images": len(grids), "prompt_tokens": len(ids), "completion": tok.decode(seq[len(ids):])}
    if args.out or args.dump_logits:
        out = _out(args)
        (out / "generation.json").write_text(json.dumps(result, sort_keys=True) + "\n")
        (out / "resolved.cfg").write_text(ck.config.dumps())
        if logits is not None:
            np.save(out / "logits.npy", logits.astype(np.float32))
    _emit(result)
    return 0


def cmd_run(args):
    from .eval import EvalReport

    if args.ckpt or args.ctx or args.prompt:
        return cmd_generate(args)
    cfg = _config(args)
    out = _out(args)
    res = _train(cfg, out)
    from .train import load_checkpoint

    ck = load_checkpoint(res.checkpoint)
    model = res.model
    reports: list[EvalReport] = [
        eval_ppl(ck, model, workers=args.workers),
        eval_ppl(ck, model, ablate=True, workers=args.workers),
        eval_distance(ck, model, ["rare-first", "frequent-first", "random"], DEFAULT_RATIOS),
        eval_cost(cfg),
    ]
    for r in reports:
        r.write(out)
        print(r.to_json())
    return 0


def cmd_report(args):
    from .report import build_report

    cfg = _config(args)
    out = _out(args)
    made = build_report(args.infile, out)
    (out / "resolved.cfg").write_text(cfg.dumps())
    print("figure")
    for p in made:
        print(p)
    return 0


COMMANDS = {
    "stats": cmd_stats,
    "render": cmd_render,
    "mask": cmd_mask,
    "train": cmd_train,
    "eval": cmd_eval,
    "run": cmd_run,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="vist: %(levelname)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("vist: error: CliError: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.cmd](args)
    except Exception as e:  # noqa: BLE001  reported as one parseable line
        msg = " ".join(str(e).split())
        print(f"vist: error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
