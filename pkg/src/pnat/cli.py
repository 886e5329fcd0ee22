"""Command line front end.

Subcommands: gen, vocab, train, finetune-length, distill, decode, eval,
positions, repeats, report. Exit codes: 0 success, 1 usage error, 2 data
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import reporting
from .bleu import corpus_bleu
from .builders import (build_at, build_pnat, build_task_spec, build_train_config,
                       model_from_checkpoint, require_predictor)
from .checkpoint import save_checkpoint
from .config import config_help, load_config
from .data import (ParallelCorpus, Vocab, build_vocab, encode_pairs, gen_synthetic,
                   task_spec_to_json)
from .decoding import (argmax_decode, lpd_decode, remove_repeats,
                       throughput_sentences_per_sec)
from .errors import PnatError, UsageError
from .model import ArTransformer, PnatModel
from .training import (distill_corpus, evaluate_ar, evaluate_nat,
                       finetune_length_predictor, train_loop)


def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="override one config key")


def _corpus(data_dir: str, split: str) -> ParallelCorpus:
    return ParallelCorpus.load(Path(data_dir) / split)


def _vocab(data_dir: str) -> Vocab:
    return Vocab.load(Path(data_dir) / "vocab.txt")


def cmd_gen(args) -> int:
    cfg = load_config(args.config, args.overrides)
    spec = build_task_spec(cfg)
    train, dev, test = gen_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train.save(out / "train")
    dev.save(out / "dev")
    test.save(out / "test")
    (out / "task.json").write_text(task_spec_to_json(spec))
    print(f"wrote {len(train)}/{len(dev)}/{len(test)} pairs to {out}")
    return 0


def cmd_vocab(args) -> int:
    corpus = _corpus(args.data, "train")
    vocab = build_vocab(corpus, min_count=args.min_count)
    vocab.save(Path(args.data) / "vocab.txt")
    print(f"vocabulary of {len(vocab)} tokens (incl. 4 reserved)")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.overrides)
    train_c = _corpus(args.data, "train")
    dev_c = _corpus(args.data, "dev")
    vocab = _vocab(args.data)
    from .tensor import set_default_dtype

    set_default_dtype(cfg["train.dtype"])
    if args.arch == "at":
        model: PnatModel | ArTransformer = build_at(cfg, len(vocab))
    else:
        model = build_pnat(cfg, len(vocab))
    tc = build_train_config(cfg, args.arch)
    extra = {"config": cfg, "vocab_size": len(vocab)}
    records = train_loop(model, encode_pairs(train_c, vocab), encode_pairs(dev_c, vocab),
                         tc, args.run, resume=args.resume, extra_meta=extra)
    if records:
        print(f"finished at step {records[-1]['step']}, dev BLEU {records[-1]['dev_bleu']:.2f}")
    return 0


def cmd_finetune_length(args) -> int:
    model, ckpt = model_from_checkpoint(args.ckpt)
    if not isinstance(model, PnatModel):
        raise UsageError("length finetuning applies to parallel models only")
    train_c = _corpus(args.data, "train")
    vocab = _vocab(args.data)
    stats = finetune_length_predictor(model, encode_pairs(train_c, vocab),
                                      steps=args.steps, lr=args.lr)
    save_checkpoint(args.ckpt, params=model.parameter_dict(),
                    fingerprint=model.fingerprint(), adam=None,
                    rng_state=ckpt.rng_state,
                    meta={**ckpt.meta, "length_finetuned": True})
    print(f"finetuned length head for {stats['steps']} steps "
          f"(final loss {stats['final_loss']:.4f})")
    return 0


def cmd_distill(args) -> int:
    teacher, _ = model_from_checkpoint(args.teacher)
    if not isinstance(teacher, ArTransformer):
        raise UsageError("the distillation teacher must be a causal checkpoint")
    vocab = _vocab(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "dev", "test"):
        corpus = _corpus(args.data, split)
        if split == "train":
            corpus = distill_corpus(teacher, corpus, vocab)
        corpus.save(out / split)
    vocab.save(out / "vocab.txt")
    print(f"distilled train split written to {out}")
    return 0


def cmd_decode(args) -> int:
    model, _ = model_from_checkpoint(args.ckpt)
    if not isinstance(model, PnatModel):
        raise UsageError("decode drives parallel checkpoints; see eval for AT models")
    require_predictor(model, args.predictor)
    vocab = _vocab(args.data)
    lines = [l for l in Path(args.input).read_text(encoding="utf-8").splitlines()
             if l.strip()]
    rescorer = None
    if args.lpd:
        if not args.rescorer:
            raise UsageError("--lpd needs --rescorer <checkpoint>")
        rescorer, _ = model_from_checkpoint(args.rescorer)
        if not isinstance(rescorer, ArTransformer):
            raise UsageError("the rescorer must be a causal checkpoint")
    out_lines = []
    for line in lines:
        src = vocab.encode(line)
        if args.lpd:
            result = lpd_decode(model, src, args.delta_m, rescorer,
                                length_normalize=args.length_norm)
        else:
            result = argmax_decode(model, src)
        tokens = result.tokens
        if args.remove_repeats:
            tokens = remove_repeats(tokens)
        out_lines.append(vocab.decode(tokens))
    text = "\n".join(out_lines) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _decode_split_surface(model: PnatModel, pairs, use_ref_length: bool) -> list[np.ndarray]:
    outs = []
    for src, tgt in pairs:
        forced = len(tgt) if use_ref_length else None
        outs.append(argmax_decode(model, src, forced_length=forced).tokens)
    return outs


def cmd_eval(args) -> int:
    model, _ = model_from_checkpoint(args.ckpt)
    corpus = _corpus(args.data, args.split)
    vocab = _vocab(args.data)
    pairs = encode_pairs(corpus, vocab)
    if isinstance(model, ArTransformer):
        if args.beam > 1:
            cap = max(len(t) for _, t in pairs) + 8
            hyps = [list(model.beam_generate(s, beam=args.beam, max_len=cap))
                    for s, _ in pairs]
            refs = [list(t) for _, t in pairs]
            metrics = {"bleu": corpus_bleu(hyps, refs), "perm_acc": None,
                       "rel_acc": None, "positions": f"beam{args.beam}"}
        else:
            metrics = evaluate_ar(model, pairs)
            metrics["positions"] = "greedy"
    else:
        if args.beam > 1:
            raise UsageError("--beam applies to the causal baseline only")
        metrics = evaluate_nat(model, pairs, positions=args.positions)
        metrics["positions"] = args.positions
    if args.throughput:
        sources = [s for s, _ in pairs[: args.throughput_sentences]]
        if isinstance(model, ArTransformer):
            cap = max(len(t) for _, t in pairs) + 8
            fn = lambda s: model.greedy_generate(s, max_len=cap)
        else:
            fn = lambda s: argmax_decode(model, s)
        metrics["throughput"] = throughput_sentences_per_sec(fn, sources)
    metrics["split"] = args.split
    run_dir = Path(args.ckpt).parent
    out_path = run_dir / f"eval_{metrics['positions']}.json"
    out_path.write_text(json.dumps(metrics, indent=2, sort_keys=True))
    shown = {k: (round(v, 4) if isinstance(v, float) else v) for k, v in metrics.items()}
    print(json.dumps(shown, sort_keys=True))
    return 0


def cmd_positions(args) -> int:
    model, _ = model_from_checkpoint(args.ckpt)
    if not isinstance(model, PnatModel):
        raise UsageError("position dumps need a parallel checkpoint")
    corpus = _corpus(args.data, args.split)
    vocab = _vocab(args.data)
    text = reporting.case_dump(model, corpus, vocab, limit=args.limit)
    out = Path(args.out) if args.out else Path(args.ckpt).parent / "cases.txt"
    out.write_text(text, encoding="utf-8")
    print(f"wrote {args.limit} cases to {out}")
    return 0


def cmd_repeats(args) -> int:
    model, _ = model_from_checkpoint(args.ckpt)
    if not isinstance(model, PnatModel):
        raise UsageError("repeat analysis needs a parallel checkpoint")
    corpus = _corpus(args.data, args.split)
    vocab = _vocab(args.data)
    pairs = encode_pairs(corpus, vocab)
    hyps = _decode_split_surface(model, pairs, use_ref_length=args.length == "ref")
    refs = [list(t) for _, t in pairs]
    raw = corpus_bleu([list(h) for h in hyps], refs)
    rr = corpus_bleu([list(remove_repeats(h)) for h in hyps], refs)
    payload = {"bleu_raw": raw, "bleu_rr": rr, "delta": rr - raw, "split": args.split,
               "length": args.length}
    out = Path(args.ckpt).parent / "repeats.json"
    out.write_text(json.dumps(payload, indent=2, sort_keys=True))
    print(json.dumps({k: round(v, 4) if isinstance(v, float) else v
                      for k, v in payload.items()}, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    text = reporting.full_report(args.runs)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pnat",
        description="position-learned parallel sequence generation at desk scale",
        epilog=config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen", help="generate a synthetic parallel corpus")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = subs.add_parser("vocab", help="build vocab.txt from the train split")
    p.add_argument("--data", required=True)
    p.add_argument("--min-count", type=int, default=1)
    p.set_defaults(func=cmd_vocab)

    p = subs.add_parser("train", help="train a model")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True, help="output run directory")
    p.add_argument("--arch", choices=("pnat", "at"), default="pnat")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("finetune-length", help="extra training of the length head")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.set_defaults(func=cmd_finetune_length)

    p = subs.add_parser("distill", help="replace train targets with teacher output")
    p.add_argument("--teacher", required=True, help="causal model checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_distill)

    p = subs.add_parser("decode", help="decode a source file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="directory holding vocab.txt")
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--lpd", action="store_true", help="length-parallel decoding")
    p.add_argument("--delta-m", type=int, default=4, dest="delta_m")
    p.add_argument("--predictor", choices=("ar", "nar"))
    p.add_argument("--rescorer", help="causal checkpoint for LPD ranking")
    p.add_argument("--length-norm", action="store_true", dest="length_norm")
    p.add_argument("--remove-repeats", action="store_true", dest="remove_repeats")
    p.set_defaults(func=cmd_decode)

    p = subs.add_parser("eval", help="score a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("dev", "test"), default="dev")
    p.add_argument("--positions", choices=("predictor", "hsp", "identity"),
                   default="predictor")
    p.add_argument("--beam", type=int, default=1,
                   help="beam width for the causal baseline (greedy when 1)")
    p.add_argument("--throughput", action="store_true")
    p.add_argument("--throughput-sentences", type=int, default=100)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("positions", help="dump per-sentence position cases")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("dev", "test"), default="dev")
    p.add_argument("--limit", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_positions)

    p = subs.add_parser("repeats", help="BLEU with and without repeat removal")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("dev", "test"), default="dev")
    p.add_argument("--length", choices=("ref", "predicted"), default="ref")
    p.set_defaults(func=cmd_repeats)

    p = subs.add_parser("report", help="tables + case pointers from run dirs")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except PnatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
