"""Run-directory reports: strategy comparison, repeat analysis, case dumps.

Every cell comes from an artifact a command actually wrote (metrics.jsonl,
eval_*.json, repeats.json); runs without the artifact show "absent" rather
than a made-up number.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import ParallelCorpus, Vocab
from .decoding import argmax_decode
from .model import PnatModel
from .tensor import no_grad
from .training import hsp_references, identity_positions
from .data import pad_batch

ROW_LABELS = {
    "at": "AT baseline (greedy)",
    "pnat:identity": "NAT-base",
    "pnat:ar": "PNAT w/ AR-Predictor",
    "pnat:nar": "PNAT w/ NAR-Predictor",
}


def load_run(run_dir: str | Path) -> dict:
    run_dir = Path(run_dir)
    info: dict = {"dir": str(run_dir), "name": run_dir.name}
    cfg_path = run_dir / "train_config.json"
    info["arch"] = None
    if cfg_path.exists():
        info["arch"] = json.loads(cfg_path.read_text()).get("arch")
    info["metrics"] = []
    mpath = run_dir / "metrics.jsonl"
    if mpath.exists():
        info["metrics"] = [json.loads(line) for line in mpath.read_text().splitlines()
                           if line.strip()]
    info["evals"] = {}
    for epath in sorted(run_dir.glob("eval_*.json")):
        payload = json.loads(epath.read_text())
        info["evals"][payload.get("positions", epath.stem)] = payload
    rpath = run_dir / "repeats.json"
    info["repeats"] = json.loads(rpath.read_text()) if rpath.exists() else None
    return info


def _fmt(value, width: int = 8, digits: int = 2) -> str:
    if value is None:
        return "absent".rjust(width)
    return f"{value:.{digits}f}".rjust(width)


def position_table(runs: list[dict]) -> str:
    """Rows: one per (run, eval artifact); columns mirror the strategy study."""
    at_speed = None
    for run in runs:
        if run["arch"] == "at":
            ev = run["evals"].get("greedy") or next(iter(run["evals"].values()), None)
            if ev and ev.get("throughput"):
                at_speed = ev["throughput"]
    header = f"{'model':<28}{'perm-acc':>10}{'rel-acc':>10}{'BLEU':>8}{'speedup':>9}"
    lines = [header, "-" * len(header)]
    for run in runs:
        base = ROW_LABELS.get(run["arch"], run["arch"] or run["name"])
        if not run["evals"]:
            lines.append(f"{base:<28}{'absent':>10}{'absent':>10}{'absent':>8}{'absent':>9}")
            continue
        for mode, ev in sorted(run["evals"].items()):
            label = base
            if mode == "hsp":
                label = "PNAT w/ HSP"
            show_pos = run["arch"] not in ("at", "pnat:identity")
            perm = 100.0 * ev["perm_acc"] if (show_pos and ev.get("perm_acc") is not None) else None
            rel = 100.0 * ev["rel_acc"] if (show_pos and ev.get("rel_acc") is not None) else None
            speed = None
            if ev.get("throughput") and at_speed:
                speed = ev["throughput"] / at_speed
            lines.append(f"{label:<28}{_fmt(perm)}{' ' * 2}{_fmt(rel)}{_fmt(ev['bleu'])}"
                         f"{_fmt(speed, 9, 2)}")
    return "\n".join(lines)


def repeat_table(runs: list[dict]) -> str:
    header = f"{'model':<28}{'w/ RR':>8}{'w/o RR':>8}{'delta':>8}"
    lines = [header, "-" * len(header)]
    for run in runs:
        label = ROW_LABELS.get(run["arch"], run["arch"] or run["name"])
        rep = run["repeats"]
        if rep is None:
            lines.append(f"{label:<28}{'absent':>8}{'absent':>8}{'absent':>8}")
        else:
            lines.append(f"{label:<28}{_fmt(rep['bleu_rr'])}{_fmt(rep['bleu_raw'])}"
                         f"{_fmt(rep['delta'])}")
    return "\n".join(lines)


def case_dump(model: PnatModel, corpus: ParallelCorpus, vocab: Vocab,
              limit: int = 10) -> str:
    """Per-sentence positions and decodes in the appendix-case layout."""
    blocks = []
    with no_grad():
        for src_text, tgt_text in corpus.pairs()[:limit]:
            src = vocab.encode(src_text)
            tgt = vocab.encode(tgt_text)
            batch = pad_batch([(src, tgt)])
            enc = model.encode(batch.src, batch.src_real)
            d_inputs = model.decoder_inputs(enc, len(tgt))
            z_hsp = hsp_references(model, d_inputs.data, batch)
            if model.predictor_kind == "identity":
                z_pred = identity_positions(batch)
            else:
                z_pred, _ = model.predict_positions(d_inputs, enc, batch.tgt_real)
            outs = {}
            for tag, z in (("heuristic", z_hsp), ("predicted", z_pred)):
                logits = model.nat_logits(d_inputs, z, batch.tgt_real, enc)
                slot_tokens = np.argmax(logits.data[0], axis=-1)
                surface = np.zeros(len(tgt), dtype=np.int64)
                surface[z[0]] = slot_tokens
                outs[tag] = vocab.decode(surface)
            blocks.append("\n".join([
                f"Source                   : {src_text}",
                f"Reference                : {tgt_text}",
                f"Heuristic position       : {', '.join(map(str, z_hsp[0]))}",
                f"Output w/ heuristic pos  : {outs['heuristic']}",
                f"Predicted position       : {', '.join(map(str, z_pred[0]))}",
                f"Output w/ predicted pos  : {outs['predicted']}",
            ]))
    return ("\n" + "-" * 60 + "\n").join(blocks) + "\n"


def full_report(run_dirs: list[str | Path]) -> str:
    runs = [load_run(d) for d in run_dirs]
    sections = [
        "POSITION STRATEGY COMPARISON (dev set)",
        position_table(runs),
        "",
        "REPEATED GENERATION ANALYSIS",
        repeat_table(runs),
    ]
    case_files = [Path(r["dir"]) / "cases.txt" for r in runs]
    present = [str(p) for p in case_files if p.exists()]
    if present:
        sections += ["", "CASE DUMPS: " + ", ".join(present)]
    return "\n".join(sections) + "\n"
