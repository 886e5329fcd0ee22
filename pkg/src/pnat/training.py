"""Joint training: searched position supervision, mixed loss, loops.

Per sentence and step: encode, soft-copy decoder inputs at the reference
length, search reference positions greedily over the detached similarity
matrix, decode all slots in parallel against those positions, and add the
weighted position loss. One Adam update per step.

Batch order is a pure function of (seed, epoch), dropout masks of
(seed, step, site), and the position search runs on detached values, so a
float64 run replays bit-identically and resumes mid-stream.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import positions as pos
from .bleu import corpus_bleu
from .checkpoint import load_checkpoint, restore_parameters, save_checkpoint
from .data import BOS_ID, EOS_ID, PAD_ID, Batch, ParallelCorpus, Vocab, epoch_batches, pad_batch
from .errors import NumericalError
from .model import ArTransformer, PnatModel
from .nn import DropPlan
from .optim import AdamState, LrSchedule, adam_step
from .tensor import Tensor, cross_entropy, get_default_dtype, no_grad, set_default_dtype

log = logging.getLogger("pnat")

Pairs = list[tuple[np.ndarray, np.ndarray]]


@dataclass
class TrainConfig:
    alpha: float = 0.3
    schedule: LrSchedule = field(default_factory=LrSchedule)
    tokens_per_batch: int = 2048
    max_steps: int = 2000
    eval_interval: int = 100
    seed: int = 0
    distill: bool = False
    dtype: str = "float64"
    positions: str = "auto"  # auto | hsp | identity

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.positions not in ("auto", "hsp", "identity"):
            raise ValueError("positions must be auto, hsp, or identity")


@dataclass
class TrainState:
    step: int = 0
    adam: AdamState = field(default_factory=AdamState)
    best_dev_bleu: float = -1.0


# -- reference positions -------------------------------------------------------


def identity_positions(batch: Batch) -> np.ndarray:
    m = batch.tgt.shape[1]
    return np.tile(np.arange(m, dtype=np.int64), (batch.size, 1))


def hsp_references(model: PnatModel, d_values: np.ndarray, batch: Batch) -> np.ndarray:
    """Greedy searched positions per sentence, identity on padded tails."""
    table = model.classifier_weights().data
    b, m = batch.tgt.shape
    z_ref = np.tile(np.arange(m, dtype=np.int64), (b, 1))
    for s in range(b):
        n = int(batch.n_tgt[s])
        sim = pos.similarity_matrix(d_values[s, :n], batch.tgt[s, :n], table)
        z_ref[s, :n] = pos.hsp(sim)
    return z_ref


def reference_positions(model: PnatModel, cfg: TrainConfig, d_values: np.ndarray,
                        batch: Batch) -> np.ndarray:
    mode = cfg.positions
    if mode == "auto":
        mode = "identity" if model.predictor_kind == "identity" else "hsp"
    if mode == "identity":
        return identity_positions(batch)
    return hsp_references(model, d_values, batch)


# -- single steps -------------------------------------------------------------


def train_step(model: PnatModel, batch: Batch, state: TrainState,
               cfg: TrainConfig) -> tuple[float, float, float]:
    """One optimizer update; returns (loss_g, loss_p, total) as floats."""
    plan = DropPlan(model.cfg.p_dropout, cfg.seed, state.step)
    enc = model.encode(batch.src, batch.src_real, plan)
    d_inputs = model.decoder_inputs(enc, batch.tgt.shape[1])
    z_ref = reference_positions(model, cfg, d_inputs.data, batch)
    logits = model.nat_logits(d_inputs, z_ref, batch.tgt_real, enc, plan)
    slot_targets = np.take_along_axis(batch.tgt, z_ref, axis=1)
    n_tokens = float(batch.tgt_real.sum())
    loss_g = (cross_entropy(logits, slot_targets) * batch.tgt_real).sum() * (1.0 / n_tokens)
    use_p = cfg.alpha > 0 and model.predictor_kind != "identity"
    if use_p:
        loss_p = model.position_loss(d_inputs, enc, z_ref, batch.tgt_real, plan).sum() \
            * (1.0 / n_tokens)
        total = loss_g + cfg.alpha * loss_p
    else:
        loss_p = None
        total = loss_g

    values = (float(loss_g.data), 0.0 if loss_p is None else float(loss_p.data),
              float(total.data))
    if not np.isfinite(values[2]):
        raise NumericalError(
            f"non-finite loss at step {state.step}: loss_g={values[0]} "
            f"loss_p={values[1]} batch={batch.src.shape}x{batch.tgt.shape}")
    _apply_update(model, state, cfg, total)
    return values


def ar_teacher_batch(batch: Batch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(dec_in, targets, real) with BOS fed in and EOS as the last target."""
    b, m = batch.tgt.shape
    bos = np.full((b, 1), BOS_ID, dtype=np.int64)
    dec_in = np.concatenate([bos, batch.tgt], axis=1)
    targets = np.concatenate([batch.tgt, np.full((b, 1), PAD_ID, dtype=np.int64)], axis=1)
    targets[np.arange(b), batch.n_tgt] = EOS_ID
    real = np.arange(m + 1)[None, :] <= batch.n_tgt[:, None]
    dec_in[~real] = PAD_ID
    return dec_in, targets, real


def train_step_ar(model: ArTransformer, batch: Batch, state: TrainState,
                  cfg: TrainConfig) -> tuple[float, float, float]:
    """Teacher-forced causal step; returns (loss, 0.0, loss)."""
    plan = DropPlan(model.cfg.p_dropout, cfg.seed, state.step)
    dec_in, targets, real = ar_teacher_batch(batch)
    enc = model.encode(batch.src, batch.src_real, plan)
    logits = model.step_logits(dec_in, real, enc, plan)
    safe_targets = np.where(real, targets, 0)
    loss = (cross_entropy(logits, safe_targets) * real).sum() * (1.0 / float(real.sum()))
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericalError(f"non-finite causal loss at step {state.step}")
    _apply_update(model, state, cfg, loss)
    return value, 0.0, value


def _apply_update(model, state: TrainState, cfg: TrainConfig, total: Tensor) -> None:
    params = model.parameter_dict()
    for p in params.values():
        p.zero_grad()
    total.backward()
    grads = {name: p.grad for name, p in params.items() if p.grad is not None}
    adam_step(state.adam, params, grads, cfg.schedule.lr(state.adam.step_count + 1))
    state.step += 1


# -- evaluation ----------------------------------------------------------------


def _eval_batches(pairs: Pairs, tokens_per_batch: int) -> list[Batch]:
    plans = epoch_batches(pairs, tokens_per_batch, seed=0, epoch=0)
    return [pad_batch([pairs[i] for i in idxs]) for idxs in plans]


def evaluate_nat(model: PnatModel, pairs: Pairs, positions: str = "predictor",
                 tokens_per_batch: int = 4096) -> dict:
    """Reference-length decoding metrics on a corpus.

    positions: "predictor" (the model's own head), "hsp" (searched oracle
    positions computed against the reference), or "identity".
    Returns dev BLEU plus slot- and pair-level position accuracy against
    the searched references.
    """
    hyps: list[list[int]] = []
    refs: list[list[int]] = []
    slot_hits = 0
    slot_total = 0
    pair_hits = 0
    pair_total = 0
    with no_grad():
        for batch in _eval_batches(pairs, tokens_per_batch):
            enc = model.encode(batch.src, batch.src_real)
            d_inputs = model.decoder_inputs(enc, batch.tgt.shape[1])
            z_hsp = hsp_references(model, d_inputs.data, batch)
            if positions == "hsp":
                z = z_hsp
            elif positions == "identity":
                z = identity_positions(batch)
            else:
                z, _ = model.predict_positions(d_inputs, enc, batch.tgt_real)
            logits = model.nat_logits(d_inputs, z, batch.tgt_real, enc)
            slot_tokens = np.argmax(logits.data, axis=-1)
            surface = np.zeros_like(slot_tokens)
            np.put_along_axis(surface, z, slot_tokens, axis=1)
            for s in range(batch.size):
                n = int(batch.n_tgt[s])
                hyps.append(list(surface[s, :n]))
                refs.append(list(batch.tgt[s, :n]))
                slot_hits += int((z[s, :n] == z_hsp[s, :n]).sum())
                slot_total += n
                ph, pt = pos.pairwise_counts(z[s, :n], z_hsp[s, :n], r=4)
                pair_hits += ph
                pair_total += pt
    return {
        "bleu": corpus_bleu(hyps, refs),
        "perm_acc": slot_hits / slot_total if slot_total else 1.0,
        "rel_acc": pair_hits / pair_total if pair_total else 1.0,
    }


def evaluate_ar(model: ArTransformer, pairs: Pairs, tokens_per_batch: int = 4096,
                max_len: int | None = None) -> dict:
    cap = max_len or max(len(t) for _, t in pairs) + 8
    hyps: list[list[int]] = []
    refs: list[list[int]] = []
    for batch in _eval_batches(pairs, tokens_per_batch):
        outs = model.greedy_generate(batch.src, batch.src_real, max_len=cap)
        hyps.extend(list(o) for o in outs)
        for s in range(batch.size):
            refs.append(list(batch.tgt[s, : batch.n_tgt[s]]))
    return {"bleu": corpus_bleu(hyps, refs), "perm_acc": None, "rel_acc": None}


# -- the loop ------------------------------------------------------------------


def _batch_stream(pairs: Pairs, cfg: TrainConfig, start_step: int) -> Iterator[Batch]:
    step = 0
    epoch = 0
    while True:
        for idxs in epoch_batches(pairs, cfg.tokens_per_batch, cfg.seed, epoch):
            if step >= start_step:
                yield pad_batch([pairs[i] for i in idxs])
            step += 1
        epoch += 1


def train_loop(model: PnatModel | ArTransformer, train_pairs: Pairs, dev_pairs: Pairs,
               cfg: TrainConfig, run_dir: str | Path, resume: bool = False,
               extra_meta: dict | None = None) -> list[dict]:
    """Run (or resume) training; returns the metric records it appended.

    Every eval_interval steps (and at the final step) the model decodes the
    dev set, appends one JSON line to metrics.jsonl, refreshes last.ckpt,
    and keeps best.ckpt at the highest dev BLEU seen.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    set_default_dtype(cfg.dtype)
    for p in model.parameters():
        if p.data.dtype != get_default_dtype():
            p.data = p.data.astype(get_default_dtype())

    is_ar = isinstance(model, ArTransformer)
    state = TrainState()
    if resume:
        ckpt = load_checkpoint(run_dir / "last.ckpt")
        restore_parameters(model, ckpt)
        state.adam = ckpt.adam or AdamState()
        state.step = int(ckpt.meta["step"])
        state.best_dev_bleu = float(ckpt.meta.get("best_dev_bleu", -1.0))

    run_meta = {
        "arch": "at" if is_ar else f"pnat:{model.predictor_kind}",
        "fingerprint": model.fingerprint(),
        **(extra_meta or {}),
    }
    (run_dir / "train_config.json").write_text(json.dumps({
        "train": {**asdict(cfg), "schedule": asdict(cfg.schedule)},
        **run_meta,
    }, indent=2, sort_keys=True))

    stream = _batch_stream(train_pairs, cfg, start_step=state.step)
    step_fn = train_step_ar if is_ar else train_step
    eval_fn = (lambda: evaluate_ar(model, dev_pairs)) if is_ar else \
        (lambda: evaluate_nat(model, dev_pairs))
    records: list[dict] = []
    mode = "a" if resume else "w"
    with open(run_dir / "metrics.jsonl", mode, encoding="utf-8") as metrics_file:
        while state.step < cfg.max_steps:
            batch = next(stream)
            loss_g, loss_p, _total = step_fn(model, batch, state, cfg)
            if state.step % cfg.eval_interval == 0 or state.step == cfg.max_steps:
                dev = eval_fn()
                record = {
                    "step": state.step,
                    "loss_g": loss_g,
                    "loss_p": loss_p,
                    "dev_bleu": dev["bleu"],
                    "perm_acc": dev["perm_acc"],
                    "rel_acc": dev["rel_acc"],
                }
                metrics_file.write(json.dumps(record) + "\n")
                metrics_file.flush()
                records.append(record)
                meta = {"step": state.step, "best_dev_bleu": state.best_dev_bleu,
                        **run_meta}
                _save(model, state, cfg, run_dir / "last.ckpt", meta)
                if dev["bleu"] > state.best_dev_bleu:
                    state.best_dev_bleu = dev["bleu"]
                    meta["best_dev_bleu"] = state.best_dev_bleu
                    _save(model, state, cfg, run_dir / "best.ckpt", meta)
    return records


def _save(model, state: TrainState, cfg: TrainConfig, path: Path, meta: dict) -> None:
    save_checkpoint(path, params=model.parameter_dict(), fingerprint=model.fingerprint(),
                    adam=state.adam, rng_state={"seed": cfg.seed, "step": state.step},
                    meta=meta)


# -- length-predictor finetuning ------------------------------------------------


def length_offset_accuracy(model: PnatModel, pairs: Pairs,
                           tokens_per_batch: int = 4096) -> float:
    hits = 0
    with no_grad():
        for batch in _eval_batches(pairs, tokens_per_batch):
            enc = model.encode(batch.src, batch.src_real)
            offsets = model.length_head.predict_offsets(enc.states, batch.src_real)
            band = model.length_head.band
            true = np.clip(batch.n_tgt - batch.n_src, -band, band)
            hits += int((offsets == true).sum())
    return hits / len(pairs)


def finetune_length_predictor(model: PnatModel, pairs: Pairs, steps: int,
                              lr: float = 1e-3, tokens_per_batch: int = 2048,
                              seed: int = 0) -> dict:
    """Extra training pass touching only the length head.

    The encoder runs without a tape and its states are consumed detached,
    so every parameter outside the length head stays bit-identical.
    """
    from .bridge import length_loss

    head_params = {f"length_head.{n}": p
                   for n, p in model.length_head.named_parameters()}
    adam = AdamState()
    schedule = LrSchedule(kind="linear_anneal", warmup_steps=0,
                          start_lr=lr, end_lr=max(lr * 0.1, 1e-8),
                          total_steps=max(steps, 1))
    cfg = TrainConfig(tokens_per_batch=tokens_per_batch, seed=seed, max_steps=steps)
    stream = _batch_stream(pairs, cfg, start_step=0)
    done = 0
    last_loss = None
    while done < steps:
        batch = next(stream)
        with no_grad():
            enc = model.encode(batch.src, batch.src_real)
        loss = length_loss(model.length_head, enc.states.detach(), batch.src_real,
                           batch.n_tgt, batch.n_src).mean()
        for p in head_params.values():
            p.zero_grad()
        loss.backward()
        grads = {n: p.grad for n, p in head_params.items() if p.grad is not None}
        adam_step(adam, head_params, grads, schedule.lr(adam.step_count + 1))
        last_loss = float(loss.data)
        done += 1
    return {"steps": done, "final_loss": last_loss}


# -- distillation ---------------------------------------------------------------


def distill_corpus(teacher: ArTransformer, corpus: ParallelCorpus, vocab: Vocab,
                   tokens_per_batch: int = 4096, max_len: int | None = None) -> ParallelCorpus:
    """Replace targets with the teacher's greedy outputs (sources unchanged)."""
    pairs = [(vocab.encode(s), vocab.encode(t)) for s, t in corpus.pairs()]
    cap = max_len or max(len(t) for _, t in pairs) + 8
    new_tgt = list(corpus.tgt)
    kept = 0
    plans = epoch_batches(pairs, tokens_per_batch, seed=0, epoch=0)
    for idxs in plans:
        batch = pad_batch([pairs[i] for i in idxs])
        outs = teacher.greedy_generate(batch.src, batch.src_real, max_len=cap)
        for local, orig in enumerate(idxs):
            text = vocab.decode(outs[local])
            if text.strip():
                new_tgt[orig] = text
            else:
                kept += 1
    if kept:
        log.warning("distillation kept %d original targets (teacher emitted empty)", kept)
    return ParallelCorpus(list(corpus.src), new_tgt, provenance="distilled")
