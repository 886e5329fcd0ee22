"""Construct models, train settings, and tasks from a flat config dict."""

from __future__ import annotations

from pathlib import Path

from .bridge import SoftCopyConfig
from .checkpoint import Checkpoint, load_checkpoint, restore_parameters
from .data import TaskSpec
from .errors import DataError, UsageError
from .model import ArTransformer, ModelConfig, PnatModel
from .optim import LrSchedule
from .training import TrainConfig


def build_task_spec(cfg: dict) -> TaskSpec:
    return TaskSpec(
        kind=cfg["task.kind"], vocab_size=cfg["task.vocab_size"],
        len_min=cfg["task.len_min"], len_max=cfg["task.len_max"],
        seed=cfg["task.seed"], train_size=cfg["task.train_size"],
        dev_size=cfg["task.dev_size"], test_size=cfg["task.test_size"],
        n_classes=cfg["task.n_classes"], distinct_tokens=cfg["task.distinct_tokens"],
    )


def build_model_config(cfg: dict, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_src=vocab_size, vocab_tgt=vocab_size,
        d_model=cfg["model.d_model"], d_hidden=cfg["model.d_hidden"],
        n_layers=cfg["model.n_layers"], n_heads=cfg["model.n_heads"],
        p_dropout=cfg["model.p_dropout"], rel_clip_distance=cfg["model.rel_clip"],
        tie_output_to_target_embedding=cfg["model.tie_output"],
        share_src_tgt_embeddings=cfg["model.share_embeddings"],
    )


def build_pnat(cfg: dict, vocab_size: int, seed: int | None = None) -> PnatModel:
    return PnatModel(
        build_model_config(cfg, vocab_size),
        copy_cfg=SoftCopyConfig(tau=cfg["bridge.tau"]),
        predictor=cfg["position.predictor"],
        predictor_layers=cfg["position.sub_layers"],
        length_band=cfg["bridge.length_band"],
        seed=cfg["train.seed"] if seed is None else seed,
    )


def build_at(cfg: dict, vocab_size: int, seed: int | None = None) -> ArTransformer:
    return ArTransformer(build_model_config(cfg, vocab_size),
                         seed=cfg["train.seed"] if seed is None else seed)


def build_train_config(cfg: dict, arch: str = "pnat") -> TrainConfig:
    schedule = LrSchedule(
        kind=cfg["train.schedule"], warmup_steps=cfg["train.warmup_steps"],
        start_lr=cfg["train.start_lr"], end_lr=cfg["train.end_lr"],
        total_steps=cfg["train.max_steps"],
    )
    return TrainConfig(
        alpha=cfg["train.alpha"] if arch == "pnat" else 0.0,
        schedule=schedule, tokens_per_batch=cfg["train.tokens_per_batch"],
        max_steps=cfg["train.max_steps"], eval_interval=cfg["train.eval_interval"],
        seed=cfg["train.seed"], dtype=cfg["train.dtype"],
    )


def model_from_checkpoint(path: str | Path) -> tuple[PnatModel | ArTransformer, Checkpoint]:
    """Rebuild the exact model a training run checkpointed, weights loaded."""
    ckpt = load_checkpoint(path)
    meta = ckpt.meta
    if "arch" not in meta or "config" not in meta:
        raise DataError(f"checkpoint {path} lacks rebuild metadata")
    cfg = meta["config"]
    vocab_size = int(meta["vocab_size"])
    from .tensor import set_default_dtype

    set_default_dtype(cfg["train.dtype"])
    if meta["arch"] == "at":
        model: PnatModel | ArTransformer = build_at(cfg, vocab_size)
    elif meta["arch"].startswith("pnat:"):
        kind = meta["arch"].split(":", 1)[1]
        if kind != cfg["position.predictor"]:
            raise DataError("checkpoint arch tag disagrees with its config")
        model = build_pnat(cfg, vocab_size)
    else:
        raise DataError(f"unknown arch '{meta['arch']}' in checkpoint")
    restore_parameters(model, ckpt)
    return model, ckpt


def require_predictor(model: PnatModel | ArTransformer, requested: str | None) -> None:
    if requested is None:
        return
    if not isinstance(model, PnatModel) or model.predictor_kind != requested:
        have = model.predictor_kind if isinstance(model, PnatModel) else "at"
        raise UsageError(
            f"--predictor {requested} does not match this checkpoint (has '{have}')")
