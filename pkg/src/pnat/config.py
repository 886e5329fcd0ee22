"""Flat key-value run configuration.

Files hold ``section.key = value`` lines (``#`` comments allowed). Every
key has a documented default below; unknown keys are rejected rather than
silently ignored so typos cannot change a run.
"""

from __future__ import annotations

from pathlib import Path

from .errors import UsageError


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default, help)
DEFAULTS: dict[str, tuple] = {
    "task.kind": (str, "rule_reorder", "copy | reverse | sort | rule_reorder"),
    "task.vocab_size": (int, 50, "task alphabet size"),
    "task.len_min": (int, 3, "shortest source sentence"),
    "task.len_max": (int, 16, "longest source sentence"),
    "task.seed": (int, 0, "corpus generation seed"),
    "task.train_size": (int, 20000, "training pairs"),
    "task.dev_size": (int, 500, "dev pairs"),
    "task.test_size": (int, 500, "test pairs"),
    "task.n_classes": (int, 5, "token classes for rule_reorder"),
    "task.distinct_tokens": (_bool, False, "sample sentences without token repeats"),
    "model.d_model": (int, 64, "embedding/attention width"),
    "model.d_hidden": (int, 128, "feed-forward width"),
    "model.n_layers": (int, 2, "encoder and decoder depth"),
    "model.n_heads": (int, 2, "attention heads"),
    "model.p_dropout": (float, 0.1, "dropout rate"),
    "model.rel_clip": (int, 4, "relative position clipping distance"),
    "model.tie_output": (_bool, True, "tie classifier weights to target embeddings"),
    "model.share_embeddings": (_bool, True, "one embedding table for both sides"),
    "bridge.tau": (float, 1.0, "soft-copy weight sharpness"),
    "bridge.length_band": (int, 20, "length offset band B"),
    "position.predictor": (str, "ar", "ar | nar | identity"),
    "position.sub_layers": (int, 2, "position sub-encoder depth"),
    "train.alpha": (float, 0.3, "position loss weight"),
    "train.tokens_per_batch": (int, 2048, "token budget per batch"),
    "train.max_steps": (int, 2000, "optimizer steps"),
    "train.eval_interval": (int, 100, "steps between dev evaluations"),
    "train.seed": (int, 0, "training seed"),
    "train.dtype": (str, "float32", "float32 | float64"),
    "train.schedule": (str, "linear_anneal", "linear_anneal | inverse_sqrt"),
    "train.start_lr": (float, 3e-4, "schedule start"),
    "train.end_lr": (float, 1e-5, "schedule end (linear_anneal)"),
    "train.warmup_steps": (int, 200, "warmup ramp length"),
    "train.finetune_steps": (int, 200, "length-predictor finetune steps"),
    "train.finetune_lr": (float, 1e-3, "length-predictor finetune lr"),
    "decode.delta_m": (int, 4, "length band for parallel decoding"),
    "decode.rescore_length_norm": (_bool, False, "length-normalize rescorer scores"),
    "decode.max_len": (int, 64, "causal decode cap"),
}


def default_config() -> dict:
    return {key: default for key, (_, default, _) in DEFAULTS.items()}


def parse_value(key: str, raw: str):
    if key not in DEFAULTS:
        raise UsageError(f"unknown config key '{key}'")
    parser = DEFAULTS[key][0]
    try:
        return parser(raw.strip())
    except ValueError as exc:
        raise UsageError(f"bad value for '{key}': {exc}") from exc


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> dict:
    """Defaults, then file entries, then ``key=value`` override strings."""
    cfg = default_config()
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = stripped.split("=", 1)
            cfg[key.strip()] = parse_value(key.strip(), raw)
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"override must look like key=value, got '{item}'")
        key, raw = item.split("=", 1)
        cfg[key.strip()] = parse_value(key.strip(), raw)
    return cfg


def config_help() -> str:
    lines = ["available configuration keys (key = default  # description):"]
    for key, (_, default, desc) in DEFAULTS.items():
        lines.append(f"  {key} = {default}  # {desc}")
    return "\n".join(lines)
