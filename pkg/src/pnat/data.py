"""Corpora, vocabularies, synthetic tasks, and batch composition.

Corpus files are UTF-8, one whitespace-tokenized sentence per line, in
parallel ``.src``/``.tgt`` pairs. Synthetic corpora are pure functions of
their TaskSpec, so equal seeds give hash-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")


class Vocab:
    """Bijective token<->id map with fixed reserved ids."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(RESERVED) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise DataError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, sentence: str) -> np.ndarray:
        ids = [self.token_to_id.get(tok, UNK_ID) for tok in sentence.split()]
        return np.array(ids, dtype=np.int64)

    def decode(self, ids) -> str:
        return " ".join(self.id_to_token[int(i)] for i in ids)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.id_to_token[len(RESERVED):]) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        return cls([line for line in text.splitlines() if line])


@dataclass
class ParallelCorpus:
    src: list[str]
    tgt: list[str]
    provenance: str = "raw"

    def __post_init__(self):
        if len(self.src) != len(self.tgt):
            raise DataError("source/target sentence counts differ")
        for s, t in zip(self.src, self.tgt):
            if not s.split() or not t.split():
                raise DataError("empty sentence in corpus")

    def __len__(self) -> int:
        return len(self.src)

    def pairs(self) -> list[tuple[str, str]]:
        return list(zip(self.src, self.tgt))

    def save(self, prefix: str | Path) -> None:
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        prefix.with_suffix(".src").write_text("\n".join(self.src) + "\n", encoding="utf-8")
        prefix.with_suffix(".tgt").write_text("\n".join(self.tgt) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, prefix: str | Path, provenance: str = "raw") -> "ParallelCorpus":
        prefix = Path(prefix)
        src_path = prefix.with_suffix(".src")
        tgt_path = prefix.with_suffix(".tgt")
        if not src_path.exists() or not tgt_path.exists():
            raise DataError(f"missing corpus files at {prefix}.src/.tgt")
        src = [l for l in src_path.read_text(encoding="utf-8").splitlines() if l.strip()]
        tgt = [l for l in tgt_path.read_text(encoding="utf-8").splitlines() if l.strip()]
        return cls(src, tgt, provenance)


@dataclass
class TaskSpec:
    kind: str = "rule_reorder"  # copy | reverse | sort | rule_reorder
    vocab_size: int = 50
    len_min: int = 3
    len_max: int = 16
    seed: int = 0
    train_size: int = 20000
    dev_size: int = 500
    test_size: int = 500
    n_classes: int = 5  # rule_reorder only
    distinct_tokens: bool = False  # sample without replacement per sentence

    def __post_init__(self):
        if self.kind not in ("copy", "reverse", "sort", "rule_reorder"):
            raise DataError(f"unknown task kind '{self.kind}'")
        if not 1 <= self.len_min <= self.len_max:
            raise DataError("bad length range")
        if self.vocab_size < 2:
            raise DataError("task alphabet too small")
        if self.distinct_tokens and self.len_max > self.vocab_size:
            raise DataError("distinct tokens need len_max <= vocab_size")


def _reorder_rule(spec: TaskSpec) -> tuple[np.ndarray, np.ndarray]:
    """Seeded token-class map plus a class priority order."""
    rng = np.random.default_rng(spec.seed + 104729)
    classes = rng.integers(0, spec.n_classes, size=spec.vocab_size)
    priority = rng.permutation(spec.n_classes)
    rank = np.empty(spec.n_classes, dtype=np.int64)
    rank[priority] = np.arange(spec.n_classes)
    return classes, rank


def _apply_task(tokens: np.ndarray, spec: TaskSpec,
                rule: tuple[np.ndarray, np.ndarray] | None) -> np.ndarray:
    if spec.kind == "copy":
        return tokens
    if spec.kind == "reverse":
        return tokens[::-1]
    if spec.kind == "sort":
        return np.sort(tokens, kind="stable")
    classes, rank = rule
    return tokens[np.argsort(rank[classes[tokens]], kind="stable")]


def gen_synthetic(spec: TaskSpec) -> tuple[ParallelCorpus, ParallelCorpus, ParallelCorpus]:
    """Deterministic train/dev/test splits with no shared source sentences."""
    rng = np.random.default_rng(spec.seed)
    rule = _reorder_rule(spec) if spec.kind == "rule_reorder" else None
    need = spec.train_size + spec.dev_size + spec.test_size
    seen: set[bytes] = set()
    sources: list[np.ndarray] = []
    attempts = 0
    while len(sources) < need:
        attempts += 1
        if attempts > 50 * need:
            raise DataError("task space too small for requested split sizes")
        n = int(rng.integers(spec.len_min, spec.len_max + 1))
        if spec.distinct_tokens:
            toks = rng.choice(spec.vocab_size, size=n, replace=False)
        else:
            toks = rng.integers(0, spec.vocab_size, size=n)
        key = toks.tobytes()
        if key in seen:
            continue
        seen.add(key)
        sources.append(toks)

    def lines(chunk: list[np.ndarray]) -> tuple[list[str], list[str]]:
        src = [" ".join(str(t) for t in s) for s in chunk]
        tgt = [" ".join(str(t) for t in _apply_task(s, spec, rule)) for s in chunk]
        return src, tgt

    tag = f"synthetic:{spec.kind}"
    a, b = spec.train_size, spec.train_size + spec.dev_size
    train = ParallelCorpus(*lines(sources[:a]), provenance=tag)
    dev = ParallelCorpus(*lines(sources[a:b]), provenance=tag)
    test = ParallelCorpus(*lines(sources[b:]), provenance=tag)
    return train, dev, test


def build_vocab(corpus: ParallelCorpus, min_count: int = 1) -> Vocab:
    """Whitespace types with count >= min_count, by count desc then lexicographic."""
    if len(corpus) == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    counts: dict[str, int] = {}
    for line in corpus.src + corpus.tgt:
        for tok in line.split():
            counts[tok] = counts.get(tok, 0) + 1
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocab(kept)


def encode_pairs(corpus: ParallelCorpus, vocab: Vocab) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(vocab.encode(s), vocab.encode(t)) for s, t in corpus.pairs()]


@dataclass
class Batch:
    src: np.ndarray  # [B, Ns] ids, PAD-filled
    src_real: np.ndarray  # [B, Ns] bool
    tgt: np.ndarray  # [B, Nt]
    tgt_real: np.ndarray  # [B, Nt]
    n_src: np.ndarray  # [B]
    n_tgt: np.ndarray  # [B]

    @property
    def size(self) -> int:
        return self.src.shape[0]


def pad_batch(pairs: list[tuple[np.ndarray, np.ndarray]]) -> Batch:
    n_src = np.array([len(s) for s, _ in pairs])
    n_tgt = np.array([len(t) for _, t in pairs])
    b, ns, nt = len(pairs), int(n_src.max()), int(n_tgt.max())
    src = np.full((b, ns), PAD_ID, dtype=np.int64)
    tgt = np.full((b, nt), PAD_ID, dtype=np.int64)
    for k, (s, t) in enumerate(pairs):
        src[k, : len(s)] = s
        tgt[k, : len(t)] = t
    src_real = np.arange(ns)[None, :] < n_src[:, None]
    tgt_real = np.arange(nt)[None, :] < n_tgt[:, None]
    return Batch(src, src_real, tgt, tgt_real, n_src, n_tgt)


def compose_batches(pairs: list[tuple[np.ndarray, np.ndarray]], tokens_per_batch: int,
                    rng: np.random.Generator | None = None) -> list[list[int]]:
    """Token-budget batching: index groups whose padded footprint fits.

    Sentences are never split; the budget bounds batch_size * max(padded
    src, padded tgt). A sentence alone over budget is a config error.
    """
    costs = [max(len(s), len(t)) for s, t in pairs]
    if max(costs, default=0) > tokens_per_batch:
        raise DataError("tokens_per_batch smaller than the longest sentence")
    order = list(np.arange(len(pairs)))
    if rng is not None:
        rng.shuffle(order)
    order.sort(key=lambda i: costs[i])  # stable: keeps shuffled order inside a length group
    batches: list[list[int]] = []
    current: list[int] = []
    width = 0
    for idx in order:
        new_width = max(width, costs[idx])
        if current and (len(current) + 1) * new_width > tokens_per_batch:
            batches.append(current)
            current, width = [], 0
            new_width = costs[idx]
        current.append(int(idx))
        width = new_width
    if current:
        batches.append(current)
    if rng is not None:
        perm = rng.permutation(len(batches))
        batches = [batches[i] for i in perm]
    return batches


def epoch_batches(pairs: list[tuple[np.ndarray, np.ndarray]], tokens_per_batch: int,
                  seed: int, epoch: int) -> list[list[int]]:
    """Batch plan as a pure function of (seed, epoch); resume-friendly."""
    bg = np.random.Philox(key=np.array([seed, 0], dtype=np.uint64),
                          counter=np.array([epoch, 0, 0, 0], dtype=np.uint64))
    return compose_batches(pairs, tokens_per_batch, np.random.Generator(bg))


def task_spec_to_json(spec: TaskSpec) -> str:
    return json.dumps(vars(spec), indent=2, sort_keys=True)
