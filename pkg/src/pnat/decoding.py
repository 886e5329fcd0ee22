"""Inference: single-pass argmax decoding and length-parallel rescoring.

Argmax decoding runs the whole pipeline once per sentence: encode,
predict the output length, soft-copy decoder inputs, choose positions,
decode all slots in parallel, then scatter slot predictions into surface
order. Length-parallel decoding fans the same pipeline out over a band of
candidate lengths and keeps the candidate the causal rescorer likes best.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .bridge import predict_length
from .errors import DataError
from .model import ArTransformer, PnatModel
from .positions import is_permutation
from .tensor import log_softmax, no_grad
from .data import EOS_ID


@dataclass
class DecodeResult:
    tokens: np.ndarray  # surface order, no specials
    z_used: np.ndarray
    length_used: int
    model_score: float  # log P(z) + sum of slot token log-probs
    rescorer_score: float | None = None

    def __post_init__(self):
        if len(self.tokens) != self.length_used:
            raise DataError("decode result length mismatch")
        if not is_permutation(self.z_used):
            raise DataError("decode result carries an invalid permutation")


def _decode_at_length(model: PnatModel, enc, m: int) -> DecodeResult:
    d_inputs = model.decoder_inputs(enc, m)
    tgt_real = np.ones((1, m), dtype=bool)
    z, z_logp = model.predict_positions(d_inputs, enc, tgt_real)
    logits = model.nat_logits(d_inputs, z, tgt_real, enc)
    logprobs = log_softmax(logits, axis=-1).data[0]
    slot_tokens = np.argmax(logprobs, axis=-1)
    token_score = float(logprobs[np.arange(m), slot_tokens].sum())
    surface = np.zeros(m, dtype=np.int64)
    surface[z[0]] = slot_tokens
    return DecodeResult(tokens=surface, z_used=z[0].copy(), length_used=m,
                        model_score=token_score + float(z_logp[0]))


def argmax_decode(model: PnatModel, src_ids: np.ndarray,
                  forced_length: int | None = None) -> DecodeResult:
    """Deterministic one-shot decode of a single sentence."""
    src = np.asarray(src_ids, dtype=np.int64)
    with no_grad():
        enc = model.encode(src)
        if forced_length is None:
            m = int(predict_length(model.length_head, enc.states,
                                   enc.src_real, np.array([len(src)]))[0])
        else:
            m = max(1, int(forced_length))
        return _decode_at_length(model, enc, m)


def lpd_decode(model: PnatModel, src_ids: np.ndarray, delta_m: int,
               rescorer: ArTransformer, length_normalize: bool = False) -> DecodeResult:
    """Length-parallel decoding: one candidate per length in the band.

    Candidate lengths are max(1, M_hat + k) for k in [-delta_m, delta_m],
    deduplicated after clamping. The winner maximizes the rescorer's total
    log-probability (optionally length-normalized); ties prefer shorter
    output, then the lower length.
    """
    if delta_m < 0:
        raise DataError("delta_m must be >= 0")
    src = np.asarray(src_ids, dtype=np.int64)
    with no_grad():
        enc = model.encode(src)
        m_hat = int(predict_length(model.length_head, enc.states,
                                   enc.src_real, np.array([len(src)]))[0])
        lengths = sorted({max(1, m_hat + k) for k in range(-delta_m, delta_m + 1)})
        candidates = [_decode_at_length(model, enc, m) for m in lengths]
    for cand in candidates:
        scored = np.concatenate([cand.tokens, [EOS_ID]])
        score = rescorer.score_sequence(scored, src)
        cand.rescorer_score = score / len(scored) if length_normalize else score
    best = max(candidates,
               key=lambda c: (c.rescorer_score, -len(c.tokens), -c.length_used))
    return best


def remove_repeats(tokens) -> np.ndarray:
    """Collapse maximal runs of identical adjacent tokens to one token."""
    arr = np.asarray(tokens)
    if arr.size == 0:
        return arr.copy()
    keep = np.ones(arr.shape[0], dtype=bool)
    keep[1:] = arr[1:] != arr[:-1]
    return arr[keep]


def decode_corpus(model: PnatModel, sources: list[np.ndarray],
                  forced_lengths: list[int] | None = None,
                  delta_m: int | None = None,
                  rescorer: ArTransformer | None = None) -> list[DecodeResult]:
    """Sentence-by-sentence decode of a list of sources."""
    results = []
    for i, src in enumerate(sources):
        if delta_m is not None and rescorer is not None:
            results.append(lpd_decode(model, src, delta_m, rescorer))
        else:
            forced = None if forced_lengths is None else forced_lengths[i]
            results.append(argmax_decode(model, src, forced_length=forced))
    return results


def throughput_sentences_per_sec(decode_fn, sources: list[np.ndarray],
                                 repeats: int = 1) -> float:
    """Wall-clock sentence rate for a one-sentence-at-a-time decoder."""
    start = time.perf_counter()
    n = 0
    for _ in range(repeats):
        for src in sources:
            decode_fn(src)
            n += 1
    elapsed = time.perf_counter() - start
    return n / elapsed if elapsed > 0 else float("inf")
