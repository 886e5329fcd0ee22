"""Bridge between encoder states and decoder inputs.

Two jobs: estimate the output length as a bounded offset from the source
length, and build the decoder input rows as distance-weighted mixtures of
encoder states (soft copy).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .tensor import Tensor, cross_entropy


@dataclass
class SoftCopyConfig:
    tau: float = 1.0  # weight sharpness; smaller = closer to nearest-source copy

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


def soft_copy_weights(n_src: int, m_tgt: int, tau: float,
                      src_real: np.ndarray | None = None) -> np.ndarray:
    """Row-stochastic [m_tgt, n_src] (or [B, m, n]) weights w_ji ∝ exp(-|j-i|/tau)."""
    j = np.arange(m_tgt, dtype=np.float64)[:, None]
    i = np.arange(n_src, dtype=np.float64)[None, :]
    logits = -np.abs(j - i) / tau
    if src_real is not None:
        logits = logits[None, :, :] + np.where(src_real, 0.0, nn.NEG_BIAS)[:, None, :]
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def soft_copy(enc_states: Tensor, src_real: np.ndarray, m_tgt: int,
              cfg: SoftCopyConfig) -> Tensor:
    """Decoder inputs D [B, m_tgt, d] as soft copies of encoder states."""
    w = soft_copy_weights(enc_states.shape[1], m_tgt, cfg.tau, src_real)
    return Tensor(w) @ enc_states


class LengthPredictor(nn.Module):
    """Offset classifier over [-band, band] from mean-pooled encoder states."""

    def __init__(self, d_model: int, band: int, rng: np.random.Generator):
        if band < 1:
            raise ValueError("length band must be >= 1")
        self.band = band
        self.proj = nn.Linear(d_model, 2 * band + 1, rng)

    def offset_logits(self, enc_states: Tensor, src_real: np.ndarray,
                      detach_encoder: bool = False) -> Tensor:
        states = enc_states.detach() if detach_encoder else enc_states
        weights = src_real / src_real.sum(axis=1, keepdims=True)
        pooled = (states * weights[:, :, None]).sum(axis=1)
        return self.proj(pooled)

    def predict_offsets(self, enc_states: Tensor, src_real: np.ndarray) -> np.ndarray:
        logits = self.offset_logits(enc_states, src_real)
        return np.argmax(logits.data, axis=-1) - self.band


def predict_length(length_head: LengthPredictor, enc_states: Tensor,
                   src_real: np.ndarray, n_src: np.ndarray) -> np.ndarray:
    """M = max(1, N + predicted offset), per sentence."""
    offsets = length_head.predict_offsets(enc_states, src_real)
    return np.maximum(1, np.asarray(n_src) + offsets)


def length_loss(length_head: LengthPredictor, enc_states: Tensor, src_real: np.ndarray,
                true_m: np.ndarray, n_src: np.ndarray,
                detach_encoder: bool = False) -> Tensor:
    """Per-sentence cross-entropy of the true length offset; [B] tensor.

    Offsets outside the band clamp to the boundary class so every sentence
    still contributes a training signal.
    """
    band = length_head.band
    offsets = np.clip(np.asarray(true_m) - np.asarray(n_src), -band, band)
    logits = length_head.offset_logits(enc_states, src_real, detach_encoder=detach_encoder)
    return cross_entropy(logits, offsets + band)
