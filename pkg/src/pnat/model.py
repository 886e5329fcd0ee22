"""Encoder stack, position-aware parallel decoder, and the causal baseline.

The parallel decoder consumes an explicit permutation z: self-attention is
biased by learned embeddings of the clipped relative offsets z[j] - z[i],
and slot t's prediction is written to surface position z[t]. The causal
model is an ordinary autoregressive transformer with its own parameters,
used as baseline, distillation teacher, and rescorer.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .bridge import LengthPredictor, SoftCopyConfig, soft_copy
from .errors import DataError
from .positions import ArPointerPredictor, NarPredictor, SubEncoder, is_permutation
from .tensor import Tensor, log_softmax, no_grad


@dataclass
class ModelConfig:
    vocab_src: int
    vocab_tgt: int
    d_model: int = 64
    d_hidden: int = 128
    n_layers: int = 2
    n_heads: int = 2
    p_dropout: float = 0.1
    rel_clip_distance: int = 4
    tie_output_to_target_embedding: bool = True
    share_src_tgt_embeddings: bool = True  # monolingual tasks; needs equal vocabs

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.rel_clip_distance < 1:
            raise ValueError("rel_clip_distance must be >= 1")
        if not 0.0 <= self.p_dropout < 1.0:
            raise ValueError("p_dropout must be in [0, 1)")
        if self.share_src_tgt_embeddings and self.vocab_src != self.vocab_tgt:
            raise ValueError("shared embeddings need equal vocabulary sizes")


@dataclass
class EncoderOutput:
    states: Tensor  # [B, N, d_model]
    src_real: np.ndarray  # [B, N] bool, True on real tokens


def relative_bucket(i: int, j: int, z, clip: int) -> int:
    """Clipped relative offset between the assigned positions of two slots."""
    z = np.asarray(z)
    return int(np.clip(int(z[j]) - int(z[i]), -clip, clip))


def relative_buckets(z: np.ndarray, clip: int) -> np.ndarray:
    """[.., M] position assignments -> [.., M, M] table indices in [0, 2*clip]."""
    z = np.asarray(z, dtype=np.int64)
    diff = z[..., None, :] - z[..., :, None]
    return np.clip(diff, -clip, clip) + clip


class Encoder(nn.Module):
    def __init__(self, vocab: int, cfg: ModelConfig, rng: np.random.Generator,
                 sites: nn.SiteCounter):
        self.emb = nn.Embedding(vocab, cfg.d_model, rng)
        self.site_emb = sites.take()
        self.layers = [
            nn.EncoderLayer(cfg.d_model, cfg.d_hidden, cfg.n_heads, rng, sites)
            for _ in range(cfg.n_layers)
        ]
        self.norm = nn.LayerNorm(cfg.d_model)
        self.d_model = cfg.d_model

    def __call__(self, ids: np.ndarray, src_real: np.ndarray,
                 plan: nn.DropPlan | None = None) -> Tensor:
        x = self.emb(ids) * math.sqrt(self.d_model)
        x = x + nn.sinusoid_positions(ids.shape[1], self.d_model)[None, :, :]
        x = nn.dropout(x, plan, self.site_emb)
        bias = nn.key_mask_bias(src_real)
        for layer in self.layers:
            x = layer(x, bias, plan)
        return self.norm(x)


class NatDecoder(nn.Module):
    """Parallel decoder; self-attention carries relative-position biases."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, sites: nn.SiteCounter):
        d_head = cfg.d_model // cfg.n_heads
        self.layers = [
            nn.CrossAttnLayer(cfg.d_model, cfg.d_hidden, cfg.n_heads, rng, sites)
            for _ in range(cfg.n_layers)
        ]
        self.rel_tables = [
            Tensor(rng.normal(0.0, d_head**-0.5, size=(2 * cfg.rel_clip_distance + 1, d_head)),
                   requires_grad=True)
            for _ in range(cfg.n_layers)
        ]
        self.norm = nn.LayerNorm(cfg.d_model)
        self.clip = cfg.rel_clip_distance

    def __call__(self, d_inputs: Tensor, z: np.ndarray, tgt_real: np.ndarray,
                 enc: EncoderOutput, plan: nn.DropPlan | None = None) -> Tensor:
        buckets = relative_buckets(z, self.clip)
        onehot = np.eye(2 * self.clip + 1, dtype=d_inputs.data.dtype)[buckets]
        self_bias = nn.key_mask_bias(tgt_real)
        memory_bias = nn.key_mask_bias(enc.src_real)
        x = d_inputs
        for layer, table in zip(self.layers, self.rel_tables):
            x = layer(x, enc.states, self_bias, memory_bias, plan,
                      rel=nn.RelativeBias(table, buckets, onehot))
        return self.norm(x)


class PnatModel(nn.Module):
    """Position-latent parallel generator.

    predictor: "ar" (pointer recurrence), "nar" (per-slot classifier) or
    "identity" (fixed monotone positions; the no-position-learning baseline).
    """

    def __init__(self, cfg: ModelConfig, copy_cfg: SoftCopyConfig | None = None,
                 predictor: str = "ar", predictor_layers: int = 2,
                 length_band: int = 20, seed: int = 0):
        if predictor not in ("ar", "nar", "identity"):
            raise ValueError(f"unknown predictor kind '{predictor}'")
        self.cfg = cfg
        self.copy_cfg = copy_cfg or SoftCopyConfig()
        self.predictor_kind = predictor
        self.seed = seed
        rng = np.random.default_rng(seed)
        sites = nn.SiteCounter()
        self.encoder = Encoder(cfg.vocab_src, cfg, rng, sites)
        self.tgt_emb = (self.encoder.emb if cfg.share_src_tgt_embeddings
                        else nn.Embedding(cfg.vocab_tgt, cfg.d_model, rng))
        self.decoder = NatDecoder(cfg, rng, sites)
        self.out_proj = (None if cfg.tie_output_to_target_embedding
                         else nn.Linear(cfg.d_model, cfg.vocab_tgt, rng, bias=False))
        self.length_head = LengthPredictor(cfg.d_model, length_band, rng)
        if predictor == "identity":
            self.sub_encoder = None
            self.position_head = None
        else:
            self.sub_encoder = SubEncoder(cfg.d_model, cfg.d_hidden, cfg.n_heads,
                                          predictor_layers, rng, sites)
            self.position_head = (ArPointerPredictor(cfg.d_model, rng) if predictor == "ar"
                                  else NarPredictor(cfg.d_model, rng))

    # -- pipeline pieces ---------------------------------------------------

    def encode(self, ids: np.ndarray, src_real: np.ndarray | None = None,
               plan: nn.DropPlan | None = None) -> EncoderOutput:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        if ids.shape[1] < 1:
            raise DataError("cannot encode an empty sentence")
        if np.any(ids >= self.cfg.vocab_src) or np.any(ids < 0):
            raise DataError("source token id out of vocabulary range")
        if src_real is None:
            src_real = np.ones(ids.shape, dtype=bool)
        return EncoderOutput(self.encoder(ids, src_real, plan), src_real)

    def decoder_inputs(self, enc: EncoderOutput, m_tgt: int) -> Tensor:
        return soft_copy(enc.states, enc.src_real, m_tgt, self.copy_cfg)

    def predictor_states(self, d_inputs: Tensor, enc: EncoderOutput,
                         tgt_real: np.ndarray, plan: nn.DropPlan | None = None) -> Tensor:
        if self.sub_encoder is None:
            raise ValueError("identity-position model has no position predictor")
        return self.sub_encoder(d_inputs, enc.states, nn.key_mask_bias(tgt_real),
                                nn.key_mask_bias(enc.src_real), plan)

    def classifier_weights(self) -> Tensor:
        return self.tgt_emb.table if self.out_proj is None else self.out_proj.weight.T

    def output_logits(self, h: Tensor) -> Tensor:
        if self.out_proj is None:
            return h @ self.tgt_emb.table.T
        return self.out_proj(h)

    def nat_logits(self, d_inputs: Tensor, z: np.ndarray, tgt_real: np.ndarray,
                   enc: EncoderOutput, plan: nn.DropPlan | None = None) -> Tensor:
        h = self.decoder(d_inputs, z, tgt_real, enc, plan)
        return self.output_logits(h)

    def predict_positions(self, d_inputs: Tensor, enc: EncoderOutput,
                          tgt_real: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(z [B, M], log P(z)) for the configured predictor, greedy/argmax."""
        b, m = tgt_real.shape
        if self.predictor_kind == "identity":
            return np.tile(np.arange(m, dtype=np.int64), (b, 1)), np.zeros(b)
        r = self.predictor_states(d_inputs, enc, tgt_real)
        if self.predictor_kind == "ar":
            return self.position_head.greedy(r, tgt_real)
        z = self.position_head.predict(r, tgt_real)
        logp = self.position_head.log_prob(r, z, tgt_real).data
        return z, logp

    def position_loss(self, d_inputs: Tensor, enc: EncoderOutput, z_ref: np.ndarray,
                      tgt_real: np.ndarray, plan: nn.DropPlan | None = None) -> Tensor:
        """-log P(z_ref | D, E) per sentence; [B] tensor, zeros for identity."""
        if self.predictor_kind == "identity":
            return Tensor(np.zeros(tgt_real.shape[0]))
        r = self.predictor_states(d_inputs, enc, tgt_real, plan)
        if self.predictor_kind == "ar":
            return -self.position_head.forced_log_prob(r, z_ref, tgt_real)
        return -self.position_head.log_prob(r, z_ref, tgt_real)

    # -- single-sentence contract wrappers ----------------------------------

    def decode_nat(self, d_inputs: Tensor, z: np.ndarray, enc: EncoderOutput) -> Tensor:
        """Logits [M, vocab_tgt] for one sentence; z must be a bijection."""
        z = np.asarray(z, dtype=np.int64)
        if not is_permutation(z):
            raise DataError("z is not a valid permutation")
        m = len(z)
        d = d_inputs if d_inputs.ndim == 3 else d_inputs.reshape(1, m, d_inputs.shape[-1])
        logits = self.nat_logits(d, z[None, :], np.ones((1, m), dtype=bool), enc)
        return logits.reshape(m, logits.shape[-1])

    def fingerprint(self) -> str:
        payload = {
            "model": vars(self.cfg),
            "copy": vars(self.copy_cfg),
            "predictor": self.predictor_kind,
            "length_band": self.length_head.band,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


class ArTransformer(nn.Module):
    """Left-to-right transformer: baseline, teacher, and rescorer."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        sites = nn.SiteCounter()
        self.encoder = Encoder(cfg.vocab_src, cfg, rng, sites)
        self.tgt_emb = (self.encoder.emb if cfg.share_src_tgt_embeddings
                        else nn.Embedding(cfg.vocab_tgt, cfg.d_model, rng))
        self.site_emb = sites.take()
        self.layers = [
            nn.CrossAttnLayer(cfg.d_model, cfg.d_hidden, cfg.n_heads, rng, sites)
            for _ in range(cfg.n_layers)
        ]
        self.norm = nn.LayerNorm(cfg.d_model)

    def encode(self, ids: np.ndarray, src_real: np.ndarray | None = None,
               plan: nn.DropPlan | None = None) -> EncoderOutput:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        if src_real is None:
            src_real = np.ones(ids.shape, dtype=bool)
        return EncoderOutput(self.encoder(ids, src_real, plan), src_real)

    def step_logits(self, dec_in: np.ndarray, tgt_real: np.ndarray, enc: EncoderOutput,
                    plan: nn.DropPlan | None = None) -> Tensor:
        """Teacher-forced logits [B, T, vocab]; position t sees dec_in[:t+1]."""
        t = dec_in.shape[1]
        d = self.cfg.d_model
        x = self.tgt_emb(dec_in) * math.sqrt(d) + nn.sinusoid_positions(t, d)[None, :, :]
        x = nn.dropout(x, plan, self.site_emb)
        self_bias = nn.causal_bias(t) + nn.key_mask_bias(tgt_real)
        memory_bias = nn.key_mask_bias(enc.src_real)
        for layer in self.layers:
            x = layer(x, enc.states, self_bias, memory_bias, plan)
        return self.norm(x) @ self.tgt_emb.table.T

    def decode_ar(self, y_prefix: np.ndarray, enc: EncoderOutput) -> Tensor:
        """Next-token logits after a BOS-led prefix (one sentence)."""
        prefix = np.asarray(y_prefix, dtype=np.int64)[None, :]
        logits = self.step_logits(prefix, np.ones(prefix.shape, dtype=bool), enc)
        return logits.reshape(prefix.shape[1], -1)[-1]

    def score_sequence(self, y: np.ndarray, x: np.ndarray, bos: int = 1) -> float:
        """Total log-probability of y (which must end with EOS) given x."""
        y = np.asarray(y, dtype=np.int64)
        with no_grad():
            enc = self.encode(np.asarray(x, dtype=np.int64))
            dec_in = np.concatenate([[bos], y[:-1]])[None, :]
            logits = self.step_logits(dec_in, np.ones((1, len(y)), dtype=bool), enc)
            lp = log_softmax(logits, axis=-1).data[0]
        return float(lp[np.arange(len(y)), y].sum())

    def greedy_generate(self, src: np.ndarray, src_real: np.ndarray | None = None,
                        max_len: int = 64, bos: int = 1, eos: int = 2) -> list[np.ndarray]:
        """Batched greedy rollout; returns per-sentence ids without BOS/EOS."""
        src = np.asarray(src, dtype=np.int64)
        if src.ndim == 1:
            src = src[None, :]
        with no_grad():
            enc = self.encode(src, src_real)
            b = src.shape[0]
            out = np.full((b, max_len + 1), bos, dtype=np.int64)
            finished = np.zeros(b, dtype=bool)
            length = np.full(b, max_len, dtype=np.int64)
            for t in range(max_len):
                logits = self.step_logits(out[:, : t + 1], np.ones((b, t + 1), dtype=bool), enc)
                nxt = np.argmax(logits.data[:, -1, :], axis=-1)
                newly = (~finished) & (nxt == eos)
                length[newly] = t
                finished |= nxt == eos
                out[:, t + 1] = np.where(finished, eos, nxt)
                if finished.all():
                    break
        return [out[s, 1 : 1 + length[s]].copy() for s in range(b)]

    def beam_generate(self, src: np.ndarray, beam: int = 4, max_len: int = 64,
                      bos: int = 1, eos: int = 2) -> np.ndarray:
        """Small fixed-width beam search for one sentence."""
        with no_grad():
            enc = self.encode(np.asarray(src, dtype=np.int64))
            beams: list[tuple[float, list[int], bool]] = [(0.0, [bos], False)]
            for _ in range(max_len):
                if all(done for _, _, done in beams):
                    break
                grown: list[tuple[float, list[int], bool]] = []
                for score, seq, done in beams:
                    if done:
                        grown.append((score, seq, done))
                        continue
                    lp = log_softmax(self.decode_ar(np.array(seq), enc)).data
                    top = np.argsort(-lp)[:beam]
                    for tok in top:
                        grown.append((score + float(lp[tok]), seq + [int(tok)], tok == eos))
                grown.sort(key=lambda item: (-item[0], len(item[1])))
                beams = grown[:beam]
            best = max(beams, key=lambda item: item[0])
        seq = best[1][1:]
        if seq and seq[-1] == eos:
            seq = seq[:-1]
        return np.array(seq, dtype=np.int64)

    def fingerprint(self) -> str:
        payload = {"model": vars(self.cfg), "kind": "causal"}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]
