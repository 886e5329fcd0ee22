"""Model building blocks: parameter containers, layers, attention.

Dropout is counter-based: every dropout site owns a small integer id, and
the mask for (seed, step, site) is drawn from a Philox stream keyed by the
seed with the (step, site) pair as the counter. Masks therefore do not
depend on evaluation order, which keeps training runs replayable.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .tensor import Tensor, layer_norm, make_op, softmax

NEG_BIAS = -1e9  # additive mask value; exp() underflows to exactly 0.0


class Module:
    """Base container; parameters are discovered by attribute walk."""

    def named_parameters(self, prefix: str = "",
                         _seen: set[int] | None = None) -> Iterator[tuple[str, Tensor]]:
        # shared submodules (tied embeddings) are yielded once, first name wins
        seen = _seen if _seen is not None else set()
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                if id(value) not in seen:
                    seen.add(id(value))
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.", seen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.", seen)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def parameter_dict(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())


class SiteCounter:
    """Hands out consecutive dropout-site ids during model construction."""

    def __init__(self):
        self.next_id = 0

    def take(self) -> int:
        sid = self.next_id
        self.next_id += 1
        return sid


class DropPlan:
    """Per-forward dropout context: rate, run seed, and the current step."""

    def __init__(self, p: float, seed: int, step: int, active: bool = True):
        self.p = float(p)
        self.seed = int(seed)
        self.step = int(step)
        self.active = bool(active) and self.p > 0.0

    def mask(self, site: int, shape: tuple) -> np.ndarray | None:
        if not self.active:
            return None
        bg = np.random.Philox(
            counter=np.array([self.step, site, 0, 0], dtype=np.uint64),
            key=np.array([self.seed, 0], dtype=np.uint64),
        )
        keep = np.random.Generator(bg).random(shape, dtype=np.float32) >= self.p
        return keep.astype(np.float32) / np.float32(1.0 - self.p)


def dropout(x: Tensor, plan: DropPlan | None, site: int) -> Tensor:
    if plan is None:
        return x
    mask = plan.mask(site, x.shape)
    if mask is None:
        return x
    return x * mask


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Tensor(xavier_uniform(rng, d_in, d_out), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.shift = Tensor(np.zeros(d), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.shift, self.eps)


class Embedding(Module):
    def __init__(self, n_tokens: int, d: int, rng: np.random.Generator):
        self.table = Tensor(rng.normal(0.0, d**-0.5, size=(n_tokens, d)), requires_grad=True)

    def __call__(self, ids: np.ndarray) -> Tensor:
        return self.table[np.asarray(ids, dtype=np.intp)]


def sinusoid_positions(length: int, d: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    dim = np.arange(0, d, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, dim / d)
    enc = np.zeros((length, d))
    enc[:, 0::2] = np.sin(angle)
    enc[:, 1::2] = np.cos(angle[:, : enc[:, 1::2].shape[1]])
    return enc


def key_mask_bias(real: np.ndarray) -> np.ndarray:
    """[B, Tk] boolean (True = real token) -> additive [B, 1, 1, Tk] bias."""
    return np.where(real[:, None, None, :], 0.0, NEG_BIAS)


def causal_bias(t: int) -> np.ndarray:
    return np.where(np.tril(np.ones((t, t), dtype=bool)), 0.0, NEG_BIAS)[None, None, :, :]


class RelativeBias:
    """Per-layer learned relative-offset scores, shared bucket geometry.

    ``table`` is the learned [2*clip+1, d_head] embedding; ``buckets`` maps
    each (query slot, key slot) pair to its clipped-offset bucket, and
    ``onehot`` is the same map one-hot encoded for the backward matmul.
    """

    def __init__(self, table: Tensor, buckets: np.ndarray, onehot: np.ndarray):
        self.table = table
        self.buckets = buckets
        self.onehot = onehot


def _bucket_select(proj: Tensor, buckets: np.ndarray, onehot: np.ndarray) -> Tensor:
    """proj [B,H,Tq,K] gathered to [B,H,Tq,Tk] via k = buckets[b,i,j]."""
    b, h, tq, _ = proj.shape
    idx = (np.arange(b)[:, None, None, None], np.arange(h)[None, :, None, None],
           np.arange(tq)[None, None, :, None], buckets[:, None, :, :])
    out = proj.data[idx]

    def bwd(g, p=proj, oh=onehot):
        gt = np.transpose(g, (0, 2, 1, 3))  # [B,Tq,H,Tk]
        gp = np.matmul(gt, oh)  # [B,Tq,H,K]
        p._accumulate(np.transpose(gp, (0, 2, 1, 3)))

    return make_op(out, (proj,), bwd)


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator, sites: SiteCounter):
        assert d_model % n_heads == 0
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.scale = 1.0 / math.sqrt(self.d_head)
        self.wq = Linear(d_model, d_model, rng, bias=False)
        self.wk = Linear(d_model, d_model, rng, bias=False)
        self.wv = Linear(d_model, d_model, rng, bias=False)
        self.wo = Linear(d_model, d_model, rng, bias=False)
        self.site = sites.take()

    def _split(self, x: Tensor, b: int, t: int) -> Tensor:
        return x.reshape(b, t, self.n_heads, self.d_head).transpose(0, 2, 1, 3)

    def __call__(
        self,
        q_in: Tensor,
        kv_in: Tensor,
        bias: np.ndarray | None = None,
        rel: RelativeBias | None = None,
        plan: DropPlan | None = None,
    ) -> Tensor:
        b, tq = q_in.shape[0], q_in.shape[1]
        tk = kv_in.shape[1]
        q = self._split(self.wq(q_in) * self.scale, b, tq)  # pre-scaled once
        k = self._split(self.wk(kv_in), b, tk)
        v = self._split(self.wv(kv_in), b, tk)
        scores = q @ k.transpose(0, 1, 3, 2)
        if rel is not None:
            proj = q @ rel.table.T  # [B, H, Tq, n_buckets]
            scores = scores + _bucket_select(proj, rel.buckets, rel.onehot)
        if bias is not None:
            scores = scores + bias
        attn = softmax(scores, axis=-1)
        attn = dropout(attn, plan, self.site)
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(b, tq, self.n_heads * self.d_head)
        return self.wo(ctx)


class FeedForward(Module):
    def __init__(self, d_model: int, d_hidden: int, rng: np.random.Generator, sites: SiteCounter):
        self.lift = Linear(d_model, d_hidden, rng)
        self.drop_site = sites.take()
        self.proj = Linear(d_hidden, d_model, rng)

    def __call__(self, x: Tensor, plan: DropPlan | None = None) -> Tensor:
        return self.proj(dropout(self.lift(x).relu(), plan, self.drop_site))


class EncoderLayer(Module):
    """Pre-norm self-attention + feed-forward block."""

    def __init__(self, d_model: int, d_hidden: int, n_heads: int,
                 rng: np.random.Generator, sites: SiteCounter):
        self.norm_attn = LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads, rng, sites)
        self.site_attn = sites.take()
        self.norm_ffn = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_hidden, rng, sites)
        self.site_ffn = sites.take()

    def __call__(self, x: Tensor, bias: np.ndarray | None, plan: DropPlan | None) -> Tensor:
        normed = self.norm_attn(x)
        x = x + dropout(self.attn(normed, normed, bias, plan=plan), plan, self.site_attn)
        x = x + dropout(self.ffn(self.norm_ffn(x), plan), plan, self.site_ffn)
        return x


class CrossAttnLayer(Module):
    """Pre-norm block with self-attention, source attention, feed-forward.

    Used by both decoders and by the position predictor's sub-encoder; the
    self-attention flavor (causal / relative-bias / plain) is the caller's
    choice via bias and rel_k.
    """

    def __init__(self, d_model: int, d_hidden: int, n_heads: int,
                 rng: np.random.Generator, sites: SiteCounter):
        self.norm_self = LayerNorm(d_model)
        self.self_attn = MultiHeadAttention(d_model, n_heads, rng, sites)
        self.site_self = sites.take()
        self.norm_cross = LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, rng, sites)
        self.site_cross = sites.take()
        self.norm_ffn = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_hidden, rng, sites)
        self.site_ffn = sites.take()

    def __call__(
        self,
        x: Tensor,
        memory: Tensor,
        self_bias: np.ndarray | None,
        memory_bias: np.ndarray | None,
        plan: DropPlan | None,
        rel: RelativeBias | None = None,
    ) -> Tensor:
        normed = self.norm_self(x)
        x = x + dropout(self.self_attn(normed, normed, self_bias, rel=rel, plan=plan),
                        plan, self.site_self)
        x = x + dropout(self.cross_attn(self.norm_cross(x), memory, memory_bias, plan=plan),
                        plan, self.site_cross)
        x = x + dropout(self.ffn(self.norm_ffn(x), plan), plan, self.site_ffn)
        return x


class GruCell(Module):
    """Gated recurrent cell; input gates may be precomputed in bulk."""

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        self.in_gates = Linear(d_in, 3 * d_hidden, rng)
        self.hid_gates = Linear(d_hidden, 3 * d_hidden, rng, bias=False)
        self.d_hidden = d_hidden

    def gated(self, gi: Tensor, h: Tensor) -> Tensor:
        d = self.d_hidden
        gh = self.hid_gates(h)
        reset = (gi[:, 0:d] + gh[:, 0:d]).sigmoid()
        update = (gi[:, d : 2 * d] + gh[:, d : 2 * d]).sigmoid()
        cand = (gi[:, 2 * d : 3 * d] + reset * gh[:, 2 * d : 3 * d]).tanh()
        return update * h + (1.0 - update) * cand

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return self.gated(self.in_gates(x), h)
