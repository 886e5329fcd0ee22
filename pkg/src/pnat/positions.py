"""Latent output-position machinery.

The decoder's slot order and the surface word order are linked by a
permutation z: slot t's prediction lands at output position z[t]. This
module covers how reference permutations are found (greedy similarity
search, with an exact assignment solver as oracle), how permutations are
predicted (autoregressive pointer head or per-slot classifier head), and
how predicted permutations are scored against references.
"""

from __future__ import annotations

import itertools
import warnings

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import nn
from .errors import DataError
from .tensor import Tensor, ZeroNormWarning, log_softmax, softmax, stack


def is_permutation(z: np.ndarray) -> bool:
    z = np.asarray(z)
    return z.ndim == 1 and np.array_equal(np.sort(z), np.arange(len(z)))


def similarity_matrix(d_inputs: np.ndarray, target_ids: np.ndarray,
                      embedding_table: np.ndarray) -> np.ndarray:
    """Cosine similarities between decoder inputs and target embeddings.

    sim[i, j] = cos(d_i, emb[target_ids[j]]). Zero-norm rows contribute 0
    similarity. Inputs are plain arrays: no gradient flows through the
    search that consumes this matrix.
    """
    d = np.asarray(d_inputs, dtype=np.float64)
    y = np.asarray(embedding_table, dtype=np.float64)[np.asarray(target_ids, dtype=np.intp)]
    dn = np.linalg.norm(d, axis=1)
    yn = np.linalg.norm(y, axis=1)
    if np.any(dn == 0.0) or np.any(yn == 0.0):
        warnings.warn("zero-norm vector in similarity matrix, treating as 0 similarity",
                      ZeroNormWarning, stacklevel=2)
    sim = (d / np.where(dn == 0.0, 1.0, dn)[:, None]) @ (y / np.where(yn == 0.0, 1.0, yn)[:, None]).T
    sim[dn == 0.0, :] = 0.0
    sim[:, yn == 0.0] = 0.0
    return sim


def hsp(sim: np.ndarray) -> np.ndarray:
    """Greedy maximum-similarity matching of slots to output positions.

    Repeatedly takes the largest remaining entry (i, j), assigns z[i] = j
    and strikes row i / column j. Ties resolve to the lowest row index,
    then the lowest column index (numpy argmax order). O(M^3) total.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError("similarity matrix must be square")
    m = sim.shape[0]
    work = sim.copy()
    z = np.empty(m, dtype=np.int64)
    for _ in range(m):
        flat = np.argmax(work)
        i, j = divmod(int(flat), m)
        z[i] = j
        work[i, :] = -np.inf
        work[:, j] = -np.inf
    return z


def assignment_score(sim: np.ndarray, z: np.ndarray) -> float:
    return float(np.asarray(sim)[np.arange(len(z)), np.asarray(z)].sum())


def optimal_assignment(sim: np.ndarray, method: str = "auto") -> np.ndarray:
    """Exact maximizer of sum_i sim[i, z_i] over permutations.

    method: "hungarian" (any size), "brute" (factorial; M <= 10), or
    "auto" which picks hungarian.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError("similarity matrix must be square")
    if method == "brute":
        m = sim.shape[0]
        if m > 10:
            raise ValueError("brute-force assignment limited to M <= 10")
        best, best_score = None, -np.inf
        for perm in itertools.permutations(range(m)):
            score = sim[np.arange(m), perm].sum()
            if score > best_score:
                best, best_score = perm, score
        return np.array(best, dtype=np.int64)
    if method in ("auto", "hungarian"):
        rows, cols = linear_sum_assignment(sim, maximize=True)
        z = np.empty(sim.shape[0], dtype=np.int64)
        z[rows] = cols
        return z
    raise ValueError(f"unknown assignment method '{method}'")


def permutation_accuracy(z_pred, z_ref) -> float:
    """Fraction of slots whose predicted output position matches exactly."""
    zp = np.asarray(z_pred)
    zr = np.asarray(z_ref)
    if zp.shape != zr.shape:
        raise DataError("permutation length mismatch")
    if zp.size == 0:
        return 1.0
    return float(np.mean(zp == zr))


def relative_accuracy(z_pred, z_ref, r: int = 4) -> float:
    """Clipped pairwise-offset agreement over nearby reference pairs.

    Counts ordered pairs (i, j), i != j, with |z_ref[j] - z_ref[i]| <= r;
    a pair is correct when the predicted offset, clipped to [-r, r],
    equals the reference offset. Sequences shorter than 2 score 1.0.
    """
    if r < 1:
        raise ValueError("relation threshold r must be >= 1")
    zp = np.asarray(z_pred, dtype=np.int64)
    zr = np.asarray(z_ref, dtype=np.int64)
    if zp.shape != zr.shape:
        raise DataError("permutation length mismatch")
    m = len(zp)
    if m < 2:
        return 1.0
    ref_off = zr[None, :] - zr[:, None]
    pred_off = np.clip(zp[None, :] - zp[:, None], -r, r)
    off_diag = ~np.eye(m, dtype=bool)
    near = (np.abs(ref_off) <= r) & off_diag
    if not near.any():
        return 1.0
    return float(np.mean(pred_off[near] == ref_off[near]))


def pairwise_counts(z_pred, z_ref, r: int = 4) -> tuple[int, int]:
    """(correct, total) ordered near pairs; for corpus-level aggregation."""
    zp = np.asarray(z_pred, dtype=np.int64)
    zr = np.asarray(z_ref, dtype=np.int64)
    m = len(zp)
    if m < 2:
        return 0, 0
    ref_off = zr[None, :] - zr[:, None]
    pred_off = np.clip(zp[None, :] - zp[:, None], -r, r)
    near = (np.abs(ref_off) <= r) & ~np.eye(m, dtype=bool)
    return int((pred_off[near] == ref_off[near]).sum()), int(near.sum())


class PointerScorer(nn.Module):
    """Scaled dot-product attention scores between query states and slot keys."""

    def __init__(self, d_model: int, rng: np.random.Generator):
        self.key_proj = nn.Linear(d_model, d_model, rng, bias=False)
        self.query_proj = nn.Linear(d_model, d_model, rng)
        self.scale = d_model**-0.5

    def keys(self, r: Tensor) -> Tensor:
        return self.key_proj(r)

    def raw_scores(self, keys: Tensor, queries: Tensor) -> Tensor:
        # keys [B, M, d], queries [B, T, d] (already projected) -> [B, T, M]
        return (queries @ keys.transpose(0, 2, 1)) * self.scale

    def scores(self, keys: Tensor, query: Tensor) -> Tensor:
        # keys [B, M, d], query [B, d] -> [B, M]
        b, m, d = keys.shape
        q = self.query_proj(query).reshape(b, d, 1)
        return (keys @ q).reshape(b, m) * self.scale

    def scores_all(self, keys: Tensor, queries: Tensor) -> Tensor:
        # keys [B, M, d], queries [B, T, d] -> [B, T, M]
        return self.raw_scores(keys, self.query_proj(queries))


class SubEncoder(nn.Module):
    """Stacked attention blocks turning decoder inputs into pointer states.

    Adds absolute position signals to its input: the predictor's whole job
    is reasoning about slot order, unlike the decoder which must stay
    position-agnostic apart from the latent permutation.
    """

    def __init__(self, d_model: int, d_hidden: int, n_heads: int, n_layers: int,
                 rng: np.random.Generator, sites: nn.SiteCounter):
        self.layers = [
            nn.CrossAttnLayer(d_model, d_hidden, n_heads, rng, sites)
            for _ in range(n_layers)
        ]
        self.norm = nn.LayerNorm(d_model)
        self.d_model = d_model

    def __call__(self, d_inputs: Tensor, memory: Tensor, slot_bias: np.ndarray | None,
                 memory_bias: np.ndarray | None, plan: nn.DropPlan | None) -> Tensor:
        x = d_inputs + nn.sinusoid_positions(d_inputs.shape[1], self.d_model)[None, :, :]
        for layer in self.layers:
            x = layer(x, memory, slot_bias, memory_bias, plan)
        return self.norm(x)


class ArPointerPredictor(nn.Module):
    """Greedy/forced autoregressive position head.

    Output positions are filled left to right: at step p a pointer attends
    over the M slot states, masked to slots not yet chosen, and the winner
    is placed at position p (z[winner] = p). The chosen slot's state feeds
    the recurrence for the next step, so the head conditions each choice on
    everything already placed. Masking does the bookkeeping a per-slot
    classifier would need to learn: the permutation is valid by
    construction and "the k-th remaining candidate" is directly selectable.
    """

    def __init__(self, d_model: int, rng: np.random.Generator):
        self.cell = nn.GruCell(d_model, d_model, rng)
        self.scorer = PointerScorer(d_model, rng)
        self.pos_proj = nn.Linear(d_model, d_model, rng, bias=False)
        self.h0 = Tensor(np.zeros(d_model), requires_grad=True)
        self.x0 = Tensor(np.zeros(d_model), requires_grad=True)
        self.d_model = d_model

    def _queries_from_states(self, states: Tensor, m: int) -> Tensor:
        # recurrent state + an encoding of which output position is filling
        sines = nn.sinusoid_positions(m, self.d_model)
        return self.scorer.query_proj(states) + self.pos_proj(Tensor(sines[None, ...]))

    def greedy(self, r: Tensor, slot_real: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batched greedy search. Returns (z [B, M], log_prob [B])."""
        b, m, d = r.shape
        keys = self.scorer.keys(r)
        pos_q = self.pos_proj(Tensor(nn.sinusoid_positions(m, d)))  # [M, d]
        pad_bias = np.where(slot_real, 0.0, nn.NEG_BIAS)
        h = self.h0.reshape(1, d) + Tensor(np.zeros((b, d)))
        x = self.x0.reshape(1, d) + Tensor(np.zeros((b, d)))
        placed = np.zeros((b, m), dtype=bool)
        z = np.zeros((b, m), dtype=np.int64)
        logp = np.zeros(b)
        lengths = slot_real.sum(axis=1)
        rows = np.arange(b)
        for p in range(m):
            h = self.cell(x, h)
            query = self.scorer.query_proj(h) + pos_q[p]
            logits = self.scorer.raw_scores(keys, query.reshape(b, 1, d)).reshape(b, m) \
                + np.where(placed, nn.NEG_BIAS, 0.0) + pad_bias
            logprobs = log_softmax(logits, axis=-1).data
            pick = np.argmax(logprobs, axis=-1)
            active = p < lengths
            pick = np.where(active, pick, p)  # pad steps take their own slot
            z[rows, pick] = p
            logp += np.where(active, logprobs[rows, pick], 0.0)
            placed[rows, pick] |= active
            x = r[rows, pick]
        return z, logp

    def forced_log_prob(self, r: Tensor, z_ref: np.ndarray, slot_real: np.ndarray) -> Tensor:
        """Teacher-forced per-sentence log P(z_ref | R); [B] tensor.

        The slot placed at position p under the reference is argsort(z_ref);
        with teacher forcing every recurrence input is known up front, so
        only the cell updates run stepwise and the pointer scoring, masking,
        and log-softmax happen for all steps in one pass.
        """
        b, m, d = r.shape
        keys = self.scorer.keys(r)
        lengths = slot_real.sum(axis=1)
        rows = np.arange(b)
        steps = np.arange(m)
        active = steps[None, :] < lengths[:, None]
        order = np.argsort(np.where(active, z_ref, steps[None, :]), axis=1)
        gathered = r[rows[:, None], order]  # [B, M, d] recurrence inputs
        gi_all = self.cell.in_gates(gathered)  # one matmul for all steps
        gi_first = self.cell.in_gates(self.x0.reshape(1, d)) + Tensor(np.zeros((b, 1)))
        h = self.h0.reshape(1, d) + Tensor(np.zeros((b, d)))
        states = []
        for p in range(m):
            h = self.cell.gated(gi_first if p == 0 else gi_all[:, p - 1], h)
            states.append(h)
        queries = self._queries_from_states(stack(states, axis=1), m)
        logits = self.scorer.raw_scores(keys, queries)  # [B, p, slot]
        chosen = order[:, :, None] == steps[None, None, :]
        already = np.zeros((b, m, m), dtype=bool)
        already[:, 1:, :] = np.cumsum(chosen & active[:, :, None], axis=1)[:, :-1, :] > 0
        bias = np.where(already | ~slot_real[:, None, :], nn.NEG_BIAS, 0.0)
        logprobs = log_softmax(logits + bias, axis=-1)
        picked = logprobs[rows[:, None], steps[None, :], order]
        return (picked * active).sum(axis=1)


class NarPredictor(nn.Module):
    """Per-slot position classifier; one parallel scoring pass."""

    def __init__(self, d_model: int, rng: np.random.Generator):
        self.scorer = PointerScorer(d_model, rng)

    def logits(self, r: Tensor, slot_real: np.ndarray) -> Tensor:
        keys = self.scorer.keys(r)
        out = self.scorer.scores_all(keys, r)
        return out + np.where(slot_real, 0.0, nn.NEG_BIAS)[:, None, :]

    def log_prob(self, r: Tensor, z_ref: np.ndarray, slot_real: np.ndarray) -> Tensor:
        b, m, _ = r.shape
        logprobs = log_softmax(self.logits(r, slot_real), axis=-1)
        grid_b = np.repeat(np.arange(b)[:, None], m, axis=1)
        grid_t = np.repeat(np.arange(m)[None, :], b, axis=0)
        safe_ref = np.where(slot_real, z_ref, grid_t)
        picked = logprobs[grid_b, grid_t, safe_ref]
        return (picked * slot_real).sum(axis=1)

    def predict(self, r: Tensor, slot_real: np.ndarray) -> np.ndarray:
        """Argmax per slot, repaired to a bijection (see confidence_repair)."""
        probs = softmax(self.logits(r, slot_real), axis=-1).data
        b, m, _ = probs.shape
        z = np.zeros((b, m), dtype=np.int64)
        lengths = slot_real.sum(axis=1)
        for s in range(b):
            n = int(lengths[s])
            z[s, :n] = confidence_repair(probs[s, :n, :n])
            z[s, n:] = np.arange(n, m)
        return z


def confidence_repair(probs: np.ndarray) -> np.ndarray:
    """Turn per-slot position distributions into a bijection.

    Slots are visited in descending max-probability order; each takes its
    best still-free position. Conflict-free argmax assignments come back
    unchanged; when two slots want one position, the more confident slot
    keeps it and the loser falls to its best remaining choice.
    """
    n = probs.shape[0]
    order = np.argsort(-probs.max(axis=1), kind="stable")
    z = np.zeros(n, dtype=np.int64)
    free = np.ones(n, dtype=bool)
    for slot in order:
        row = np.where(free, probs[slot], -np.inf)
        j = int(np.argmax(row))
        z[slot] = j
        free[j] = False
    return z
