#!/usr/bin/env python3
"""Capacity check: memorize eight sentence pairs.

A small model trained long enough on eight fixed reordering pairs should
reproduce them exactly (BLEU 100) and its position head should agree with
the searched positions on every slot. This is the fastest way to confirm
the whole pipeline is wired correctly.
"""

import numpy as np

from pnat import ModelConfig, PnatModel, TrainConfig, evaluate_nat, train_step
from pnat.data import ParallelCorpus, build_vocab, encode_pairs, pad_batch
from pnat.optim import LrSchedule
from pnat.tensor import set_default_dtype

set_default_dtype(np.float32)

# distinct tokens inside every sentence: with duplicates the searched
# reference can flip between equally-good assignments while training
corpus = ParallelCorpus(
    src=["3 1 4 0 5", "9 2 6", "5 3 7 8", "9 7 1 3 2", "3 8 4 6", "2 6 4 3 9",
         "8 3 2 7 9 5", "0 1 2 4 5 8"],
    tgt=["0 1 3 4 5", "2 6 9", "3 5 7 8", "1 2 3 7 9", "3 4 6 8", "2 3 4 6 9",
         "2 3 5 7 8 9", "0 1 2 4 5 8"],
    provenance="synthetic:sort",
)
vocab = build_vocab(corpus)
pairs = encode_pairs(corpus, vocab)
batch = pad_batch(pairs)

# dropout off: this is a pure capacity check, regularization just fights it
model = PnatModel(ModelConfig(vocab_src=len(vocab), vocab_tgt=len(vocab),
                              p_dropout=0.0),
                  predictor="ar", seed=0)
cfg = TrainConfig(
    alpha=0.3, tokens_per_batch=128, max_steps=500, seed=0, dtype="float32",
    schedule=LrSchedule(kind="linear_anneal", warmup_steps=50, start_lr=1e-3,
                        end_lr=1e-5, total_steps=500),
)

from pnat.training import TrainState

state = TrainState()
for step in range(500):
    loss_g, loss_p, total = train_step(model, batch, state, cfg)
    if (step + 1) % 100 == 0:
        metrics = evaluate_nat(model, pairs)
        print(f"step {step + 1:3d}: loss_g={loss_g:.4f} loss_p={loss_p:.4f} "
              f"train BLEU={metrics['bleu']:6.2f} position match={metrics['perm_acc']:.2f}")

final = evaluate_nat(model, pairs)
print()
print(f"final: BLEU {final['bleu']:.1f}, position agreement {final['perm_acc']:.2f}")
assert final["bleu"] == 100.0 and final["perm_acc"] == 1.0
print("memorization complete: every pair decodes exactly, positions agree.")
