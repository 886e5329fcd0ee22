#!/usr/bin/env python3
"""Length-parallel decoding with causal rescoring, on a toy sort task.

One candidate is decoded per output length in a band around the predicted
length; a separately trained left-to-right model scores each candidate and
the best one wins. With a decent length predictor the band rarely changes
the answer, but it rescues sentences whose length guess was off by one.
"""

import numpy as np

from pnat import ArTransformer, ModelConfig, PnatModel, TaskSpec, TrainConfig, \
    build_vocab, corpus_bleu, encode_pairs, gen_synthetic
from pnat.decoding import argmax_decode, lpd_decode
from pnat.optim import LrSchedule
from pnat.tensor import set_default_dtype
from pnat.training import finetune_length_predictor, train_loop

set_default_dtype(np.float32)

STEPS = 500
spec = TaskSpec(kind="sort", vocab_size=30, len_min=3, len_max=10, seed=3,
                train_size=3000, dev_size=150, test_size=150)
train_c, dev_c, _ = gen_synthetic(spec)
vocab = build_vocab(train_c)
train_pairs = encode_pairs(train_c, vocab)
dev_pairs = encode_pairs(dev_c, vocab)

cfg = ModelConfig(vocab_src=len(vocab), vocab_tgt=len(vocab))
schedule = LrSchedule(kind="linear_anneal", warmup_steps=50, start_lr=5e-4,
                      end_lr=1e-5, total_steps=STEPS)
settings = TrainConfig(alpha=1.0, tokens_per_batch=2048, max_steps=STEPS,
                       eval_interval=STEPS, seed=0, dtype="float32",
                       schedule=schedule)

print("training the parallel generator ...")
model = PnatModel(cfg, predictor="ar", seed=0)
train_loop(model, train_pairs, dev_pairs, settings, "/tmp/demo05_pnat")
finetune_length_predictor(model, train_pairs, steps=150)

print("training the causal rescorer ...")
rescorer = ArTransformer(cfg, seed=1)
train_loop(rescorer, train_pairs, dev_pairs, settings, "/tmp/demo05_at")

refs = [list(t) for _, t in dev_pairs]
plain = [list(argmax_decode(model, s).tokens) for s, _ in dev_pairs]
banded = [list(lpd_decode(model, s, delta_m=4, rescorer=rescorer).tokens)
          for s, _ in dev_pairs]
print()
print(f"argmax decoding (predicted length) : BLEU {corpus_bleu(plain, refs):6.2f}")
print(f"length-parallel, 9 candidates      : BLEU {corpus_bleu(banded, refs):6.2f}")

src, _ = dev_pairs[0]
result = lpd_decode(model, src, delta_m=4, rescorer=rescorer)
print()
print("one sentence up close:")
print("  source        :", vocab.decode(src))
print("  winner        :", vocab.decode(result.tokens))
print("  winner length :", result.length_used)
print("  rescorer score:", round(result.rescorer_score, 3))
