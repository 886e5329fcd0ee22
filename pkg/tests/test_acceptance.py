"""Acceptance gate: every criterion as one test, tolerances pinned inline.

The reordering-task fixtures train several small models once per session
(about half an hour on two CPU cores); the remaining criteria run in
seconds. Each test finishes by printing a PASS line; run with ``-v -s``
to watch them stream, or read acceptance_report.txt afterwards.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from bleu_oracle import reference_bleu
from pnat.bleu import corpus_bleu
from pnat.bridge import SoftCopyConfig
from pnat.checkpoint import load_checkpoint, restore_parameters
from pnat.data import (EOS_ID, ParallelCorpus, TaskSpec, build_vocab, encode_pairs,
                       gen_synthetic, pad_batch)
from pnat.decoding import argmax_decode, lpd_decode, remove_repeats
from pnat.model import ArTransformer, ModelConfig, PnatModel
from pnat.optim import LrSchedule
from pnat.positions import (assignment_score, hsp, is_permutation, optimal_assignment,
                            permutation_accuracy, relative_accuracy)
from pnat.tensor import cross_entropy, grad_check, no_grad, set_default_dtype
from pnat.training import (TrainConfig, TrainState, evaluate_nat,
                           finetune_length_predictor, hsp_references, train_loop,
                           train_step)

# -- the shared desk-scale reordering study --------------------------------
# criterion 5 pins: rule_reorder, vocab 50, len <= 16, ~20k pairs, model dim 64
TASK = dict(kind="rule_reorder", vocab_size=50, len_min=8, len_max=16,
            train_size=20000, dev_size=300, test_size=300, n_classes=5, seed=7)
MODEL = dict(d_model=64, d_hidden=128, n_layers=2, n_heads=2, p_dropout=0.1)
TAU = 0.3
ALPHA = 1.0
STEPS = 1600
RESCORER_STEPS = 4000  # the reranker is a fully pre-trained causal model
EVAL_INTERVAL = 100
PEAK_LR = 5e-4
SEEDS = (1, 2, 3)

RESULTS: dict[str, str] = {}


def report(criterion: str, message: str) -> None:
    RESULTS[criterion] = message
    print(f"PASS {criterion}: {message}")


@pytest.fixture(scope="session", autouse=True)
def acceptance_report():
    yield
    lines = [f"{'PASS' if not v.startswith('FAIL') else v} {k}: {v}"
             for k, v in sorted(RESULTS.items())]
    Path("acceptance_report.txt").write_text(
        "\n".join(f"PASS {k}: {v}" for k, v in sorted(RESULTS.items())) + "\n")


def train_one(arch: str, seed: int, run_dir: Path, train_pairs, dev_pairs, vocab_size,
              steps: int = STEPS):
    set_default_dtype(np.float32)
    cfg = ModelConfig(vocab_src=vocab_size, vocab_tgt=vocab_size, **MODEL)
    if arch == "at":
        model = ArTransformer(cfg, seed=seed)
    else:
        model = PnatModel(cfg, copy_cfg=SoftCopyConfig(tau=TAU), predictor=arch,
                          seed=seed)
    tc = TrainConfig(
        alpha=0.0 if arch in ("at", "identity") else ALPHA,
        schedule=LrSchedule(kind="linear_anneal", warmup_steps=200,
                            start_lr=PEAK_LR, end_lr=1e-5, total_steps=steps),
        tokens_per_batch=2048, max_steps=steps, eval_interval=EVAL_INTERVAL,
        seed=seed, dtype="float32")
    records = train_loop(model, train_pairs, dev_pairs, tc, run_dir)
    best = load_checkpoint(run_dir / "best.ckpt")
    restore_parameters(model, best)
    return model, records


@pytest.fixture(scope="session")
def study(tmp_path_factory):
    """Train the whole comparison matrix once; criteria 5, 6, 7, 9 read it."""
    root = tmp_path_factory.mktemp("study")
    spec = TaskSpec(**TASK)
    train_c, dev_c, test_c = gen_synthetic(spec)
    vocab = build_vocab(train_c)
    train_pairs = encode_pairs(train_c, vocab)
    dev_pairs = encode_pairs(dev_c, vocab)

    runs = {}
    started = time.perf_counter()
    for seed in SEEDS:
        for arch in ("identity", "ar"):
            key = (arch, seed)
            model, records = train_one(arch, seed, root / f"{arch}_{seed}",
                                       train_pairs, dev_pairs, len(vocab))
            runs[key] = {"model": model, "records": records}
    core_elapsed = time.perf_counter() - started

    model, records = train_one("nar", SEEDS[0], root / "nar_1",
                               train_pairs, dev_pairs, len(vocab))
    runs[("nar", SEEDS[0])] = {"model": model, "records": records}
    rescorer, _ = train_one("at", SEEDS[0], root / "at_1",
                            train_pairs, dev_pairs, len(vocab),
                            steps=RESCORER_STEPS)

    # criterion 5's own subset: baseline + both predictors at the first seed
    subset = core_elapsed / len(SEEDS)  # one seed's identity+ar pair
    return {
        "root": root, "vocab": vocab, "train_pairs": train_pairs,
        "dev_pairs": dev_pairs, "runs": runs, "rescorer": rescorer,
        "wall_core": core_elapsed,
    }


# -- criterion 1: greedy search correctness ---------------------------------


def test_criterion_1_hsp_search():
    rng = np.random.default_rng(11)
    started = time.perf_counter()
    for _ in range(1000):
        m = int(rng.integers(1, 65))
        sim = rng.normal(size=(m, m))
        z = hsp(sim)
        assert is_permutation(z)
        assert assignment_score(sim, z) <= \
            assignment_score(sim, optimal_assignment(sim)) + 1e-9
    hits = 0
    for _ in range(200):
        m = int(rng.integers(1, 33))
        sim = rng.uniform(0.0, 0.5, size=(m, m))
        perm = rng.permutation(m)
        sim[np.arange(m), perm] = rng.uniform(0.9, 1.0, size=m)
        z = hsp(sim)
        np.testing.assert_array_equal(z, perm)
        assert assignment_score(sim, z) == pytest.approx(
            assignment_score(sim, optimal_assignment(sim)))
        hits += 1
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0, f"criterion 1 must finish inside 10s, took {elapsed:.1f}s"
    report("criterion-1", f"1000 random + {hits} dominant matrices in {elapsed:.1f}s")


# -- criterion 2: exact assignment oracle agreement --------------------------


def test_criterion_2_assignment_oracle():
    rng = np.random.default_rng(22)
    for _ in range(200):
        m = int(rng.integers(1, 8))
        sim = rng.normal(size=(m, m))
        np.testing.assert_array_equal(optimal_assignment(sim, "hungarian"),
                                      optimal_assignment(sim, "brute"))
    report("criterion-2", "hungarian == brute force on 200 matrices, exact")


# -- criterion 3: gradient integrity ------------------------------------------


def test_criterion_3_gradient_integrity(rng):
    started = time.perf_counter()
    per_op = {
        "softmax": lambda t: (cross_entropy(t, 3)),
        "matmul": lambda t: ((t.reshape(3, 4) @ t.reshape(4, 3)) ** 2).sum(),
        "layer_norm": None,
    }
    from pnat.nn import LayerNorm
    ln = LayerNorm(12)
    per_op["layer_norm"] = lambda t: (ln(t) ** 2).sum()
    from pnat.tensor import Tensor
    for name, fn in per_op.items():
        x = Tensor(rng.normal(size=12), requires_grad=True)
        err = grad_check(fn, x, eps=1e-6)
        assert err < 1e-5, f"{name}: {err}"

    set_default_dtype(np.float64)
    model = PnatModel(ModelConfig(vocab_src=10, vocab_tgt=10, d_model=8, d_hidden=16,
                                  n_layers=1, n_heads=2, p_dropout=0.0),
                      predictor="ar", seed=5)
    batch = pad_batch([(np.array([4, 5, 6]), np.array([6, 4, 5])),
                       (np.array([7, 8]), np.array([8, 7]))])

    def joint_loss(_):
        enc = model.encode(batch.src, batch.src_real)
        d_inputs = model.decoder_inputs(enc, batch.tgt.shape[1])
        z_ref = hsp_references(model, d_inputs.data, batch)
        logits = model.nat_logits(d_inputs, z_ref, batch.tgt_real, enc)
        slot_targets = np.take_along_axis(batch.tgt, z_ref, axis=1)
        loss_g = (cross_entropy(logits, slot_targets) * batch.tgt_real).sum()
        loss_p = model.position_loss(d_inputs, enc, z_ref, batch.tgt_real).sum()
        return (loss_g + 0.5 * loss_p) * (1.0 / float(batch.tgt_real.sum()))

    worst = 0.0
    for name, param in model.named_parameters():
        if name.startswith("length_head."):
            continue  # trains in its own pass, not part of the joint loss
        err = grad_check(joint_loss, param, eps=1e-5)
        assert err < 1e-4, f"{name}: {err}"
        worst = max(worst, err)
    elapsed = time.perf_counter() - started
    assert elapsed < 60.0, f"criterion 3 must finish inside 60s, took {elapsed:.1f}s"
    report("criterion-3", f"joint-loss max rel err {worst:.2e} in {elapsed:.1f}s")


# -- criterion 4: capacity/overfit oracle -------------------------------------


def test_criterion_4_overfit_oracle():
    started = time.perf_counter()
    set_default_dtype(np.float32)
    corpus = ParallelCorpus(
        src=["3 1 4 0 5", "9 2 6", "5 3 7 8", "9 7 1 3 2", "3 8 4 6", "2 6 4 3 9",
             "8 3 2 7 9 5", "0 1 2 4 5 8"],
        tgt=["0 1 3 4 5", "2 6 9", "3 5 7 8", "1 2 3 7 9", "3 4 6 8", "2 3 4 6 9",
             "2 3 5 7 8 9", "0 1 2 4 5 8"],
        provenance="synthetic:sort")
    vocab = build_vocab(corpus)
    pairs = encode_pairs(corpus, vocab)
    batch = pad_batch(pairs)
    model = PnatModel(ModelConfig(vocab_src=len(vocab), vocab_tgt=len(vocab),
                                  p_dropout=0.0), predictor="ar", seed=0)
    cfg = TrainConfig(alpha=0.3, tokens_per_batch=128, max_steps=500, seed=0,
                      dtype="float32",
                      schedule=LrSchedule(kind="linear_anneal", warmup_steps=50,
                                          start_lr=1e-3, end_lr=1e-5,
                                          total_steps=500))
    state = TrainState()
    for _ in range(500):
        train_step(model, batch, state, cfg)
    metrics = evaluate_nat(model, pairs)
    elapsed = time.perf_counter() - started
    assert metrics["bleu"] == 100.0
    assert metrics["perm_acc"] == 1.0
    assert elapsed < 120.0, f"criterion 4 must finish inside 2min, took {elapsed:.1f}s"
    report("criterion-4",
           f"8 pairs, 500 steps -> BLEU 100.0, position match 1.0 ({elapsed:.0f}s)")


# -- criteria over the trained study -----------------------------------------


def best_bleu(study, arch, seed, positions="predictor"):
    model = study["runs"][(arch, seed)]["model"]
    return evaluate_nat(model, study["dev_pairs"], positions=positions)["bleu"]


def test_criterion_5_strategy_ordering(study):
    s = SEEDS[0]
    nat_base = best_bleu(study, "identity", s)
    nar = best_bleu(study, "nar", s)
    ar = best_bleu(study, "ar", s)
    oracle = best_bleu(study, "ar", s, positions="hsp")
    oracle_metrics = evaluate_nat(study["runs"][("ar", s)]["model"],
                                  study["dev_pairs"], positions="hsp")
    assert oracle_metrics["perm_acc"] == 1.0 and oracle_metrics["rel_acc"] == 1.0
    assert nat_base < nar <= ar < oracle, \
        f"ordering violated: NAT-base {nat_base:.2f}, NAR {nar:.2f}, " \
        f"AR {ar:.2f}, HSP {oracle:.2f}"
    assert oracle - nat_base >= 1.0
    budget = study["wall_core"] / len(SEEDS)
    assert budget < 1800, f"criterion-5 training subset took {budget:.0f}s"
    report("criterion-5",
           f"NAT-base {nat_base:.2f} < NAR {nar:.2f} <= AR {ar:.2f} "
           f"< HSP {oracle:.2f} (margin {oracle - nat_base:.2f})")


def _repeat_delta(model, dev_pairs):
    hyps, refs = [], []
    with no_grad():
        for src, tgt in dev_pairs:
            result = argmax_decode(model, src, forced_length=len(tgt))
            hyps.append(list(result.tokens))
            refs.append(list(tgt))
    raw = corpus_bleu(hyps, refs)
    rr = corpus_bleu([list(remove_repeats(np.array(h))) for h in hyps], refs)
    return rr - raw


def test_criterion_6_repeat_removal_delta(study):
    deltas = {"identity": [], "ar": []}
    for seed in SEEDS:
        for arch in deltas:
            deltas[arch].append(
                _repeat_delta(study["runs"][(arch, seed)]["model"],
                              study["dev_pairs"]))
    mean_base = float(np.mean(deltas["identity"]))
    mean_pnat = float(np.mean(deltas["ar"]))
    assert mean_base > mean_pnat, \
        f"RR delta NAT-base {mean_base:.3f} !> PNAT {mean_pnat:.3f} " \
        f"(per-seed base {deltas['identity']}, pnat {deltas['ar']})"
    report("criterion-6",
           f"repeat-removal delta: NAT-base {mean_base:+.3f} > PNAT {mean_pnat:+.3f} "
           f"(3 seeds)")


def test_criterion_7_lpd_contract(study):
    model = study["runs"][("ar", SEEDS[0])]["model"]
    rescorer = study["rescorer"]
    finetune_length_predictor(model, study["train_pairs"], steps=200,
                              tokens_per_batch=2048)

    sources = [src for src, _ in study["dev_pairs"][:100]]
    for src in sources:
        plain = argmax_decode(model, src)
        banded = lpd_decode(model, src, 0, rescorer)
        np.testing.assert_array_equal(plain.tokens, banded.tokens)
        np.testing.assert_array_equal(plain.z_used, banded.z_used)

    class CountingRescorer:
        def __init__(self, inner):
            self.inner = inner
            self.calls = 0

        def score_sequence(self, y, x, bos=1):
            self.calls += 1
            return self.inner.score_sequence(y, x, bos)

    counted = CountingRescorer(rescorer)
    for src, _ in study["dev_pairs"][:10]:
        counted.calls = 0
        result = lpd_decode(model, src, 4, counted)
        assert counted.calls <= 9
        m_hat = argmax_decode(model, src).length_used
        best_key, best_tokens = None, None
        for k in range(-4, 5):
            m = max(1, m_hat + k)
            cand = argmax_decode(model, src, forced_length=m)
            score = rescorer.score_sequence(np.concatenate([cand.tokens, [EOS_ID]]),
                                            src)
            key = (score, -len(cand.tokens), -m)
            if best_key is None or key > best_key:
                best_key, best_tokens = key, cand.tokens
        assert result.rescorer_score == pytest.approx(best_key[0])
        np.testing.assert_array_equal(result.tokens, best_tokens)

    eval_n = 150
    refs = [list(t) for _, t in study["dev_pairs"][:eval_n]]
    plain_hyps = [list(argmax_decode(model, s).tokens)
                  for s, _ in study["dev_pairs"][:eval_n]]
    lpd_hyps = [list(lpd_decode(model, s, 4, rescorer).tokens)
                for s, _ in study["dev_pairs"][:eval_n]]
    bleu_plain = corpus_bleu(plain_hyps, refs)
    bleu_lpd = corpus_bleu(lpd_hyps, refs)
    assert bleu_lpd >= bleu_plain - 0.2, f"LPD {bleu_lpd:.2f} vs argmax {bleu_plain:.2f}"
    report("criterion-7",
           f"delta0 exact on 100; <=9 candidates, winner==exhaustive max; "
           f"BLEU LPD {bleu_lpd:.2f} vs argmax {bleu_plain:.2f}")


def test_criterion_8_length_finetune_freeze():
    set_default_dtype(np.float32)
    rng = np.random.default_rng(0)
    pairs = [(rng.integers(4, 20, size=rng.integers(2, 8)),) * 2 for _ in range(24)]
    pairs = [(s.copy(), t.copy()) for s, t in pairs]
    model = PnatModel(ModelConfig(vocab_src=20, vocab_tgt=20, **MODEL),
                      predictor="ar", seed=3)
    before = {name: p.data.copy() for name, p in model.named_parameters()}
    finetune_length_predictor(model, pairs, steps=30, tokens_per_batch=256)
    changed = {name for name, p in model.named_parameters()
               if not np.array_equal(before[name], p.data)}
    assert changed and all(name.startswith("length_head.") for name in changed), \
        f"non-length parameters changed: {sorted(changed)[:5]}"
    report("criterion-8",
           f"finetune touched exactly the length head ({len(changed)} tensors)")


def test_criterion_9_learning_curves(study):
    for seed in SEEDS:
        pnat = {r["step"]: r["dev_bleu"] for r in study["runs"][("ar", seed)]["records"]}
        base = {r["step"]: r["dev_bleu"] for r in study["runs"][("identity", seed)]["records"]}
        steps = sorted(set(pnat) & set(base))
        after_warmup = [s for s in steps if s > 0.1 * STEPS]
        wins = sum(pnat[s] >= base[s] for s in after_warmup)
        frac = wins / len(after_warmup)
        assert frac >= 0.9, f"seed {seed}: PNAT >= NAT-base at only {frac:.0%}"
    report("criterion-9",
           f"PNAT dev BLEU >= NAT-base at >=90% of checkpoints, {len(SEEDS)} seeds")


# -- criterion 10: determinism and resume -------------------------------------


def test_criterion_10_determinism_and_resume(tmp_path):
    rng = np.random.default_rng(1)
    src, tgt = [], []
    for _ in range(8):
        toks = rng.integers(0, 9, size=rng.integers(2, 6))
        src.append(" ".join(map(str, toks)))
        tgt.append(" ".join(map(str, toks[::-1])))
    corpus = ParallelCorpus(src, tgt)
    vocab = build_vocab(corpus)
    pairs = encode_pairs(corpus, vocab)
    cfg_small = dict(vocab_src=len(vocab), vocab_tgt=len(vocab), d_model=16,
                     d_hidden=32, n_layers=1, n_heads=2, p_dropout=0.1)

    def settings(max_steps, total=12):
        return TrainConfig(alpha=0.3, tokens_per_batch=64, max_steps=max_steps,
                           eval_interval=4, seed=0, dtype="float64",
                           schedule=LrSchedule(kind="linear_anneal", warmup_steps=2,
                                               start_lr=3e-3, end_lr=1e-4,
                                               total_steps=total))

    def run(tag, max_steps=12, resume=False):
        set_default_dtype(np.float64)
        model = PnatModel(ModelConfig(**cfg_small), predictor="ar", seed=5)
        train_loop(model, pairs, pairs, settings(max_steps), tmp_path / tag,
                   resume=resume)
        return model

    straight = run("a")
    run("b")
    log_a = (tmp_path / "a" / "metrics.jsonl").read_text()
    assert log_a == (tmp_path / "b" / "metrics.jsonl").read_text()

    run("c", max_steps=8)  # interrupt on an eval boundary, then pick up
    set_default_dtype(np.float64)
    resumed = PnatModel(ModelConfig(**cfg_small), predictor="ar", seed=5)
    train_loop(resumed, pairs, pairs, settings(12), tmp_path / "c", resume=True)
    assert (tmp_path / "c" / "metrics.jsonl").read_text() == log_a
    for (name, p), (_, q) in zip(straight.named_parameters(),
                                 resumed.named_parameters()):
        np.testing.assert_array_equal(p.data, q.data, err_msg=name)
    report("criterion-10", "bit-identical logs across reruns and mid-run resume")


# -- criterion 11: metric sanity ----------------------------------------------


def test_criterion_11_metric_sanity(rng):
    for _ in range(500):
        m = int(rng.integers(1, 40))
        z = rng.permutation(m)
        assert relative_accuracy(z, z, 4) == 1.0
        assert permutation_accuracy(z, z) == 1.0
    for _ in range(50):
        n = int(rng.integers(1, 25))
        hyps, refs = [], []
        for _ in range(n):
            ref = list(rng.integers(0, 10, size=rng.integers(1, 12)))
            hyp = list(ref) if rng.uniform() < 0.4 else \
                list(rng.integers(0, 10, size=rng.integers(1, 12)))
            hyps.append(hyp)
            refs.append(ref)
        assert corpus_bleu(hyps, refs) == pytest.approx(
            reference_bleu(hyps, refs), abs=1e-6)
    report("criterion-11", "500 permutation identities; BLEU == oracle within 1e-6")
