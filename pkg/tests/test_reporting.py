import json

import numpy as np

from pnat.data import ParallelCorpus, build_vocab
from pnat.model import ModelConfig, PnatModel
from pnat.reporting import case_dump, full_report, load_run, position_table, repeat_table


def fake_run(tmp_path, name, arch, evals=None, repeats=None):
    run = tmp_path / name
    run.mkdir()
    (run / "train_config.json").write_text(json.dumps({"arch": arch}))
    (run / "metrics.jsonl").write_text(
        json.dumps({"step": 10, "loss_g": 1.0, "loss_p": 0.5, "dev_bleu": 12.0,
                    "perm_acc": 0.5, "rel_acc": 0.6}) + "\n")
    for mode, payload in (evals or {}).items():
        (run / f"eval_{mode}.json").write_text(json.dumps({"positions": mode, **payload}))
    if repeats:
        (run / "repeats.json").write_text(json.dumps(repeats))
    return run


def test_position_table_rows_and_absents(tmp_path):
    runs = [
        load_run(fake_run(tmp_path, "at", "at",
                          evals={"greedy": {"bleu": 30.0, "perm_acc": None,
                                            "rel_acc": None, "throughput": 10.0}})),
        load_run(fake_run(tmp_path, "base", "pnat:identity",
                          evals={"predictor": {"bleu": 15.0, "perm_acc": 0.2,
                                               "rel_acc": 0.2, "throughput": 40.0}})),
        load_run(fake_run(tmp_path, "pnat", "pnat:ar",
                          evals={"predictor": {"bleu": 22.0, "perm_acc": 0.4,
                                               "rel_acc": 0.5, "throughput": 30.0},
                                 "hsp": {"bleu": 44.0, "perm_acc": 1.0,
                                         "rel_acc": 1.0}})),
        load_run(fake_run(tmp_path, "empty", "pnat:nar")),
    ]
    table = position_table(runs)
    assert "AT baseline" in table
    assert "NAT-base" in table
    assert "PNAT w/ AR-Predictor" in table
    assert "PNAT w/ HSP" in table
    assert "100.00" in table  # HSP row position accuracies
    assert "absent" in table  # the eval-less run
    # identity row shows no position accuracies (oracle metric meaningless there)
    base_line = next(l for l in table.splitlines() if l.startswith("NAT-base"))
    assert "absent" in base_line
    # speedup is measured relative to the causal baseline
    pnat_line = next(l for l in table.splitlines() if l.startswith("PNAT w/ AR"))
    assert "3.00" in pnat_line


def test_repeat_table(tmp_path):
    runs = [load_run(fake_run(tmp_path, "m", "pnat:ar",
                              repeats={"bleu_rr": 20.5, "bleu_raw": 20.0,
                                       "delta": 0.5}))]
    table = repeat_table(runs)
    assert "20.50" in table and "0.50" in table


def test_full_report_smoke(tmp_path):
    fake_run(tmp_path, "a", "pnat:ar",
             evals={"predictor": {"bleu": 1.0, "perm_acc": 0.1, "rel_acc": 0.1}})
    text = full_report([tmp_path / "a"])
    assert "POSITION STRATEGY" in text and "REPEATED GENERATION" in text


def test_case_dump_format(rng):
    corpus = ParallelCorpus(["4 5 6", "7 8"], ["6 5 4", "8 7"])
    vocab = build_vocab(corpus)
    model = PnatModel(ModelConfig(vocab_src=len(vocab), vocab_tgt=len(vocab),
                                  d_model=8, d_hidden=16, n_layers=1, n_heads=2,
                                  p_dropout=0.0), predictor="ar", seed=0)
    text = case_dump(model, corpus, vocab, limit=2)
    for field in ("Source", "Reference", "Heuristic position",
                  "Output w/ heuristic pos", "Predicted position",
                  "Output w/ predicted pos"):
        assert text.count(field) == 2, field
