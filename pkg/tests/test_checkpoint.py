import numpy as np
import pytest

from pnat.checkpoint import load_checkpoint, restore_parameters, save_checkpoint
from pnat.errors import DataError
from pnat.model import ModelConfig, PnatModel
from pnat.optim import AdamState
from pnat.tensor import Tensor


def small_model(seed=3):
    cfg = ModelConfig(vocab_src=9, vocab_tgt=9, d_model=8, d_hidden=16,
                      n_layers=1, n_heads=2, p_dropout=0.0)
    return PnatModel(cfg, predictor="nar", seed=seed)


def test_round_trip_bit_exact(tmp_path, rng):
    model = small_model()
    adam = AdamState(step_count=7)
    for name, p in model.named_parameters():
        adam.m[name] = rng.normal(size=p.shape)
        adam.v[name] = np.abs(rng.normal(size=p.shape))
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params=model.parameter_dict(), fingerprint=model.fingerprint(),
                    adam=adam, rng_state={"seed": 5}, meta={"step": 7})
    ckpt = load_checkpoint(path)
    assert ckpt.fingerprint == model.fingerprint()
    assert ckpt.meta["step"] == 7
    assert ckpt.rng_state == {"seed": 5}
    assert ckpt.adam.step_count == 7
    for name, p in model.named_parameters():
        np.testing.assert_array_equal(ckpt.params[name], p.data)
        np.testing.assert_array_equal(ckpt.adam.m[name], adam.m[name])
        np.testing.assert_array_equal(ckpt.adam.v[name], adam.v[name])


def test_restore_into_fresh_model(tmp_path):
    model = small_model(seed=3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, params=model.parameter_dict(),
                    fingerprint=model.fingerprint())
    other = small_model(seed=44)
    restore_parameters(other, load_checkpoint(path))
    for (name, p), (_, q) in zip(model.named_parameters(), other.named_parameters()):
        np.testing.assert_array_equal(p.data, q.data, err_msg=name)


def test_fingerprint_mismatch_fails_fast(tmp_path):
    model = small_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, params=model.parameter_dict(), fingerprint="bogus")
    with pytest.raises(DataError):
        restore_parameters(model, load_checkpoint(path))


def test_shape_mismatch_fails_fast(tmp_path):
    model = small_model()
    params = model.parameter_dict()
    broken = {name: (Tensor(np.zeros((2, 2))) if name == "encoder.emb.table" else p)
              for name, p in params.items()}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, params=broken, fingerprint=model.fingerprint())
    with pytest.raises(DataError):
        restore_parameters(model, load_checkpoint(path))


def test_missing_parameter_fails_fast(tmp_path):
    model = small_model()
    params = model.parameter_dict()
    params.pop("encoder.emb.table")
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, params=params, fingerprint=model.fingerprint())
    with pytest.raises(DataError):
        restore_parameters(model, load_checkpoint(path))


def test_not_a_checkpoint(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"definitely not a checkpoint")
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_float32_payload(tmp_path):
    from pnat.tensor import set_default_dtype
    set_default_dtype(np.float32)
    try:
        model = small_model()
        path = tmp_path / "m32.ckpt"
        save_checkpoint(path, params=model.parameter_dict(),
                        fingerprint=model.fingerprint())
        ckpt = load_checkpoint(path)
        for name, p in model.named_parameters():
            assert ckpt.params[name].dtype == np.float32
            np.testing.assert_array_equal(ckpt.params[name], p.data)
    finally:
        set_default_dtype(np.float64)
