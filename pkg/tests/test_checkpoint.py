import numpy as np
import pytest

from minimt.checkpoint import (
    CheckpointError,
    checkpoint_bytes,
    load_checkpoint,
    parameter_payload_bytes,
    save_checkpoint,
)
from minimt.model import ModelConfig, init_model, quantize_fp16
from minimt.rng import Rng
from minimt.vocab import build_vocab


@pytest.fixture(scope="module")
def model():
    vocab = build_vocab("abc ", ["anu_Latn", "bnu_Latn"])
    cfg = ModelConfig(vocab_size=len(vocab), d_model=8, n_heads=2, ffn_dim=16,
                      n_encoder_layers=2, n_decoder_layers=2, max_positions=16)
    m = init_model(cfg, vocab, Rng(5))
    m.metadata["stage"] = "unit-test"
    m.metadata["seed"] = "5"
    return m


def test_roundtrip_bit_exact(model, tmp_path):
    p = tmp_path / "m.ckpt"
    save_checkpoint(model, p)
    loaded = load_checkpoint(p)
    assert loaded.config == model.config
    assert loaded.vocab == model.vocab
    assert loaded.metadata == model.metadata
    for name in model.params:
        assert np.array_equal(loaded.params[name], model.params[name])
        assert loaded.params[name].dtype == model.params[name].dtype


def test_save_load_save_is_byte_identical(model, tmp_path):
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(model, p1)
    save_checkpoint(load_checkpoint(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_fp16_checkpoint_keeps_storage_dtype(model, tmp_path):
    q = quantize_fp16(model)
    p = tmp_path / "q.ckpt"
    save_checkpoint(q, p)
    loaded = load_checkpoint(p)
    assert loaded.precision == "fp16"
    for arr in loaded.params.values():
        assert arr.dtype == np.float16


def test_fp16_payload_is_half(model, tmp_path):
    p32 = tmp_path / "f32.ckpt"
    p16 = tmp_path / "f16.ckpt"
    save_checkpoint(model, p32)
    save_checkpoint(quantize_fp16(model), p16)
    full = parameter_payload_bytes(p32)
    half = parameter_payload_bytes(p16)
    assert half == -(-full // 2)  # ceil(full / 2)


def test_magic_mismatch(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(CheckpointError) as e:
        load_checkpoint(p)
    assert e.value.byte_offset == 0


def test_unknown_version(model, tmp_path):
    blob = bytearray(checkpoint_bytes(model))
    blob[4:8] = (99).to_bytes(4, "little")
    p = tmp_path / "v99.ckpt"
    p.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(p)


def test_truncation_reports_offset(model, tmp_path):
    blob = checkpoint_bytes(model)
    p = tmp_path / "trunc.ckpt"
    p.write_bytes(blob[: len(blob) - 50])
    with pytest.raises(CheckpointError) as e:
        load_checkpoint(p)
    assert e.value.byte_offset is not None


def test_fingerprint_ignores_metadata(model):
    other = model.clone()
    other.metadata["extra"] = "note"
    assert other.fingerprint() == model.fingerprint()
    mutated = model.clone()
    mutated.params["embedding"][0, 0] += 1.0
    assert mutated.fingerprint() != model.fingerprint()
