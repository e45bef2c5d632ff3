"""Tests for the binary checkpoint format."""

import numpy as np
import pytest

from rse.autodiff import Tensor, ValidationError
from rse.checkpoint import (
    ChecksumError,
    load_checkpoint,
    restore_model,
    save_checkpoint,
)
from rse.network import ModelConfig, build_model


def roundtrip(tmp_path, named):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, named)
    return path, load_checkpoint(path)


class TestRoundTrip:
    def test_bit_exact_f32_and_f64(self, tmp_path):
        rng = np.random.default_rng(0)
        named = [
            ("a.weight", Tensor(rng.standard_normal((3, 4)).astype(np.float32))),
            ("b.bias", Tensor(rng.standard_normal(7))),
            ("c.scalar", Tensor(np.float64(3.25))),
        ]
        _, loaded = roundtrip(tmp_path, named)
        assert set(loaded) == {"a.weight", "b.bias", "c.scalar"}
        for name, t in named:
            assert loaded[name].dtype == t.data.dtype
            assert loaded[name].shape == t.data.shape
            assert np.array_equal(
                loaded[name].view(np.uint8), np.ascontiguousarray(t.data).view(np.uint8)
            )

    def test_model_roundtrip_restores_forward(self, tmp_path):
        from rse.network import rse_forward

        cfg = ModelConfig(m=8, blocks=1, n_max=16, vocab=4, classes=4)
        model = build_model(cfg, seed=1)
        tokens = np.random.default_rng(2).integers(0, 4, 16)
        before = rse_forward(model, tokens).data
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model.named_parameters())
        fresh = build_model(cfg, seed=999)  # different init
        restore_model(fresh, load_checkpoint(path))
        after = rse_forward(fresh, tokens).data
        assert np.array_equal(before, after)

    def test_magic_and_header(self, tmp_path):
        path, _ = roundtrip(tmp_path, [("x", Tensor(np.zeros(2, dtype=np.float32)))])
        blob = path.read_bytes()
        assert blob[:4] == b"RSE1"


class TestCorruption:
    def test_flipped_payload_byte_fails_checksum(self, tmp_path):
        path, _ = roundtrip(tmp_path, [("x", Tensor(np.arange(6.0)))])
        blob = bytearray(path.read_bytes())
        blob[20] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ChecksumError):
            load_checkpoint(path)

    def test_flipped_checksum_byte_fails(self, tmp_path):
        path, _ = roundtrip(tmp_path, [("x", Tensor(np.arange(6.0)))])
        blob = bytearray(path.read_bytes())
        blob[-1] ^= 0x01
        path.write_bytes(bytes(blob))
        with pytest.raises(ChecksumError):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"definitely not a checkpoint file")
        with pytest.raises(ValidationError):
            load_checkpoint(path)

    def test_restore_rejects_mismatched_names(self, tmp_path):
        cfg = ModelConfig(m=4, blocks=1, n_max=8, vocab=4, classes=4)
        model = build_model(cfg, seed=3)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, list(model.named_parameters())[:-1])
        with pytest.raises(ValidationError):
            restore_model(build_model(cfg, seed=3), load_checkpoint(path))
