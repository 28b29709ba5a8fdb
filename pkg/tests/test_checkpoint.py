"""Deterministic flat-binary model checkpoints."""
import numpy as np
import pytest

from airtrack.checkpoint import (
    KIND_DEEPEKF,
    KIND_SIAMESE,
    checkpoint_kind,
    load_checkpoint,
    load_deepekf_checkpoint,
    load_siamese_checkpoint,
    save_checkpoint,
)
from airtrack.deepekf import DeepEkfConfig, DeepEkfModel
from airtrack.errors import ParseError
from airtrack.visual import SiameseConfig, SiameseModel


def dekf_model(seed=0, **kw):
    base = dict(chip_size=8, chip_embed_dim=4, conv_channels=(2, 3),
                hidden_dim=6, attention_dim=4, max_history=4)
    base.update(kw)
    return DeepEkfModel(DeepEkfConfig(**base), seed=seed)


def siamese_model(seed=0, **kw):
    base = dict(chip_size=16, grid=2, conv_channels=(2, 3, 4), embed_dim=8,
                heads=2)
    base.update(kw)
    return SiameseModel(SiameseConfig(**base), seed=seed)


def assert_params_equal(a, b):
    assert sorted(a.params) == sorted(b.params)
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data), name


class TestRoundTrip:
    def test_deepekf_bit_exact(self, tmp_path):
        model = dekf_model(seed=3)
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert isinstance(loaded, DeepEkfModel)
        assert loaded.cfg == model.cfg
        assert_params_equal(model, loaded)

    @pytest.mark.parametrize("attention", [True, False])
    def test_siamese_bit_exact(self, tmp_path, attention):
        model = siamese_model(seed=4, attention=attention)
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert isinstance(loaded, SiameseModel)
        assert loaded.cfg == model.cfg
        assert isinstance(loaded.cfg.conv_channels, tuple)
        assert_params_equal(model, loaded)

    def test_nondefault_config_restored(self, tmp_path):
        model = dekf_model(cell="lstm", latent_dim=3, dt_scale=0.25)
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.cfg.cell == "lstm"
        assert loaded.cfg.latent_dim == 3
        assert loaded.cfg.dt_scale == 0.25

    def test_save_is_byte_stable(self, tmp_path):
        model = siamese_model(seed=9)
        p1, p2 = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
        save_checkpoint(model, p1)
        save_checkpoint(model, p2)
        b1 = open(p1, "rb").read()
        assert b1 == open(p2, "rb").read()
        # load -> save reproduces the identical file
        p3 = str(tmp_path / "c.ckpt")
        save_checkpoint(load_checkpoint(p1), p3)
        assert b1 == open(p3, "rb").read()


class TestKindGuards:
    def test_checkpoint_kind(self, tmp_path):
        pd = str(tmp_path / "d.ckpt")
        ps = str(tmp_path / "s.ckpt")
        save_checkpoint(dekf_model(), pd)
        save_checkpoint(siamese_model(), ps)
        assert checkpoint_kind(pd) == KIND_DEEPEKF
        assert checkpoint_kind(ps) == KIND_SIAMESE

    def test_typed_loaders_enforce_kind(self, tmp_path):
        pd = str(tmp_path / "d.ckpt")
        ps = str(tmp_path / "s.ckpt")
        save_checkpoint(dekf_model(), pd)
        save_checkpoint(siamese_model(), ps)
        assert isinstance(load_deepekf_checkpoint(pd), DeepEkfModel)
        assert isinstance(load_siamese_checkpoint(ps), SiameseModel)
        with pytest.raises(ParseError):
            load_deepekf_checkpoint(ps)
        with pytest.raises(ParseError):
            load_siamese_checkpoint(pd)

    def test_unsupported_object_rejected(self, tmp_path):
        with pytest.raises(TypeError):
            save_checkpoint(object(), str(tmp_path / "x.ckpt"))


class TestCorruption:
    def write_valid(self, tmp_path):
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(siamese_model(), path)
        return path, open(path, "rb").read()

    def test_bad_magic(self, tmp_path):
        path = str(tmp_path / "bad.ckpt")
        open(path, "wb").write(b"not a checkpoint\n")
        with pytest.raises(ParseError):
            load_checkpoint(path)
        with pytest.raises(ParseError):
            checkpoint_kind(path)

    def test_unknown_kind(self, tmp_path):
        path, blob = self.write_valid(tmp_path)
        open(path, "wb").write(blob.replace(b'"kind":"siamese"', b'"kind":"unknown"'))
        with pytest.raises(ParseError):
            load_checkpoint(path)
        with pytest.raises(ParseError):
            checkpoint_kind(path)

    def test_truncated_payload(self, tmp_path):
        path, blob = self.write_valid(tmp_path)
        open(path, "wb").write(blob[:-50])
        with pytest.raises(ParseError):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path):
        path, blob = self.write_valid(tmp_path)
        open(path, "wb").write(blob + b"\x00" * 8)
        with pytest.raises(ParseError):
            load_checkpoint(path)

    def test_renamed_parameter_detected(self, tmp_path):
        path, blob = self.write_valid(tmp_path)
        assert b'"name":"gate.b"' in blob
        open(path, "wb").write(blob.replace(b'"name":"gate.b"', b'"name":"gate.c"'))
        with pytest.raises(ParseError):
            load_checkpoint(path)

    def test_garbled_metadata(self, tmp_path):
        path, blob = self.write_valid(tmp_path)
        nl = blob.index(b"\n") + 1
        open(path, "wb").write(blob[:nl] + b"{not json" + blob[nl:])
        with pytest.raises(ParseError):
            load_checkpoint(path)
