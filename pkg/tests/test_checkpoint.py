"""Binary checkpoint format: byte layout, round trips, corruption handling."""

import struct

import numpy as np
import pytest

from usgan import checkpoint, nn
from usgan.checkpoint import CheckpointError
from usgan.gan import GanConfig, build_stage1
from usgan.tensor import Tensor, sample_latent


def test_round_trip_bitwise(tmp_path, rng):
    arrays = {
        "a/weight": rng.standard_normal((3, 4)).astype(np.float32),
        "a/bias": rng.standard_normal(4).astype(np.float64),
        "scalar": np.float32(2.5).reshape(()),
    }
    p = tmp_path / "m.ckpt"
    checkpoint.save(p, "test_model", arrays)
    kind, loaded = checkpoint.load(p)
    assert kind == "test_model"
    assert list(loaded) == list(arrays)  # order preserved
    for k in arrays:
        assert loaded[k].dtype == np.asarray(arrays[k]).dtype
        assert np.array_equal(loaded[k], arrays[k])


def test_save_load_save_byte_identical(tmp_path, rng):
    arrays = {"w": rng.standard_normal((5, 5)).astype(np.float32)}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    checkpoint.save(p1, "k", arrays)
    _, loaded = checkpoint.load(p1)
    checkpoint.save(p2, "k", loaded)
    assert p1.read_bytes() == p2.read_bytes()


def test_header_layout(tmp_path):
    p = tmp_path / "h.ckpt"
    checkpoint.save(p, "gan", {"x": np.zeros(2, np.float32)})
    raw = p.read_bytes()
    assert raw[:4] == b"USGN"
    assert struct.unpack("<I", raw[4:8])[0] == 1
    klen = struct.unpack("<H", raw[8:10])[0]
    assert raw[10 : 10 + klen] == b"gan"


def test_empty_arrays_allowed(tmp_path):
    p = tmp_path / "e.ckpt"
    checkpoint.save(p, "none", {})
    kind, arrays = checkpoint.load(p)
    assert kind == "none" and arrays == {}


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint.load(p)


def test_unsupported_version(tmp_path):
    p = tmp_path / "v.ckpt"
    checkpoint.save(p, "k", {})
    raw = bytearray(p.read_bytes())
    raw[4:8] = struct.pack("<I", 99)
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        checkpoint.load(p)


def test_truncation_reports_entry_and_offset(tmp_path, rng):
    p = tmp_path / "t.ckpt"
    checkpoint.save(p, "k", {"w": rng.standard_normal((8, 8)).astype(np.float32)})
    raw = p.read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(raw[: len(raw) - 10])
    with pytest.raises(CheckpointError, match="truncated.*w payload"):
        checkpoint.load(tmp_path / "cut.ckpt")


def test_trailing_garbage_rejected(tmp_path):
    p = tmp_path / "g.ckpt"
    checkpoint.save(p, "k", {"w": np.zeros(3, np.float32)})
    p.write_bytes(p.read_bytes() + b"\x00\x01")
    with pytest.raises(CheckpointError, match="trailing"):
        checkpoint.load(p)


def test_unsupported_dtype_on_save(tmp_path):
    with pytest.raises(CheckpointError, match="int32"):
        checkpoint.save(tmp_path / "i.ckpt", "k", {"w": np.zeros(2, np.int32)})


def test_model_state_round_trip(tmp_path, rng):
    """A trained-ish network restored from checkpoint reproduces its
    outputs bitwise, including batch-norm and spectral-norm buffers."""
    cfg = GanConfig(nz=8, ngf=8, ndf=8, r1=16, r2=16, use_sn=True, sa_resolution=16)
    g1, d1 = build_stage1(cfg, seed=0)
    z = sample_latent(2, 8, rng)
    g1(z, training=True)  # mutate running stats and sn_u buffers

    p = tmp_path / "g1.ckpt"
    checkpoint.save(p, "gan_stage1", g1.tree.state_arrays())
    g1b, _ = build_stage1(cfg, seed=1)  # different init
    _, arrays = checkpoint.load(p)
    g1b.tree.load_state(arrays)
    out_a = g1(z, training=False).data
    out_b = g1b(z, training=False).data
    assert np.array_equal(out_a, out_b)


def test_load_state_missing_entry(tmp_path):
    cfg = GanConfig(nz=8, ngf=8, ndf=8, r1=16, r2=16, sa_resolution=16)
    g1, _ = build_stage1(cfg, seed=0)
    arrays = g1.tree.state_arrays()
    arrays = {k: v for k, v in arrays.items() if not k.endswith("project/weight")}
    with pytest.raises(KeyError, match="project/weight"):
        g1.tree.load_state(arrays)


def test_spectral_norm_sigma_continuity_after_restore(tmp_path, rng):
    """Persisted u-vectors keep the sigma estimate converged: the first
    post-load power iteration moves sigma by < 1e-3."""
    w = Tensor(rng.standard_normal((16, 48)).astype(np.float64))
    u = rng.standard_normal(16)
    u /= np.linalg.norm(u)
    for _ in range(100):
        sigma_before, u, _, _ = nn.spectral_norm_power_iteration(w.data, u, 1)
    p = tmp_path / "sn.ckpt"
    checkpoint.save(p, "k", {"w": w.data, "u": u})
    _, arrays = checkpoint.load(p)
    sigma_after, _, _, _ = nn.spectral_norm_power_iteration(arrays["w"], arrays["u"], 1)
    assert abs(sigma_after - sigma_before) < 1e-3
