import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hohonet.io import (
    FormatError,
    load_checkpoint,
    read_f32r,
    read_json,
    read_pgm16,
    save_checkpoint,
    write_f32r,
    write_json,
    write_pgm16,
)
from hohonet.model import ModelConfig, init_params
from hohonet.tensor import Tensor


def test_raster_header_and_layout(tmp_path):
    a = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    p = tmp_path / "a.f32r"
    write_f32r(p, a)
    blob = p.read_bytes()
    assert blob[:4] == b"F32R"
    assert struct.unpack("<III", blob[4:16]) == (2, 3, 4)
    assert len(blob) == 16 + 4 * 24
    # channel-major then row-major, little-endian
    assert struct.unpack("<f", blob[16 + 4 * 13 : 16 + 4 * 14])[0] == a[1, 0, 1]


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_raster_roundtrip_bit_exact(c, h, w, seed):
    import tempfile
    from pathlib import Path

    a = np.random.default_rng(seed).standard_normal((c, h, w)).astype(np.float32)
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "r.f32r"
        write_f32r(p, a)
        b = read_f32r(p)
    assert b.dtype == np.float32 and np.array_equal(a.view(np.uint32), b.view(np.uint32))


def test_raster_two_dimensional_gets_one_channel(tmp_path):
    write_f32r(tmp_path / "x", np.ones((3, 5)))
    assert read_f32r(tmp_path / "x").shape == (1, 3, 5)
    with pytest.raises(ValueError):
        write_f32r(tmp_path / "y", np.ones(4))


def test_raster_rejects_bad_magic_and_length(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"F32X" + struct.pack("<III", 1, 1, 1) + b"\0" * 4)
    with pytest.raises(FormatError, match="magic"):
        read_f32r(p)
    p.write_bytes(b"F32R" + struct.pack("<III", 1, 2, 2) + b"\0" * 12)
    with pytest.raises(FormatError):
        read_f32r(p)


def test_pgm_roundtrip_and_header(tmp_path):
    lab = np.random.default_rng(0).integers(0, 65536, (7, 11))
    p = tmp_path / "l.pgm"
    write_pgm16(p, lab)
    assert p.read_bytes().startswith(b"P5\n11 7\n65535\n")
    assert np.array_equal(read_pgm16(p), lab)


def test_pgm_reader_handles_comments_and_8_bit(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n3 2\n255\n" + bytes([0, 1, 2, 3, 4, 5]))
    assert read_pgm16(p).tolist() == [[0, 1, 2], [3, 4, 5]]
    p.write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(FormatError):
        read_pgm16(p)
    with pytest.raises(ValueError):
        write_pgm16(tmp_path / "n.pgm", np.array([[-1]]))


def test_checkpoint_layout(tmp_path):
    p = tmp_path / "c.hoho"
    save_checkpoint(p, {"w": np.array([[1.0, 2.0]], np.float32), "é": Tensor([3.0])})
    blob = p.read_bytes()
    expected = (
        b"HOHO"
        + struct.pack("<II", 1, 2)
        + struct.pack("<I", 1) + b"w" + struct.pack("<III", 2, 1, 2) + struct.pack("<2f", 1, 2)
        + struct.pack("<I", 2) + "é".encode() + struct.pack("<II", 1, 1) + struct.pack("<f", 3)
    )
    assert blob == expected


def test_checkpoint_save_load_save_is_byte_identical(tmp_path):
    params = init_params(ModelConfig(H_inp=64, W_inp=128), seed=3)
    a, b = tmp_path / "a.hoho", tmp_path / "b.hoho"
    save_checkpoint(a, params)
    loaded = load_checkpoint(a)
    assert list(loaded) == list(params)
    save_checkpoint(b, loaded)
    assert a.read_bytes() == b.read_bytes()


def test_checkpoint_scalar_and_empty(tmp_path):
    p = tmp_path / "s.hoho"
    save_checkpoint(p, {"s": np.float32(2.5), "e": np.zeros((0, 3), np.float32)})
    out = load_checkpoint(p)
    assert out["s"].shape == () and out["s"] == 2.5 and out["e"].shape == (0, 3)


def test_checkpoint_corruption_detected(tmp_path):
    p = tmp_path / "c.hoho"
    save_checkpoint(p, {"w": np.ones((4, 4), np.float32)})
    good = p.read_bytes()
    p.write_bytes(b"HOHA" + good[4:])
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(p)
    p.write_bytes(good[:-3])
    with pytest.raises(FormatError):
        load_checkpoint(p)
    p.write_bytes(good + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        load_checkpoint(p)
    p.write_bytes(good[:4] + struct.pack("<I", 2) + good[8:])
    with pytest.raises(FormatError, match="version"):
        load_checkpoint(p)


def test_json_helpers_sorted_and_roundtrip(tmp_path):
    write_json(tmp_path / "j.json", {"b": 1, "a": [1.5, None]})
    assert (tmp_path / "j.json").read_text().index('"a"') < (tmp_path / "j.json").read_text().index('"b"')
    assert read_json(tmp_path / "j.json") == {"a": [1.5, None], "b": 1}
