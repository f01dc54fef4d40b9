import struct

import numpy as np
import pytest

from axsty.ntf import MAGIC, NtfFormatError, read_ntf, write_ntf


def test_roundtrip_bit_exact(tmp_path, rng):
    arr = rng.uniform(-1, 1, (3, 4, 5)).astype(np.float32)
    p = tmp_path / "t.ntf"
    write_ntf(p, arr)
    back = read_ntf(p)
    assert back.dtype == np.float32
    np.testing.assert_array_equal(back, arr)
    # second generation is byte-identical
    p2 = tmp_path / "t2.ntf"
    write_ntf(p2, back)
    assert p.read_bytes() == p2.read_bytes()


def test_header_layout(tmp_path):
    arr = np.array([[1.0, 2.0]], dtype=np.float32)
    p = tmp_path / "h.ntf"
    write_ntf(p, arr)
    raw = p.read_bytes()
    assert raw[:4] == MAGIC
    assert struct.unpack_from("<I", raw, 4)[0] == 2
    assert struct.unpack_from("<2I", raw, 8) == (1, 2)
    assert raw[16:] == struct.pack("<2f", 1.0, 2.0)


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.ntf"
    p.write_bytes(b"XXXX" + b"\0" * 16)
    with pytest.raises(NtfFormatError, match="magic"):
        read_ntf(p)


def test_truncated_payload(tmp_path):
    p = tmp_path / "trunc.ntf"
    write_ntf(p, np.ones((4, 4), dtype=np.float32))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(NtfFormatError, match="payload"):
        read_ntf(p)


def test_scalar_rank_zero(tmp_path):
    p = tmp_path / "s.ntf"
    write_ntf(p, np.float32(2.5))
    assert read_ntf(p) == np.float32(2.5)
