import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from regprune.tensorio import (
    BadMagicError,
    BadVersionError,
    TensorFormatError,
    TruncatedError,
    decode_tensor,
    encode_tensor,
    read_tensor,
    write_tensor,
)


def test_round_trip_2x3(tmp_path):
    x = np.arange(6, dtype=np.float32).reshape(2, 3) / 7
    p = tmp_path / "t.atnb"
    write_tensor(x, p)
    y = read_tensor(p)
    assert y.dtype == np.float32 and y.shape == (2, 3)
    assert y.tobytes() == x.tobytes()
    assert encode_tensor(y) == p.read_bytes()


def test_byte_layout():
    data = encode_tensor(np.zeros(1, dtype=np.float32))
    assert len(data) == 4 + 4 + 1 + 1 + 8 + 4 == 22
    assert data[:4] == b"ATNB"
    assert struct.unpack_from("<IBBQ", data, 4) == (1, 0, 1, 1)


def test_one_by_one_size():
    data = encode_tensor(np.zeros((1, 1), dtype=np.float32))
    assert len(data) == 30
    np.testing.assert_array_equal(decode_tensor(data), [[0.0]])


def test_header_only_is_truncated_payload():
    data = encode_tensor(np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(TruncatedError, match="truncated payload"):
        decode_tensor(data[: 10 + 16])


def test_distinct_errors(tmp_path):
    good = encode_tensor(np.ones(3, dtype=np.float32))
    with pytest.raises(BadMagicError):
        decode_tensor(b"ATNX" + good[4:])
    with pytest.raises(BadVersionError):
        decode_tensor(good[:4] + struct.pack("<I", 2) + good[8:])
    with pytest.raises(TruncatedError, match="header"):
        decode_tensor(good[:7])
    with pytest.raises(TensorFormatError, match="trailing"):
        decode_tensor(good + b"\0")
    with pytest.raises(TensorFormatError, match="dtype"):
        decode_tensor(good[:8] + b"\x05" + good[9:])
    with pytest.raises(TensorFormatError, match="ndim 0"):
        decode_tensor(good[:9] + b"\x00")
    p = tmp_path / "bad.atnb"
    p.write_bytes(b"nope")
    with pytest.raises(BadMagicError, match=str(p)):
        read_tensor(p)


def test_zero_d_rejected():
    with pytest.raises(TensorFormatError):
        encode_tensor(np.float32(1.0))


@given(arrays(np.float32, st.lists(st.integers(0, 5), min_size=1, max_size=4).map(tuple)))
def test_round_trip_property(x):
    y = decode_tensor(encode_tensor(x))
    assert y.shape == x.shape
    assert y.tobytes() == np.ascontiguousarray(x).tobytes()
