"""Weights container: byte layout, round trips, and corruption detection
at exact offsets."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from salfuse.errors import ParseError
from salfuse.weightsfile import (deserialize_weights, load_weights,
                                 save_weights, serialize_weights)


def _sample_arrays(rng):
    return {
        "conv.w": rng.standard_normal((2, 3, 3, 3)).astype(np.float32),
        "bn.gamma": rng.standard_normal(4).astype(np.float32),
        "mlp.w": rng.standard_normal((4, 2)).astype(np.float32),
    }


def test_round_trip_is_bit_identical(rng):
    arrays = _sample_arrays(rng)
    back = deserialize_weights(serialize_weights(arrays))
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].dtype == np.float32
        assert np.array_equal(back[k], arrays[k])
        assert back[k].tobytes() == arrays[k].tobytes()


def test_serialize_is_deterministic(rng):
    arrays = _sample_arrays(rng)
    assert serialize_weights(arrays) == serialize_weights(arrays)


def test_file_round_trip(tmp_path, rng):
    arrays = _sample_arrays(rng)
    path = tmp_path / "w.acfw"
    save_weights(path, arrays)
    back = load_weights(path)
    assert all(np.array_equal(back[k], arrays[k]) for k in arrays)


def test_float64_input_is_cast_to_float32(rng):
    arrays = {"p": rng.standard_normal(5)}  # float64
    back = deserialize_weights(serialize_weights(arrays))
    assert back["p"].dtype == np.float32
    np.testing.assert_array_equal(back["p"], arrays["p"].astype(np.float32))


def test_insertion_order_is_preserved():
    arrays = {"z": np.ones(1, np.float32), "a": np.ones(1, np.float32),
              "m": np.ones(1, np.float32)}
    assert list(deserialize_weights(serialize_weights(arrays))) == ["z", "a", "m"]


def test_header_layout():
    data = serialize_weights({"ab": np.zeros((2, 1), np.float32)})
    assert data[:4] == b"ACFW"
    assert data[4] == 1
    assert struct.unpack("<I", data[5:9]) == (1,)
    assert struct.unpack("<H", data[9:11]) == (2,)
    assert data[11:13] == b"ab"
    assert data[13] == 2
    assert struct.unpack("<II", data[14:22]) == (2, 1)
    assert len(data) == 22 + 8


def test_bad_magic_offset_zero():
    data = bytearray(serialize_weights({"p": np.ones(2, np.float32)}))
    data[0] ^= 0xFF
    with pytest.raises(ParseError) as e:
        deserialize_weights(bytes(data))
    assert e.value.offset == 0


def test_bad_version_offset_four():
    data = bytearray(serialize_weights({"p": np.ones(2, np.float32)}))
    data[4] = 9
    with pytest.raises(ParseError) as e:
        deserialize_weights(bytes(data))
    assert e.value.offset == 4


def test_every_header_byte_corruption_is_detected(rng):
    """Flipping any byte of the 9-byte file header must be caught."""
    arrays = {"p": rng.standard_normal(3).astype(np.float32)}
    good = serialize_weights(arrays)
    for i in range(9):
        data = bytearray(good)
        data[i] ^= 0xFF
        with pytest.raises(ParseError):
            deserialize_weights(bytes(data))


def test_truncation_at_every_prefix_is_detected(rng):
    good = serialize_weights({"p": rng.standard_normal(3).astype(np.float32)})
    for end in range(len(good)):
        with pytest.raises(ParseError):
            deserialize_weights(good[:end])


def test_trailing_byte_offset():
    good = serialize_weights({"p": np.ones(2, np.float32)})
    with pytest.raises(ParseError) as e:
        deserialize_weights(good + b"\x00")
    assert e.value.offset == len(good)


def _entry(name: bytes, rank: int, dims: tuple, values: bytes) -> bytes:
    return (struct.pack("<H", len(name)) + name + bytes([rank])
            + struct.pack(f"<{len(dims)}I", *dims) + values)


def _file(*entries: bytes) -> bytes:
    return b"ACFW\x01" + struct.pack("<I", len(entries)) + b"".join(entries)


def test_duplicate_name_rejected_at_entry_start():
    e1 = _entry(b"p", 1, (1,), struct.pack("<f", 1.0))
    data = _file(e1, e1)
    with pytest.raises(ParseError) as e:
        deserialize_weights(data)
    assert "duplicate" in str(e.value)
    assert e.value.offset == 9 + len(e1)


def test_empty_name_rejected():
    data = _file(_entry(b"", 1, (1,), struct.pack("<f", 1.0)))
    with pytest.raises(ParseError) as e:
        deserialize_weights(data)
    assert "empty name" in str(e.value)
    assert e.value.offset == 9


def test_invalid_utf8_name_rejected():
    data = _file(_entry(b"\xff\xfe", 1, (1,), struct.pack("<f", 1.0)))
    with pytest.raises(ParseError) as e:
        deserialize_weights(data)
    assert "UTF-8" in str(e.value)
    assert e.value.offset == 11


def test_bad_rank_rejected():
    data = _file(_entry(b"p", 5, (1,) * 5, struct.pack("<5f", *[0.0] * 5)))
    with pytest.raises(ParseError) as e:
        deserialize_weights(data)
    assert "rank" in str(e.value)
    assert e.value.offset == 9 + 2 + 1  # name length + name + rank byte - 1


def test_zero_dimension_rejected():
    data = _file(_entry(b"p", 2, (2, 0), b""))
    with pytest.raises(ParseError) as e:
        deserialize_weights(data)
    assert "zero dimension" in str(e.value)
    assert e.value.offset == 9 + 2 + 1 + 1  # start of the dims block


def test_serialize_rejects_bad_entries(rng):
    with pytest.raises(ValueError):
        serialize_weights({"": np.ones(2, np.float32)})
    with pytest.raises(ValueError):
        serialize_weights({"p": np.float32(1.0).reshape(())})
    with pytest.raises(ValueError):
        serialize_weights({"p": np.ones((1, 1, 1, 1, 1), np.float32)})
