import json
import struct

import numpy as np
import pytest

from gola.container import (
    BadMagicError,
    ContainerError,
    LayoutError,
    OverlapError,
    TruncatedError,
    VersionMismatchError,
    adapter_from_container,
    adapter_metadata,
    adapter_to_tensors,
    decode_container,
    encode_container,
    read_container,
    write_container,
)
from helpers import random_adapter


def test_empty_container(tmp_path):
    path = tmp_path / "empty.gola"
    write_container(path, {})
    data = path.read_bytes()
    assert data[:4] == b"GOLA"
    assert struct.unpack_from("<IQ", data, 4)[0] == 1
    header_len = struct.unpack_from("<Q", data, 8)[0]
    assert len(data) == 16 + header_len
    tensors, meta = read_container(path)
    assert tensors == {} and meta == {}


def test_half_is_encoded_little_endian():
    data = encode_container({"t": np.array([[0.5]])})
    assert data[-4:] == bytes([0x00, 0x00, 0x00, 0x3F])


def test_header_layout():
    data = encode_container({"a": np.ones((2, 3)), "b": np.zeros((1, 1))}, {"r": 2})
    header_len = struct.unpack_from("<Q", data, 8)[0]
    header = json.loads(data[16 : 16 + header_len])
    assert header["metadata"] == {"r": 2}
    a, b = header["tensors"]
    assert (a["name"], a["shape"], a["dtype"], a["offset"], a["length_bytes"]) == ("a", [2, 3], "f32", 0, 24)
    assert (b["offset"], b["length_bytes"]) == (24, 4)
    assert len(data) == 16 + header_len + 28


def test_adapter_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(100):
        c_out, c_in = (int(x) for x in rng.integers(2, 20, size=2))
        r = int(rng.integers(1, min(c_out, c_in) + 1))
        a = random_adapter(rng, c_out, c_in, r, dtype=np.float32, scale=float(rng.uniform(0.1, 2)))
        path = tmp_path / f"a{i}.gola"
        write_container(path, adapter_to_tensors(a), adapter_metadata(a, "blk"))
        tensors, meta = read_container(path)
        for name, arr in adapter_to_tensors(a).items():
            assert tensors[name].dtype == np.float32
            assert tensors[name].tobytes() == np.ascontiguousarray(arr).tobytes()
        assert meta == {"r": r, "scale": a.scale, "layer_name": "blk"}
        back = adapter_from_container(tensors, meta)
        again = tmp_path / f"b{i}.gola"
        write_container(again, adapter_to_tensors(back), adapter_metadata(back, "blk"))
        assert again.read_bytes() == path.read_bytes()


def test_special_values_round_trip():
    arr = np.array([[0.0, -0.0, np.inf, -np.inf], [1e-45, 3.4e38, np.float32(np.pi), -1.5]], dtype=np.float32)
    back = decode_container(encode_container({"x": arr}))[0]["x"]
    assert back.tobytes() == arr.tobytes()


def test_rank_metadata_mismatch():
    a = random_adapter(np.random.default_rng(1), 6, 6, 3, dtype=np.float32)
    with pytest.raises(ValueError):
        adapter_from_container(adapter_to_tensors(a), {"r": 4})
    with pytest.raises(ValueError):
        adapter_from_container({"W": a.W}, {})


def _valid():
    return encode_container({"a": np.ones((2, 2)), "b": np.ones((1, 3))}, {"r": 1})


def _with_header(header: dict, payload: bytes):
    raw = json.dumps(header).encode()
    return struct.pack("<4sIQ", b"GOLA", 1, len(raw)) + raw + payload


def test_bad_magic():
    data = b"GOLB" + _valid()[4:]
    with pytest.raises(BadMagicError, match="magic"):
        decode_container(data)
    with pytest.raises(BadMagicError):
        decode_container(b"PK\x03\x04")


def test_version_mismatch():
    data = bytearray(_valid())
    data[4:8] = struct.pack("<I", 2)
    with pytest.raises(VersionMismatchError, match="version 2"):
        decode_container(bytes(data))


@pytest.mark.parametrize("cut", [0, 3, 10, 20, -1, -13])
def test_truncated(cut):
    data = _valid()
    with pytest.raises(TruncatedError, match="truncated|ends early|needs payload"):
        decode_container(data[:cut])


def test_overlap():
    entries = [
        {"name": "a", "shape": [1, 2], "dtype": "f32", "offset": 0, "length_bytes": 8},
        {"name": "b", "shape": [1, 2], "dtype": "f32", "offset": 4, "length_bytes": 8},
    ]
    with pytest.raises(OverlapError, match="overlap"):
        decode_container(_with_header({"tensors": entries, "metadata": {}}, bytes(12)))


@pytest.mark.parametrize(
    "entry",
    [
        {"name": "a", "shape": [1, 2], "dtype": "f64", "offset": 0, "length_bytes": 8},
        {"name": "a", "shape": [1, 2], "dtype": "f32", "offset": 0, "length_bytes": 4},
        {"name": "a", "shape": [2], "dtype": "f32", "offset": 0, "length_bytes": 8},
        {"name": "a", "shape": [1, 2], "dtype": "f32", "offset": -4, "length_bytes": 8},
    ],
)
def test_layout_errors(entry):
    with pytest.raises(LayoutError):
        decode_container(_with_header({"tensors": [entry], "metadata": {}}, bytes(8)))


def test_malformed_header_json():
    raw = b"{not json"
    data = struct.pack("<4sIQ", b"GOLA", 1, len(raw)) + raw
    with pytest.raises(LayoutError):
        decode_container(data)


def test_errors_are_distinct_and_share_a_base():
    classes = {BadMagicError, VersionMismatchError, TruncatedError, OverlapError, LayoutError}
    assert len(classes) == 5
    assert all(issubclass(c, ContainerError) for c in classes)


def test_failed_write_leaves_no_partial_file(tmp_path):
    path = tmp_path / "x.gola"
    write_container(path, {"a": np.ones((1, 1))})
    before = path.read_bytes()
    with pytest.raises(ValueError):
        write_container(path, {"bad": np.ones(3)})
    assert path.read_bytes() == before
    assert [p.name for p in tmp_path.iterdir()] == ["x.gola"]


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        read_container(tmp_path / "nope.gola")
