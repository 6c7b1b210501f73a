"""MQT1 tensor file format: byte layout, roundtrips, malformed files."""

import struct

import numpy as np
import pytest

from mqpool.core import Tensor, read_array, tensor_read, tensor_write, write_array
from mqpool.errors import ShapeError, TensorFormatError, TensorLengthError


def test_byte_layout_is_exactly_header_plus_f32_payload(tmp_path):
    # independent of the writer: parse the bytes with struct
    arr = np.array([[1.0, -2.5, 3.25], [0.0, 1e-3, 65536.0]])
    path = tmp_path / "t.mqt"
    tensor_write(Tensor.from_array(arr), path)
    raw = path.read_bytes()
    assert raw[:4] == b"MQT1"
    ndim = struct.unpack_from("<I", raw, 4)[0]
    assert ndim == 2
    dims = struct.unpack_from("<2I", raw, 8)
    assert dims == (2, 3)
    payload = struct.unpack_from("<6f", raw, 16)
    assert payload == tuple(arr.astype(np.float32).reshape(-1))
    assert len(raw) == 16 + 6 * 4  # no padding, nothing after the payload


@pytest.mark.parametrize(
    "shape", [(1,), (7,), (3, 4), (2, 3, 4), (1, 1, 1, 1), (2, 1, 3, 1, 2)]
)
def test_roundtrip_preserves_shape_and_f32_values(tmp_path, shape):
    rng = np.random.default_rng(hash(shape) % 2**32)
    arr = rng.normal(size=shape) * 100
    path = tmp_path / "t.mqt"
    write_array(arr, path)
    back = read_array(path)
    assert back.shape == shape
    assert back.dtype == np.float64
    # storage narrows to f32; the roundtrip must be exact at that precision
    np.testing.assert_array_equal(back, arr.astype(np.float32).astype(np.float64))


def test_writes_are_deterministic(tmp_path):
    arr = np.arange(12.0).reshape(3, 4)
    a, b = tmp_path / "a.mqt", tmp_path / "b.mqt"
    write_array(arr, a)
    write_array(arr, b)
    assert a.read_bytes() == b.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "t.mqt"
    path.write_bytes(b"NOPE" + struct.pack("<II", 1, 1) + struct.pack("<f", 0.0))
    with pytest.raises(TensorFormatError):
        tensor_read(path)


def test_file_shorter_than_magic_rejected(tmp_path):
    path = tmp_path / "t.mqt"
    path.write_bytes(b"MQT")
    with pytest.raises(TensorFormatError):
        tensor_read(path)


def test_implausible_ndim_rejected(tmp_path):
    path = tmp_path / "t.mqt"
    path.write_bytes(b"MQT1" + struct.pack("<I", 33))
    with pytest.raises(TensorFormatError):
        tensor_read(path)


def test_truncated_dims_header_rejected(tmp_path):
    path = tmp_path / "t.mqt"
    path.write_bytes(b"MQT1" + struct.pack("<I", 3) + struct.pack("<I", 2))
    with pytest.raises(TensorFormatError):
        tensor_read(path)


def test_zero_dim_rejected(tmp_path):
    path = tmp_path / "t.mqt"
    path.write_bytes(b"MQT1" + struct.pack("<III", 2, 4, 0))
    with pytest.raises(TensorFormatError):
        tensor_read(path)


def test_short_payload_rejected(tmp_path):
    path = tmp_path / "t.mqt"
    path.write_bytes(b"MQT1" + struct.pack("<II", 1, 3) + struct.pack("<2f", 1.0, 2.0))
    with pytest.raises(TensorLengthError):
        tensor_read(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "t.mqt"
    good = b"MQT1" + struct.pack("<II", 1, 2) + struct.pack("<2f", 1.0, 2.0)
    path.write_bytes(good + b"x")
    with pytest.raises(TensorLengthError):
        tensor_read(path)


def test_tensor_validates_dims_against_data():
    with pytest.raises(ShapeError):
        Tensor((2, 3), np.zeros(5))
    with pytest.raises(ShapeError):
        Tensor((0, 3), np.zeros(0))
    with pytest.raises(ShapeError):
        Tensor((2, 3), np.zeros((2, 3)))  # data must be flat


def test_tensor_equality():
    a = Tensor.from_array(np.arange(6.0).reshape(2, 3))
    b = Tensor.from_array(np.arange(6.0).reshape(2, 3))
    c = Tensor.from_array(np.arange(6.0).reshape(3, 2))
    assert a == b
    assert a != c
    assert a != "not a tensor"


def test_from_array_accepts_non_contiguous():
    base = np.arange(24.0).reshape(4, 6)
    view = base[::2, ::3]  # strided
    t = Tensor.from_array(view)
    np.testing.assert_array_equal(t.to_array(), view)
