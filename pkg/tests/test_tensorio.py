import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dualchain.tensorio import (
    BadMagicError,
    InvalidShapeError,
    Rng,
    TruncatedFileError,
    UnknownDtypeError,
    UnsupportedVersionError,
    decode_tensor,
    encode_tensor,
    read_tensor,
    sample_standard_normal,
    write_tensor,
)

GOLDEN_SEED_42 = [
    0.30471707975443135, -1.0399841062404955, 0.7504511958064572, 0.9405647163912139,
    -1.9510351886538364, -1.302179506862318, 0.12784040316728537, -0.3162425923435822,
]


def test_smallest_shape():
    out = sample_standard_normal(Rng(0), [1])
    assert out.shape == (1,) and out.dtype == np.float64


def test_same_seed_same_stream():
    a = sample_standard_normal(Rng(7), (4, 5))
    b = sample_standard_normal(Rng(7), (4, 5))
    assert a.tobytes() == b.tobytes()


def test_golden_stream_seed_42():
    assert sample_standard_normal(Rng(42), (8,)).tolist() == GOLDEN_SEED_42


def test_moments_within_monte_carlo_bound():
    x = sample_standard_normal(Rng(3), (10**5,))
    bound = 3 / np.sqrt(x.size)
    assert abs(x.mean()) < max(bound, 0.02)
    assert abs(x.var() - 1) < 0.02


@pytest.mark.parametrize("shape", [[0], [3, 0], [], [-1], [2**33]])
def test_invalid_shapes(shape):
    with pytest.raises(InvalidShapeError):
        sample_standard_normal(Rng(0), shape)


def test_file_size_matches_layout(tmp_path):
    path = tmp_path / "t.erdt"
    write_tensor(path, np.array([[0.0, 1.0]]), "f64")
    # magic + version + ndim + 2 dims + dtype, then two f64 values
    assert path.stat().st_size == 4 + 4 + 4 + 8 + 4 + 16 == 40
    raw = path.read_bytes()
    assert raw[:4] == b"ERDT"
    assert struct.unpack_from("<IIIII", raw, 4) == (1, 2, 1, 2, 0)


def test_round_trip_bit_exact(tmp_path):
    t = sample_standard_normal(Rng(5), (3, 4, 2))
    write_tensor(tmp_path / "a.erdt", t)
    back = read_tensor(tmp_path / "a.erdt")
    assert back.shape == t.shape and back.tobytes() == t.tobytes()


def test_f32_round_trip_exact_at_stored_precision(tmp_path):
    t = sample_standard_normal(Rng(5), (7,))
    write_tensor(tmp_path / "a.erdt", t, "f32")
    back = read_tensor(tmp_path / "a.erdt")
    assert np.array_equal(back, t.astype(np.float32).astype(np.float64))


def test_bad_magic(tmp_path):
    buf = bytearray(encode_tensor(np.ones(2)))
    buf[:4] = b"XXXX"
    with pytest.raises(BadMagicError):
        decode_tensor(bytes(buf))


def test_truncated_payload():
    buf = encode_tensor(np.ones(4))
    with pytest.raises(TruncatedFileError):
        decode_tensor(buf[:-3])


def test_truncated_header():
    with pytest.raises(TruncatedFileError):
        decode_tensor(b"ERDT\x01\x00")


def test_unknown_dtype():
    buf = bytearray(encode_tensor(np.ones(1)))
    struct.pack_into("<I", buf, 16, 9)
    with pytest.raises(UnknownDtypeError):
        decode_tensor(bytes(buf))
    with pytest.raises(UnknownDtypeError):
        encode_tensor(np.ones(1), "f16")


def test_wrong_version():
    buf = bytearray(encode_tensor(np.ones(1)))
    struct.pack_into("<I", buf, 4, 2)
    with pytest.raises(UnsupportedVersionError):
        decode_tensor(bytes(buf))


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        encode_tensor(np.array([1.0, np.nan]))


def test_rng_spawn_is_reproducible():
    a = sample_standard_normal(Rng(9).spawn(3), (5,))
    b = sample_standard_normal(Rng(9).spawn(3), (5,))
    c = sample_standard_normal(Rng(9).spawn(4), (5,))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=4, min_side=1, max_side=5),
                  elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_round_trip_property(arr):
    back = decode_tensor(encode_tensor(arr))
    assert back.shape == arr.shape
    assert back.tobytes() == np.ascontiguousarray(arr).tobytes()
