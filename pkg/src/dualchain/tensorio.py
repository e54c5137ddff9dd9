"""Dense float tensors, seeded randomness and the ``ERDT`` tensor file format.

Tensors are plain :class:`numpy.ndarray` objects of dtype ``float64``; the
helpers here validate them at public boundaries.  Randomness comes from
numpy's ``PCG64`` bit generator driving ``Generator.standard_normal``
(ziggurat), seeded with a 64-bit unsigned integer.

File layout (all integers unsigned 32-bit little-endian)::

    b"ERDT" | version=1 | ndim | dims[ndim] | dtype (0=f64, 1=f32) | payload
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"ERDT"
VERSION = 1
DTYPE_CODES = {"f64": 0, "f32": 1}
_NUMPY_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_MAX_ELEMENTS = 2**40


class TensorFormatError(ValueError):
    """Base class for tensor file parse errors."""


class BadMagicError(TensorFormatError):
    pass


class UnsupportedVersionError(TensorFormatError):
    pass


class UnknownDtypeError(TensorFormatError):
    pass


class TruncatedFileError(TensorFormatError):
    pass


class InvalidShapeError(ValueError):
    pass


def check_shape(shape) -> tuple[int, ...]:
    """Return ``shape`` as a tuple of positive ints or raise InvalidShapeError."""
    if isinstance(shape, (int, np.integer)):
        shape = (shape,)
    shape = tuple(shape)
    if len(shape) == 0:
        raise InvalidShapeError("zero-dimensional tensors are not supported")
    total = 1
    for extent in shape:
        if not isinstance(extent, (int, np.integer)) or extent <= 0:
            raise InvalidShapeError(f"extents must be positive integers, got {shape}")
        total *= int(extent)
        if total > _MAX_ELEMENTS or extent >= 2**32:
            raise InvalidShapeError(f"shape {shape} overflows the element limit")
    return tuple(int(e) for e in shape)


def as_tensor(x, name: str = "tensor") -> np.ndarray:
    """Validate ``x`` as a finite, non-scalar float64 array and return it."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0 or arr.size == 0:
        raise InvalidShapeError(f"{name} must have at least one dimension and one element")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "tensors") -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what} have mismatched shapes {a.shape} and {b.shape}")


class Rng:
    """Single-owner PCG64 stream with a standard-normal sampler."""

    algorithm = "numpy PCG64 + Generator.standard_normal (ziggurat)"

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def spawn(self, key: int) -> "Rng":
        """Independent child stream, reproducible from (seed, key)."""
        mixed = np.random.SeedSequence([self.seed, int(key)]).generate_state(2, np.uint32)
        return Rng(int(mixed[0]) | (int(mixed[1]) << 32))

    def __repr__(self):
        return f"Rng(seed={self.seed})"


def sample_standard_normal(rng: Rng, shape) -> np.ndarray:
    shape = check_shape(shape)
    return rng.generator.standard_normal(shape, dtype=np.float64)


def encode_tensor(t, dtype: str = "f64") -> bytes:
    if dtype not in DTYPE_CODES:
        raise UnknownDtypeError(f"unknown dtype {dtype!r}")
    arr = as_tensor(t)
    code = DTYPE_CODES[dtype]
    header = MAGIC + struct.pack("<II", VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    header += struct.pack("<I", code)
    payload = np.ascontiguousarray(arr, dtype=_NUMPY_DTYPES[code]).tobytes(order="C")
    return header + payload


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    pos = 4
    if len(buf) < pos + 8:
        raise TruncatedFileError("header truncated")
    version, ndim = struct.unpack_from("<II", buf, pos)
    pos += 8
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    if len(buf) < pos + 4 * ndim + 4:
        raise TruncatedFileError("header truncated")
    dims = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    (code,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if code not in _NUMPY_DTYPES:
        raise UnknownDtypeError(f"unknown dtype code {code}")
    try:
        shape = check_shape(dims)
    except InvalidShapeError as exc:
        raise TensorFormatError(str(exc)) from exc
    dt = _NUMPY_DTYPES[code]
    count = int(np.prod(shape))
    need = count * dt.itemsize
    if len(buf) - pos < need:
        raise TruncatedFileError(f"payload truncated: need {need} bytes, have {len(buf) - pos}")
    if len(buf) - pos > need:
        raise TensorFormatError("trailing bytes after payload")
    data = np.frombuffer(buf, dtype=dt, count=count, offset=pos)
    return data.astype(np.float64).reshape(shape)


def write_tensor(path, t, dtype: str = "f64") -> None:
    data = encode_tensor(t, dtype)
    with open(path, "wb") as fh:
        fh.write(data)


def read_tensor(path) -> np.ndarray:
    with open(os.fspath(path), "rb") as fh:
        return decode_tensor(fh.read())
