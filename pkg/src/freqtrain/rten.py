"""Raw tensor file format "RTEN v1".

Layout (little-endian):

    offset  size  field
    0       4     magic "RTEN"
    4       1     version (1)
    5       1     dtype: 0 = f32, 1 = f64
    6       2     reserved (written as 0, ignored on read)
    8       4     channels (u32)
    12      4     height (u32)
    16      4     width (u32)
    20      -     payload, row-major C x H x W

Real tensors store one value per element.  Golden spectra use the same
header (dtype f64) with each element stored as an interleaved (re, im)
pair, so the payload is twice as long.
"""

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"RTEN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_HEADER = struct.Struct("<4sBBHIII")


def _pack_header(dtype_code, channels, height, width):
    return _HEADER.pack(MAGIC, VERSION, dtype_code, 0, channels, height, width)


def _read_header(blob, path=None):
    if len(blob) < _HEADER.size:
        raise FormatError("truncated header", offset=len(blob), path=path)
    magic, version, dtype_code, _, channels, height, width = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0, path=path)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4, path=path)
    if dtype_code not in _DTYPES:
        raise FormatError(f"unknown dtype code {dtype_code}", offset=5, path=path)
    return _DTYPES[dtype_code], channels, height, width


def write_rten(path, data):
    """Write a real C x H x W array.  dtype must be float32 or float64."""
    data = np.ascontiguousarray(data)
    if data.ndim != 3:
        raise FormatError(f"expected a 3-d array, got shape {data.shape}")
    code = _DTYPE_CODES.get(data.dtype)
    if code is None:
        raise FormatError(f"unsupported dtype {data.dtype}")
    c, h, w = data.shape
    with open(path, "wb") as f:
        f.write(_pack_header(code, c, h, w))
        f.write(data.tobytes())


def read_rten(path):
    """Read a real tensor, returning a C x H x W array in its stored dtype."""
    with open(path, "rb") as f:
        blob = f.read()
    dtype, c, h, w = _read_header(blob, path=path)
    expected = c * h * w * dtype.itemsize
    payload = blob[_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(
            f"payload is {len(payload)} bytes, expected {expected}",
            offset=_HEADER.size + min(len(payload), expected),
            path=path,
        )
    return np.frombuffer(payload, dtype=dtype).reshape(c, h, w).copy()


def write_spectra(path, data):
    """Write a complex C x H x W array as interleaved (re, im) f64 pairs."""
    data = np.ascontiguousarray(data, dtype=np.complex128)
    if data.ndim != 3:
        raise FormatError(f"expected a 3-d array, got shape {data.shape}")
    c, h, w = data.shape
    inter = np.empty((c, h, w, 2), dtype="<f8")
    inter[..., 0] = data.real
    inter[..., 1] = data.imag
    with open(path, "wb") as f:
        f.write(_pack_header(1, c, h, w))
        f.write(inter.tobytes())


def read_spectra(path):
    """Read a golden spectrum file, returning a complex C x H x W array."""
    with open(path, "rb") as f:
        blob = f.read()
    dtype, c, h, w = _read_header(blob, path=path)
    if dtype != np.dtype("<f8"):
        raise FormatError("spectra must be stored as f64", offset=5, path=path)
    expected = c * h * w * 2 * dtype.itemsize
    payload = blob[_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(
            f"payload is {len(payload)} bytes, expected {expected}",
            offset=_HEADER.size + min(len(payload), expected),
            path=path,
        )
    inter = np.frombuffer(payload, dtype=dtype).reshape(c, h, w, 2)
    return (inter[..., 0] + 1j * inter[..., 1]).astype(np.complex128)
