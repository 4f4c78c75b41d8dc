"""Little-endian struct helpers for the binary file formats."""

import struct

import numpy as np

from .errors import FormatError


def write_u8(f, value):
    f.write(struct.pack("<B", value))


def write_u32(f, value):
    f.write(struct.pack("<I", value))


def write_u64(f, value):
    f.write(struct.pack("<Q", value))


def write_f64(f, value):
    f.write(struct.pack("<d", value))


def write_bytes(f, data):
    write_u32(f, len(data))
    f.write(data)


def write_array(f, arr, dtype):
    f.write(np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes())


def _read_exact(f, n):
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"unexpected end of file (wanted {n} bytes, got {len(data)})")
    return data


def read_u8(f):
    return struct.unpack("<B", _read_exact(f, 1))[0]


def read_u32(f):
    return struct.unpack("<I", _read_exact(f, 4))[0]


def read_u64(f):
    return struct.unpack("<Q", _read_exact(f, 8))[0]


def read_f64(f):
    return struct.unpack("<d", _read_exact(f, 8))[0]


def read_bytes(f):
    return _read_exact(f, read_u32(f))


def read_array(f, dtype, count):
    dt = np.dtype(dtype).newbyteorder("<")
    return np.frombuffer(_read_exact(f, dt.itemsize * count), dtype=dt).astype(np.dtype(dtype))


def expect_magic(f, magic):
    got = f.read(len(magic))
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
