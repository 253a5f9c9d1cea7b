"""Binary weight-file container shared by descriptor and generator files.

Layout (little-endian): a 6-byte magic, format-specific header fields, then a
sequence of layer records.  Each record is::

    u8   kind tag        (1=conv, 2=relu, 3=pool, 4=batchnorm)
    u32  shape[4]        (conv: out,in,kh,kw; batchnorm: 4,C,1,1; else zeros)
    f32  weights[prod(shape)]   row-major
    u32  bias length
    f32  bias[...]

Batchnorm records pack gamma, beta, running mean, running variance as the
four rows of their (4, C, 1, 1) weight block.
"""

import struct

import numpy as np

from .errors import FormatError

MAGIC_DESCRIPTOR = b"TXNW1\x00"
MAGIC_GENERATOR = b"TXNG1\x00"

KIND_CONV = 1
KIND_RELU = 2
KIND_POOL = 3
KIND_BATCHNORM = 4


class Reader:
    """Byte cursor that raises FormatError instead of silently truncating."""

    def __init__(self, blob, label):
        self.blob = blob
        self.pos = 0
        self.label = label

    def take(self, n):
        end = self.pos + n
        if end > len(self.blob):
            raise FormatError(f"{self.label}: truncated file (wanted {n} bytes at offset {self.pos})")
        out = self.blob[self.pos : end]
        self.pos = end
        return out

    def u8(self):
        return self.take(1)[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def f32_array(self, count):
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4", count=count).copy()

    def expect_magic(self, magic):
        got = self.take(len(magic))
        if got != magic:
            raise FormatError(f"{self.label}: bad magic {got!r}, expected {magic!r}")

    def done(self):
        if self.pos != len(self.blob):
            raise FormatError(f"{self.label}: {len(self.blob) - self.pos} trailing bytes")


def pack_u32(*values):
    return struct.pack(f"<{len(values)}I", *values)


def pack_record(kind, shape4, weights, bias):
    shape4 = tuple(int(s) for s in shape4)
    if len(shape4) != 4:
        raise FormatError(f"record shape must have 4 entries, got {shape4}")
    weights = np.ascontiguousarray(weights, dtype="<f4").reshape(-1)
    bias = np.ascontiguousarray(bias, dtype="<f4").reshape(-1)
    expected = int(np.prod(shape4)) if any(shape4) else 0
    if weights.size != expected:
        raise FormatError(f"record weights hold {weights.size} scalars, shape says {expected}")
    return (
        struct.pack("<B", kind)
        + pack_u32(*shape4)
        + weights.tobytes()
        + pack_u32(bias.size)
        + bias.tobytes()
    )


def read_record(reader):
    kind = reader.u8()
    shape = tuple(reader.u32() for _ in range(4))
    count = int(np.prod(shape)) if any(shape) else 0
    weights = reader.f32_array(count)
    bias = reader.f32_array(reader.u32())
    return kind, shape, weights, bias
