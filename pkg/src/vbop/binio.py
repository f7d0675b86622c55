"""Small helpers for the CRC-framed binary artifact formats."""

import struct
import zlib

import numpy as np

from .errors import ChecksumError, FormatError


class ByteWriter:
    def __init__(self):
        self._chunks = []

    def raw(self, data: bytes):
        self._chunks.append(bytes(data))

    def pack(self, fmt: str, *values):
        self._chunks.append(struct.pack("<" + fmt, *values))

    def array(self, arr: np.ndarray):
        self._chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def finish_with_crc(self) -> bytes:
        body = b"".join(self._chunks)
        return body + struct.pack("<I", zlib.crc32(body))


class ByteReader:
    """Sequential reader; running out of bytes reports a checksum failure,
    since a truncated file can never verify its trailing CRC."""

    def __init__(self, blob: bytes):
        self._blob = blob
        self._pos = 0

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._blob):
            raise ChecksumError("file truncated: checksum cannot be verified")
        out = self._blob[self._pos:self._pos + n]
        self._pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(count * 8), dtype="<f8").copy()

    def expect_exhausted(self):
        if self._pos != len(self._blob):
            raise FormatError(
                f"{len(self._blob) - self._pos} unexpected trailing bytes"
            )


def check_magic(reader: ByteReader, magic: bytes, kind: str):
    got = reader.take(len(magic))
    if got != magic:
        raise FormatError(f"not a {kind} file (magic {got!r} != {magic!r})")


def verify_crc(blob: bytes) -> bytes:
    """Split off and verify the trailing CRC32; returns the body."""
    if len(blob) < 4:
        raise ChecksumError("file too short to carry a checksum")
    body, tail = blob[:-4], blob[-4:]
    (stored,) = struct.unpack("<I", tail)
    if zlib.crc32(body) != stored:
        raise ChecksumError("CRC32 mismatch: file corrupted or truncated")
    return body
