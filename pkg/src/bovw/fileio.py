"""Binary artifact plumbing: little-endian field packing and atomic writes.

All artifact files share the same conventions: an 8-byte ASCII magic,
little-endian fixed-width integers, IEEE-754 doubles (f32 only where a
format says so) and length-prefixed UTF-8 strings.  Writers assemble
the whole payload in memory and publish it with a same-directory
temp-file rename, so readers never observe a half-written artifact.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import CorruptArtifactError

U32_MAX = 0xFFFFFFFF
U64_MAX = 0xFFFFFFFFFFFFFFFF


def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file + rename in the same directory."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        # mkstemp creates 0600 files; publish with normal umask permissions.
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


class ByteWriter:
    """Accumulates little-endian fields into one payload."""

    def __init__(self, magic: bytes):
        if len(magic) != 8:
            raise ValueError("artifact magic must be 8 bytes")
        self._parts = [magic]

    def u32(self, value: int) -> None:
        if not 0 <= value <= U32_MAX:
            raise ValueError(f"value {value} does not fit in u32")
        self._parts.append(struct.pack("<I", value))

    def u64(self, value: int) -> None:
        if not 0 <= value <= U64_MAX:
            raise ValueError(f"value {value} does not fit in u64")
        self._parts.append(struct.pack("<Q", value))

    def f64(self, value: float) -> None:
        self._parts.append(struct.pack("<d", value))

    def f64_array(self, values: np.ndarray) -> None:
        self._parts.append(np.ascontiguousarray(values, dtype="<f8").tobytes())

    def f32_array(self, values: np.ndarray) -> None:
        self._parts.append(np.ascontiguousarray(values, dtype="<f4").tobytes())

    def string(self, text: str) -> None:
        raw = text.encode("utf-8")
        self.u32(len(raw))
        self._parts.append(raw)

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class ByteReader:
    """Cursor over an artifact payload with checked, typed reads."""

    def __init__(self, data: bytes, magic: bytes, label: str):
        self._data = data
        self._off = 0
        self._label = label
        head = self._take(len(magic))
        if head != magic:
            raise CorruptArtifactError(
                f"{label}: bad magic {head!r}, expected {magic!r}"
            )

    def _take(self, n: int) -> bytes:
        if self._off + n > len(self._data):
            raise CorruptArtifactError(f"{self._label}: truncated at byte {self._off}")
        chunk = self._data[self._off:self._off + n]
        self._off += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def f64_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self._take(8 * count), dtype="<f8").astype(np.float64)

    def f32_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self._take(4 * count), dtype="<f4").astype(np.float32)

    def string(self) -> str:
        n = self.u32()
        try:
            return self._take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptArtifactError(f"{self._label}: malformed UTF-8 string") from exc

    def expect_end(self) -> None:
        if self._off != len(self._data):
            raise CorruptArtifactError(
                f"{self._label}: {len(self._data) - self._off} trailing bytes"
            )
