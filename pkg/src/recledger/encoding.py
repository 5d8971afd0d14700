"""Canonical byte layout shared by every digest and signature in the package.

Strings and byte strings are length-prefixed with a 4-byte big-endian length,
integers are 8-byte big-endian two's complement, and lists carry a 4-byte
element count followed by each element as a length-prefixed byte string.
"""

from __future__ import annotations

from typing import Iterable


class DecodeError(ValueError):
    """Raised when bytes do not follow the canonical layout."""


def enc_u32(n: int) -> bytes:
    return n.to_bytes(4, "big")


def enc_int(n: int) -> bytes:
    return int(n).to_bytes(8, "big", signed=True)


def enc_bytes(b: bytes) -> bytes:
    return enc_u32(len(b)) + b


def enc_str(s: str) -> bytes:
    return enc_bytes(s.encode("utf-8"))


def enc_list(items: Iterable[bytes]) -> bytes:
    items = list(items)
    return enc_u32(len(items)) + b"".join(enc_bytes(i) for i in items)


class Reader:
    """Sequential strict decoder over a canonical byte string."""

    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0

    def _take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise DecodeError(f"truncated input at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return int.from_bytes(self._take(4), "big")

    def int(self) -> int:
        return int.from_bytes(self._take(8), "big", signed=True)

    def bytes(self) -> bytes:
        return self._take(self.u32())

    def str(self) -> str:
        raw = self.bytes()
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"invalid utf-8 before offset {self.pos}") from exc

    def list(self) -> list[bytes]:
        return [self.bytes() for _ in range(self.u32())]

    def at_end(self) -> bool:
        return self.pos == len(self.data)

    def finish(self) -> None:
        if not self.at_end():
            raise DecodeError(f"{len(self.data) - self.pos} trailing bytes")
