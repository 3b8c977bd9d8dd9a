"""Bounds-checked read-only FlatBuffer walker.

Just enough of the wire format to traverse tables, vtables, strings, and
vectors by field id. Every offset is validated against the buffer so corrupt
or truncated files raise FlatBufferError instead of reading garbage.
"""
from __future__ import annotations

import struct


class FlatBufferError(Exception):
    """Offsets or sizes in the buffer are inconsistent."""


class Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.n = len(buf)

    def _need(self, pos: int, size: int):
        if pos < 0 or pos + size > self.n:
            raise FlatBufferError(f"read of {size} bytes at {pos} outside buffer of {self.n}")

    def u8(self, pos):
        self._need(pos, 1)
        return self.buf[pos]

    def i8(self, pos):
        self._need(pos, 1)
        return struct.unpack_from("<b", self.buf, pos)[0]

    def u16(self, pos):
        self._need(pos, 2)
        return struct.unpack_from("<H", self.buf, pos)[0]

    def i32(self, pos):
        self._need(pos, 4)
        return struct.unpack_from("<i", self.buf, pos)[0]

    def u32(self, pos):
        self._need(pos, 4)
        return struct.unpack_from("<I", self.buf, pos)[0]

    def i64(self, pos):
        self._need(pos, 8)
        return struct.unpack_from("<q", self.buf, pos)[0]

    def f32(self, pos):
        self._need(pos, 4)
        return struct.unpack_from("<f", self.buf, pos)[0]

    def root(self) -> int:
        """Position of the root table."""
        return self.u32(0)

    # -- tables ---------------------------------------------------------------

    def field_pos(self, table: int, field_id: int) -> int | None:
        """Absolute position of a field's inline data, or None if absent."""
        vtable = table - self.i32(table)
        vt_size = self.u16(vtable)
        slot = 4 + 2 * field_id
        if slot + 2 > vt_size:
            return None
        off = self.u16(vtable + slot)
        if off == 0:
            return None
        return table + off

    def scalar(self, table: int, field_id: int, kind: str, default):
        pos = self.field_pos(table, field_id)
        if pos is None:
            return default
        return getattr(self, kind)(pos)

    def indirect(self, table: int, field_id: int) -> int | None:
        """Follow an offset field (table/string/vector) to its target position."""
        pos = self.field_pos(table, field_id)
        if pos is None:
            return None
        return pos + self.u32(pos)

    # -- strings and vectors ----------------------------------------------------

    def string(self, table: int, field_id: int) -> str | None:
        pos = self.indirect(table, field_id)
        if pos is None:
            return None
        ln = self.u32(pos)
        self._need(pos + 4, ln)
        return self.buf[pos + 4:pos + 4 + ln].decode("utf-8", errors="replace")

    def vector(self, table: int, field_id: int):
        """(position of first element, length) or None."""
        pos = self.indirect(table, field_id)
        if pos is None:
            return None
        return pos + 4, self.u32(pos)

    def vector_scalars(self, table: int, field_id: int, kind: str, width: int) -> list | None:
        v = self.vector(table, field_id)
        if v is None:
            return None
        start, ln = v
        self._need(start, ln * width)
        return [getattr(self, kind)(start + i * width) for i in range(ln)]

    def vector_tables(self, table: int, field_id: int) -> list[int] | None:
        v = self.vector(table, field_id)
        if v is None:
            return None
        start, ln = v
        self._need(start, ln * 4)   # reject absurd lengths before looping
        out = []
        for i in range(ln):
            p = start + i * 4
            out.append(p + self.u32(p))
        return out

    def vector_bytes(self, table: int, field_id: int) -> bytes | None:
        v = self.vector(table, field_id)
        if v is None:
            return None
        start, ln = v
        self._need(start, ln)
        return self.buf[start:start + ln]
