"""Best-effort DEX string-table extraction.

Scope is deliberately narrow: validate the header, walk string_ids, decode
MUTF-8 string data. That is all the signature rules consume; full bytecode
semantics belong to the IR-based reasoner.
"""
from __future__ import annotations

import struct

DEX_MAGIC_PREFIX = b"dex\n0"
_HEADER_LEN = 0x70
_STRING_IDS_SIZE_OFF = 0x38
_STRING_IDS_OFF_OFF = 0x3C


class DexError(Exception):
    """Header is not a parseable DEX."""


def _uleb128(data: bytes, pos: int) -> tuple[int, int]:
    result = shift = 0
    while True:
        if pos >= len(data):
            raise DexError("uleb128 runs off the end")
        byte = data[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7
        if shift > 35:
            raise DexError("uleb128 too long")


def parse_dex_strings(data: bytes, limit: int = 100_000) -> list[str]:
    """All strings from the string_ids table; entries that cannot be decoded
    are skipped rather than failing the whole table."""
    if len(data) < _HEADER_LEN:
        raise DexError(f"file too short for a DEX header ({len(data)} bytes)")
    if not data.startswith(DEX_MAGIC_PREFIX):
        raise DexError(f"bad DEX magic {data[:8]!r}")
    count, off = struct.unpack_from("<II", data, _STRING_IDS_SIZE_OFF)
    if count > limit:
        raise DexError(f"implausible string count {count}")
    if off + 4 * count > len(data):
        raise DexError("string_ids table runs past end of file")
    out = []
    for i in range(count):
        (str_off,) = struct.unpack_from("<I", data, off + 4 * i)
        if str_off >= len(data):
            continue
        try:
            _, pos = _uleb128(data, str_off)
            end = data.index(b"\x00", pos)
            out.append(data[pos:end].decode("utf-8", errors="replace"))
        except (DexError, ValueError):
            continue
    return out


def build_dex(strings: list[str]) -> bytes:
    """Assemble a minimal DEX holding only a string table (fixtures and demos)."""
    header = bytearray(_HEADER_LEN)
    header[0:8] = b"dex\n035\x00"
    ids_off = _HEADER_LEN
    data_off = ids_off + 4 * len(strings)
    blobs, offsets = [], []
    pos = data_off
    for s in strings:
        raw = s.encode("utf-8")
        # uleb128 of the utf16 length (ascii fixtures: same as byte length)
        ln, enc = len(s), b""
        while True:
            b7 = ln & 0x7F
            ln >>= 7
            enc += bytes([b7 | (0x80 if ln else 0)])
            if not ln:
                break
        blob = enc + raw + b"\x00"
        offsets.append(pos)
        blobs.append(blob)
        pos += len(blob)
    struct.pack_into("<II", header, _STRING_IDS_SIZE_OFF, len(strings), ids_off)
    struct.pack_into("<I", header, 0x20, pos)          # file_size
    struct.pack_into("<I", header, 0x24, _HEADER_LEN)  # header_size
    struct.pack_into("<I", header, 0x28, 0x12345678)   # endian_tag
    body = b"".join(struct.pack("<I", o) for o in offsets) + b"".join(blobs)
    return bytes(header) + body
