"""Binary feature cache: a single container file per feature family.

Byte layout (all little-endian):

    magic "MAFC" | version u16 = 1 | hidden_size u32 | entry_count u64 |
    per entry: id_len u8 | id bytes (UTF-8) | tag u8 | hidden_size * f32 |
    trailing CRC32 over all preceding bytes.

Tags are 0x61 'a' and 0x62 'b' for the two semantic prompts and 0x71 'q'
for quality features. Payloads are stored as float32; entries round-trip
bit-exactly. Writing goes to a temp file in the target directory and is
renamed into place, so a cache on disk is never half-valid.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    CacheFormatError,
    ChecksumError,
    ConfigError,
    DuplicateEntryError,
    MissingFeatureError,
    VersionError,
)

__all__ = ["CacheEntry", "SemanticCache", "write_cache", "read_cache", "describe_cache"]

MAGIC = b"MAFC"
VERSION = 1
TAGS = ("a", "b", "q")
_HEADER = struct.Struct("<4sHIQ")


@dataclass(frozen=True)
class CacheEntry:
    """One (image_id, tag) -> float32 vector record."""

    image_id: str
    tag: str
    vec: np.ndarray = field(repr=False)

    def __post_init__(self):
        ident = self.image_id.encode("utf-8")
        if not 1 <= len(ident) <= 255:
            raise ConfigError(
                f"image_id must encode to 1..255 UTF-8 bytes, got {len(ident)}"
            )
        if self.tag not in TAGS:
            raise ConfigError(f"tag must be one of {TAGS}, got {self.tag!r}")
        vec = np.ascontiguousarray(self.vec, dtype=np.float32)
        if vec.ndim != 1 or vec.size == 0:
            raise ConfigError(f"vector must be 1-D and non-empty, got shape {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ConfigError(f"vector for ({self.image_id!r}, {self.tag!r}) is not finite")
        object.__setattr__(self, "vec", vec)

    @property
    def key(self):
        return (self.image_id, self.tag)


class SemanticCache:
    """Parsed cache: hidden size plus an index over (image_id, tag)."""

    def __init__(self, hidden_size, entries):
        self.hidden_size = int(hidden_size)
        self.entries = tuple(entries)
        self._index = {}
        for e in self.entries:
            if e.key in self._index:
                raise DuplicateEntryError(f"duplicate cache entry for {e.key}")
            if e.vec.size != self.hidden_size:
                raise ConfigError(
                    f"entry {e.key} has dim {e.vec.size}, cache header says {self.hidden_size}"
                )
            self._index[e.key] = e

    def __len__(self):
        return len(self.entries)

    def ids(self):
        return sorted({e.image_id for e in self.entries})

    def tag_counts(self):
        counts = {}
        for e in self.entries:
            counts[e.tag] = counts.get(e.tag, 0) + 1
        return counts

    def get(self, image_id, tag):
        try:
            return self._index[(image_id, tag)].vec
        except KeyError:
            nearest = _nearest_ids(image_id, self.ids())
            raise MissingFeatureError(
                f"no cache entry for ({image_id!r}, {tag!r}); nearest ids: {nearest}"
            ) from None

    def lookup(self, image_id):
        """Return the (tag 'a', tag 'b') feature pair for an image."""
        missing = [t for t in ("a", "b") if (image_id, t) not in self._index]
        if missing:
            raise MissingFeatureError(
                f"image {image_id!r} is missing prompt tag(s) {missing} in the cache"
            )
        return self._index[(image_id, "a")].vec, self._index[(image_id, "b")].vec


def _nearest_ids(target, ids, k=3):
    import difflib

    close = difflib.get_close_matches(target, ids, n=k, cutoff=0.0)
    return close if close else sorted(ids)[:k]


def encode_cache(entries):
    """Serialize entries to the container byte string (with CRC trailer)."""
    entries = list(entries)
    if not entries:
        raise ConfigError("refusing to write an empty cache")
    hidden = entries[0].vec.size
    seen = set()
    for e in entries:
        if e.vec.size != hidden:
            raise CacheFormatError(
                f"mixed vector dims: {e.key} has {e.vec.size}, expected {hidden}"
            )
        if e.key in seen:
            raise DuplicateEntryError(f"duplicate cache entry for {e.key}")
        seen.add(e.key)

    parts = [_HEADER.pack(MAGIC, VERSION, hidden, len(entries))]
    for e in entries:
        ident = e.image_id.encode("utf-8")
        parts.append(struct.pack("<B", len(ident)))
        parts.append(ident)
        parts.append(bytes([ord(e.tag)]))
        parts.append(e.vec.astype("<f4").tobytes())
    body = b"".join(parts)
    crc = zlib.crc32(body)
    return body + struct.pack("<I", crc), crc


def write_cache(path, entries):
    """Write entries atomically; returns the content CRC32."""
    blob, crc = encode_cache(entries)
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return crc


def read_cache(path):
    """Parse and validate a cache file; fail closed on any corruption."""
    with open(path, "rb") as fh:
        blob = fh.read()

    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(
            f"bad magic {blob[:4]!r}, expected {MAGIC!r}", offset=0
        )
    if len(blob) < _HEADER.size + 4:
        raise ChecksumError("file truncated before checksum", offset=len(blob))
    (_, version, hidden, count) = _HEADER.unpack_from(blob, 0)
    if version != VERSION:
        raise VersionError(
            f"unsupported cache version {version}; supported: {VERSION}", offset=4
        )
    body, (stored_crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    actual_crc = zlib.crc32(body)
    if actual_crc != stored_crc:
        raise ChecksumError(
            f"CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}",
            offset=len(blob) - 4,
        )

    offset = _HEADER.size
    vec_bytes = 4 * hidden
    entries = []
    for i in range(count):
        if offset + 1 > len(body):
            raise CacheFormatError(f"entry {i} header runs past checksum", offset=offset)
        id_len = body[offset]
        offset += 1
        end = offset + id_len + 1 + vec_bytes
        if id_len == 0 or end > len(body):
            raise CacheFormatError(f"entry {i} overruns the payload", offset=offset)
        try:
            image_id = body[offset : offset + id_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CacheFormatError(f"entry {i} id is not UTF-8: {exc}", offset=offset)
        offset += id_len
        tag_byte = body[offset]
        offset += 1
        if tag_byte not in (0x61, 0x62, 0x71):
            raise CacheFormatError(
                f"entry {i} has unknown tag byte {tag_byte:#x}", offset=offset - 1
            )
        vec = np.frombuffer(body, dtype="<f4", count=hidden, offset=offset).copy()
        offset += vec_bytes
        try:
            entries.append(CacheEntry(image_id, chr(tag_byte), vec))
        except ConfigError as exc:
            raise CacheFormatError(f"entry {i} is invalid: {exc}", offset=offset - vec_bytes)
    if offset != len(body):
        raise CacheFormatError(
            f"{len(body) - offset} trailing bytes after last entry", offset=offset
        )
    return SemanticCache(hidden, entries)


def describe_cache(path):
    """Header fields, per-tag counts, and checksum status for `cache-info`."""
    cache = read_cache(path)
    return {
        "magic": MAGIC.decode("ascii"),
        "version": VERSION,
        "hidden_size": cache.hidden_size,
        "entry_count": len(cache),
        "tag_counts": cache.tag_counts(),
        "checksum": "OK",
    }
