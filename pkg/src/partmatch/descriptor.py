"""Top-K map descriptors and their 42-bit-per-part binary encoding.

Bit layout of one part, most significant first, 7 bits each::

    x_begin x_end y_begin y_end xd_begin yd_begin

The first four are keypoint box edges in local_resolution steps from the
map's local origin.  The last two index a 128x128 lattice of cells spanning
the dictionary extent; decoding returns the cell centre.  The descriptor box
has the keypoint box's size, so its far corner is not stored.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from .cpd import CpdConfig, Part, discover_parts, part_sort_key
from .errors import CorruptRecordError, InvalidArgument, RangeError
from .geometry import BBox, Point2, PointSetMap

FIELD_BITS = 7
FIELD_MAX = (1 << FIELD_BITS) - 1
PART_BITS = 6 * FIELD_BITS
LATTICE = 1 << FIELD_BITS
MAGIC = b"PSLM"
VERSION = 1
SCORE_MAX = 255
_EPS = 1e-9


@dataclass(frozen=True)
class DecodeContext:
    local_origin: Point2
    dict_extent: BBox
    local_resolution: float = 0.1

    @property
    def lattice_pitch(self) -> tuple[float, float]:
        e = self.dict_extent
        return (max(e.width, _EPS) / LATTICE, max(e.height, _EPS) / LATTICE)


@dataclass(frozen=True)
class PackedPart:
    value: int

    def __post_init__(self):
        if not 0 <= self.value < (1 << PART_BITS):
            raise RangeError(f"packed part must fit in {PART_BITS} bits")

    @property
    def fields(self) -> tuple[int, ...]:
        return tuple((self.value >> (FIELD_BITS * (5 - i))) & FIELD_MAX for i in range(6))

    @classmethod
    def from_fields(cls, fields: Sequence[int]) -> "PackedPart":
        if len(fields) != 6:
            raise InvalidArgument("a part has six fields")
        v = 0
        for f in fields:
            if not 0 <= f <= FIELD_MAX:
                raise RangeError(f"field value {f} does not fit in {FIELD_BITS} bits")
            v = (v << FIELD_BITS) | int(f)
        return cls(v)


@dataclass(frozen=True)
class MapDescriptor:
    map_id: str
    dictionary_id: str
    parts: tuple[Part, ...]
    local_origin: Point2
    dict_extent: BBox
    local_resolution: float = 0.1
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise InvalidArgument("a descriptor holds at least one part")

    @property
    def k(self) -> int:
        return len(self.parts)

    @property
    def payload_bits(self) -> int:
        return PART_BITS * self.k

    @property
    def context(self) -> DecodeContext:
        return DecodeContext(self.local_origin, self.dict_extent, self.local_resolution)

    @property
    def has_scores(self) -> bool:
        return all(p.as_score is not None for p in self.parts)

    def quantized(self) -> "MapDescriptor":
        """The descriptor as it reads back from its file."""
        ctx = self.context
        parts = []
        for p in self.parts:
            q = unpack_part(pack_part(p, ctx), ctx)
            score = None if p.as_score is None else quantize_score(p.as_score)
            parts.append(replace(q, as_score=score))
        return replace(self, parts=tuple(parts))


def quantize_score(s: float) -> float:
    return _score_byte(s) / SCORE_MAX


def _score_byte(s: float) -> int:
    return int(min(max(math.floor(s * SCORE_MAX + 0.5), 0), SCORE_MAX))


def select_top_k(pool: Sequence[Part], k: int) -> list[Part]:
    """The k best parts by appearance score; ties prefer larger descriptor boxes."""
    if not pool:
        raise InvalidArgument("part pool is empty")
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    return sorted(pool, key=part_sort_key)[:k]


def _step_index(value: float, origin: float, res: float, what: str) -> int:
    q = math.floor((value - origin) / res + 0.5)
    if not 0 <= q <= FIELD_MAX:
        raise RangeError(f"{what} = {value:.3f} m is outside the {FIELD_MAX * res:.1f} m addressable window")
    return q


def _lattice_index(value: float, lo: float, hi: float, pitch: float, what: str) -> int:
    if value < lo - _EPS or value > hi + _EPS:
        raise RangeError(f"{what} = {value:.3f} m lies outside the dictionary extent [{lo:.3f}, {hi:.3f}]")
    return min(max(int(math.floor((value - lo) / pitch)), 0), FIELD_MAX)


def pack_part(p: Part, ctx: DecodeContext) -> PackedPart:
    kb = p.keypoint_bb
    ox, oy = ctx.local_origin
    r = ctx.local_resolution
    e = ctx.dict_extent
    px, py = ctx.lattice_pitch
    return PackedPart.from_fields(
        (
            _step_index(kb.x_begin, ox, r, "keypoint x_begin"),
            _step_index(kb.x_end, ox, r, "keypoint x_end"),
            _step_index(kb.y_begin, oy, r, "keypoint y_begin"),
            _step_index(kb.y_end, oy, r, "keypoint y_end"),
            _lattice_index(p.descriptor_bb.x_begin, e.x_begin, e.x_end, px, "descriptor x_begin"),
            _lattice_index(p.descriptor_bb.y_begin, e.y_begin, e.y_end, py, "descriptor y_begin"),
        )
    )


def unpack_part(b: PackedPart, ctx: DecodeContext, as_score: Optional[float] = None) -> Part:
    xb, xe, yb, ye, dx, dy = b.fields
    if xb > xe or yb > ye:
        raise CorruptRecordError(f"keypoint fields out of order: {b.fields}")
    ox, oy = ctx.local_origin
    r = ctx.local_resolution
    kb = BBox(ox + xb * r, ox + xe * r, oy + yb * r, oy + ye * r)
    px, py = ctx.lattice_pitch
    x0 = ctx.dict_extent.x_begin + (dx + 0.5) * px
    y0 = ctx.dict_extent.y_begin + (dy + 0.5) * py
    db = BBox(x0, x0 + (xe - xb) * r, y0, y0 + (ye - yb) * r)
    return Part(kb, db, as_score)


def is_empty_record(b: PackedPart) -> bool:
    return b.value == 0


def build_descriptor(
    m: PointSetMap,
    dictionary: PointSetMap,
    k: int,
    cpd_cfg: CpdConfig = CpdConfig(),
    pool: Optional[Sequence[Part]] = None,
) -> MapDescriptor:
    """Discover parts (unless a pool is given) and keep the top k."""
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    if pool is None:
        pool = discover_parts(m, dictionary, cpd_cfg)
    ext = m.extent
    return MapDescriptor(
        map_id=m.id,
        dictionary_id=dictionary.id,
        parts=tuple(select_top_k(pool, k)),
        local_origin=Point2(ext.x_begin, ext.y_begin),
        dict_extent=dictionary.extent,
        local_resolution=cpd_cfg.grid_resolution,
        meta={"pool_size": len(pool)},
    )


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise RangeError("identifier too long")
    return struct.pack("<H", len(raw)) + raw


def payload_bytes(k: int) -> int:
    return -(-PART_BITS * k // 8)


def encode(d: MapDescriptor, with_scores: Optional[bool] = None) -> bytes:
    """Serialize a descriptor; the score table is written when every part has a score."""
    if with_scores is None:
        with_scores = d.has_scores
    ctx = d.context
    out = bytearray(MAGIC)
    out += struct.pack("<B", VERSION)
    out += _pack_str(d.map_id)
    out += _pack_str(d.dictionary_id)
    out += struct.pack("<2d", d.local_origin.x, d.local_origin.y)
    out += struct.pack("<d", d.local_resolution)
    out += struct.pack("<4d", *d.dict_extent.as_tuple())
    if d.k > 0xFFFF:
        raise RangeError("too many parts")
    out += struct.pack("<H", d.k)
    acc = 0
    for p in d.parts:
        acc = (acc << PART_BITS) | pack_part(p, ctx).value
    nbytes = payload_bytes(d.k)
    acc <<= nbytes * 8 - PART_BITS * d.k
    out += acc.to_bytes(nbytes, "big")
    if with_scores:
        out += struct.pack("<B", 1)
        out += bytes(_score_byte(p.as_score) for p in d.parts)
    else:
        out += struct.pack("<B", 0)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptRecordError("descriptor file is truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def decode(data: bytes) -> MapDescriptor:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CorruptRecordError("bad magic")
    (version,) = r.unpack("<B")
    if version != VERSION:
        raise CorruptRecordError(f"unsupported version {version}")
    map_id = r.string()
    dict_id = r.string()
    ox, oy = r.unpack("<2d")
    (res,) = r.unpack("<d")
    ext = BBox(*r.unpack("<4d"))
    (k,) = r.unpack("<H")
    nbytes = payload_bytes(k)
    acc = int.from_bytes(r.take(nbytes), "big") >> (nbytes * 8 - PART_BITS * k)
    (flag,) = r.unpack("<B")
    scores = [b / SCORE_MAX for b in r.take(k)] if flag else [None] * k
    if r.pos != len(data):
        raise CorruptRecordError("trailing bytes after descriptor")
    ctx = DecodeContext(Point2(ox, oy), ext, res)
    parts = []
    for i in range(k):
        shift = PART_BITS * (k - 1 - i)
        rec = PackedPart((acc >> shift) & ((1 << PART_BITS) - 1))
        parts.append(unpack_part(rec, ctx, scores[i]))
    return MapDescriptor(map_id, dict_id, tuple(parts), Point2(ox, oy), ext, res)


def save_descriptor(d: MapDescriptor, path) -> None:
    Path(path).write_bytes(encode(d))


def load_descriptor(path) -> MapDescriptor:
    return decode(Path(path).read_bytes())
