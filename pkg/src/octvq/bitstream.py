"""``.gpcg`` stream layout.

Byte-aligned little-endian header, then one MSB-first bit run: coarse occupancy
bitmap, octree split flags / child masks, and the leaf payloads in canonical
leaf order. Each payload is axis (2 bits), mode (4), dummy (1), dual (1) and
the VQ indices of every grid level, coarse to fine, ``log2(codebook size)``
bits each.
"""

import struct
from dataclasses import dataclass

import numpy as np

from octvq.bitio import BitReader, BitWriter
from octvq.errors import (BadMagicError, CorruptStreamError, ModelMismatchError,
                          TruncatedStreamError, VersionError)
from octvq.occupancy import NUM_MODES
from octvq.octree import coarse_dims_for, parse_structure

MAGIC = b"GPCG"
VERSION = 1
_FIXED = struct.Struct("<4sBBBB3HQ")


@dataclass(frozen=True)
class StreamHeader:
    bit_depth: int
    coarsest_side: int
    max_level: int
    coarse_dims: tuple
    model_hash: int
    codebook_sizes: tuple
    thickness: int
    multipliers: tuple  # lambda ladder, stored in hundredths
    payload_bit_count: int = 0
    version: int = VERSION

    def pack(self):
        out = _FIXED.pack(MAGIC, self.version, self.bit_depth, self.coarsest_side,
                          self.max_level, *self.coarse_dims, self.model_hash)
        out += struct.pack("<B", len(self.codebook_sizes))
        out += bytes(c.bit_length() - 1 for c in self.codebook_sizes)
        out += struct.pack("<BB", self.thickness, len(self.multipliers))
        out += b"".join(struct.pack("<H", round(m * 100)) for m in self.multipliers)
        out += struct.pack("<Q", self.payload_bit_count)
        return out

    @property
    def size(self):
        return _FIXED.size + 1 + len(self.codebook_sizes) + 2 + 2 * len(self.multipliers) + 8


@dataclass(frozen=True, eq=False)
class LeafPayload:
    key: tuple
    axis: int
    mode: int
    dummy_high: bool  # dummy depth is side (True) or -1 (False)
    dual: bool
    indices: tuple  # per grid level, 1-D int arrays

    def __eq__(self, other):
        return (self.key, self.axis, self.mode, self.dummy_high, self.dual) == (
            other.key, other.axis, other.mode, other.dummy_high, other.dual) and len(
            self.indices) == len(other.indices) and all(
            np.array_equal(a, b) for a, b in zip(self.indices, other.indices))


def _unpack_header(data):
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("not a GPCG stream")
    if len(data) < _FIXED.size:
        raise TruncatedStreamError("header truncated")
    magic, version, bit_depth, side, max_level, nx, ny, nz, mhash = _FIXED.unpack_from(data, 0)
    if version != VERSION:
        raise VersionError(f"unsupported stream version {version}")
    pos = _FIXED.size

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedStreamError("header truncated")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    n_cb = take(1)[0]
    cb = tuple(1 << b for b in take(n_cb))
    thickness, n_mult = take(2)
    mult = tuple(struct.unpack("<H", take(2))[0] / 100 for _ in range(n_mult))
    (payload_bits,) = struct.unpack("<Q", take(8))
    header = StreamHeader(bit_depth, side, max_level, (nx, ny, nz), mhash, cb, thickness,
                          mult, payload_bits, version)
    if not 1 <= bit_depth <= 21 or side == 0 or side & (side - 1) or side >> max_level < 4:
        raise CorruptStreamError("inconsistent octree geometry in header")
    if (nx, ny, nz) != coarse_dims_for(bit_depth, side):
        raise CorruptStreamError("coarse dimensions disagree with bit depth")
    if n_mult != max_level + 1 or any(c > 1 << 16 for c in cb):
        raise CorruptStreamError("config echo inconsistent with octree depth")
    return header, pos


def write_stream(header, structure, payloads, entry_for):
    """Serialize; ``structure`` is a bit sequence, ``entry_for(side, dual)``
    gives the image coder whose index widths apply to a payload."""
    w = BitWriter()
    w.write_bits(structure)
    for p in payloads:
        side = header.coarsest_side >> p.key[0]
        entry = entry_for(side, p.dual)
        w.write(p.axis, 2)
        w.write(p.mode, 4)
        w.write(int(p.dummy_high), 1)
        w.write(int(p.dual), 1)
        for lvl, idx in zip(entry.levels, p.indices):
            width = lvl.codebook.bits
            for v in np.asarray(idx).tolist():
                w.write(v, width)
    header = StreamHeader(**{**header.__dict__, "payload_bit_count": w.nbits})
    return header.pack() + w.to_bytes()


def read_stream(data, model):
    """Strict parse against ``model``; returns ``(header, payloads)``."""
    data = bytes(data)
    header, pos = _unpack_header(data)
    if header.model_hash != model.model_hash:
        raise ModelMismatchError("stream was encoded with a different model")
    if header.codebook_sizes != model.config.codebook_sizes[:len(header.codebook_sizes)]:
        raise ModelMismatchError("codebook schedule differs from the model's")
    body = data[pos:]
    need = -(-header.payload_bit_count // 8)
    if len(body) < need:
        raise TruncatedStreamError(f"payload needs {need} bytes, {len(body)} present")
    if len(body) > need:
        raise CorruptStreamError("trailing bytes after payload")
    reader = BitReader(body, header.payload_bit_count)
    keys = parse_structure(reader, header.coarse_dims, header.coarsest_side, header.max_level)
    payloads = []
    for key in keys:
        side = header.coarsest_side >> key[0]
        axis = reader.read(2)
        mode = reader.read(4)
        dummy_high = bool(reader.read(1))
        dual = bool(reader.read(1))
        if axis > 2:
            raise CorruptStreamError(f"leaf {key}: bad axis {axis}")
        if mode >= NUM_MODES:
            raise CorruptStreamError(f"leaf {key}: bad occupancy mode {mode}")
        entry = model.entry(side, dual)
        if entry is None:
            raise CorruptStreamError(f"leaf {key}: model has no {'dual' if dual else 'single'} "
                                     f"coder for side {side}")
        indices = []
        for lvl, count in zip(entry.levels, entry.patches_per_level()):
            width = lvl.codebook.bits
            indices.append(np.array([reader.read(width) for _ in range(count)], dtype=np.int64))
        payloads.append(LeafPayload(key, axis, mode, dummy_high, dual, tuple(indices)))
    if reader.remaining():
        raise CorruptStreamError(f"{reader.remaining()} unread payload bits")
    return header, payloads
