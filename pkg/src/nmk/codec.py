"""Block codec for index tables.

Index streams are cut into fixed-capacity blocks, each bit-packed MSB-first
and deflated independently so that any block can be decoded knowing only its
compressed bytes, the index length, and its offset-table entries.  That
per-block independence is what makes random-access partial decompression
possible.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import core

DEFAULT_BLOCK_BYTES = 1 << 20
DEFAULT_DEFLATE_LEVEL = 6
MIN_BLOCK_BYTES = 4096


class CodecError(Exception):
    """Packing or lossless-backend failure."""


@dataclass(frozen=True)
class BlockLayout:
    """Partition of an n-element index stream into byte-capacity blocks."""

    block_bytes: int
    bits: int
    n: int

    def __post_init__(self) -> None:
        if self.elements_per_block < 1:
            raise ValueError("block capacity below one element")

    @property
    def elements_per_block(self) -> int:
        return (self.block_bytes * 8) // self.bits

    @property
    def nblocks(self) -> int:
        return -(-self.n // self.elements_per_block)

    def block_range(self, ordinal: int) -> tuple[int, int]:
        """Element span ``[start, stop)`` of one block."""
        epb = self.elements_per_block
        start = ordinal * epb
        return start, min(start + epb, self.n)

    def covering_blocks(self, start: int, count: int) -> range:
        """Ordinals of the blocks containing ``[start, start + count)``."""
        if count <= 0:
            return range(0)
        epb = self.elements_per_block
        return range(start // epb, (start + count - 1) // epb + 1)


@dataclass(frozen=True)
class IndexBlock:
    """One byte-aligned block of bit-packed indices."""

    ordinal: int
    packed_bits: bytes
    element_count: int


@dataclass(frozen=True)
class OffsetTables:
    """Random-access tables: compressed-block offsets and incompressible prefix counts."""

    index_offsets: np.ndarray
    incompressible_prefix: np.ndarray


def packed_size(element_count: int, bits: int) -> int:
    return (element_count * bits + 7) // 8


def pack_block(indices: np.ndarray, bits: int) -> bytes:
    """Bit-pack indices MSB-first, ``bits`` per value, zero-padded to a byte."""
    idx = np.asarray(indices)
    if idx.size == 0:
        return b""
    if idx.min() < 0 or int(idx.max()) >= (1 << bits):
        raise CodecError(f"index out of range for {bits}-bit packing")
    shifts = np.arange(bits - 1, -1, -1, dtype=np.uint64)
    bit_rows = (idx.astype(np.uint64)[:, None] >> shifts) & np.uint64(1)
    return np.packbits(bit_rows.astype(np.uint8).ravel()).tobytes()


def unpack_block(data: bytes, bits: int, element_count: int) -> np.ndarray:
    """Exact inverse of :func:`pack_block`; trailing pad bits are ignored."""
    expected = packed_size(element_count, bits)
    if len(data) < expected:
        raise CodecError(f"short buffer: {len(data)} bytes, need {expected}")
    if element_count == 0:
        return np.zeros(0, dtype=np.int32)
    raw = np.frombuffer(data, dtype=np.uint8, count=expected)
    bit_rows = np.unpackbits(raw, count=element_count * bits)
    weights = np.left_shift(np.int32(1), np.arange(bits - 1, -1, -1, dtype=np.int32))
    return bit_rows.reshape(element_count, bits) @ weights


def compress_block(packed: bytes, level: int = DEFAULT_DEFLATE_LEVEL) -> bytes:
    """Deflate one packed block as a raw RFC 1951 stream (no zlib wrapper)."""
    if not 0 <= level <= 9:
        raise CodecError(f"deflate level {level} outside 0..9")
    try:
        c = zlib.compressobj(level, zlib.DEFLATED, -zlib.MAX_WBITS)
        return c.compress(packed) + c.flush()
    except zlib.error as exc:  # pragma: no cover - zlib rarely fails here
        raise CodecError(f"deflate failed: {exc}") from exc


def decompress_block(data: bytes) -> bytes:
    """Inflate one raw deflate stream produced by :func:`compress_block`."""
    try:
        d = zlib.decompressobj(-zlib.MAX_WBITS)
        out = d.decompress(data) + d.flush()
    except zlib.error as exc:
        raise CodecError(f"inflate failed: {exc}") from exc
    if not d.eof or d.unused_data:
        raise CodecError("corrupt block: truncated or trailing bytes")
    return out


def iter_index_blocks(full_indices: np.ndarray, layout: BlockLayout):
    """Yield the packed :class:`IndexBlock` for each block ordinal in order."""
    for b in range(layout.nblocks):
        start, stop = layout.block_range(b)
        yield IndexBlock(
            ordinal=b,
            packed_bits=pack_block(full_indices[start:stop], layout.bits),
            element_count=stop - start,
        )


def build_blocks(
    flags: np.ndarray,
    indices: np.ndarray,
    values: np.ndarray,
    layout: BlockLayout,
    level: int = DEFAULT_DEFLATE_LEVEL,
):
    """Assemble compressed index blocks plus their offset tables.

    ``flags`` marks compressible elements, ``indices`` their center ids, and
    ``values`` holds the incompressible elements in element order.  Returns
    ``(compressed_blocks, offset_tables, values)``.
    """
    if flags.shape[0] != layout.n or indices.shape[0] != layout.n:
        raise ValueError("stream length does not match the layout")
    n_inc = int(layout.n - np.count_nonzero(flags))
    if values.shape[0] != n_inc:
        raise ValueError(f"expected {n_inc} incompressible values, got {values.shape[0]}")

    sentinel = (1 << layout.bits) - 1
    full = np.where(flags, indices, sentinel).astype(np.int64)

    blocks = [
        compress_block(blk.packed_bits, level)
        for blk in iter_index_blocks(full, layout)
    ]
    sizes = np.fromiter((len(b) for b in blocks), dtype=np.uint64, count=len(blocks))
    offsets = np.zeros(layout.nblocks, dtype=np.uint64)
    np.cumsum(sizes[:-1], out=offsets[1:])

    inc_pos = np.flatnonzero(~flags)
    per_block = np.bincount(inc_pos // layout.elements_per_block,
                            minlength=layout.nblocks)
    prefix = np.zeros(layout.nblocks, dtype=np.uint64)
    np.cumsum(per_block[:-1], out=prefix[1:])

    return blocks, OffsetTables(index_offsets=offsets, incompressible_prefix=prefix), values


def _block_bytes_of(variable, ordinal: int) -> bytes:
    offsets = variable.index_offsets
    lo = int(offsets[ordinal])
    hi = int(offsets[ordinal + 1]) if ordinal + 1 < len(offsets) else len(variable.index_table)
    return variable.index_table[lo:hi]


def decode_block_indices(variable, ordinal: int) -> np.ndarray:
    """Indices of one block, inflated and unpacked."""
    start = ordinal * variable.elements_per_block
    stop = min(start + variable.elements_per_block, variable.n)
    packed = decompress_block(_block_bytes_of(variable, ordinal))
    return unpack_block(packed, variable.bits, stop - start)


def decode_all_indices(variable) -> np.ndarray:
    """Full index stream of a compressed variable (sentinel values included)."""
    parts = [decode_block_indices(variable, b) for b in range(variable.nblocks)]
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(parts)


def _decode_range(variable, start, count, base, block_bytes, inc_slice) -> np.ndarray:
    """Shared range decoder over pluggable block-byte / verbatim-value sources."""
    if start < 0 or count < 0 or start + count > variable.n:
        raise ValueError(f"range [{start}, {start + count}) outside 0..{variable.n}")
    base = np.asarray(base)
    if base.shape[0] != count:
        raise ValueError(f"base slice holds {base.shape[0]} elements, need {count}")
    if count == 0:
        return np.zeros(0, dtype=variable.numpy_dtype)

    epb = variable.elements_per_block
    sentinel = (1 << variable.bits) - 1
    first = start // epb
    last = (start + count - 1) // epb

    span_start = first * epb
    span_stop = min((last + 1) * epb, variable.n)
    span = np.empty(span_stop - span_start, dtype=np.int32)
    for b in range(first, last + 1):
        blk_start, blk_stop = b * epb, min((b + 1) * epb, variable.n)
        packed = decompress_block(block_bytes(b))
        span[blk_start - span_start:blk_stop - span_start] = \
            unpack_block(packed, variable.bits, blk_stop - blk_start)
    lo = start - span_start
    indices = span[lo:lo + count]

    # Seek into the incompressible table: verbatim values before the first
    # requested element = prefix of the first block + sentinels ahead of it
    # inside that block.
    inc_before = int(variable.incompressible_prefix[first])
    inc_before += int(np.count_nonzero(span[:lo] == sentinel))
    n_inc = int(np.count_nonzero(indices == sentinel))
    inc_values = inc_slice(inc_before, n_inc)

    centers = variable.centers.astype(np.float64, copy=False)
    return core.reconstruct(base, centers, indices, inc_values, variable.bits)


def partial_decode(
    variable,
    start: int,
    count: int,
    base_reconstructed: np.ndarray,
) -> np.ndarray:
    """Reconstruct ``[start, start + count)`` touching only the covering blocks.

    ``base_reconstructed`` must hold exactly the matching slice of the
    previous snapshot's reconstruction.  The output is bit-identical to the
    same slice of a full decompression.
    """
    return _decode_range(
        variable, start, count, base_reconstructed,
        lambda b: _block_bytes_of(variable, b),
        lambda lo, n: variable.incompressible_table[lo:lo + n],
    )


def partial_decode_file(handle, start: int, count: int,
                        base_reconstructed: np.ndarray) -> np.ndarray:
    """Like :func:`partial_decode`, reading straight from an on-disk variable.

    ``handle`` comes from :func:`nmk.container.scan_file`; only the byte
    ranges of the covering index blocks and the needed verbatim values are
    read, never the whole table.
    """
    variable = handle.variable
    offsets = variable.index_offsets

    def block_bytes(b: int) -> bytes:
        lo = int(offsets[b])
        hi = int(offsets[b + 1]) if b + 1 < len(offsets) else handle.index_table_len
        return handle.read_index_range(lo, hi)

    return _decode_range(variable, start, count, base_reconstructed,
                         block_bytes, handle.read_incompressible_range)
