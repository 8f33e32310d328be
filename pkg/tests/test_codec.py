import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmk import codec
from nmk.codec import (
    BlockLayout,
    CodecError,
    build_blocks,
    compress_block,
    decompress_block,
    pack_block,
    partial_decode,
    unpack_block,
)
from nmk.container import CompressedVariable, dtype_code_for


class TestPackUnpack:
    def test_two_nibbles(self):
        assert pack_block(np.array([0xA, 0x5]), 4) == b"\xa5"

    def test_three_bit_padding(self):
        assert pack_block(np.array([7, 7, 7]), 3) == b"\xff\x80"

    def test_eight_bit_identity(self):
        data = np.arange(256)
        assert pack_block(data, 8) == bytes(range(256))

    def test_out_of_range(self):
        with pytest.raises(CodecError):
            pack_block(np.array([8]), 3)
        with pytest.raises(CodecError):
            pack_block(np.array([-1]), 3)

    def test_unpack_two_nibbles(self):
        assert list(unpack_block(b"\xa5", 4, 2)) == [0xA, 0x5]

    def test_unpack_padded(self):
        assert list(unpack_block(b"\xff\x80", 3, 3)) == [7, 7, 7]

    def test_unpack_short_buffer(self):
        with pytest.raises(CodecError):
            unpack_block(b"\xff", 3, 3)

    def test_empty(self):
        assert pack_block(np.zeros(0, dtype=np.int64), 5) == b""
        assert list(unpack_block(b"", 5, 0)) == []

    @given(
        st.integers(min_value=2, max_value=16),
        st.lists(st.integers(min_value=0, max_value=2**16 - 1), max_size=300),
    )
    @settings(max_examples=80, deadline=None)
    def test_round_trip(self, bits, raw):
        indices = np.array([v % (1 << bits) for v in raw], dtype=np.int64)
        packed = pack_block(indices, bits)
        assert len(packed) == (len(indices) * bits + 7) // 8
        out = unpack_block(packed, bits, len(indices))
        np.testing.assert_array_equal(out, indices)


class TestDeflate:
    def test_redundant_block_shrinks(self):
        block = bytes(1024)
        assert len(compress_block(block)) < len(block)

    def test_round_trip_random(self):
        rng = np.random.default_rng(2)
        data = rng.integers(0, 256, 4096, dtype=np.uint8).tobytes()
        assert decompress_block(compress_block(data)) == data

    def test_skewed_indices_compress_well(self):
        # mostly-identical indices (one dominant bin) deflate far below 1x
        rng = np.random.default_rng(3)
        idx = np.where(rng.uniform(size=20000) < 0.8, 3,
                       rng.integers(0, 16, 20000))
        packed = pack_block(idx, 4)
        ratio = len(packed) / len(compress_block(packed))
        assert ratio > 2.0

    def test_corrupt_stream(self):
        with pytest.raises(CodecError):
            decompress_block(b"\x00\x01\x02this is not deflate")

    def test_trailing_garbage(self):
        good = compress_block(b"hello world" * 10)
        with pytest.raises(CodecError):
            decompress_block(good + b"extra")

    def test_level_range(self):
        with pytest.raises(CodecError):
            compress_block(b"x", level=10)

    def test_levels_round_trip(self):
        data = bytes(range(256)) * 4
        for level in (0, 1, 9):
            assert decompress_block(compress_block(data, level)) == data


class TestBlockLayout:
    def test_mib_block_geometry(self):
        layout = BlockLayout(block_bytes=1 << 20, bits=13, n=3_758_400)
        assert layout.elements_per_block == 645_277
        assert layout.nblocks == 6

    def test_quarter_mib_blocks(self):
        layout = BlockLayout(block_bytes=256 * 1024, bits=13, n=1_000_000)
        assert layout.elements_per_block == (256 * 1024 * 8) // 13

    def test_single_block(self):
        layout = BlockLayout(block_bytes=1 << 20, bits=8, n=100)
        assert layout.nblocks == 1
        assert layout.block_range(0) == (0, 100)

    def test_last_block_short(self):
        layout = BlockLayout(block_bytes=4096, bits=8, n=4096 * 2 + 7)
        assert layout.nblocks == 3
        assert layout.block_range(2) == (8192, 8199)

    def test_covering_blocks(self):
        layout = BlockLayout(block_bytes=4096, bits=8, n=4096 * 4)
        assert list(layout.covering_blocks(0, 4096)) == [0]
        assert list(layout.covering_blocks(4095, 2)) == [0, 1]
        assert list(layout.covering_blocks(0, 4096 * 4)) == [0, 1, 2, 3]
        assert list(layout.covering_blocks(100, 0)) == []

    def test_touched_blocks_monotone_in_count(self):
        layout = BlockLayout(block_bytes=4096, bits=8, n=4096 * 8)
        touched = [len(layout.covering_blocks(1000, c)) for c in range(0, 20000, 37)]
        assert all(b >= a for a, b in zip(touched, touched[1:]))


def make_variable(flags, indices, values, bits=4, block_bytes=4096,
                  dtype=np.float64, tolerance=1e-3):
    n = len(flags)
    layout = BlockLayout(block_bytes=block_bytes, bits=bits, n=n)
    blocks, tables, inc = build_blocks(flags, indices, values, layout)
    return CompressedVariable(
        name="v",
        dtype_code=dtype_code_for(np.dtype(dtype)),
        n=n,
        bits=bits,
        tolerance=tolerance,
        elements_per_block=layout.elements_per_block,
        nblocks=layout.nblocks,
        n_incompressible=len(inc),
        centers=np.array([-0.25, 0.0, 0.5], dtype=dtype),
        index_offsets=tables.index_offsets,
        incompressible_prefix=tables.incompressible_prefix,
        index_table=b"".join(blocks),
        incompressible_table=np.asarray(values, dtype=dtype),
    ), layout


class TestBuildBlocks:
    def test_single_block_tables(self):
        flags = np.array([True, True, False, True])
        idx = np.array([0, 1, 0, 2])
        values = np.array([9.5])
        blocks, tables, inc = build_blocks(
            flags, idx, values, BlockLayout(block_bytes=4096, bits=4, n=4)
        )
        assert len(blocks) == 1
        assert list(tables.index_offsets) == [0]
        assert list(tables.incompressible_prefix) == [0]
        assert list(inc) == [9.5]

    def test_sentinel_written(self):
        flags = np.array([True, False])
        blocks, _, _ = build_blocks(
            flags, np.array([1, 0]), np.array([7.0]),
            BlockLayout(block_bytes=4096, bits=4, n=2),
        )
        unpacked = unpack_block(decompress_block(blocks[0]), 4, 2)
        assert list(unpacked) == [1, 15]

    def test_prefix_counts_edges(self):
        # incompressible at both ends: every later block sees prefix 1,
        # and the totals add up
        n = 4096 * 3
        flags = np.ones(n, dtype=bool)
        flags[0] = flags[-1] = False
        idx = np.zeros(n, dtype=np.int64)
        values = np.array([1.0, 2.0])
        layout = BlockLayout(block_bytes=4096, bits=8, n=n)
        _, tables, _ = build_blocks(flags, idx, values, layout)
        assert list(tables.incompressible_prefix) == [0, 1, 1]

    def test_offset_consistency(self):
        rng = np.random.default_rng(7)
        n = 4096 * 5 + 123
        flags = rng.uniform(size=n) < 0.9
        idx = rng.integers(0, 3, n)
        values = rng.normal(size=int((~flags).sum()))
        layout = BlockLayout(block_bytes=4096, bits=4, n=n)
        blocks, tables, _ = build_blocks(flags, idx, values, layout)
        for b in range(layout.nblocks - 1):
            assert tables.index_offsets[b + 1] - tables.index_offsets[b] == len(blocks[b])
        assert tables.index_offsets[-1] + len(blocks[-1]) == sum(len(b) for b in blocks)

    def test_value_count_mismatch(self):
        with pytest.raises(ValueError):
            build_blocks(
                np.array([True, False]), np.array([0, 0]), np.zeros(0),
                BlockLayout(block_bytes=4096, bits=4, n=2),
            )


class TestPartialDecode:
    def _variable(self, n=4096 * 6 + 500, seed=11):
        rng = np.random.default_rng(seed)
        flags = rng.uniform(size=n) < 0.95
        idx = rng.integers(0, 3, n)
        values = rng.normal(size=int((~flags).sum()))
        variable, layout = make_variable(flags, idx, values, bits=4,
                                         block_bytes=4096)
        base = rng.uniform(0.5, 2.0, n)
        return variable, layout, base

    def test_full_range_equals_whole(self):
        variable, _, base = self._variable()
        full = partial_decode(variable, 0, variable.n, base)
        again = partial_decode(variable, 0, variable.n, base)
        np.testing.assert_array_equal(full, again)

    def test_sub_ranges_match_full(self):
        variable, _, base = self._variable()
        full = partial_decode(variable, 0, variable.n, base)
        rng = np.random.default_rng(13)
        for _ in range(25):
            start = int(rng.integers(0, variable.n))
            count = int(rng.integers(0, variable.n - start + 1))
            part = partial_decode(variable, start, count, base[start:start + count])
            np.testing.assert_array_equal(part, full[start:start + count])

    def test_empty_range(self):
        variable, _, base = self._variable()
        out = partial_decode(variable, 10, 0, base[10:10])
        assert out.size == 0

    def test_out_of_bounds(self):
        variable, _, base = self._variable()
        with pytest.raises(ValueError):
            partial_decode(variable, variable.n - 1, 2, base[-2:])

    def test_base_slice_length_checked(self):
        variable, _, base = self._variable()
        with pytest.raises(ValueError):
            partial_decode(variable, 0, 10, base[:5])

    def test_block_local_decodability(self):
        # one block decodes from its own bytes + tables alone
        variable, layout, base = self._variable()
        assert layout.nblocks >= 3
        b = layout.nblocks - 2
        start, stop = layout.block_range(b)
        lo = int(variable.index_offsets[b])
        hi = int(variable.index_offsets[b + 1])
        own_bytes = variable.index_table[lo:hi]
        idx = unpack_block(decompress_block(own_bytes), variable.bits, stop - start)
        sentinel = (1 << variable.bits) - 1
        n_inc = int((idx == sentinel).sum())
        inc_lo = int(variable.incompressible_prefix[b])
        from nmk.core import reconstruct

        out = reconstruct(
            base[start:stop], variable.centers.astype(np.float64), idx,
            variable.incompressible_table[inc_lo:inc_lo + n_inc], variable.bits,
        )
        full = partial_decode(variable, 0, variable.n, base)
        np.testing.assert_array_equal(out, full[start:stop])

    def test_corrupt_block_surfaces_codec_error(self):
        variable, _, base = self._variable()
        broken = CompressedVariable(
            **{**variable.__dict__, "index_table": b"\x00" * len(variable.index_table)}
        )
        with pytest.raises(CodecError):
            partial_decode(broken, 0, variable.n, base)


def test_index_path_lossless_for_all_bit_lengths():
    rng = np.random.default_rng(17)
    for bits in range(2, 17):
        idx = rng.integers(0, 1 << bits, 997)
        packed = pack_block(idx, bits)
        out = unpack_block(decompress_block(compress_block(packed)), bits, 997)
        np.testing.assert_array_equal(out, idx)


class TestPartialDecodeFile:
    def _on_disk(self, tmp_path):
        from nmk import container, pipeline
        from nmk.core import TemporalPair

        rng = np.random.default_rng(23)
        n = 4096 * 6
        base = rng.uniform(1.0, 2.0, n).astype(np.float32)
        curr = (base.astype(np.float64)
                * (1 + rng.uniform(0.0, 0.02, n))).astype(np.float32)
        pair = TemporalPair(base, curr)
        variable, _ = pipeline.compress_pair(
            pair, pipeline.PipelineConfig(bits=8, block_bytes=4096)
        )
        path = tmp_path / "v.nmk"
        container.write_file(path, [variable])
        return path, variable, base

    def test_matches_in_memory_decode(self, tmp_path):
        from nmk import container

        path, variable, base = self._on_disk(tmp_path)
        (handle,) = container.scan_file(path)
        full = partial_decode(variable, 0, variable.n, base)
        for start, count in ((0, variable.n), (5000, 3000), (23000, 1)):
            got = codec.partial_decode_file(handle, start, count,
                                            base[start:start + count])
            np.testing.assert_array_equal(got, full[start:start + count])

    def test_reads_only_covering_blocks(self, tmp_path):
        # clobber the first block's bytes on disk: ranges over later blocks
        # must still decode, proving untouched blocks are never read
        from nmk import container

        path, variable, base = self._on_disk(tmp_path)
        (handle,) = container.scan_file(path)
        first_block_len = int(variable.index_offsets[1])
        data = bytearray(path.read_bytes())
        pos = handle.index_table_pos
        data[pos:pos + first_block_len] = b"\xff" * first_block_len
        path.write_bytes(bytes(data))

        (handle,) = container.scan_file(path)
        epb = variable.elements_per_block
        start, count = epb * 2, epb
        full = partial_decode(variable, start, count, base[start:start + count])
        got = codec.partial_decode_file(handle, start, count,
                                        base[start:start + count])
        np.testing.assert_array_equal(got, full)
        with pytest.raises(CodecError):
            codec.partial_decode_file(handle, 0, epb, base[:epb])
