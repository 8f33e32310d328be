"""Compression pipeline: phased execution over a shared-memory worker pool.

Each phase runs data-parallel over contiguous element shards with a barrier
between phases, mirroring a distributed design: local compute feeds
associative reductions (min/max, histogram merge), every global decision
(index length, bin selection) is taken once from the reduced state, block
boundaries come from a prefix sum over shard counts, and block owners pack
and deflate independently.  Output bytes are a pure function of the input
and the configuration; the worker count never changes them.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import binning, codec, container, core
from .core import ChangeRatioField, TemporalPair, Tolerance

DEFAULT_TOLERANCE = 1e-3

_AUTO_BITS_FALLBACK = 2  # used when no element has a well-defined ratio


class PipelineError(Exception):
    """Failure inside a pipeline phase; ``phase`` names where."""

    def __init__(self, phase: str, message: str):
        super().__init__(f"phase {phase}: {message}")
        self.phase = phase


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for one compression run."""

    workers: int = 1
    tolerance: float = DEFAULT_TOLERANCE
    strategy: str = "top_k"
    bits: int | None = None  # None selects B automatically
    block_bytes: int = codec.DEFAULT_BLOCK_BYTES
    deflate_level: int = codec.DEFAULT_DEFLATE_LEVEL

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.block_bytes < codec.MIN_BLOCK_BYTES:
            raise ValueError(f"block_bytes must be >= {codec.MIN_BLOCK_BYTES}")
        if self.strategy not in binning.STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.bits is not None and not binning.MIN_BITS <= self.bits <= binning.MAX_BITS:
            raise ValueError(f"bits must be in [{binning.MIN_BITS}, {binning.MAX_BITS}]")
        if not 0 <= self.deflate_level <= 9:
            raise ValueError("deflate level must be in 0..9")
        Tolerance(self.tolerance)  # validates


@dataclass
class PhaseTimings:
    """Wall-clock seconds per pipeline phase."""

    change_ratio: float = 0.0
    binning: float = 0.0
    assign_index: float = 0.0
    index_alignment: float = 0.0
    bits_packing: float = 0.0
    zlib: float = 0.0
    io: float = 0.0

    PHASES = ("change_ratio", "binning", "assign_index", "index_alignment",
              "bits_packing", "zlib", "io")

    def total(self) -> float:
        return sum(getattr(self, p) for p in self.PHASES)

    def records(self) -> list[str]:
        """Line-oriented ``timing.<phase>=<seconds>`` records."""
        return [f"timing.{p}={getattr(self, p):.6f}" for p in self.PHASES]


def _shards(n: int, workers: int) -> list[slice]:
    """Contiguous shards differing by at most one element."""
    bounds = np.linspace(0, n, min(workers, n) + 1).astype(np.int64)
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


class _Pool:
    """Barrier-style map over shards; workers=1 stays on the calling thread."""

    def __init__(self, workers: int):
        self.workers = workers
        self._executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def map(self, phase: str, fn, items) -> list:
        try:
            if self._executor is None:
                return [fn(it) for it in items]
            return list(self._executor.map(fn, items))
        except Exception as exc:
            if isinstance(exc, PipelineError):
                raise
            raise PipelineError(phase, str(exc)) from exc

    def shutdown(self) -> None:
        if self._executor is not None:
            self._executor.shutdown()


def _quantize_centers(centers: np.ndarray, dtype: np.dtype) -> np.ndarray:
    """Round centers to the storage dtype so encode and decode agree exactly.

    Centers beyond the dtype's range are dropped: they cannot represent any
    ratio within the bound once stored.  Falls back to a lone zero center
    when nothing survives (everything then stores verbatim).
    """
    with np.errstate(over="ignore", invalid="ignore"):
        rounded = np.unique(centers.astype(dtype).astype(np.float64))
    rounded = rounded[np.isfinite(rounded)]
    if rounded.size == 0:
        return np.array([0.0])
    return rounded


def _build_model(field: ChangeRatioField, hist, config: PipelineConfig,
                 n: int, width: int) -> binning.BinModel:
    tol = Tolerance(config.tolerance)
    if config.bits is not None:
        bits = config.bits
    else:
        bits, _ = binning.select_index_length(hist, n, width)
    if config.strategy == "top_k":
        return binning.top_k_bins(hist, bits)
    if config.strategy == "equal_width":
        return binning.equal_width_bins(field.min_ratio, field.max_ratio, bits, tol)
    if config.strategy == "log_scale":
        return binning.log_scale_bins(field, bits, tol)
    return binning.kmeans_bins(field, bits, tol)


def _roundtrip_filter(flags, idx, centers, base_slice, cur_slice, tolerance):
    """Keep an element compressible only if the decoder's arithmetic lands
    within the bound.

    This re-runs the exact reconstruction the decoder will perform (float64
    multiply, cast to the storage dtype) and compares against
    ``tolerance * |base|``; elements whose rounded reconstruction escapes the
    bound are stored verbatim instead.  Without this, values sitting exactly
    on a bin edge could round just past the guarantee.
    """
    if not flags.any():
        return flags
    b64 = base_slice.astype(np.float64, copy=False)
    c64 = cur_slice.astype(np.float64, copy=False)
    with np.errstate(over="ignore", invalid="ignore"):
        rec = ((1.0 + centers[idx]) * b64).astype(base_slice.dtype).astype(np.float64)
        ok = np.abs(rec - c64) <= tolerance * np.abs(b64)
    return flags & ok


def _degenerate_model(config: PipelineConfig) -> binning.BinModel:
    bits = config.bits if config.bits is not None else _AUTO_BITS_FALLBACK
    return binning.BinModel(centers=np.array([0.0]), bits=bits,
                            tolerance=Tolerance(config.tolerance),
                            strategy=config.strategy)


def compress_pair(
    pair: TemporalPair,
    config: PipelineConfig,
    name: str = "var0",
) -> tuple[container.CompressedVariable, PhaseTimings]:
    """Compress ``pair.current`` against ``pair.base``.

    Returns the compressed variable plus per-phase wall times.  The variable
    is identical for every ``config.workers`` value.
    """
    timings = PhaseTimings()
    n = pair.n
    shards = _shards(n, config.workers)
    pool = _Pool(config.workers)
    try:
        # Phase 1: local change ratios + min/max reduction.
        t0 = time.perf_counter()
        ratios = np.empty(n, dtype=np.float64)
        valid = np.empty(n, dtype=bool)

        def _ratio_shard(sl: slice):
            r, v = core.ratio_arrays(pair.base[sl], pair.current[sl])
            ratios[sl] = r
            valid[sl] = v
            if v.any():
                vr = r[v] if not v.all() else r
                return float(vr.min()), float(vr.max())
            return None

        extremes = [e for e in pool.map("change_ratio", _ratio_shard, shards) if e]
        timings.change_ratio = time.perf_counter() - t0

        degenerate = not extremes
        t0 = time.perf_counter()
        if degenerate:
            field = ChangeRatioField(ratios=ratios, valid=valid,
                                     min_ratio=0.0, max_ratio=0.0)
            model = _degenerate_model(config)
        else:
            gmin = min(e[0] for e in extremes)
            gmax = max(e[1] for e in extremes)
            field = ChangeRatioField(ratios=ratios, valid=valid,
                                     min_ratio=gmin, max_ratio=gmax)

            # Phase 2: local histograms, element-wise count reduction, then
            # the global decisions (B, centers) from the merged histogram.
            width2e = 2.0 * config.tolerance

            def _hist_shard(sl: slice):
                v = valid[sl]
                r = ratios[sl][v] if not v.all() else ratios[sl]
                return binning.histogram_of(r, gmin, width2e)

            parts = pool.map("binning", _hist_shard, shards)
            hist = binning.merge_histograms([p for p in parts if p.nonempty])
            try:
                model = _build_model(field, hist, config, n, pair.width)
            except Exception as exc:
                raise PipelineError("binning", str(exc)) from exc
            model = replace(model, centers=_quantize_centers(model.centers, pair.dtype))
        timings.binning = time.perf_counter() - t0

        # Phase 3a: per-shard index assignment under the global model.
        t0 = time.perf_counter()
        centers64 = model.centers
        flags = np.empty(n, dtype=bool)
        indices = np.empty(n, dtype=np.int64)

        def _assign_shard(sl: slice):
            shard_field = ChangeRatioField(
                ratios=ratios[sl], valid=valid[sl],
                min_ratio=field.min_ratio, max_ratio=field.max_ratio,
            )
            f, ix = binning.compressible_mask(shard_field, model)
            f = _roundtrip_filter(f, ix, centers64, pair.base[sl],
                                  pair.current[sl], config.tolerance)
            flags[sl] = f
            indices[sl] = ix
            return int(f.size - np.count_nonzero(f))

        shard_inc = pool.map("assign_index", _assign_shard, shards)
        timings.assign_index = time.perf_counter() - t0

        # Phase 3b: block alignment.  An exclusive prefix sum over shard
        # counts yields the global element offsets (the scan step); block
        # ownership is a contiguous split, so only boundary-crossing runs
        # move between neighboring shards' territory.
        t0 = time.perf_counter()
        shard_offsets = np.zeros(len(shards) + 1, dtype=np.int64)
        np.cumsum([sl.stop - sl.start for sl in shards], out=shard_offsets[1:])
        assert int(shard_offsets[-1]) == n
        total_inc = int(sum(shard_inc))

        layout = codec.BlockLayout(block_bytes=config.block_bytes,
                                   bits=model.bits, n=n)
        sentinel = model.sentinel
        full_idx = np.where(flags, indices, sentinel)
        owners = [rng for rng in np.array_split(np.arange(layout.nblocks),
                                                min(config.workers, layout.nblocks))
                  if rng.size]
        inc_values = pair.current[~flags]
        inc_pos = np.flatnonzero(~flags)
        per_block_inc = np.bincount(inc_pos // layout.elements_per_block,
                                    minlength=layout.nblocks)
        prefix = np.zeros(layout.nblocks, dtype=np.uint64)
        np.cumsum(per_block_inc[:-1], out=prefix[1:])
        timings.index_alignment = time.perf_counter() - t0

        # Phase 4a: owners bit-pack their blocks.
        t0 = time.perf_counter()
        packed: list[bytes | None] = [None] * layout.nblocks

        def _pack_blocks(block_ids: np.ndarray):
            for b in block_ids:
                start, stop = layout.block_range(int(b))
                packed[b] = codec.pack_block(full_idx[start:stop], model.bits)

        pool.map("bits_packing", _pack_blocks, owners)
        timings.bits_packing = time.perf_counter() - t0

        # Phase 4b: owners deflate, then blocks are assembled in ordinal order.
        t0 = time.perf_counter()
        deflated: list[bytes | None] = [None] * layout.nblocks

        def _deflate_blocks(block_ids: np.ndarray):
            for b in block_ids:
                deflated[b] = codec.compress_block(packed[b], config.deflate_level)

        pool.map("zlib", _deflate_blocks, owners)
        sizes = np.fromiter((len(b) for b in deflated), dtype=np.uint64,
                            count=layout.nblocks)
        offsets = np.zeros(layout.nblocks, dtype=np.uint64)
        np.cumsum(sizes[:-1], out=offsets[1:])
        index_table = b"".join(deflated)
        timings.zlib = time.perf_counter() - t0
    finally:
        pool.shutdown()

    variable = container.CompressedVariable(
        name=name,
        dtype_code=container.dtype_code_for(pair.dtype),
        n=n,
        bits=model.bits,
        tolerance=config.tolerance,
        elements_per_block=layout.elements_per_block,
        nblocks=layout.nblocks,
        n_incompressible=total_inc,
        centers=model.centers.astype(pair.dtype),
        index_offsets=offsets,
        incompressible_prefix=prefix,
        index_table=index_table,
        incompressible_table=inc_values,
    )
    variable.validate()
    return variable, timings


def decompress(
    variable: container.CompressedVariable,
    base_reconstructed: np.ndarray,
    rng: tuple[int, int] | None = None,
) -> np.ndarray:
    """Reconstruct the full variable or the slice ``rng = (start, count)``."""
    if rng is None:
        start, count = 0, variable.n
    else:
        start, count = rng
    base = np.asarray(base_reconstructed)
    if rng is None and base.shape[0] != variable.n:
        raise ValueError("base snapshot length mismatch")
    return codec.partial_decode(variable, start, count, base)


def compress_series(
    snapshots,
    config: PipelineConfig,
    name: str = "var0",
) -> tuple[np.ndarray, list[container.CompressedVariable]]:
    """Compress a snapshot chain; returns the raw first snapshot plus one
    compressed variable per later snapshot.

    Snapshot i is encoded against the *reconstruction* of snapshot i-1, so
    the per-element bound holds at every link regardless of chain length.
    """
    snapshots = [np.ascontiguousarray(s) for s in snapshots]
    if len(snapshots) < 2:
        raise ValueError("a series needs at least two snapshots")
    n = snapshots[0].shape[0]
    for i, s in enumerate(snapshots[1:], start=1):
        if s.shape[0] != n:
            raise ValueError(f"snapshot {i} length {s.shape[0]} != {n}")
        if s.dtype != snapshots[0].dtype:
            raise ValueError(f"snapshot {i} dtype differs")

    first = snapshots[0].copy()
    reconstructed = first
    variables = []
    for i, snap in enumerate(snapshots[1:], start=1):
        pair = TemporalPair(reconstructed, snap)
        variable, _ = compress_pair(pair, config, name=f"{name}.{i:04d}")
        variables.append(variable)
        reconstructed = decompress(variable, reconstructed)
    return first, variables
