"""Command-line front end.

Verbs: ``compress``, ``decompress``, ``describe``, ``verify``, ``bench``,
``analytic-cr``.  Reports are line-oriented ``key=value`` records on
stdout; raw array data only ever goes to files.  Exit codes: 0 success,
1 I/O failure, 2 validation failure, 3 internal error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import binning, codec, container, core, generators, pipeline

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2
EXIT_INTERNAL = 3

WORKERS_ENV = "NUMARCK_WORKERS"

_STRATEGY_FLAGS = {
    "topk": "top_k",
    "equal": "equal_width",
    "log": "log_scale",
    "kmeans": "kmeans",
}
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class CliError(Exception):
    def __init__(self, exit_code: int, message: str):
        super().__init__(message)
        self.exit_code = exit_code


def load_raw_array(path: str, dtype_flag: str, count: int | None = None) -> np.ndarray:
    """Read a headerless little-endian float array."""
    dt = _DTYPES[dtype_flag]
    try:
        size = os.path.getsize(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot stat {path}: {exc}") from exc
    if count is None:
        if size % dt.itemsize:
            raise CliError(
                EXIT_VALIDATION,
                f"{path}: size {size} not divisible by element width {dt.itemsize}",
            )
        count = size // dt.itemsize
    elif count * dt.itemsize > size:
        raise CliError(EXIT_VALIDATION, f"{path}: shorter than {count} elements")
    try:
        return np.fromfile(path, dtype=dt, count=count)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc


def _write_raw(path: str, array: np.ndarray) -> None:
    try:
        array.tofile(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc}") from exc


def _workers(args) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliError(EXIT_VALIDATION, f"{WORKERS_ENV}={env!r} is not an integer")
    return args.workers


def _parse_bits(value: str) -> int | None:
    if value == "auto":
        return None
    try:
        return int(value)
    except ValueError:
        raise CliError(EXIT_VALIDATION, f"--bits must be 'auto' or an integer, got {value!r}")


def analytic_compression_ratio(
    bits_per_element: float,
    index_bits: int,
    deflate_ratio: float,
    alpha: float,
) -> float:
    """Back-of-envelope compression ratio for an index-coded variable.

    Compressible elements cost an index that the lossless backend shrinks by
    ``deflate_ratio``; incompressible ones cost a sentinel index (assumed
    unshrinkable, being scattered) plus their raw value.
    """
    per_element = (1.0 - alpha) * (index_bits / deflate_ratio) \
        + alpha * (index_bits + bits_per_element)
    return bits_per_element / per_element


def cmd_compress(args) -> int:
    prev = load_raw_array(args.prev, args.dtype, args.count)
    curr = load_raw_array(args.curr, args.dtype, args.count)
    try:
        pair = core.TemporalPair(prev, curr)
        config = pipeline.PipelineConfig(
            workers=_workers(args),
            tolerance=args.error,
            strategy=_STRATEGY_FLAGS[args.strategy],
            bits=_parse_bits(args.bits),
            block_bytes=args.block_bytes,
            deflate_level=args.deflate_level,
        )
    except ValueError as exc:
        raise CliError(EXIT_VALIDATION, str(exc)) from exc

    variable, timings = pipeline.compress_pair(pair, config, name=args.name)
    t0 = time.perf_counter()
    written = container.write_file(args.out, [variable])
    timings.io = time.perf_counter() - t0

    print(f"n={variable.n}")
    print(f"bits={variable.bits}")
    print(f"centers={variable.k}")
    print(f"alpha={variable.alpha:.6f}")
    print(f"cr={variable.raw_bytes / written:.4f}")
    print(f"bytes={written}")
    for line in timings.records():
        print(line)
    return EXIT_OK


def _parse_range(text: str, n: int) -> tuple[int, int]:
    try:
        start_s, count_s = text.split(":", 1)
        start, count = int(start_s), int(count_s)
    except ValueError:
        raise CliError(EXIT_VALIDATION, f"--range must be START:COUNT, got {text!r}")
    if start < 0 or count < 0 or start + count > n:
        raise CliError(EXIT_VALIDATION, f"range [{start}, {start + count}) outside 0..{n}")
    return start, count


def _find_variable(handles, name):
    if name is None:
        return handles[0]
    for h in handles:
        if h.variable.name == name:
            return h
    raise CliError(EXIT_VALIDATION, f"no variable named {name!r} in file")


def cmd_decompress(args) -> int:
    try:
        handles = container.scan_file(args.nmk)
    except FileNotFoundError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    except container.ContainerError as exc:
        raise CliError(EXIT_VALIDATION, f"{exc.code}: {exc}") from exc
    if not handles:
        raise CliError(EXIT_VALIDATION, "file holds no variables")
    handle = _find_variable(handles, args.var)
    meta = handle.variable
    dtype_flag = "f32" if meta.dtype_code == container.DTYPE_F32 else "f64"

    if args.range is not None:
        start, count = _parse_range(args.range, meta.n)
    else:
        start, count = 0, meta.n

    prev = load_raw_array(args.prev, dtype_flag, args.count)
    if prev.shape[0] < start + count:
        raise CliError(EXIT_VALIDATION, "previous snapshot shorter than requested range")

    try:
        out = codec.partial_decode_file(handle, start, count,
                                        prev[start:start + count])
    except (codec.CodecError, ValueError) as exc:
        raise CliError(EXIT_VALIDATION, str(exc)) from exc
    except container.ContainerError as exc:
        raise CliError(EXIT_VALIDATION, f"{exc.code}: {exc}") from exc
    _write_raw(args.out, out)

    touched = len(range(start // meta.elements_per_block,
                        (start + count - 1) // meta.elements_per_block + 1)) if count else 0
    print(f"elements={count}")
    print(f"blocks_touched={touched}")
    return EXIT_OK


def cmd_describe(args) -> int:
    try:
        print(container.describe(args.nmk))
    except FileNotFoundError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    except container.ContainerError as exc:
        raise CliError(EXIT_VALIDATION, f"{exc.code}: {exc}") from exc
    return EXIT_OK


def cmd_verify(args) -> int:
    original = load_raw_array(args.original, args.dtype, args.count)
    reconstructed = load_raw_array(args.reconstructed, args.dtype, args.count)
    if original.shape != reconstructed.shape:
        raise CliError(EXIT_VALIDATION, "original and reconstructed lengths differ")
    try:
        handles = container.scan_file(args.nmk)
    except container.ContainerError as exc:
        raise CliError(EXIT_VALIDATION, f"{exc.code}: {exc}") from exc
    if not handles:
        raise CliError(EXIT_VALIDATION, "file holds no variables")
    meta = _find_variable(handles, args.var).variable

    file_bytes = os.path.getsize(args.nmk)
    report = core.verify(
        original, reconstructed,
        original_bytes=original.nbytes,
        compressed_bytes=file_bytes,
        alpha=meta.alpha,
    )
    print(f"cr={report.cr:.4f}")
    print(f"me={report.me:.3e}")
    print(f"max_rel_err={report.max_rel_err:.3e}")
    print(f"alpha={report.alpha:.6f}")
    print(f"zero_denominator={report.zero_denominator}")
    print(f"tolerance={meta.tolerance:g}")
    return EXIT_OK if report.max_rel_err <= meta.tolerance else EXIT_VALIDATION


def cmd_analytic_cr(args) -> int:
    cr = analytic_compression_ratio(
        args.bits_per_element, args.index_bits, args.deflate_ratio, args.alpha
    )
    print(f"analytic_cr={cr:.4f}")
    return EXIT_OK


def _bench_workers(limit: int) -> list[int]:
    out, w = [], 1
    while w <= limit:
        out.append(w)
        w *= 2
    return out


def cmd_bench(args) -> int:
    tol = args.error
    snaps = generators.temporal_series(args.elements, 1, seed=args.seed, dtype="f4")
    pair = core.TemporalPair(snaps[0], snaps[1])

    base_time = None
    for workers in _bench_workers(args.max_workers):
        config = pipeline.PipelineConfig(workers=workers, tolerance=tol)
        t0 = time.perf_counter()
        variable, timings = pipeline.compress_pair(pair, config)
        total = time.perf_counter() - t0
        if base_time is None:
            base_time = total
        print(f"bench.workers={workers} total={total:.4f} "
              f"speedup={base_time / total:.3f} "
              + " ".join(f"{p}={getattr(timings, p):.4f}" for p in timings.PHASES))
    print(f"bench.alpha={variable.alpha:.6f}")
    print(f"bench.bits={variable.bits}")

    # Binning-strategy comparison on the multimodal generator, with the DP
    # coverage oracle as the upper bound when the sample is small enough.
    sample_n = min(args.elements, args.strategy_sample)
    gb, gc = generators.multimodal_pair(sample_n, seed=args.seed)
    field = core.compute_change_ratios(core.TemporalPair(gb, gc))
    tolerance = core.Tolerance(tol)
    hist = binning.build_histogram(field, tolerance)
    bits = args.strategy_bits

    models = {
        "top_k": binning.top_k_bins(hist, bits),
        "kmeans": binning.kmeans_bins(field, bits, tolerance),
        "log_scale": binning.log_scale_bins(field, bits, tolerance),
        "equal_width": binning.equal_width_bins(field.min_ratio, field.max_ratio,
                                                bits, tolerance),
    }
    for tag, model in models.items():
        flags, _ = binning.compressible_mask(field, model)
        print(f"strategy.{tag}.compressible={int(np.count_nonzero(flags))}")
    if sample_n <= 20000:
        ratios = np.sort(field.valid_ratios())
        dp = binning.dp_optimal_coverage(ratios, 2.0 * tol, (1 << bits) - 1)
        print(f"strategy.dp.compressible={dp}")
    print(f"strategy.n={sample_n}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nmk",
        description="Error-bounded lossy compressor for temporal float arrays",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="compress one snapshot against the previous one")
    p.add_argument("prev", help="previous snapshot (raw little-endian array)")
    p.add_argument("curr", help="current snapshot (raw little-endian array)")
    p.add_argument("out", help="output .nmk path")
    p.add_argument("--dtype", choices=("f32", "f64"), default="f32")
    p.add_argument("--count", type=int, default=None, help="element count override")
    p.add_argument("--name", default="var0")
    p.add_argument("--error", type=float, default=1e-3,
                   help="relative error bound (default 0.001)")
    p.add_argument("--strategy", choices=tuple(_STRATEGY_FLAGS), default="topk")
    p.add_argument("--bits", default="auto", help="'auto' or an explicit index length")
    p.add_argument("--block-bytes", type=int, default=codec.DEFAULT_BLOCK_BYTES)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--deflate-level", type=int, default=codec.DEFAULT_DEFLATE_LEVEL)
    p.set_defaults(fn=cmd_compress)

    p = sub.add_parser("decompress", help="reconstruct a snapshot (full or a range)")
    p.add_argument("nmk", help="compressed .nmk file")
    p.add_argument("prev", help="previous snapshot (raw array)")
    p.add_argument("out", help="output raw array path")
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--range", default=None, metavar="START:COUNT")
    p.add_argument("--var", default=None, help="variable name (default: first)")
    p.set_defaults(fn=cmd_decompress)

    p = sub.add_parser("describe", help="print container metadata")
    p.add_argument("nmk")
    p.set_defaults(fn=cmd_describe)

    p = sub.add_parser("verify", help="report CR/ME and check the error bound")
    p.add_argument("original", help="original snapshot (raw array)")
    p.add_argument("reconstructed", help="reconstructed snapshot (raw array)")
    p.add_argument("nmk", help="compressed file the reconstruction came from")
    p.add_argument("--dtype", choices=("f32", "f64"), default="f32")
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--var", default=None)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("analytic-cr", help="closed-form compression-ratio estimate")
    p.add_argument("--bits-per-element", type=float, default=32.0)
    p.add_argument("--index-bits", type=int, required=True)
    p.add_argument("--deflate-ratio", type=float, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.set_defaults(fn=cmd_analytic_cr)

    p = sub.add_parser("bench", help="worker sweep and binning-strategy table")
    p.add_argument("--elements", type=int, default=1 << 22)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--error", type=float, default=1e-3)
    p.add_argument("--max-workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--strategy-sample", type=int, default=4000)
    p.add_argument("--strategy-bits", type=int, default=5)
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # pragma: no cover - internal failures
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
