"""Error-bounded lossy compression for temporal floating-point snapshots.

Consecutive snapshots of the same variable are encoded as element-wise
change ratios quantized to a small dictionary of bin centers; elements the
dictionary cannot represent within the error bound are stored verbatim.
"""

from .binning import (
    BinModel,
    Histogram,
    build_histogram,
    compressible_mask,
    dp_optimal_coverage,
    equal_width_bins,
    kmeans_bins,
    log_scale_bins,
    select_index_length,
    top_k_bins,
)
from .codec import BlockLayout, CodecError, partial_decode, partial_decode_file
from .container import CompressedVariable, ContainerError, describe, read_file, scan_file, write_file
from .core import (
    ChangeRatioField,
    TemporalPair,
    Tolerance,
    VerifyReport,
    compute_change_ratios,
    reconstruct,
    verify,
)
from .pipeline import (
    PhaseTimings,
    PipelineConfig,
    PipelineError,
    compress_pair,
    compress_series,
    decompress,
)

__version__ = "0.1.0"

__all__ = [
    "BinModel",
    "BlockLayout",
    "ChangeRatioField",
    "CodecError",
    "CompressedVariable",
    "ContainerError",
    "Histogram",
    "PhaseTimings",
    "PipelineConfig",
    "PipelineError",
    "TemporalPair",
    "Tolerance",
    "VerifyReport",
    "build_histogram",
    "compress_pair",
    "compress_series",
    "compressible_mask",
    "compute_change_ratios",
    "decompress",
    "describe",
    "dp_optimal_coverage",
    "equal_width_bins",
    "kmeans_bins",
    "log_scale_bins",
    "partial_decode",
    "partial_decode_file",
    "read_file",
    "reconstruct",
    "scan_file",
    "select_index_length",
    "top_k_bins",
    "verify",
    "write_file",
]
