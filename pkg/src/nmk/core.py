"""Numeric kernel: change-ratio transform, reconstruction, quality metrics.

Everything here is pure and stateless; all functions accept numpy arrays and
may be called concurrently on disjoint element ranges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SUPPORTED_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def dtype_for_width(width: int) -> np.dtype:
    """Element dtype for a byte width of 4 or 8 (little-endian floats)."""
    try:
        return SUPPORTED_DTYPES[width]
    except KeyError:
        raise ValueError(f"unsupported element width {width}, expected 4 or 8") from None


@dataclass(frozen=True)
class Tolerance:
    """Relative error bound per element (e.g. 0.001 for 0.1%)."""

    value: float

    def __post_init__(self) -> None:
        v = float(self.value)
        if not np.isfinite(v) or v <= 0.0:
            raise ValueError(f"tolerance must be finite and > 0, got {self.value}")
        object.__setattr__(self, "value", v)


class TemporalPair:
    """Two aligned snapshots of the same variable at consecutive time stamps.

    ``base`` is the earlier snapshot, ``current`` the one being compressed.
    Both must be 1-D float arrays of identical length and identical width
    (4-byte or 8-byte floats).
    """

    __slots__ = ("base", "current")

    def __init__(self, base, current):
        base = np.ascontiguousarray(base)
        current = np.ascontiguousarray(current)
        if base.ndim != 1 or current.ndim != 1:
            raise ValueError("snapshots must be 1-D arrays")
        if base.shape != current.shape:
            raise ValueError(
                f"snapshot lengths differ: {base.shape[0]} vs {current.shape[0]}"
            )
        if base.shape[0] < 1:
            raise ValueError("snapshots must hold at least one element")
        if base.dtype.itemsize not in SUPPORTED_DTYPES or base.dtype.kind != "f":
            raise ValueError(f"unsupported snapshot dtype {base.dtype}")
        if base.dtype != current.dtype:
            raise ValueError(f"snapshot dtypes differ: {base.dtype} vs {current.dtype}")
        self.base = base
        self.current = current

    @property
    def n(self) -> int:
        return self.base.shape[0]

    @property
    def width(self) -> int:
        """Bytes per element (4 or 8)."""
        return self.base.dtype.itemsize

    @property
    def dtype(self) -> np.dtype:
        return self.base.dtype


@dataclass
class ChangeRatioField:
    """Element-wise change ratios plus validity flags and global bounds.

    ``ratios[j]`` is meaningful only where ``valid[j]`` is true; invalid
    slots are zero-filled so downstream vector code never sees NaN.
    """

    ratios: np.ndarray
    valid: np.ndarray
    min_ratio: float
    max_ratio: float

    @property
    def n(self) -> int:
        return self.ratios.shape[0]

    def valid_ratios(self) -> np.ndarray:
        """Ratios restricted to valid elements (aliases when all are valid)."""
        if self.valid.all():
            return self.ratios
        return self.ratios[self.valid]


@dataclass(frozen=True)
class VerifyReport:
    """Quality summary of a reconstruction against its original."""

    cr: float
    me: float
    max_rel_err: float
    alpha: float
    n: int
    zero_denominator: int = 0


def ratio_arrays(base: np.ndarray, current: np.ndarray):
    """Raw change-ratio kernel for one contiguous slice.

    Returns ``(ratios, valid)`` in float64 without any emptiness checks,
    so it can run per worker shard.  Rules:

    * base != 0 and the quotient is finite: ratio = (current - base) / base
    * base == 0 and current == 0: ratio = 0 (no change)
    * base == 0 and current != 0, or any non-finite input or quotient:
      the element is invalid and must be stored verbatim downstream
    """
    b = base.astype(np.float64, copy=False)
    c = current.astype(np.float64, copy=False)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratios = (c - b) / b
    valid = np.isfinite(ratios) & np.isfinite(b) & np.isfinite(c)
    both_zero = (b == 0.0) & (c == 0.0)
    if both_zero.any():
        ratios = np.where(both_zero, 0.0, ratios)
        valid |= both_zero
    if not valid.all():
        ratios = np.where(valid, ratios, 0.0)
    return ratios, valid


def compute_change_ratios(pair: TemporalPair) -> ChangeRatioField:
    """Element-wise change ratios of ``current`` relative to ``base``.

    Raises ValueError when no element has a well-defined ratio; callers
    then store the whole snapshot verbatim.
    """
    ratios, valid = ratio_arrays(pair.base, pair.current)
    if not valid.any():
        raise ValueError("no element has a well-defined change ratio")
    vr = ratios[valid] if not valid.all() else ratios
    return ChangeRatioField(
        ratios=ratios,
        valid=valid,
        min_ratio=float(vr.min()),
        max_ratio=float(vr.max()),
    )


def reconstruct(
    base_reconstructed: np.ndarray,
    centers: np.ndarray,
    indices: np.ndarray,
    incompressible_values: np.ndarray,
    bits: int,
) -> np.ndarray:
    """Invert the change-ratio encoding for one element range.

    Compressible elements become ``(1 + center) * base`` evaluated in
    float64 and cast to the output dtype; elements carrying the sentinel
    index ``2**bits - 1`` are copied verbatim from
    ``incompressible_values`` in element order (bit-exact, including NaN
    payloads).  Index values in ``[len(centers), sentinel)`` are invalid.
    """
    base = np.asarray(base_reconstructed)
    indices = np.asarray(indices)
    if indices.shape[0] != base.shape[0]:
        raise ValueError("indices and base cover different element counts")
    sentinel = (1 << bits) - 1
    inc = indices == sentinel
    comp = ~inc

    comp_idx = indices[comp]
    if comp_idx.size and int(comp_idx.max()) >= len(centers):
        raise ValueError(
            f"index {int(comp_idx.max())} out of range for {len(centers)} centers"
        )
    if comp_idx.size and int(comp_idx.min()) < 0:
        raise ValueError("negative bin index")

    n_inc = int(inc.sum())
    inc_values = np.asarray(incompressible_values)
    if inc_values.shape[0] < n_inc:
        raise ValueError(
            f"incompressible values exhausted: need {n_inc}, have {inc_values.shape[0]}"
        )
    if inc_values.shape[0] > n_inc:
        raise ValueError(
            f"incompressible values not fully consumed: need {n_inc}, "
            f"have {inc_values.shape[0]}"
        )

    out = np.empty(base.shape[0], dtype=base.dtype)
    if comp_idx.size:
        c = np.asarray(centers, dtype=np.float64)[comp_idx]
        b = base[comp].astype(np.float64, copy=False)
        out[comp] = ((1.0 + c) * b).astype(base.dtype)
    if n_inc:
        out[inc] = inc_values.astype(base.dtype, copy=False)
    return out


def _bit_equal(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    u = np.dtype(f"<u{a.dtype.itemsize}")
    return a.view(u) == b.view(u)


def verify(
    original: np.ndarray,
    reconstructed: np.ndarray,
    original_bytes: int,
    compressed_bytes: int,
    alpha: float,
) -> VerifyReport:
    """Compression ratio and error-rate report.

    The mean error rate averages ``|(D - R) / D|`` over all n elements.
    Elements whose original is zero or non-finite have no defined relative
    error: they contribute 0 when the reconstruction matches exactly and
    are otherwise excluded from the mean/max and counted in
    ``zero_denominator``.
    """
    original = np.ascontiguousarray(original)
    reconstructed = np.ascontiguousarray(reconstructed)
    if original.shape != reconstructed.shape:
        raise ValueError("original and reconstructed lengths differ")
    if compressed_bytes <= 0:
        raise ValueError("compressed size must be positive")

    d = original.astype(np.float64, copy=False)
    r = reconstructed.astype(np.float64, copy=False)
    well = np.isfinite(d) & (d != 0.0)
    n = d.shape[0]

    if well.all():
        terms = np.abs((d - r) / d)
        zero_den = 0
    else:
        terms = np.abs((d[well] - r[well]) / d[well])
        ill = ~well
        same = (d[ill] == r[ill]) | _bit_equal(original[ill], reconstructed[ill])
        zero_den = int((~same).sum())

    me = float(terms.sum() / n) if terms.size else 0.0
    max_rel = float(terms.max()) if terms.size else 0.0
    return VerifyReport(
        cr=original_bytes / compressed_bytes,
        me=me,
        max_rel_err=max_rel,
        alpha=float(alpha),
        n=n,
        zero_denominator=zero_den,
    )
