"""Bin-center dictionaries for change ratios.

Four strategies produce a :class:`BinModel` (the lossy dictionary): top-k
histogram selection, equal-width, log-scale, and 1-D k-means.  The module
also hosts the compressed-size model used to auto-select the index length,
and a dynamic-programming coverage oracle used as an optimality baseline
in tests and benchmarks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ChangeRatioField, Tolerance

STRATEGIES = ("top_k", "equal_width", "log_scale", "kmeans")

MIN_BITS = 2
MAX_BITS = 30
DEFAULT_BITS_RANGE = (2, 16)

_DENSE_CAP = 10_000_000


@dataclass
class Histogram:
    """Counts of change ratios over fixed-width bins anchored at the minimum.

    Bin ``m`` covers ``[origin + m*width, origin + (m+1)*width)``.  Only
    nonempty bins are stored: ``ordinals`` holds the integer-valued bin
    numbers as float64 (ranges wider than 2**53 bins degrade gracefully
    instead of overflowing), ``counts`` the matching occupancies.
    """

    origin: float
    width: float
    ordinals: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def nonempty(self) -> int:
        return len(self.ordinals)

    def centers_of(self, ordinals: np.ndarray) -> np.ndarray:
        return self.origin + (ordinals + 0.5) * self.width

    def dense_counts(self) -> np.ndarray:
        """Counts as a dense array starting at bin 0 (small ranges only)."""
        if self.nonempty == 0:
            return np.zeros(0, dtype=np.int64)
        last = self.ordinals[-1]
        if not np.isfinite(last) or last + 1 > _DENSE_CAP:
            raise ValueError("histogram spans too many bins to densify")
        dense = np.zeros(int(last) + 1, dtype=np.int64)
        dense[self.ordinals.astype(np.int64)] = self.counts
        return dense


@dataclass
class BinModel:
    """Selected bin centers plus the parameters needed to apply them."""

    centers: np.ndarray
    bits: int
    tolerance: Tolerance
    strategy: str

    def __post_init__(self) -> None:
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not MIN_BITS <= self.bits <= MAX_BITS:
            raise ValueError(f"index length {self.bits} outside [{MIN_BITS}, {MAX_BITS}]")
        k = len(self.centers)
        if k < 1:
            raise ValueError("a bin model needs at least one center")
        if k > (1 << self.bits) - 1:
            raise ValueError(
                f"{k} centers exceed the {(1 << self.bits) - 1} usable ids at B={self.bits}"
            )
        if k > 1 and not (np.diff(self.centers) > 0).all():
            raise ValueError("centers must be strictly increasing")

    @property
    def k(self) -> int:
        return len(self.centers)

    @property
    def sentinel(self) -> int:
        """Index value reserved for incompressible elements."""
        return (1 << self.bits) - 1


def build_histogram(field: ChangeRatioField, tolerance: Tolerance) -> Histogram:
    """Histogram of valid change ratios in bins of width 2E anchored at the min."""
    ratios = field.valid_ratios()
    if ratios.size == 0:
        raise ValueError("no valid change ratios to histogram")
    origin = field.min_ratio
    width = 2.0 * tolerance.value
    return histogram_of(ratios, origin, width)


def histogram_of(ratios: np.ndarray, origin: float, width: float) -> Histogram:
    """Histogram of a raw ratio slice against a fixed origin/width grid."""
    with np.errstate(over="ignore", invalid="ignore"):
        ords = np.floor((ratios - origin) / width)
    ordinals, counts = np.unique(ords, return_counts=True)
    return Histogram(origin=origin, width=width, ordinals=ordinals,
                     counts=counts.astype(np.int64))


def merge_histograms(parts: list[Histogram]) -> Histogram:
    """Element-wise sum of per-shard histograms (associative and commutative)."""
    if not parts:
        raise ValueError("nothing to merge")
    first = parts[0]
    if len(parts) == 1:
        return first
    ords = np.concatenate([p.ordinals for p in parts])
    cnts = np.concatenate([p.counts for p in parts])
    uniq, inverse = np.unique(ords, return_inverse=True)
    merged = np.zeros(len(uniq), dtype=np.int64)
    np.add.at(merged, inverse, cnts)
    return Histogram(origin=first.origin, width=first.width,
                     ordinals=uniq, counts=merged)


def _selectable(hist: Histogram):
    """Bins whose center is finite; others can never satisfy the error bound."""
    centers = hist.centers_of(hist.ordinals)
    keep = np.isfinite(centers)
    return hist.ordinals[keep], hist.counts[keep], centers[keep]


def top_k_bins(hist: Histogram, bits: int) -> BinModel:
    """Keep the most populous bins, ties broken toward the lower ordinal."""
    ordinals, counts, centers = _selectable(hist)
    if len(ordinals) == 0:
        raise ValueError("empty histogram")
    k = min((1 << bits) - 1, len(ordinals))
    # lexsort: primary key = count descending, secondary = ordinal ascending
    order = np.lexsort((ordinals, -counts))[:k]
    chosen = np.unique(centers[order])
    return BinModel(centers=chosen, bits=bits,
                    tolerance=Tolerance(hist.width / 2.0), strategy="top_k")


def estimate_file_size(n: int, width: int, bits: int, n_incompressible: int) -> float:
    """Modeled compressed size in bytes: center table + index table + verbatim data.

    The index table is counted before any lossless pass, so the estimate can
    mis-rank B values when the backend compresses one table much better than
    another.
    """
    return (1 << bits) * width + (n * bits) / 8 + n_incompressible * width


def _coverage_by_bits(hist: Histogram, bits_range) -> dict[int, int]:
    _, counts, _ = _selectable(hist)
    desc = np.sort(counts)[::-1]
    cum = np.cumsum(desc)
    out = {}
    for bits in range(bits_range[0], bits_range[1] + 1):
        k = min((1 << bits) - 1, len(desc))
        out[bits] = int(cum[k - 1]) if k > 0 else 0
    return out


def incompressible_ratio(hist: Histogram, n: int, bits: int) -> float:
    """Fraction of the n elements not covered by the top ``2**bits - 1`` bins."""
    covered = _coverage_by_bits(hist, (bits, bits))[bits]
    return (n - covered) / n


def select_index_length(
    hist: Histogram,
    n: int,
    width: int,
    bits_range: tuple[int, int] = DEFAULT_BITS_RANGE,
) -> tuple[int, dict[int, float]]:
    """Pick the index length minimizing the modeled file size.

    Returns ``(best_bits, sizes)`` where ``sizes`` maps every candidate B to
    its modeled byte count.  Ties go to the smaller B.
    """
    lo, hi = bits_range
    if lo < MIN_BITS or hi > MAX_BITS or lo > hi:
        raise ValueError(f"bits range {bits_range} outside [{MIN_BITS}, {MAX_BITS}]")
    coverage = _coverage_by_bits(hist, bits_range)
    sizes: dict[int, float] = {}
    best_bits = lo
    best_size = None
    for bits in range(lo, hi + 1):
        size = estimate_file_size(n, width, bits, n - coverage[bits])
        sizes[bits] = size
        if best_size is None or size < best_size:
            best_size = size
            best_bits = bits
    return best_bits, sizes


def equal_width_bins(
    min_ratio: float,
    max_ratio: float,
    bits: int,
    tolerance: Tolerance,
) -> BinModel:
    """Midpoints of ``2**bits - 1`` equal chunks spanning the ratio range."""
    if not (np.isfinite(min_ratio) and np.isfinite(max_ratio)):
        raise ValueError("ratio range must be finite")
    if max_ratio < min_ratio:
        raise ValueError("max_ratio below min_ratio")
    if max_ratio == min_ratio:
        centers = np.array([min_ratio], dtype=np.float64)
    else:
        centers = _spread_midpoints(min_ratio, max_ratio, (1 << bits) - 1)
    return BinModel(centers=centers, bits=bits, tolerance=tolerance,
                    strategy="equal_width")


def _spread_midpoints(lo: float, hi: float, k: int) -> np.ndarray:
    """Midpoints of k equal chunks of [lo, hi], as a convex combination so
    the arithmetic cannot overflow even when hi - lo does."""
    t = (np.arange(k, dtype=np.float64) + 0.5) / k
    centers = lo * (1.0 - t) + hi * t
    return np.unique(centers[np.isfinite(centers)])


def _log_side_centers(magnitudes: np.ndarray, k: int) -> np.ndarray:
    lo = np.log10(magnitudes.min())
    hi = np.log10(magnitudes.max())
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
        return np.array([magnitudes.max()], dtype=np.float64)
    mids = lo + ((np.arange(k, dtype=np.float64) + 0.5) * (hi - lo)) / k
    return np.power(10.0, mids)


def log_scale_bins(field: ChangeRatioField, bits: int, tolerance: Tolerance) -> BinModel:
    """Centers spaced evenly in log10 of the ratio magnitude, per sign.

    Ratios within the tolerance of zero share a single zero center; the
    remaining ``2**bits - 2`` centers are split between the positive and
    negative sides proportionally to their populations.
    """
    ratios = field.valid_ratios()
    if ratios.size == 0:
        raise ValueError("no valid change ratios")
    e = tolerance.value
    pos = ratios[ratios > e]
    neg = ratios[ratios < -e]
    budget = (1 << bits) - 2

    centers = [np.array([0.0])]
    if pos.size and neg.size:
        # round the dominant side's share so that negating the input swaps
        # the allocation exactly (ties at equal population favor positive)
        total = pos.size + neg.size
        if pos.size >= neg.size:
            k_pos = int(np.floor(budget * (pos.size / total) + 0.5))
            k_pos = min(max(k_pos, 1), budget - 1)
            k_neg = budget - k_pos
        else:
            k_neg = int(np.floor(budget * (neg.size / total) + 0.5))
            k_neg = min(max(k_neg, 1), budget - 1)
            k_pos = budget - k_neg
    else:
        k_pos = budget if pos.size else 0
        k_neg = budget if neg.size else 0
    if pos.size:
        centers.append(_log_side_centers(pos, k_pos))
    if neg.size:
        centers.append(-_log_side_centers(-neg, k_neg))

    merged = np.unique(np.concatenate(centers))
    merged = merged[np.isfinite(merged)]
    return BinModel(centers=merged, bits=bits, tolerance=tolerance,
                    strategy="log_scale")


def nearest_center(values: np.ndarray, centers: np.ndarray):
    """Nearest-center assignment with ties resolved toward the lower index.

    Assignment is by the midpoint cuts between consecutive centers: a value
    sitting exactly on a cut goes to the lower center.  Returns
    ``(indices, distances)``.
    """
    centers = np.asarray(centers, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        if len(centers) == 1:
            idx = np.zeros(len(values), dtype=np.int64)
        else:
            cuts = 0.5 * (centers[:-1] + centers[1:])
            idx = np.searchsorted(cuts, values, side="left")
        return idx, np.abs(values - centers[idx])


def lloyd_step(values: np.ndarray, centers: np.ndarray):
    """One Lloyd iteration: assign to nearest center, recompute means.

    Empty clusters are dropped.  Returns ``(new_centers, assignment)``.
    """
    idx, _ = nearest_center(values, centers)
    k = len(centers)
    sums = np.bincount(idx, weights=values, minlength=k)
    cnts = np.bincount(idx, minlength=k)
    occupied = cnts > 0
    new_centers = sums[occupied] / cnts[occupied]
    return np.unique(new_centers), idx


def kmeans_bins(
    field: ChangeRatioField,
    bits: int,
    tolerance: Tolerance,
    max_iter: int = 50,
) -> BinModel:
    """1-D Lloyd clustering of the valid ratios into up to ``2**bits - 1`` bins.

    Seeded with equal-width midpoints over the ratio range; k is reduced to
    the number of distinct values when the data cannot support more clusters.
    """
    values = field.valid_ratios()
    if values.size == 0:
        raise ValueError("no valid change ratios")
    distinct = np.unique(values)
    k = min((1 << bits) - 1, len(distinct))
    if k == len(distinct):
        return BinModel(centers=distinct, bits=bits, tolerance=tolerance,
                        strategy="kmeans")

    centers = _spread_midpoints(float(distinct[0]), float(distinct[-1]), k)
    prev_assign = None
    for _ in range(max_iter):
        centers, assign = lloyd_step(values, centers)
        if prev_assign is not None and assign.shape == prev_assign.shape \
                and (assign == prev_assign).all():
            break
        prev_assign = assign
    return BinModel(centers=centers, bits=bits, tolerance=tolerance,
                    strategy="kmeans")


def compressible_mask(field: ChangeRatioField, model: BinModel):
    """Per-element compressibility flags and nearest-center indices.

    An element is compressible when its ratio is valid and lies within the
    tolerance of the nearest center.  The returned index array is only
    meaningful where the flag is set.
    """
    idx, dist = nearest_center(field.ratios, model.centers)
    flags = field.valid & (dist <= model.tolerance.value)
    return flags, idx


def dp_optimal_coverage(sorted_ratios: np.ndarray, window: float, k: int) -> int:
    """Maximum number of points coverable by k intervals of width ``window``.

    Classic interval-covering dynamic program over point-anchored intervals:
    with the points sorted, ``opt(i, j)`` is the best coverage of the suffix
    starting at point i using j intervals, and

        opt(i, j) = max(opt(i+1, j), opt(i + c(i), j-1) + c(i))

    where ``c(i)`` counts the points inside ``[v[i], v[i] + window]``.  Each
    j-layer is a reverse running maximum, so the whole table costs O(n*k)
    time and O(n) memory.  This is a test/benchmark oracle, not a production
    binning strategy.
    """
    vals = np.asarray(sorted_ratios, dtype=np.float64)
    n = vals.size
    if n == 0:
        return 0
    if (np.diff(vals) < 0).any():
        raise ValueError("input must be sorted ascending")
    if k < 1:
        return 0

    c = np.searchsorted(vals, vals + window, side="right") - np.arange(n)
    reach = np.arange(n) + c  # first index past each interval, <= n
    opt_prev = np.zeros(n + 1, dtype=np.int64)
    for _ in range(min(k, n)):
        gains = opt_prev[reach] + c
        opt = np.empty(n + 1, dtype=np.int64)
        opt[n] = 0
        opt[:n] = np.maximum.accumulate(gains[::-1])[::-1]
        if opt[0] == n:
            return n
        opt_prev = opt
    return int(opt_prev[0])
