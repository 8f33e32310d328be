"""On-disk container for compressed variables (``.nmk`` files).

Little-endian layout: a 10-byte file header (magic ``NMRK``, u16 version,
u32 variable count) followed by one record per variable:

    name_len u16 | name utf-8 | dtype u8 | n u64 | bits u8 | k u32 | E f64
    | elements_per_block u32 | nblocks u32 | n_incompressible u64
    | index_table_len u64 | centers k*dtype | index_offsets nblocks*u64
    | incompressible_prefix nblocks*u64 | index_table bytes
    | incompressible_table n_incompressible*dtype

Files are immutable once written; every field round-trips bit-exactly.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"NMRK"
VERSION = 1
HEADER_SIZE = 10

DTYPE_F32 = 0
DTYPE_F64 = 1
_DTYPES = {DTYPE_F32: np.dtype("<f4"), DTYPE_F64: np.dtype("<f8")}
_CODES = {4: DTYPE_F32, 8: DTYPE_F64}

_FIXED = struct.Struct("<BQBIdIIQQ")  # dtype, n, bits, k, E, epb, nblocks, n_inc, table_len


class ContainerError(Exception):
    """Base error for container reads/writes; ``code`` names the cause."""

    code = "container"


class BadMagicError(ContainerError):
    code = "bad_magic"


class VersionMismatchError(ContainerError):
    code = "version_mismatch"


class TruncatedFileError(ContainerError):
    code = "truncated"


class InvariantError(ContainerError):
    code = "invariant"


class DuplicateNameError(ContainerError):
    code = "duplicate_name"


def dtype_code_for(dtype: np.dtype) -> int:
    try:
        return _CODES[np.dtype(dtype).itemsize]
    except KeyError:
        raise InvariantError(f"unsupported dtype {dtype}") from None


@dataclass
class CompressedVariable:
    """One compressed variable: dictionary, offset tables, and payloads."""

    name: str
    dtype_code: int
    n: int
    bits: int
    tolerance: float
    elements_per_block: int
    nblocks: int
    n_incompressible: int
    centers: np.ndarray
    index_offsets: np.ndarray
    incompressible_prefix: np.ndarray
    index_table: bytes
    incompressible_table: np.ndarray

    @property
    def k(self) -> int:
        return len(self.centers)

    @property
    def numpy_dtype(self) -> np.dtype:
        return _DTYPES[self.dtype_code]

    @property
    def width(self) -> int:
        return self.numpy_dtype.itemsize

    @property
    def raw_bytes(self) -> int:
        return self.n * self.width

    @property
    def alpha(self) -> float:
        return self.n_incompressible / self.n

    def record_size(self) -> int:
        """Exact serialized size of this variable's record."""
        return (
            2 + len(self.name.encode("utf-8"))
            + _FIXED.size
            + self.k * self.width
            + 2 * self.nblocks * 8
            + len(self.index_table)
            + self.n_incompressible * self.width
        )

    def validate(self) -> None:
        if not self.name:
            raise InvariantError("variable name is empty")
        if self.dtype_code not in _DTYPES:
            raise InvariantError(f"unknown dtype code {self.dtype_code}")
        if self.n < 1:
            raise InvariantError("element count must be positive")
        if not 2 <= self.bits <= 30:
            raise InvariantError(f"index length {self.bits} outside [2, 30]")
        if self.k < 1 or self.k > (1 << self.bits) - 1:
            raise InvariantError(f"center count {self.k} invalid for B={self.bits}")
        if self.elements_per_block < 1:
            raise InvariantError("elements_per_block must be positive")
        expected_blocks = -(-self.n // self.elements_per_block)
        if self.nblocks != expected_blocks:
            raise InvariantError(
                f"nblocks {self.nblocks} != ceil(n / elements_per_block) = {expected_blocks}"
            )
        if len(self.index_offsets) != self.nblocks \
                or len(self.incompressible_prefix) != self.nblocks:
            raise InvariantError("offset table length != nblocks")
        if self.nblocks:
            if self.index_offsets[0] != 0:
                raise InvariantError("first index offset must be 0")
            if (np.diff(self.index_offsets.astype(np.int64)) < 0).any():
                raise InvariantError("index offsets must be non-decreasing")
            if self.index_offsets[-1] > len(self.index_table):
                raise InvariantError("index offset beyond index table")
            if self.incompressible_prefix[0] != 0:
                raise InvariantError("first incompressible prefix must be 0")
            if (np.diff(self.incompressible_prefix.astype(np.int64)) < 0).any():
                raise InvariantError("incompressible prefix must be non-decreasing")
            if self.incompressible_prefix[-1] > self.n_incompressible:
                raise InvariantError("incompressible prefix exceeds total count")
        if len(self.incompressible_table) != self.n_incompressible:
            raise InvariantError("incompressible table length mismatch")
        if self.k > 1 and not (np.diff(self.centers.astype(np.float64)) > 0).all():
            raise InvariantError("centers must be strictly increasing")


def _write_variable(out, v: CompressedVariable) -> None:
    name = v.name.encode("utf-8")
    if len(name) > 0xFFFF:
        raise InvariantError("variable name too long")
    out.write(struct.pack("<H", len(name)))
    out.write(name)
    out.write(_FIXED.pack(
        v.dtype_code, v.n, v.bits, v.k, v.tolerance,
        v.elements_per_block, v.nblocks, v.n_incompressible,
        len(v.index_table),
    ))
    out.write(np.ascontiguousarray(v.centers, dtype=v.numpy_dtype).tobytes())
    out.write(np.ascontiguousarray(v.index_offsets, dtype="<u8").tobytes())
    out.write(np.ascontiguousarray(v.incompressible_prefix, dtype="<u8").tobytes())
    out.write(v.index_table)
    out.write(np.ascontiguousarray(v.incompressible_table, dtype=v.numpy_dtype).tobytes())


def write_file(path, variables) -> int:
    """Serialize variables to ``path``; returns the byte count written."""
    variables = list(variables)
    names = [v.name for v in variables]
    if len(set(names)) != len(names):
        raise DuplicateNameError("variable names must be unique")
    for v in variables:
        v.validate()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", VERSION, len(variables)))
    for v in variables:
        _write_variable(buf, v)
    payload = buf.getvalue()
    with open(path, "wb") as f:
        f.write(payload)
    return len(payload)


class _Reader:
    def __init__(self, f):
        self.f = f

    def exact(self, size: int, what: str) -> bytes:
        data = self.f.read(size)
        if len(data) != size:
            raise TruncatedFileError(f"truncated file while reading {what}")
        return data

    def skip(self, size: int, what: str) -> int:
        pos = self.f.tell()
        self.f.seek(0, 2)
        end = self.f.tell()
        if pos + size > end:
            raise TruncatedFileError(f"truncated file while skipping {what}")
        self.f.seek(pos + size)
        return pos


def _read_header(r: _Reader) -> int:
    magic = r.exact(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    version, count = struct.unpack("<HI", r.exact(6, "header"))
    if version != VERSION:
        raise VersionMismatchError(f"unsupported format version {version}")
    return count


def _read_variable(r: _Reader, load_bodies: bool):
    (name_len,) = struct.unpack("<H", r.exact(2, "name length"))
    name = r.exact(name_len, "name").decode("utf-8")
    fixed = _FIXED.unpack(r.exact(_FIXED.size, "variable header"))
    dtype_code, n, bits, k, tol, epb, nblocks, n_inc, table_len = fixed
    if dtype_code not in _DTYPES:
        raise InvariantError(f"unknown dtype code {dtype_code}")
    dtype = _DTYPES[dtype_code]

    centers = np.frombuffer(r.exact(k * dtype.itemsize, "centers"), dtype=dtype)
    offsets = np.frombuffer(r.exact(nblocks * 8, "index offsets"), dtype="<u8")
    prefix = np.frombuffer(r.exact(nblocks * 8, "incompressible prefix"), dtype="<u8")

    if load_bodies:
        table = r.exact(table_len, "index table")
        inc = np.frombuffer(
            r.exact(n_inc * dtype.itemsize, "incompressible table"), dtype=dtype
        )
        table_pos = inc_pos = -1
    else:
        table = b""
        inc = np.zeros(0, dtype=dtype)
        table_pos = r.skip(table_len, "index table")
        inc_pos = r.skip(n_inc * dtype.itemsize, "incompressible table")

    v = CompressedVariable(
        name=name, dtype_code=dtype_code, n=n, bits=bits, tolerance=tol,
        elements_per_block=epb, nblocks=nblocks, n_incompressible=n_inc,
        centers=centers, index_offsets=offsets, incompressible_prefix=prefix,
        index_table=table, incompressible_table=inc,
    )
    return v, table_len, table_pos, inc_pos


def read_file(path) -> list[CompressedVariable]:
    """Read all variables, validating the header and every type invariant."""
    with open(path, "rb") as f:
        r = _Reader(f)
        count = _read_header(r)
        out = []
        for _ in range(count):
            v, table_len, _, _ = _read_variable(r, load_bodies=True)
            if len(v.index_table) != table_len:
                raise TruncatedFileError("index table shorter than declared")
            v.validate()
            out.append(v)
    return out


@dataclass
class VariableHandle:
    """Metadata view of one on-disk variable; bodies stay on disk.

    ``read_index_range``/``read_incompressible_range`` pull only the byte
    spans needed, which is what partial decompression wants.
    """

    path: str
    variable: CompressedVariable
    index_table_len: int
    index_table_pos: int
    incompressible_pos: int

    def read_index_range(self, lo: int, hi: int) -> bytes:
        if lo < 0 or hi < lo or hi > self.index_table_len:
            raise InvariantError(f"index byte range [{lo}, {hi}) out of bounds")
        with open(self.path, "rb") as f:
            f.seek(self.index_table_pos + lo)
            data = f.read(hi - lo)
        if len(data) != hi - lo:
            raise TruncatedFileError("truncated file while reading index bytes")
        return data

    def read_incompressible_range(self, start: int, count: int) -> np.ndarray:
        dtype = self.variable.numpy_dtype
        if start < 0 or count < 0 or start + count > self.variable.n_incompressible:
            raise InvariantError("incompressible range out of bounds")
        with open(self.path, "rb") as f:
            f.seek(self.incompressible_pos + start * dtype.itemsize)
            data = f.read(count * dtype.itemsize)
        if len(data) != count * dtype.itemsize:
            raise TruncatedFileError("truncated file while reading incompressible data")
        return np.frombuffer(data, dtype=dtype)

    def record_size(self) -> int:
        """Serialized record size, computed from metadata alone."""
        v = self.variable
        return (
            2 + len(v.name.encode("utf-8"))
            + _FIXED.size
            + v.k * v.width
            + 2 * v.nblocks * 8
            + self.index_table_len
            + v.n_incompressible * v.width
        )

    def load(self) -> CompressedVariable:
        """Materialize the full variable (index table + incompressible data)."""
        v = self.variable
        table = self.read_index_range(0, self.index_table_len)
        inc = self.read_incompressible_range(0, v.n_incompressible)
        return CompressedVariable(
            name=v.name, dtype_code=v.dtype_code, n=v.n, bits=v.bits,
            tolerance=v.tolerance, elements_per_block=v.elements_per_block,
            nblocks=v.nblocks, n_incompressible=v.n_incompressible,
            centers=v.centers, index_offsets=v.index_offsets,
            incompressible_prefix=v.incompressible_prefix,
            index_table=table, incompressible_table=inc,
        )


def scan_file(path) -> list[VariableHandle]:
    """Read per-variable metadata without loading index or incompressible bodies."""
    handles = []
    with open(path, "rb") as f:
        r = _Reader(f)
        count = _read_header(r)
        for _ in range(count):
            v, table_len, table_pos, inc_pos = _read_variable(r, load_bodies=False)
            handles.append(VariableHandle(
                path=str(path), variable=v, index_table_len=table_len,
                index_table_pos=table_pos, incompressible_pos=inc_pos,
            ))
    return handles


def describe(path) -> str:
    """Human-readable listing of a container's variables and their sizes."""
    import os

    handles = scan_file(path)
    file_bytes = os.path.getsize(path)
    lines = [f"{len(handles)} variables ({file_bytes} bytes)"]
    total_raw = 0
    for h in handles:
        v = h.variable
        total_raw += v.raw_bytes
        lines.append(
            f"  {v.name}: n={v.n} dtype={'f32' if v.dtype_code == DTYPE_F32 else 'f64'} "
            f"bits={v.bits} centers={v.k} tolerance={v.tolerance:g}"
        )
        lines.append(
            f"    blocks={v.nblocks} elements_per_block={v.elements_per_block} "
            f"index_bytes={h.index_table_len} incompressible={v.n_incompressible} "
            f"(alpha={v.alpha:.4%})"
        )
        lines.append(
            f"    raw_bytes={v.raw_bytes} record_bytes={h.record_size()} "
            f"cr={v.raw_bytes / h.record_size():.3f}"
        )
    if total_raw:
        lines.append(f"total: raw_bytes={total_raw} cr={total_raw / file_bytes:.3f}")
    return "\n".join(lines)
