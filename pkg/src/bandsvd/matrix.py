"""Column-major matrix storage, tile addressing, lazy transposition, and file IO.

DenseMatrix data is safe for concurrent reads; concurrent writes are only
legal to disjoint index sets, which the band-reduce driver guarantees by
construction. Views are value-like descriptors and freely copyable.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, ShapeError, TileRangeError
from .precision import FP64, Precision, from_storage_dtype

_MAGIC = b"BSVD"
_FORMAT_VERSION = 1
_DTYPE_CODES = {1: np.dtype("<f8"), 2: np.dtype("<f4"), 3: np.dtype("<f2")}
_CODE_FOR_KIND = {np.dtype(np.float64): 1, np.dtype(np.float32): 2, np.dtype(np.float16): 3}


class DenseMatrix:
    """rows x cols elements in one column-major buffer.

    Element (r, c) lives at offset c*rows + r; that layout is the bit-exact
    contract for file IO. orig_n records the logical size before tile
    padding (equal to rows for freshly built matrices).
    """

    __slots__ = ("rows", "cols", "orig_n", "data", "precision")

    def __init__(self, data: np.ndarray, rows: int, cols: int, orig_n: int | None = None,
                 precision: Precision | None = None):
        if data.ndim != 1:
            raise ShapeError("DenseMatrix data must be a 1-D buffer")
        if data.size != rows * cols:
            raise ShapeError(f"buffer holds {data.size} elements, need {rows}x{cols}")
        self.data = data
        self.rows = rows
        self.cols = cols
        self.orig_n = rows if orig_n is None else orig_n
        self.precision = precision if precision is not None else from_storage_dtype(data.dtype)
        if self.precision.storage_dtype != data.dtype:
            raise ShapeError(f"buffer dtype {data.dtype} does not match precision {self.precision.name}")

    @classmethod
    def zeros(cls, rows: int, cols: int, precision: Precision = FP64,
              array_factory=None) -> "DenseMatrix":
        if array_factory is None:
            data = np.zeros(rows * cols, dtype=precision.storage_dtype)
        else:
            data = array_factory(rows * cols, precision.storage_dtype)
            data[:] = 0
        return cls(data, rows, cols, precision=precision)

    @classmethod
    def from_array(cls, arr, precision: Precision | None = None) -> "DenseMatrix":
        """Copy a 2-D array into column-major storage (rounding if needed)."""
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise ShapeError(f"expected a 2-D array, got ndim={arr.ndim}")
        if precision is None:
            precision = from_storage_dtype(arr.dtype) if arr.dtype in (
                np.dtype(np.float64), np.dtype(np.float32), np.dtype(np.float16)) else FP64
        rows, cols = arr.shape
        data = np.asfortranarray(arr, dtype=precision.storage_dtype).reshape(-1, order="F")
        return cls(data.copy(), rows, cols, precision=precision)

    @property
    def array(self) -> np.ndarray:
        """2-D Fortran-order view of the storage buffer."""
        return self.data.reshape((self.rows, self.cols), order="F")

    def view(self) -> "MatrixView":
        return MatrixView(self, 0, 0, self.rows, self.cols, False)

    def t(self) -> "MatrixView":
        """Lazy transpose; no data moves."""
        return MatrixView(self, 0, 0, self.cols, self.rows, True)

    def copy(self, array_factory=None) -> "DenseMatrix":
        if array_factory is None:
            data = self.data.copy()
        else:
            data = array_factory(self.data.size, self.data.dtype)
            data[:] = self.data
        return DenseMatrix(data, self.rows, self.cols, self.orig_n, self.precision)

    def __repr__(self):
        return f"DenseMatrix({self.rows}x{self.cols}, {self.precision.name}, orig_n={self.orig_n})"


class MatrixView:
    """Window into a DenseMatrix with index-level transposition.

    Indexing (i, j) resolves to base (row_offset+i, col_offset+j) when not
    transposed and to base (row_offset+j, col_offset+i) when transposed.
    Writing through a view mutates base storage.
    """

    __slots__ = ("base", "row_offset", "col_offset", "view_rows", "view_cols", "transposed", "arr")

    def __init__(self, base: DenseMatrix, row_offset: int, col_offset: int,
                 view_rows: int, view_cols: int, transposed: bool):
        self.base = base
        self.row_offset = row_offset
        self.col_offset = col_offset
        self.view_rows = view_rows
        self.view_cols = view_cols
        self.transposed = transposed
        base_rows = view_cols if transposed else view_rows
        base_cols = view_rows if transposed else view_cols
        if row_offset < 0 or col_offset < 0 or \
                row_offset + base_rows > base.rows or col_offset + base_cols > base.cols:
            raise ShapeError("view extends past the base matrix")
        block = base.array[row_offset:row_offset + base_rows, col_offset:col_offset + base_cols]
        self.arr = block.T if transposed else block

    @property
    def shape(self):
        return (self.view_rows, self.view_cols)

    def t(self) -> "MatrixView":
        return MatrixView(self.base, self.row_offset, self.col_offset,
                          self.view_cols, self.view_rows, not self.transposed)

    def block(self, r0: int, c0: int, nrows: int, ncols: int) -> "MatrixView":
        """Sub-view at logical offsets; offsets compose down to the base."""
        if r0 < 0 or c0 < 0 or r0 + nrows > self.view_rows or c0 + ncols > self.view_cols:
            raise ShapeError("sub-view extends past the view")
        if self.transposed:
            return MatrixView(self.base, self.row_offset + c0, self.col_offset + r0,
                              nrows, ncols, True)
        return MatrixView(self.base, self.row_offset + r0, self.col_offset + c0,
                          nrows, ncols, False)

    def tile(self, tile_row: int, tile_col: int, ts: int) -> "MatrixView":
        if self.view_rows % ts or self.view_cols % ts:
            raise ShapeError(f"view extents {self.shape} are not multiples of tilesize {ts}")
        if not (0 <= tile_row < self.view_rows // ts) or not (0 <= tile_col < self.view_cols // ts):
            raise TileRangeError(
                f"tile ({tile_row}, {tile_col}) out of range for "
                f"{self.view_rows // ts}x{self.view_cols // ts} tiles")
        return self.block(tile_row * ts, tile_col * ts, ts, ts)

    def __getitem__(self, idx):
        return self.arr[idx]

    def __setitem__(self, idx, value):
        self.arr[idx] = value

    def __repr__(self):
        return (f"MatrixView({self.view_rows}x{self.view_cols} at "
                f"({self.row_offset},{self.col_offset}){', transposed' if self.transposed else ''})")


def tile_view(m, tile_row: int, tile_col: int, ts: int) -> MatrixView:
    """ts x ts view at tile block (tile_row, tile_col) of a matrix or view."""
    v = m.view() if isinstance(m, DenseMatrix) else m
    return v.tile(tile_row, tile_col, ts)


def pad_to_tiles(m: DenseMatrix, ts: int, array_factory=None) -> DenseMatrix:
    """Zero-pad a square matrix up to the next multiple of ts.

    Appended zero rows/columns add exactly zero singular values, so the
    value pipeline recovers the original spectrum by keeping the orig_n
    largest results. Already-aligned matrices are returned unchanged.
    """
    if m.rows != m.cols:
        raise ShapeError(f"cannot pad a non-square matrix ({m.rows}x{m.cols})")
    if ts < 1:
        raise ShapeError(f"tilesize must be positive, got {ts}")
    if m.rows % ts == 0 and m.rows > 0:
        return m
    nbtiles = max(1, -(-m.rows // ts))
    n = nbtiles * ts
    out = DenseMatrix.zeros(n, n, m.precision, array_factory)
    out.orig_n = m.orig_n
    out.array[:m.rows, :m.cols] = m.array
    return out


class TauStore:
    """Normalized Householder coefficients, one length-ts column per slot.

    Slot layout: slot(k, l, side) = side*nbtiles^2 + k*nbtiles + l, where k
    is the sweep index, l the tile row holding the factored panel block
    (the diagonal tile for the panel head, lower tile rows for the stacked
    factorizations), and side is 0 for RQ sweeps, 1 for LQ sweeps. Entries
    are always in [0, 2]: 0 means no reflector, 2 the degenerate reflector.
    """

    __slots__ = ("tilesize", "nbtiles", "values")

    def __init__(self, tilesize: int, nbtiles: int, dtype=np.float64, array_factory=None):
        self.tilesize = tilesize
        self.nbtiles = nbtiles
        nslots = 2 * nbtiles * nbtiles
        if array_factory is None:
            buf = np.zeros(tilesize * nslots, dtype=dtype)
        else:
            buf = array_factory(tilesize * nslots, np.dtype(dtype))
            buf[:] = 0
        self.values = buf.reshape((tilesize, nslots), order="F")

    def slot(self, k: int, l: int, side: int) -> int:
        if side not in (0, 1):
            raise TileRangeError(f"side must be 0 (RQ) or 1 (LQ), got {side}")
        if not (0 <= k < self.nbtiles) or not (0 <= l < self.nbtiles):
            raise TileRangeError(f"tau slot (k={k}, l={l}) out of range for nbtiles={self.nbtiles}")
        return side * self.nbtiles * self.nbtiles + k * self.nbtiles + l

    def col(self, k: int, l: int, side: int) -> np.ndarray:
        return self.values[:, self.slot(k, l, side)]


def write_matrix(m: DenseMatrix, path) -> None:
    """Binary format: magic 'BSVD' | version u32 | dtype code u32 | rows u64
    | cols u64 (all little-endian) | column-major little-endian payload."""
    code = _CODE_FOR_KIND[m.data.dtype]
    le = _DTYPE_CODES[code]
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IIQQ", _FORMAT_VERSION, code, m.rows, m.cols))
        f.write(np.ascontiguousarray(m.data, dtype=le).tobytes())


def read_matrix(path) -> DenseMatrix:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4 or raw[:4] != _MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {_MAGIC!r}")
    if len(raw) < 28:
        raise FormatError("truncated header")
    version, code, rows, cols = struct.unpack("<IIQQ", raw[4:28])
    if version != _FORMAT_VERSION:
        raise FormatError(f"unknown format version {version}")
    if code not in _DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}")
    dtype = _DTYPE_CODES[code]
    expected = rows * cols * dtype.itemsize
    payload = raw[28:]
    if len(payload) < expected:
        raise FormatError(f"truncated payload: {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise FormatError(f"payload has {len(payload) - expected} trailing bytes")
    data = np.frombuffer(payload, dtype=dtype).astype(dtype.newbyteorder("="), copy=True)
    return DenseMatrix(data, int(rows), int(cols))
