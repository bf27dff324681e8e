"""Sparse and dense linear-algebra kernels.

CSR is the only sparse format. Matrices are immutable once built; products
are delegated to scipy's CSR kernels, which sum each row sequentially in
stored (ascending column) order, so results are reproducible bit for bit.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

DEFAULT_SVD_CAP = 50_000_000
DEFAULT_EIG_CAP = 4096

MM_HEADER = "%%MatrixMarket matrix coordinate real general"


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class NonFiniteError(ArithmeticError):
    """A computation produced NaN or Inf."""


class CapExceededError(ValueError):
    """A dense routine was asked to work on a matrix beyond the desk-scale cap."""


class MatrixMarketError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Canonical CSR matrix.

    Invariants are checked on construction: offsets nondecreasing from 0 to
    nnz, column indices in range and strictly increasing within a row, all
    values finite.
    """

    rows: int
    cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    _csr: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        ro = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        ci = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        va = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.rows < 0 or self.cols < 0:
            raise ValueError("negative dimension")
        if ro.shape != (self.rows + 1,):
            raise ValueError("row_offsets must have length rows+1")
        if ro[0] != 0 or ro[-1] != len(ci) or len(ci) != len(va):
            raise ValueError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be nondecreasing")
        if len(ci) and (ci.min() < 0 or ci.max() >= self.cols):
            raise ValueError("column index out of range")
        if len(ci) > 1:
            # a decrease is only allowed where a new row starts
            bad = np.diff(ci) <= 0
            bad[ro[1:-1][(ro[1:-1] > 0) & (ro[1:-1] < len(ci))] - 1] = False
            if np.any(bad):
                raise ValueError("column indices must be strictly increasing within a row")
        if not np.all(np.isfinite(va)):
            raise ValueError("stored values must be finite")
        for name, arr in (("row_offsets", ro), ("col_indices", ci), ("values", va)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        csr = sp.csr_matrix((va, ci, ro), shape=(self.rows, self.cols), copy=False)
        csr.has_sorted_indices = True
        object.__setattr__(self, "_csr", csr)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    @property
    def sparsity(self) -> float:
        """Fraction of structurally zero entries."""
        total = self.rows * self.cols
        return 1.0 - self.nnz / total if total else 1.0

    @property
    def T(self) -> "SparseMatrix":
        return transpose(self)

    def __matmul__(self, v):
        return matvec(self, v)

    def max_value(self) -> float:
        return float(self.values.max()) if self.nnz else 0.0

    def to_scipy(self) -> sp.csr_matrix:
        return self._csr

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    @classmethod
    def from_scipy(cls, M) -> "SparseMatrix":
        M = sp.csr_matrix(M, copy=True)
        M.sum_duplicates()
        M.eliminate_zeros()
        M.sort_indices()
        return cls(M.shape[0], M.shape[1], M.indptr, M.indices, M.data)

    @classmethod
    def from_dense(cls, D) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(D, dtype=np.float64)))

    @classmethod
    def from_coo(cls, rows: int, cols: int, i, j, v) -> "SparseMatrix":
        """Assemble from triplets; duplicates are summed and zeros dropped."""
        M = sp.coo_matrix((np.asarray(v, dtype=np.float64), (np.asarray(i), np.asarray(j))),
                          shape=(rows, cols))
        return cls.from_scipy(M.tocsr())

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n))

    def equals(self, other: "SparseMatrix") -> bool:
        """Bit-identical structure and values."""
        return (self.shape == other.shape
                and np.array_equal(self.row_offsets, other.row_offsets)
                and np.array_equal(self.col_indices, other.col_indices)
                and np.array_equal(self.values, other.values))


def _as_vector(v, n: int, what: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != n:
        raise DimensionError(f"{what} has shape {v.shape}, expected ({n},)")
    return v


def matvec(M: SparseMatrix, v) -> np.ndarray:
    """Return ``M @ v``; raises if any row sum is not finite."""
    v = _as_vector(v, M.cols)
    out = M.to_scipy() @ v
    if not np.all(np.isfinite(out)):
        row = int(np.flatnonzero(~np.isfinite(out))[0])
        raise NonFiniteError(f"matvec produced a non-finite value in row {row}")
    return out


def transpose(M: SparseMatrix) -> SparseMatrix:
    # CSC arrays of M are exactly the CSR arrays of M^T
    csc = M.to_scipy().tocsc()
    csc.sort_indices()
    return SparseMatrix(M.cols, M.rows, csc.indptr, csc.indices, csc.data)


def frob_norm(M: SparseMatrix) -> float:
    return float(np.linalg.norm(M.values))


def frob_diff(M1: SparseMatrix, M2: SparseMatrix) -> float:
    """``||M1 - M2||_F`` over the merged sparsity pattern, never densified."""
    if M1.shape != M2.shape:
        raise DimensionError(f"shape mismatch {M1.shape} vs {M2.shape}")
    D = M1.to_scipy() - M2.to_scipy()
    return float(np.linalg.norm(D.data))


# ---------------------------------------------------------------------------
# Matrix Market


def mm_write(M: SparseMatrix, path) -> None:
    """Write coordinate/real/general Matrix Market with 17 significant digits."""
    counts = np.diff(M.row_offsets)
    rows = np.repeat(np.arange(1, M.rows + 1), counts)
    cols = M.col_indices + 1
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(MM_HEADER + "\n")
        f.write(f"{M.rows} {M.cols} {M.nnz}\n")
        chunk = 1 << 18
        for s in range(0, M.nnz, chunk):
            e = min(s + chunk, M.nnz)
            f.write("".join(f"{r} {c} {x:.17g}\n" for r, c, x in
                            zip(rows[s:e].tolist(), cols[s:e].tolist(), M.values[s:e].tolist())))


def _locate_bad_entry(lines, first: int) -> MatrixMarketError:
    for ln, text in enumerate(lines[first:], start=first + 1):
        parts = text.split()
        if not parts:
            continue
        if len(parts) != 3:
            return MatrixMarketError(f"expected 3 fields, got {len(parts)}", ln)
        try:
            int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            return MatrixMarketError(f"non-numeric entry {text.strip()!r}", ln)
    return MatrixMarketError("malformed entry")


def mm_read(path) -> SparseMatrix:
    """Read a file written by :func:`mm_write` (or any real general coordinate file)."""
    with open(path, "r", encoding="ascii") as f:
        text = f.read()
    lines = text.split("\n")
    if not lines or lines[0].split()[:1] != ["%%MatrixMarket"]:
        raise MatrixMarketError("missing %%MatrixMarket banner", 1)
    banner = lines[0].lower().split()
    if banner[1:5] != ["matrix", "coordinate", "real", "general"]:
        raise MatrixMarketError(f"unsupported header {lines[0]!r}", 1)
    i = 1
    while i < len(lines) and (lines[i].startswith("%") or not lines[i].strip()):
        i += 1
    if i == len(lines):
        raise MatrixMarketError("missing size line", i)
    size = lines[i].split()
    try:
        nrows, ncols, nnz = (int(t) for t in size)
    except ValueError:
        raise MatrixMarketError(f"bad size line {lines[i]!r}", i + 1) from None
    if min(nrows, ncols, nnz) < 0:
        raise MatrixMarketError("negative size", i + 1)
    first = i + 1
    body = lines[first:]
    tokens = " ".join(body).split()
    if len(tokens) % 3:
        raise _locate_bad_entry(lines, first)
    n_entries = len(tokens) // 3
    if n_entries != nnz:
        # point at the first surplus line, or the end of file if short
        nonblank = [k for k, t in enumerate(body) if t.strip()]
        ln = first + nonblank[nnz] + 1 if n_entries > nnz else len(lines)
        raise MatrixMarketError(f"size line declares {nnz} entries, found {n_entries}", ln)
    try:
        r = np.array(tokens[0::3] or [], dtype=str).astype(np.int64)
        c = np.array(tokens[1::3] or [], dtype=str).astype(np.int64)
        v = np.array(tokens[2::3] or [], dtype=str).astype(np.float64)
    except (ValueError, TypeError, OverflowError):
        raise _locate_bad_entry(lines, first) from None
    bad = (r < 1) | (r > nrows) | (c < 1) | (c > ncols) | ~np.isfinite(v)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        nonblank = [j for j, t in enumerate(body) if t.strip()]
        raise MatrixMarketError("index out of bounds or non-finite value", first + nonblank[k] + 1)
    M = sp.coo_matrix((v, (r - 1, c - 1)), shape=(nrows, ncols)).tocsr()
    M.sum_duplicates()
    M.sort_indices()
    return SparseMatrix(nrows, ncols, M.indptr, M.indices, M.data)


# ---------------------------------------------------------------------------
# Dense desk-scale routines


def dense_svd(M, cap: int = DEFAULT_SVD_CAP):
    """Thin SVD ``M = U diag(sigma) V^T`` with ``sigma`` nonincreasing.

    Returns ``(U, sigma, V)``; note ``V`` (not ``V^T``).
    """
    M = _as_dense(M)
    if M.size > cap:
        raise CapExceededError(
            f"matrix has {M.size} elements, above the dense cap {cap}; "
            "use the 'desk' geometry (N=64) or smaller")
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    return U, s, Vt.T


def dense_eig(M, cap: int = DEFAULT_EIG_CAP) -> np.ndarray:
    """All eigenvalues of a square, generally nonsymmetric matrix."""
    M = _as_dense(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"eigenvalues need a square matrix, got {M.shape}")
    if M.shape[0] > cap:
        raise CapExceededError(f"order {M.shape[0]} exceeds the dense eigenvalue cap {cap}")
    try:
        return np.linalg.eigvals(M).astype(np.complex128)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigenvalue iteration failed: {exc}") from exc


def _as_dense(M) -> np.ndarray:
    if isinstance(M, SparseMatrix):
        return M.to_dense()
    if sp.issparse(M):
        return M.toarray()
    M = np.asarray(M, dtype=np.float64)
    if not np.all(np.isfinite(M)):
        raise NonFiniteError("dense matrix has non-finite entries")
    return M


def set_threads(n: int | None) -> None:
    """Limit BLAS threads (best effort; dense SVD/eig are the only users)."""
    if not n:
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        os.environ["OMP_NUM_THREADS"] = str(n)
        return
    threadpool_limits(limits=int(n))


__all__ = [
    "SparseMatrix", "matvec", "transpose", "frob_norm", "frob_diff", "mm_write", "mm_read",
    "dense_svd", "dense_eig", "DimensionError", "NonFiniteError", "CapExceededError",
    "MatrixMarketError", "set_threads",
]
