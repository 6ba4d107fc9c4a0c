"""Exact Tanimoto kernels, their distances and Gram matrices.

``t_mm`` is the min-max (weighted Jaccard) coefficient on non-negative
vectors; ``t_dp`` is the dot-product form, which is positive definite on all
of R^d.  Both return 1 when both inputs are the zero vector.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .core import Dataset, SparseVec

KERNELS = ("tmm", "tdp")


def _pair(x, y):
    """Return the pair as SparseVecs, or as dense float arrays if either is not sparse."""
    if isinstance(x, SparseVec) and isinstance(y, SparseVec):
        if x.dim != y.dim:
            raise ValueError(f"dimension mismatch: {x.dim} != {y.dim}")
        return x, y
    xd = x.to_dense() if isinstance(x, SparseVec) else np.atleast_1d(np.asarray(x, dtype=np.float64))
    yd = y.to_dense() if isinstance(y, SparseVec) else np.atleast_1d(np.asarray(y, dtype=np.float64))
    if xd.shape != yd.shape:
        raise ValueError(f"dimension mismatch: {xd.shape} != {yd.shape}")
    return xd, yd


def _l1_stats(x, y):
    """(|x|_1 + |y|_1, |x - y|_1)."""
    if isinstance(x, SparseVec):
        union = np.union1d(x.indices, y.indices)
        xv = np.zeros(union.size)
        yv = np.zeros(union.size)
        xv[np.searchsorted(union, x.indices)] = x.values
        yv[np.searchsorted(union, y.indices)] = y.values
        return x.l1 + y.l1, float(np.abs(xv - yv).sum())
    if np.any(x < 0) or np.any(y < 0):
        raise ValueError("t_mm is defined for non-negative vectors")
    return float(x.sum() + y.sum()), float(np.abs(x - y).sum())


def t_mm(x, y) -> float:
    """Min-max Tanimoto coefficient, sum(min)/sum(max), via the L1 identity."""
    x, y = _pair(x, y)
    s, d = _l1_stats(x, y)
    if s + d == 0.0:
        return 1.0
    return (s - d) / (s + d)


def _dot_norms(x, y):
    """(x.y, |x|^2, |y|^2) after dividing both by their largest magnitude.

    Both kernel and series ratio are invariant to a common scale, and the
    rescaling keeps the squares of tiny or huge entries from under- or overflowing.
    """
    if isinstance(x, SparseVec):
        scale = max(np.abs(x.values).max(initial=0.0), np.abs(y.values).max(initial=0.0))
        if scale == 0.0 or 1e-100 < scale < 1e100:
            return x.dot(y), x.sqnorm, y.sqnorm
        x, y = x.to_dense() / scale, y.to_dense() / scale
    else:
        scale = max(np.abs(x).max(initial=0.0), np.abs(y).max(initial=0.0))
        if scale > 0.0:
            x, y = x / scale, y / scale
    return float(np.dot(x, y)), float(np.dot(x, x)), float(np.dot(y, y))


def t_dp(x, y) -> float:
    """Dot-product Tanimoto: x.y / (|x|^2 + |y|^2 - x.y).  Accepts arbitrary-sign dense input."""
    x, y = _pair(x, y)
    xy, xx, yy = _dot_norms(x, y)
    denom = xx + yy - xy
    if denom == 0.0:
        return 1.0
    return xy / denom


def series_ratio(x, y) -> float:
    """t = x.y / (|x|^2 + |y|^2), the ratio whose powers sum to ``t_dp``."""
    x, y = _pair(x, y)
    xy, xx, yy = _dot_norms(x, y)
    if xx + yy == 0.0:
        raise ValueError("power series undefined when both vectors are zero; use t_dp")
    return xy / (xx + yy)


def t_dp_series(x, y, R: int) -> float:
    """Power series of ``t_dp`` truncated after ``R`` terms."""
    if R < 1:
        raise ValueError("R must be at least 1")
    t = series_ratio(x, y)
    return float(sum(t**r for r in range(1, int(R) + 1)))


def d_mm(x, y) -> float:
    return 1.0 - t_mm(x, y)


def d_dp(x, y) -> float:
    return float(np.sqrt(max(0.0, 1.0 - t_dp(x, y))))


# ---------------------------------------------------------------------------
# Gram matrices
# ---------------------------------------------------------------------------


def _as_csr(D) -> sp.csr_matrix:
    if isinstance(D, Dataset):
        return D.csr
    if sp.issparse(D):
        return sp.csr_matrix(D, dtype=np.float64)
    return sp.csr_matrix(np.atleast_2d(np.asarray(D, dtype=np.float64)))


def _level_expansion(A: sp.csr_matrix, B: sp.csr_matrix):
    """Encode sum_i min(a_i, b_i) as a sparse bilinear form.

    For coordinate ``i`` with distinct positive values ``v_1 < ... < v_L``
    (over both matrices), ``min(a, b) = sum_k (v_k - v_{k-1}) [a >= v_k][b >= v_k]``.
    Returns indicator matrices ``(EA, EB)`` and level widths ``w`` so that
    ``(EA * w) @ EB.T`` is the matrix of sum-of-minimums.
    """
    cols = np.concatenate([A.indices, B.indices]).astype(np.float64)
    vals = np.concatenate([A.data, B.data])
    key, inv = np.unique(np.stack([cols, vals], axis=1), axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    lev_col = key[:, 0].astype(np.int64)
    lev_val = key[:, 1]
    first = np.ones(len(key), dtype=bool)
    first[1:] = lev_col[1:] != lev_col[:-1]
    widths = lev_val - np.where(first, 0.0, np.concatenate([[0.0], lev_val[:-1]]))
    col_start = np.searchsorted(lev_col, np.arange(A.shape[1]))

    def expand(X: sp.csr_matrix, top: np.ndarray) -> sp.csr_matrix:
        rows = np.repeat(np.arange(X.shape[0]), np.diff(X.indptr))
        start = col_start[X.indices]
        counts = top - start + 1
        offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        levels = np.repeat(start, counts) + offsets
        data = np.ones(levels.size)
        return sp.csr_matrix((data, (np.repeat(rows, counts), levels)), shape=(X.shape[0], len(key)))

    return expand(A, inv[: A.nnz]), expand(B, inv[A.nnz :]), widths


def _block_rows(n: int, width: int, budget: int = 2**24):
    step = max(1, budget // max(width, 1))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def cross_gram(A, B, kernel: str = "tdp") -> np.ndarray:
    """Kernel matrix between the rows of ``A`` and the rows of ``B``.

    ``A`` and ``B`` may be :class:`Dataset` objects, sparse matrices or dense
    arrays with one data point per row.
    """
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")
    A = _as_csr(A)
    B = _as_csr(B)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} != {B.shape[1]}")
    out = np.empty((A.shape[0], B.shape[0]))

    if kernel == "tdp":
        Bd = B.toarray()
        sa = np.asarray(A.multiply(A).sum(axis=1)).ravel()
        sb = np.einsum("ij,ij->i", Bd, Bd)
        for blk in _block_rows(A.shape[0], B.shape[0]):
            G = A[blk] @ Bd.T
            denom = sa[blk, None] + sb[None, :] - G
            with np.errstate(invalid="ignore", divide="ignore"):
                out[blk] = np.where(denom == 0.0, 1.0, G / np.where(denom == 0.0, 1.0, denom))
        return out

    if A.nnz and (A.data < 0).any() or B.nnz and (B.data < 0).any():
        raise ValueError("t_mm is defined for non-negative vectors")
    EA, EB, w = _level_expansion(A, B)
    EAw = EA @ sp.diags(w)
    EBt = EB.T.tocsc()
    la = np.asarray(A.sum(axis=1)).ravel()
    lb = np.asarray(B.sum(axis=1)).ravel()
    for blk in _block_rows(A.shape[0], B.shape[0]):
        smin = (EAw[blk] @ EBt).toarray()
        s = la[blk, None] + lb[None, :]
        d = s - 2.0 * smin  # |x - y|_1
        denom = s + d
        with np.errstate(invalid="ignore", divide="ignore"):
            out[blk] = np.where(denom == 0.0, 1.0, (s - d) / np.where(denom == 0.0, 1.0, denom))
    return out


def gram(D, kernel: str = "tdp") -> np.ndarray:
    """Exact symmetric Gram matrix with unit diagonal."""
    K = cross_gram(D, D, kernel)
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, 1.0)
    return K


def min_eigenvalue(K: np.ndarray) -> float:
    """Signed smallest eigenvalue of a symmetric matrix."""
    return float(np.linalg.eigvalsh(K)[0])
