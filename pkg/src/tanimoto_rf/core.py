"""Sparse fingerprint primitives, deterministic random streams and file I/O.

Every random quantity in this package is derived from a :class:`SeedStream`.
A stream is a 64-bit seed; the value at counter ``k`` is
``mix64(seed ^ mix64(k))``, and a child stream with index ``k`` is seeded with
that same value.  Because values are addressed by counter rather than drawn
sequentially, the order in which features or points are evaluated never
changes the output.
"""

from __future__ import annotations

import functools
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

MASK64 = (1 << 64) - 1
_C1 = 0xBF58476D1CE4E5B9
_C2 = 0x94D049BB133111EB
_U64_C1 = np.uint64(_C1)
_U64_C2 = np.uint64(_C2)
_TWO_M52 = 2.0**-52

# Stream tags, one per consumer of randomness.
TAG_CWS = 1
TAG_XI = 2
TAG_COUNT_SKETCH = 3
TAG_PREFACTOR = 4
TAG_TDP = 5
TAG_SYNTH = 6
TAG_GP = 7
TAG_THOMPSON = 8


def _mix64_int(z: int) -> int:
    z &= MASK64
    z ^= z >> 30
    z = (z * _C1) & MASK64
    z ^= z >> 27
    z = (z * _C2) & MASK64
    z ^= z >> 31
    return z


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = np.array(z, dtype=np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= _U64_C1
    z ^= z >> np.uint64(27)
    z *= _U64_C2
    z ^= z >> np.uint64(31)
    return z


def mix64(z):
    """64-bit avalanche finalizer (wrapping arithmetic).

    Accepts a Python int (returns an int) or an array-like of unsigned
    64-bit integers (returns a ``uint64`` array of the same shape).
    """
    if isinstance(z, (int, np.integer)) and not isinstance(z, bool):
        return _mix64_int(int(z))
    return _mix64_array(np.asarray(z, dtype=np.uint64))


def stream_values(seeds, counters) -> np.ndarray:
    """Raw 64-bit values of many streams at many counters.

    Returns ``mix64(seeds[..., None] ^ mix64(counters))`` broadcast to shape
    ``seeds.shape + counters.shape``.
    """
    seeds = np.asarray(seeds, dtype=np.uint64)
    mc = _mix64_array(np.asarray(counters, dtype=np.uint64))
    return _mix64_array(seeds.reshape(seeds.shape + (1,) * mc.ndim) ^ mc)


def stream_values_at(seeds, counters) -> np.ndarray:
    """Elementwise ``mix64(seeds ^ mix64(counters))`` (inputs broadcast together)."""
    seeds, counters = np.broadcast_arrays(np.asarray(seeds, dtype=np.uint64), np.asarray(counters, dtype=np.uint64))
    return _mix64_array(seeds ^ _mix64_array(counters))


def to_unit(z: np.ndarray) -> np.ndarray:
    """Map uint64 values to floats strictly inside (0, 1)."""
    # 52 bits plus a half step: both ends stay exactly representable inside (0, 1)
    return ((z >> np.uint64(12)).astype(np.float64) + 0.5) * _TWO_M52


@dataclass(frozen=True)
class SeedStream:
    """A counter-addressed random stream derived from ``(master_seed, stream_index)``."""

    master_seed: int
    stream_index: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_index"):
            v = getattr(self, name)
            if not 0 <= int(v) <= MASK64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {v}")

    @functools.cached_property
    def seed(self) -> int:
        return _mix64_int(self.master_seed ^ _mix64_int(self.stream_index))

    def child(self, index: int) -> "SeedStream":
        return SeedStream(self.seed, int(index))

    def children(self, indices) -> np.ndarray:
        """Seeds of many child streams at once, as a uint64 array."""
        return stream_values(np.uint64(self.seed), indices)

    def uint64(self, counters) -> np.ndarray:
        return stream_values(np.uint64(self.seed), counters)

    def uniform(self, counters) -> np.ndarray:
        return to_unit(self.uint64(counters))

    def generator(self) -> np.random.Generator:
        """A sequential numpy generator for bulk draws (GP sampling, synthetic data)."""
        return np.random.Generator(np.random.PCG64(self.seed))


def gaussian_from_streams(seeds, counters, pointwise: bool = False) -> np.ndarray:
    """Standard normals via Box-Muller from the stream values at ``2k`` and ``2k+1``.

    The result has shape ``seeds.shape + counters.shape``, or the broadcast
    shape of the two when ``pointwise`` is set.
    """
    values = stream_values_at if pointwise else stream_values
    counters = np.asarray(counters, dtype=np.uint64)
    u1 = to_unit(values(seeds, counters * np.uint64(2)))
    u2 = to_unit(values(seeds, counters * np.uint64(2) + np.uint64(1)))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


# ---------------------------------------------------------------------------
# Sparse vectors and datasets
# ---------------------------------------------------------------------------


class SparseVec:
    """Non-negative sparse vector stored as strictly ascending (index, value) pairs.

    Zero values are never stored.  Instances are immutable.
    """

    __slots__ = ("dim", "indices", "values")

    def __init__(self, dim: int, indices=(), values=(), *, check: bool = True):
        indices = np.array(indices, dtype=np.int64).reshape(-1)
        values = np.array(values, dtype=np.float64).reshape(-1)
        if check:
            dim = int(dim)
            if dim < 1:
                raise ValueError(f"dim must be positive, got {dim}")
            if indices.shape != values.shape:
                raise ValueError("indices and values must have equal length")
            if indices.size:
                if indices[0] < 0 or indices[-1] >= dim:
                    raise ValueError(f"index out of range [0, {dim})")
                if np.any(np.diff(indices) <= 0):
                    raise ValueError("indices must be strictly ascending")
                if not np.all(values > 0) or not np.all(np.isfinite(values)):
                    raise ValueError("values must be finite and positive")
        indices.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)

    def __setattr__(self, name, value):
        raise AttributeError("SparseVec is immutable")

    @classmethod
    def from_pairs(cls, dim: int, pairs: Iterable[tuple[int, float]]) -> "SparseVec":
        pairs = list(pairs)
        return cls(dim, [p[0] for p in pairs], [p[1] for p in pairs])

    @classmethod
    def from_dense(cls, x) -> "SparseVec":
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if np.any(x < 0):
            raise ValueError("SparseVec holds non-negative vectors only")
        (idx,) = np.nonzero(x)
        return cls(x.size, idx, x[idx])

    @property
    def entries(self) -> list[tuple[int, float]]:
        return [(int(i), float(v)) for i, v in zip(self.indices, self.values)]

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    @property
    def sqnorm(self) -> float:
        return float(np.dot(self.values, self.values))

    @property
    def l1(self) -> float:
        return float(self.values.sum())

    def dot(self, other: "SparseVec") -> float:
        _check_same_dim(self, other)
        common, ia, ib = np.intersect1d(self.indices, other.indices, assume_unique=True, return_indices=True)
        return float(np.dot(self.values[ia], other.values[ib]))

    def scaled(self, factor: float) -> "SparseVec":
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return SparseVec(self.dim, self.indices, self.values * factor)

    def __len__(self):
        return self.nnz

    def __eq__(self, other):
        if not isinstance(other, SparseVec):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((self.dim, self.indices.tobytes(), self.values.tobytes()))

    def __repr__(self):
        body = ", ".join(f"({i}, {v:g})" for i, v in self.entries[:6])
        more = ", ..." if self.nnz > 6 else ""
        return f"SparseVec(dim={self.dim}, [{body}{more}])"


def _check_same_dim(x: SparseVec, y: SparseVec):
    if x.dim != y.dim:
        raise ValueError(f"dimension mismatch: {x.dim} != {y.dim}")


def sqrt_transform(v: SparseVec) -> SparseVec:
    """Replace every stored count by its square root."""
    return SparseVec(v.dim, v.indices, np.sqrt(v.values), check=False)


class Dataset:
    """An ordered collection of :class:`SparseVec` sharing one dimension, with unique ids."""

    def __init__(self, dim: int, ids: Sequence[str], vectors: Sequence[SparseVec]):
        ids = tuple(str(i) for i in ids)
        vectors = tuple(vectors)
        if len(ids) != len(vectors):
            raise ValueError(f"{len(ids)} ids for {len(vectors)} vectors")
        if len(set(ids)) != len(ids):
            raise ValueError("dataset ids must be unique")
        for v in vectors:
            if v.dim != dim:
                raise ValueError(f"vector of dim {v.dim} in dataset of dim {dim}")
        self.dim = int(dim)
        self.ids = ids
        self.vectors = vectors

    @classmethod
    def from_dense(cls, X, ids: Sequence[str] | None = None) -> "Dataset":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if ids is None:
            ids = [f"x{i}" for i in range(X.shape[0])]
        return cls(X.shape[1], ids, [SparseVec.from_dense(row) for row in X])

    @classmethod
    def from_csr(cls, X: sp.csr_matrix, ids: Sequence[str] | None = None) -> "Dataset":
        X = sp.csr_matrix(X, dtype=np.float64)
        X.sort_indices()
        X.eliminate_zeros()
        if ids is None:
            ids = [f"x{i}" for i in range(X.shape[0])]
        vecs = [
            SparseVec(X.shape[1], X.indices[a:b], X.data[a:b])
            for a, b in zip(X.indptr[:-1], X.indptr[1:])
        ]
        return cls(X.shape[1], ids, vecs)

    def __len__(self):
        return len(self.vectors)

    def __getitem__(self, i) -> SparseVec:
        return self.vectors[i]

    def __iter__(self):
        return iter(self.vectors)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.dim == other.dim and self.ids == other.ids and self.vectors == other.vectors

    def __repr__(self):
        return f"Dataset(n={len(self)}, dim={self.dim})"

    @functools.cached_property
    def csr(self) -> sp.csr_matrix:
        """Rows are data points."""
        nnz = np.fromiter((v.nnz for v in self.vectors), dtype=np.int64, count=len(self))
        indptr = np.concatenate([[0], np.cumsum(nnz)])
        if len(self) and indptr[-1]:
            indices = np.concatenate([v.indices for v in self.vectors])
            data = np.concatenate([v.values for v in self.vectors])
        else:
            indices = np.zeros(0, dtype=np.int64)
            data = np.zeros(0)
        return sp.csr_matrix((data, indices, indptr), shape=(len(self), self.dim))

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()

    @functools.cached_property
    def sqnorms(self) -> np.ndarray:
        return np.fromiter((v.sqnorm for v in self.vectors), dtype=np.float64, count=len(self))

    def subset(self, indices) -> "Dataset":
        indices = [int(i) for i in indices]
        return Dataset(self.dim, [self.ids[i] for i in indices], [self.vectors[i] for i in indices])

    def map(self, fn) -> "Dataset":
        return Dataset(self.dim, self.ids, [fn(v) for v in self.vectors])


def as_dataset(obj) -> Dataset:
    """Coerce a Dataset, a SparseVec or a sequence of SparseVecs to a Dataset."""
    if isinstance(obj, Dataset):
        return obj
    if isinstance(obj, SparseVec):
        obj = [obj]
    vecs = list(obj)
    if not vecs or not all(isinstance(v, SparseVec) for v in vecs):
        raise TypeError("expected a Dataset, a SparseVec or a non-empty sequence of SparseVecs")
    return Dataset(vecs[0].dim, [f"x{i}" for i in range(len(vecs))], vecs)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


def synth_dataset(n: int, dim: int, density: float, max_count: int = 1, seed: int = 0) -> Dataset:
    """Random count fingerprints.

    Each coordinate is nonzero independently with probability ``density``;
    nonzero values are uniform integers in ``[1, max_count]``.
    """
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    if n < 1 or dim < 1:
        raise ValueError("n and dim must be positive")
    if max_count < 1:
        raise ValueError("max_count must be at least 1")
    rng = SeedStream(seed, TAG_SYNTH).generator()
    vecs = []
    block = max(1, 2**20 // dim)
    for start in range(0, n, block):
        rows = min(block, n - start)
        mask = rng.random((rows, dim)) < density
        counts = rng.integers(1, max_count + 1, size=(rows, dim))
        for m, c in zip(mask, counts):
            (idx,) = np.nonzero(m)
            vecs.append(SparseVec(dim, idx, c[idx].astype(np.float64), check=False))
    width = len(str(n - 1))
    return Dataset(dim, [f"s{i:0{width}d}" for i in range(n)], vecs)


def synth_clustered(
    n: int,
    dim: int,
    n_clusters: int,
    density: float,
    max_count: int = 1,
    mutation: float = 0.2,
    seed: int = 0,
) -> Dataset:
    """Fingerprints grouped around random prototypes, mimicking families of related molecules.

    Each point copies a random prototype and then redraws every coordinate
    with probability ``mutation`` from the same distribution as
    :func:`synth_dataset`.
    """
    if not 0.0 <= mutation <= 1.0:
        raise ValueError("mutation must lie in [0, 1]")
    protos = synth_dataset(n_clusters, dim, density, max_count, seed).to_dense()
    rng = SeedStream(seed, TAG_SYNTH).child(1).generator()
    labels = rng.integers(0, n_clusters, size=n)
    vecs = []
    for lab in labels:
        x = protos[lab].copy()
        redraw = rng.random(dim) < mutation
        fresh = (rng.random(dim) < density) * rng.integers(1, max_count + 1, size=dim)
        x[redraw] = fresh[redraw]
        vecs.append(SparseVec.from_dense(x))
    width = len(str(n - 1))
    return Dataset(dim, [f"c{i:0{width}d}" for i in range(n)], vecs)


# ---------------------------------------------------------------------------
# Fingerprint text format
# ---------------------------------------------------------------------------


class FingerprintFormatError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _format_value(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def save_fingerprints(dataset: Dataset, path) -> None:
    lines = [f"#dim={dataset.dim}"]
    for ident, v in zip(dataset.ids, dataset.vectors):
        if any(c in ident for c in "\t\n\r") or not ident or ident.startswith("#"):
            raise ValueError(f"id {ident!r} cannot be written to a fingerprint file")
        pairs = " ".join(f"{i}:{_format_value(float(x))}" for i, x in zip(v.indices, v.values))
        lines.append(f"{ident}\t{pairs}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_fingerprints(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#dim="):
        raise FingerprintFormatError(1, "first line must be '#dim=<d>'")
    try:
        dim = int(lines[0][5:].strip())
    except ValueError:
        raise FingerprintFormatError(1, f"bad dimension {lines[0][5:]!r}") from None
    if dim < 1:
        raise FingerprintFormatError(1, "dimension must be positive")

    ids, vecs, seen = [], [], {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        ident, _, body = line.partition("\t")
        if not ident:
            raise FingerprintFormatError(lineno, "missing id")
        if ident in seen:
            raise FingerprintFormatError(lineno, f"duplicate id {ident!r} (first on line {seen[ident]})")
        seen[ident] = lineno
        idx, vals = [], []
        for tok in body.split():
            i_str, sep, v_str = tok.partition(":")
            if not sep:
                raise FingerprintFormatError(lineno, f"malformed pair {tok!r}")
            try:
                i, v = int(i_str), float(v_str)
            except ValueError:
                raise FingerprintFormatError(lineno, f"malformed pair {tok!r}") from None
            if not 0 <= i < dim:
                raise FingerprintFormatError(lineno, f"index {i} outside [0, {dim})")
            if idx and i <= idx[-1]:
                raise FingerprintFormatError(lineno, f"non-ascending indices ({idx[-1]} then {i})")
            if not (v > 0 and np.isfinite(v)):
                raise FingerprintFormatError(lineno, f"non-positive value {v_str!r}")
            idx.append(i)
            vals.append(v)
        ids.append(ident)
        vecs.append(SparseVec(dim, idx, vals, check=False))
    return Dataset(dim, ids, vecs)


def load_fingerprints(path, sqrt_counts: bool = False) -> Dataset:
    with open(os.fspath(path), encoding="utf-8") as fh:
        ds = parse_fingerprints(fh.read())
    return ds.map(sqrt_transform) if sqrt_counts else ds
