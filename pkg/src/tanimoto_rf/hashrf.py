"""Consistent weighted sampling and hash-indexed random features for T_MM.

Hash ``m`` of a :class:`MinMaxFeatureMap` owns a stream whose values at
counters ``5i .. 5i+4`` give ``(r_i, c_i, beta_i)`` for coordinate ``i``;
its random 1-d feature vector Xi has entry ``b`` at counter ``b`` of a second
stream.  Nothing is tabulated, so maps of any size cost no memory and
evaluating features for a subset of points or hashes gives the same numbers
as evaluating all of them.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass

import numpy as np

from .core import (
    MASK64,
    TAG_CWS,
    TAG_XI,
    Dataset,
    SeedStream,
    SparseVec,
    as_dataset,
    gaussian_from_streams,
    mix64,
    stream_values,
    stream_values_at,
    to_unit,
)

XI_DISTS = ("rademacher", "gaussian")
XI_FOURTH_MOMENT = {"rademacher": 1.0, "gaussian": 3.0}
_INT32_MIN = -(2**31)
_INT32_MAX = 2**31 - 1
_U32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)
_BLOCK_BUDGET = 1 << 21


def _cws_params(seeds: np.ndarray, coords: np.ndarray):
    """``(r, c, beta)`` of shape ``seeds.shape + coords.shape``.

    ``r, c ~ Gamma(2, 1)`` as sums of two unit exponentials, ``beta ~ U(0, 1)``.
    """
    base = np.asarray(coords, dtype=np.uint64) * np.uint64(5)
    u = [to_unit(stream_values(seeds, base + np.uint64(j))) for j in range(5)]
    r = -np.log(u[0]) - np.log(u[1])
    c = -np.log(u[2]) - np.log(u[3])
    return r, c, u[4]


def _cws_argmin(r, c, beta, logx, valid):
    """Vectorized CWS over the trailing axis.

    All inputs broadcast to ``(..., nnz)``; ``valid`` masks padding.
    Returns ``(position of the argmin, t at the argmin)``.
    """
    t = np.floor(logx / r + beta)
    a = np.log(c) - r * (t - beta) - r
    a = np.where(valid, a, np.inf)
    pos = np.argmin(a, axis=-1)
    t_star = np.take_along_axis(t, pos[..., None], axis=-1)[..., 0]
    if t_star.size and (t_star.min() < _INT32_MIN or t_star.max() > _INT32_MAX):
        raise ValueError("hash value t* outside the signed 32-bit range")
    return pos, t_star.astype(np.int64)


@dataclass(frozen=True)
class CwsHash:
    """One draw of Ioffe's consistent weighted sampling hash on ``dim`` coordinates."""

    dim: int
    seed: int

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError("dim must be positive")
        if not 0 <= int(self.seed) <= MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def params(self, coords):
        """``(r, c, beta)`` at the given coordinates."""
        return _cws_params(np.uint64(self.seed), np.asarray(coords))

    @functools.cached_property
    def _dense_params(self):
        return self.params(np.arange(self.dim))

    @property
    def r(self) -> np.ndarray:
        return self._dense_params[0]

    @property
    def c(self) -> np.ndarray:
        return self._dense_params[1]

    @property
    def beta(self) -> np.ndarray:
        return self._dense_params[2]


def cws_hash(h: CwsHash, x: SparseVec) -> tuple[int, int]:
    """Return ``(i_star, t_star)``; two vectors collide with probability T_MM."""
    if x.dim != h.dim:
        raise ValueError(f"dimension mismatch: {x.dim} != {h.dim}")
    if x.nnz == 0:
        raise ValueError("cannot hash the zero vector")
    r, c, beta = h.params(x.indices)
    pos, t_star = _cws_argmin(r, c, beta, np.log(x.values), np.ones(x.nnz, dtype=bool))
    return int(x.indices[pos]), int(t_star)


def _check_t32(t_star):
    t = np.asarray(t_star, dtype=np.int64)
    if t.size and (t.min() < _INT32_MIN or t.max() > _INT32_MAX):
        raise ValueError("t_star outside the signed 32-bit range")
    return t


def bucket(i_star, t_star, K: int):
    """``mix64((i_star << 32) ^ u32(t_star)) mod K``; works elementwise on arrays."""
    if int(K) < 1:
        raise ValueError("K must be positive")
    scalar = np.ndim(i_star) == 0 and np.ndim(t_star) == 0
    t = _check_t32(t_star)
    i = np.asarray(i_star, dtype=np.int64)
    if i.size and i.min() < 0:
        raise ValueError("i_star must be non-negative")
    key = (i.astype(np.uint64) << _SHIFT32) ^ (t.astype(np.uint64) & _U32)
    out = (mix64(key) % np.uint64(K)).astype(np.int64)
    return int(out) if scalar else out


def _padded(D: Dataset):
    """Padded per-point coordinate positions into the union support, plus log values."""
    X = D.csr
    nnz = np.diff(X.indptr)
    if len(D) and nnz.min() == 0:
        raise ValueError("cannot hash the zero vector")
    union, inv = np.unique(X.indices, return_inverse=True)
    width = int(nnz.max()) if len(D) else 0
    rows = np.repeat(np.arange(len(D)), nnz)
    slot = np.arange(X.nnz) - np.repeat(X.indptr[:-1], nnz)
    pos = np.zeros((len(D), width), dtype=np.int64)
    logx = np.zeros((len(D), width))
    valid = np.zeros((len(D), width), dtype=bool)
    pos[rows, slot] = inv
    logx[rows, slot] = np.log(X.data)
    valid[rows, slot] = True
    return union, pos, logx, valid


@dataclass(frozen=True)
class MinMaxFeatureMap:
    """``M`` hash-indexed random features whose inner products estimate T_MM.

    Feature ``m`` of ``x`` is ``Xi_m[bucket(h_m(x))] / sqrt(M)``.
    """

    M: int
    K: int = 4096
    xi: str = "rademacher"
    seed: int = 0

    family = "minmax"

    def __post_init__(self):
        if int(self.M) < 1:
            raise ValueError("M must be positive")
        if int(self.K) < 2:
            raise ValueError("K must be at least 2")
        if self.xi not in XI_DISTS:
            raise ValueError(f"xi must be one of {XI_DISTS}")
        if not 0 <= int(self.seed) <= MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @functools.cached_property
    def _hash_seeds(self) -> np.ndarray:
        return SeedStream(self.seed, TAG_CWS).children(np.arange(self.M))

    @functools.cached_property
    def _xi_seeds(self) -> np.ndarray:
        return SeedStream(self.seed, TAG_XI).children(np.arange(self.M))

    def hash(self, m: int, dim: int) -> CwsHash:
        return CwsHash(dim, int(self._hash_seeds[m]))

    def xi_values(self, m, b) -> np.ndarray:
        """Entries ``Xi_m[b]`` (broadcast over ``m`` and ``b``)."""
        m, b = np.broadcast_arrays(np.asarray(m, dtype=np.int64), np.asarray(b, dtype=np.int64))
        seeds = self._xi_seeds[m]
        if self.xi == "rademacher":
            v = stream_values_at(seeds, b)
            return 1.0 - 2.0 * (v >> np.uint64(63)).astype(np.float64)
        return gaussian_from_streams(seeds, b, pointwise=True)

    def xi_vector(self, m: int) -> np.ndarray:
        """The full length-``K`` vector Xi_m."""
        return self.xi_values(np.full(self.K, m), np.arange(self.K))

    def xi_table(self, m: int) -> np.ndarray:
        """Rademacher Xi_m packed one bit per entry (bit set means -1)."""
        if self.xi != "rademacher":
            raise ValueError("bit packing applies to Rademacher Xi only")
        return np.packbits(self.xi_vector(m) < 0)

    def hash_codes(self, D) -> tuple[np.ndarray, np.ndarray]:
        """``(i_star, t_star)`` arrays of shape ``(M, n)``."""
        D = as_dataset(D)
        union, pos, logx, valid = _padded(D)
        n, width = pos.shape
        i_star = np.empty((self.M, n), dtype=np.int64)
        t_star = np.empty((self.M, n), dtype=np.int64)
        step = max(1, _BLOCK_BUDGET // max(1, n * width + union.size))
        for start in range(0, self.M, step):
            blk = slice(start, min(self.M, start + step))
            r, c, beta = _cws_params(self._hash_seeds[blk], union)
            # gather to (B, n, width)
            p, t = _cws_argmin(r[:, pos], c[:, pos], beta[:, pos], logx, valid)
            i_star[blk] = union[np.take_along_axis(pos, p.T, axis=1).T] if n else p
            t_star[blk] = t
        return i_star, t_star

    def buckets(self, D) -> np.ndarray:
        i_star, t_star = self.hash_codes(D)
        return bucket(i_star, t_star, self.K)

    def transform(self, D) -> np.ndarray:
        """Feature matrix of shape ``(M, n)``, one column per data point."""
        b = self.buckets(D)
        m = np.broadcast_to(np.arange(self.M)[:, None], b.shape)
        return self.xi_values(m, b) / np.sqrt(self.M)

    def to_dict(self) -> dict:
        return {"family": "minmax", "M": int(self.M), "K": int(self.K), "xi": self.xi, "seed": int(self.seed)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxFeatureMap":
        if d.get("family") != "minmax":
            raise ValueError("not a minmax spec")
        return cls(M=int(d["M"]), K=int(d.get("K", 4096)), xi=d.get("xi", "rademacher"), seed=int(d.get("seed", 0)))

    @classmethod
    def from_json(cls, text: str) -> "MinMaxFeatureMap":
        return cls.from_dict(json.loads(text))


def minmax_features(fmap: MinMaxFeatureMap, x: SparseVec) -> np.ndarray:
    """Length-``M`` feature vector of one point."""
    return fmap.transform(x)[:, 0]


def feature_variance(T, xi: str = "rademacher"):
    """Variance of one unnormalized feature product: ``1 + T (E[xi^4] - 1 - T)``."""
    T = np.asarray(T, dtype=np.float64)
    return 1.0 + T * (XI_FOURTH_MOMENT[xi] - 1.0 - T)
