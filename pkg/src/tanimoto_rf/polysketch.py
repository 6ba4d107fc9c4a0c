"""CountSketch and TensorSketch.

All sketches act on column-major batches: an input of shape ``(d, n)`` holds
``n`` points, and outputs have shape ``(m, n)``.  Sparse inputs
(:class:`SparseVec` or :class:`Dataset`) are accepted wherever a raw
fingerprint is the input.  Bucket and sign of input coordinate ``i`` come
from the stream value ``v`` at counter ``i``: the sign is the low bit of
``v`` and the bucket is ``(v >> 1) mod m``.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import MASK64, TAG_COUNT_SKETCH, Dataset, SeedStream, SparseVec, as_dataset

CONV_METHODS = ("fft", "direct")


@dataclass(frozen=True)
class CountSketchSpec:
    input_dim: int
    output_dim: int
    seed: int = 0

    def __post_init__(self):
        if int(self.input_dim) < 1 or int(self.output_dim) < 1:
            raise ValueError("dimensions must be positive")
        if not 0 <= int(self.seed) <= MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def _values(self, idx) -> np.ndarray:
        return SeedStream(self.seed, TAG_COUNT_SKETCH).uint64(np.asarray(idx))

    def buckets(self, idx) -> np.ndarray:
        return ((self._values(idx) >> np.uint64(1)) % np.uint64(self.output_dim)).astype(np.int64)

    def signs(self, idx) -> np.ndarray:
        return 1.0 - 2.0 * (self._values(idx) & np.uint64(1)).astype(np.float64)

    @functools.cached_property
    def matrix(self) -> sp.csr_matrix:
        """The sparse ``output_dim x input_dim`` sketching matrix."""
        idx = np.arange(self.input_dim)
        return sp.csr_matrix(
            (self.signs(idx), (self.buckets(idx), idx)), shape=(self.output_dim, self.input_dim)
        )


def _as_columns(x, dim: int):
    """Return ``(matrix of shape (dim, n), was_single_vector)``; sparse input stays sparse."""
    if isinstance(x, SparseVec):
        if x.dim != dim:
            raise ValueError(f"dimension mismatch: {x.dim} != {dim}")
        return as_dataset(x).csr.T.tocsr(), True
    if isinstance(x, Dataset):
        if x.dim != dim:
            raise ValueError(f"dimension mismatch: {x.dim} != {dim}")
        return x.csr.T.tocsr(), False
    if sp.issparse(x):
        if x.shape[0] != dim:
            raise ValueError(f"dimension mismatch: {x.shape[0]} != {dim}")
        return sp.csr_matrix(x, dtype=np.float64), False
    a = np.asarray(x, dtype=np.float64)
    single = a.ndim == 1
    a = a.reshape(a.shape[0], -1) if not single else a[:, None]
    if a.shape[0] != dim:
        raise ValueError(f"dimension mismatch: {a.shape[0]} != {dim}")
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite input")
    return a, single


def _finish(out, single):
    return out[:, 0] if single else out


def count_sketch(spec: CountSketchSpec, x) -> np.ndarray:
    """``out[bucket(i)] += sign(i) * x_i``, applied to each column."""
    X, single = _as_columns(x, spec.input_dim)
    out = spec.matrix @ X
    out = out.toarray() if sp.issparse(out) else np.asarray(out)
    return _finish(out, single)


def circular_convolve(a: np.ndarray, b: np.ndarray, method: str = "fft") -> np.ndarray:
    """Circular convolution along axis 0 of two ``(m, n)`` arrays."""
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    m = a.shape[0]
    if method == "fft":
        return np.fft.irfft(np.fft.rfft(a, axis=0) * np.fft.rfft(b, axis=0), n=m, axis=0)
    if method == "direct":
        out = np.zeros(np.broadcast_shapes(a.shape, b.shape))
        for i in range(m):
            out += a[i] * np.roll(b, i, axis=0)
        return out
    raise ValueError(f"method must be one of {CONV_METHODS}")


def _convolve_all(sketches, method: str):
    if method == "direct" or len(sketches) == 1:
        out = sketches[0]
        for s in sketches[1:]:
            out = circular_convolve(out, s, "direct")
        return out
    m = sketches[0].shape[0]
    prod = np.fft.rfft(sketches[0], axis=0)
    for s in sketches[1:]:
        prod *= np.fft.rfft(s, axis=0)
    return np.fft.irfft(prod, n=m, axis=0)


@dataclass(frozen=True)
class TensorSketchSpec:
    """TensorSketch of ``x^{(x) degree}`` ("poly") or of ``a (x) b`` ("pair").

    Component CountSketch ``j`` is seeded from child ``j`` of this spec's stream.
    """

    mode: str
    input_dims: tuple
    output_dim: int
    degree: int = 2
    seed: int = 0

    family = "tensorsketch"

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        if self.mode == "poly":
            if len(self.input_dims) != 1:
                raise ValueError("poly mode takes a single input dimension")
            if int(self.degree) < 1:
                raise ValueError("degree must be at least 1")
        elif self.mode == "pair":
            if len(self.input_dims) != 2:
                raise ValueError("pair mode takes two input dimensions")
            object.__setattr__(self, "degree", 2)
        else:
            raise ValueError("mode must be 'poly' or 'pair'")
        if int(self.output_dim) < 1 or min(self.input_dims) < 1:
            raise ValueError("dimensions must be positive")
        if not 0 <= int(self.seed) <= MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def poly(cls, input_dim: int, degree: int, output_dim: int, seed: int = 0) -> "TensorSketchSpec":
        return cls("poly", (input_dim,), output_dim, degree, seed)

    @classmethod
    def pair(cls, dim_a: int, dim_b: int, output_dim: int, seed: int = 0) -> "TensorSketchSpec":
        return cls("pair", (dim_a, dim_b), output_dim, 2, seed)

    @functools.cached_property
    def components(self) -> tuple:
        stream = SeedStream(self.seed, TAG_COUNT_SKETCH)
        dims = self.input_dims * self.degree if self.mode == "poly" else self.input_dims
        return tuple(CountSketchSpec(d, self.output_dim, stream.child(j).seed) for j, d in enumerate(dims))

    def transform(self, x, y=None) -> np.ndarray:
        """Poly mode sketches ``x``; pair mode sketches ``x (x) y``, or ``x (x) x`` when ``y`` is omitted."""
        if self.mode == "poly":
            return tensor_sketch_poly(self, x)
        return tensor_sketch_pair(self, x, x if y is None else y)

    def to_dict(self) -> dict:
        return {
            "family": "tensorsketch", "mode": self.mode, "degree": int(self.degree),
            "input_dims": list(self.input_dims), "output_dim": int(self.output_dim), "seed": int(self.seed),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "TensorSketchSpec":
        if d.get("family") != "tensorsketch":
            raise ValueError("not a tensorsketch spec")
        return cls(
            mode=d["mode"], input_dims=tuple(d["input_dims"]), output_dim=int(d["output_dim"]),
            degree=int(d.get("degree", 2)), seed=int(d.get("seed", 0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "TensorSketchSpec":
        return cls.from_dict(json.loads(text))


def tensor_sketch_poly(spec: TensorSketchSpec, x, r: int | None = None, method: str = "fft") -> np.ndarray:
    """Sketch of ``x^{(x) r}``; inner products estimate ``(x . y)^r`` without bias."""
    if spec.mode != "poly":
        raise ValueError("spec is not in poly mode")
    if r is not None and int(r) != spec.degree:
        raise ValueError(f"degree mismatch: {r} != {spec.degree}")
    X, single = _as_columns(x, spec.input_dims[0])
    sketches = []
    for cs in spec.components:
        s = cs.matrix @ X
        sketches.append(s.toarray() if sp.issparse(s) else np.asarray(s))
    return _finish(_convolve_all(sketches, method), single)


def tensor_sketch_pair(spec: TensorSketchSpec, a, b, method: str = "fft") -> np.ndarray:
    """Sketch of ``a (x) b``; inner products estimate ``(a_x . a_y)(b_x . b_y)``."""
    if spec.mode != "pair":
        raise ValueError("spec is not in pair mode")
    A, single_a = _as_columns(a, spec.input_dims[0])
    B, single_b = _as_columns(b, spec.input_dims[1])
    if A.shape[1] != B.shape[1]:
        raise ValueError("a and b hold different numbers of points")
    sa = spec.components[0].matrix @ A
    sb = spec.components[1].matrix @ B
    sa = sa.toarray() if sp.issparse(sa) else np.asarray(sa)
    sb = sb.toarray() if sp.issparse(sb) else np.asarray(sb)
    return _finish(_convolve_all([sa, sb], method), single_a and single_b)
