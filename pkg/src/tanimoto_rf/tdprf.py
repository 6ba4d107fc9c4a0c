"""Random features for T_DP built from its power series.

Term ``r`` of the series, ``(x.y)^r (|x|^2 + |y|^2)^{-r}``, is estimated by
pair-sketching QMC prefactor features ``phi_r`` with a TensorSketch ``psi_r``
of ``x^{(x) r}``.  The blocks for ``r = 1..R`` are concatenated.  Inputs are
divided by ``sqrt(max_sqnorm)`` first; the kernel is invariant to this and
the prefactor tuning assumes squared norms in ``[zeta, 1]``.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .core import MASK64, TAG_TDP, SeedStream, as_dataset
from .polysketch import TensorSketchSpec, tensor_sketch_pair, tensor_sketch_poly
from .prefactor import PrefactorSpec, estimate_zeta

BIAS_MODES = ("plain", "normalize", "residual")
_COLUMN_BLOCK = 256


class NormRangeWarning(UserWarning):
    """A point's squared norm lies outside the ``[zeta * max, max]`` band the map was tuned for."""


def allocate(M: int, R: int, p: float = -1.0, weights=None) -> list[int]:
    """Split ``M`` features over ``R`` terms in proportion to ``r^p``.

    Largest-remainder rounding; ties go to the smaller ``r``.  Every term
    gets at least one feature.  ``weights`` overrides the ``r^p`` weights.
    """
    M, R = int(M), int(R)
    if R < 1:
        raise ValueError("R must be at least 1")
    if M < R:
        raise ValueError(f"cannot allocate M={M} features over R={R} terms")
    w = np.arange(1, R + 1, dtype=np.float64) ** p if weights is None else np.asarray(weights, dtype=np.float64)
    quota = M * w / w.sum()
    out = np.floor(quota + 1e-9).astype(np.int64)
    rem = quota - out
    order = sorted(range(R), key=lambda i: (-round(rem[i], 9), i))
    for i in order[: M - int(out.sum())]:
        out[i] += 1
    # every term keeps at least one feature, taken from the largest blocks
    while out.min() < 1:
        out[int(np.argmax(out))] -= 1
        out[int(np.argmin(out))] += 1
    return [int(b) for b in out]


@dataclass(frozen=True)
class TdpFeatureSpec:
    """Seeded description of a T_DP feature map.

    ``max_sqnorm`` is the dataset-level squared-norm scale; when it is
    ``None`` the largest squared norm of the batch being transformed is used.
    """

    M: int
    zeta: float
    R: int = 4
    p: float = -1.0
    prefactor_dim: int = 4096
    poly_dim: int = 4096
    bias_mode: str = "plain"
    seed: int = 0
    max_sqnorm: float | None = None

    family = "tdp"

    def __post_init__(self):
        if int(self.R) < 1:
            raise ValueError("R must be at least 1")
        if not 0 < self.zeta <= 1:
            raise ValueError("zeta must lie in (0, 1]")
        if self.bias_mode not in BIAS_MODES:
            raise ValueError(f"bias_mode must be one of {BIAS_MODES}")
        if int(self.prefactor_dim) < 1 or int(self.poly_dim) < 1:
            raise ValueError("intermediate dimensions must be positive")
        n_blocks = self.R + (1 if self.bias_mode == "residual" else 0)
        if int(self.M) < n_blocks:
            raise ValueError(f"M={self.M} is too small for {n_blocks} blocks")
        if not 0 <= int(self.seed) <= MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.max_sqnorm is not None and not self.max_sqnorm > 0:
            raise ValueError("max_sqnorm must be positive")

    @classmethod
    def for_dataset(cls, D, M: int, **kwargs) -> "TdpFeatureSpec":
        """Spec with ``zeta`` and ``max_sqnorm`` measured on ``D``."""
        D = as_dataset(D)
        return cls(M=M, zeta=estimate_zeta(D), max_sqnorm=float(D.sqnorms.max()), **kwargs)

    @functools.cached_property
    def allocation(self) -> list[int]:
        """Block sizes; in residual mode the last entry is the residual block."""
        if self.bias_mode == "residual":
            w = np.arange(1, self.R + 1, dtype=np.float64) ** self.p
            return allocate(self.M, self.R + 1, weights=np.append(w, w[-1]))
        return allocate(self.M, self.R, self.p)

    @property
    def output_dim(self) -> int:
        return int(self.M)

    def _term(self, r: int, out_dim: int):
        base = SeedStream(self.seed, TAG_TDP).child(r)
        pref = PrefactorSpec.tuned(r, self.zeta, self.prefactor_dim, seed=base.child(0).seed)
        return pref, base.child(1).seed, TensorSketchSpec.pair(self.prefactor_dim, self.poly_dim, out_dim, base.child(2).seed)

    def _term_features(self, r: int, out_dim: int, X, sq) -> np.ndarray:
        pref, poly_seed, pair = self._term(r, out_dim)
        phi = pref.features(sq)
        psi = tensor_sketch_poly(TensorSketchSpec.poly(X.shape[0], r, self.poly_dim, poly_seed), X)
        return tensor_sketch_pair(pair, phi, psi)

    def _check_norms(self, sq: np.ndarray):
        lo = self.zeta * (1.0 - 1e-12)
        if np.any(sq > 1.0 + 1e-12) or np.any(sq < lo):
            warnings.warn(
                f"squared norms outside the tuned band [{self.zeta:g}, 1] x max_sqnorm; "
                "feature accuracy may degrade",
                NormRangeWarning,
                stacklevel=3,
            )

    def transform(self, D) -> np.ndarray:
        """Feature matrix of shape ``(M, n)``."""
        D = as_dataset(D)
        sq_raw = D.sqnorms
        if np.any(sq_raw <= 0):
            raise ValueError("T_DP features are undefined for the zero vector")
        scale = float(sq_raw.max()) if self.max_sqnorm is None else float(self.max_sqnorm)
        sq = sq_raw / scale
        self._check_norms(sq)
        Xt = (D.csr / np.sqrt(scale)).T.tocsc()
        alloc = self.allocation
        R = self.R
        out = np.empty((self.M, len(D)))
        for start in range(0, len(D), _COLUMN_BLOCK):
            cols = slice(start, min(len(D), start + _COLUMN_BLOCK))
            X = Xt[:, cols]
            blocks = [self._term_features(r, alloc[r - 1], X, sq[cols]) for r in range(1, R + 1)]
            main = np.vstack(blocks)
            if self.bias_mode == "normalize":
                main = normalize_correction(main)
            elif self.bias_mode == "residual":
                tail = self._term_features(R + 1, self.poly_dim, X, sq[cols])
                plus = np.vstack([np.ones((1, main.shape[1])), main])
                res = TensorSketchSpec.pair(
                    self.poly_dim, plus.shape[0], alloc[R], SeedStream(self.seed, TAG_TDP).child(R + 1).child(3).seed
                )
                main = np.vstack([main, tensor_sketch_pair(res, tail, plus)])
            out[:, cols] = main
        return out

    def to_dict(self) -> dict:
        d = {
            "family": "tdp", "R": int(self.R), "M": int(self.M), "p": float(self.p),
            "m_r": int(self.prefactor_dim), "m_poly": int(self.poly_dim), "zeta": float(self.zeta),
            "bias": self.bias_mode, "seed": int(self.seed),
        }
        if self.max_sqnorm is not None:
            d["max_sqnorm"] = float(self.max_sqnorm)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "TdpFeatureSpec":
        if d.get("family") != "tdp":
            raise ValueError("not a tdp spec")
        ms = d.get("max_sqnorm")
        return cls(
            M=int(d["M"]), zeta=float(d["zeta"]), R=int(d.get("R", 4)), p=float(d.get("p", -1.0)),
            prefactor_dim=int(d.get("m_r", 4096)), poly_dim=int(d.get("m_poly", 4096)),
            bias_mode=d.get("bias", "plain"), seed=int(d.get("seed", 0)),
            max_sqnorm=None if ms is None else float(ms),
        )

    @classmethod
    def from_json(cls, text: str) -> "TdpFeatureSpec":
        return cls.from_dict(json.loads(text))


def tdp_features(spec: TdpFeatureSpec, x) -> np.ndarray:
    """Feature vector of one point (or ``(M, n)`` matrix for a dataset)."""
    F = spec.transform(x)
    return F[:, 0] if F.shape[1] == 1 else F


def normalize_correction(Phi: np.ndarray) -> np.ndarray:
    """Scale each feature vector (column) to unit norm."""
    Phi = np.asarray(Phi, dtype=np.float64)
    norms = np.linalg.norm(Phi, axis=0)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero feature vector")
    return Phi / norms


def residual_correction(spec: TdpFeatureSpec, x) -> np.ndarray:
    """Truncated-series features followed by the residual block."""
    if spec.bias_mode != "residual":
        spec = dataclasses.replace(spec, bias_mode="residual")
    return tdp_features(spec, x)
