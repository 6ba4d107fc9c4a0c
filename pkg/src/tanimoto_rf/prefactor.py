"""Random features for the prefactor kernel ``(|x|^2 + |y|^2)^{-r}``.

With ``Z ~ Gamma(s, rate=c)`` the scalar feature

    phi(a, Z) = exp((1/2 - a) Z) Z^{(r-s)/2} sqrt(c^{-s} e^{(c-1)Z} Gamma(s) / Gamma(r))

satisfies ``E[phi(a, Z) phi(b, Z)] = (a + b)^{-r}``.  The QMC map replaces
the random ``Z`` by Gamma quantiles at a randomly shifted lattice
``u_i = frac(u + i/M)``, which is still unbiased over ``u`` and converges at
least as fast as ``1/M``.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .core import MASK64, TAG_PREFACTOR, Dataset, SeedStream, as_dataset
from .special import gamma_log_quantile, gamma_quantile

__all__ = [
    "PrefactorSpec",
    "gamma_quantile",
    "scalar_prefactor_feature",
    "qmc_prefactor_features",
    "tuned_params",
    "estimate_zeta",
    "qmc_pair_bound",
    "qmc_dataset_bound",
]

LOG_OVERFLOW = 700.0


def _log_const(r, s, c):
    """log sqrt(c^{-s} Gamma(s) / Gamma(r))."""
    return 0.5 * (-s * math.log(c) + gammaln(s) - gammaln(r))


def _check_overflow(logv):
    if np.any(logv > LOG_OVERFLOW):
        raise OverflowError(
            "prefactor feature magnitude exceeds exp(700); s and c are not tuned for this data scale"
        )


def scalar_prefactor_feature(sqnorm, r, s, c, Z):
    """Scalar random feature of ``(a + b)^{-r}`` at squared norm ``sqnorm`` and draw ``Z``."""
    if r < 1 or s <= 0 or c <= 0:
        raise ValueError("require r >= 1, s > 0, c > 0")
    a = np.asarray(sqnorm, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if np.any(a < 0) or np.any(Z <= 0):
        raise ValueError("require sqnorm >= 0 and Z > 0")
    logv = (0.5 - a) * Z + 0.5 * (r - s) * np.log(Z) + 0.5 * (c - 1.0) * Z + _log_const(r, s, c)
    _check_overflow(logv)
    out = np.exp(logv)
    return out if out.ndim else float(out)


def tuned_params(r, zeta: float) -> tuple[float, float]:
    """``(s, c) = (r zeta, 2 zeta^2)`` for data whose squared norms lie in ``[zeta, 1]``."""
    if not 0 < zeta <= 1:
        raise ValueError("zeta must lie in (0, 1]")
    return r * zeta, 2.0 * zeta * zeta


def estimate_zeta(D) -> float:
    """Ratio of the smallest to the largest squared norm, clamped below at 1e-6."""
    D = as_dataset(D)
    sq = D.sqnorms
    if np.any(sq <= 0):
        raise ValueError("zeta is undefined for a dataset containing the zero vector")
    return float(max(sq.min() / sq.max(), 1e-6))


@dataclass(frozen=True)
class PrefactorSpec:
    """QMC random features of the prefactor kernel of order ``r``.

    ``norm_scale`` (optional) is the squared norm that inputs are divided by
    before the features are computed; the output is rescaled so the
    estimated kernel value does not depend on it.  The lattice shift ``u``
    is derived from ``seed``.
    """

    r: int
    s: float
    c: float
    M: int
    seed: int = 0
    norm_scale: float | None = None

    family = "prefactor"

    def __post_init__(self):
        if int(self.r) < 1:
            raise ValueError("r must be at least 1")
        if not (self.s > 0 and self.c > 0):
            raise ValueError("s and c must be positive")
        if int(self.M) < 1:
            raise ValueError("M must be positive")
        if not 0 <= int(self.seed) <= MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.norm_scale is not None and not self.norm_scale > 0:
            raise ValueError("norm_scale must be positive")

    @classmethod
    def tuned(cls, r: int, zeta: float, M: int, seed: int = 0, norm_scale=None) -> "PrefactorSpec":
        s, c = tuned_params(r, zeta)
        return cls(r=r, s=s, c=c, M=M, seed=seed, norm_scale=norm_scale)

    @functools.cached_property
    def u(self) -> float:
        return float(SeedStream(self.seed, TAG_PREFACTOR).uniform(0))

    @functools.cached_property
    def lattice(self) -> np.ndarray:
        """``u_i = frac(u + i/M)`` for ``i = 1..M``; never exactly 0."""
        i = np.arange(1, self.M + 1)
        u = np.mod(self.u + i / self.M, 1.0)
        # the shift is never a multiple of 1/M in floating point, but guard anyway
        return np.where(u <= 0.0, np.nextafter(0.0, 1.0), u)

    @functools.cached_property
    def _log_gamma_points(self) -> np.ndarray:
        """log of the Gamma(s, c) quantiles at the lattice points."""
        return gamma_log_quantile(self.s, self.lattice) - math.log(self.c)

    @property
    def gamma_points(self) -> np.ndarray:
        return np.exp(self._log_gamma_points)

    def log_features(self, sqnorms) -> np.ndarray:
        """log of the feature matrix, shape ``(M, n)``."""
        a = np.atleast_1d(np.asarray(sqnorms, dtype=np.float64))
        if np.any(a < 0):
            raise ValueError("squared norms must be non-negative")
        scale = 1.0 if self.norm_scale is None else float(self.norm_scale)
        a = a / scale
        lg = self._log_gamma_points[:, None]
        g = np.exp(lg)
        base = _log_const(self.r, self.s, self.c) - 0.5 * math.log(self.M) - 0.5 * self.r * math.log(scale)
        logv = base - (a[None, :] - 0.5 * self.c) * g + 0.5 * (self.r - self.s) * lg
        _check_overflow(logv)
        return logv

    def features(self, sqnorms) -> np.ndarray:
        """Feature matrix of shape ``(M, n)`` for the given squared norms."""
        return np.exp(self.log_features(sqnorms))

    def transform(self, D) -> np.ndarray:
        return self.features(as_dataset(D).sqnorms)

    def to_dict(self) -> dict:
        d = {"family": "prefactor", "r": int(self.r), "s": float(self.s), "c": float(self.c), "M": int(self.M), "seed": int(self.seed)}
        if self.norm_scale is not None:
            d["norm_scale"] = float(self.norm_scale)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "PrefactorSpec":
        if d.get("family") != "prefactor":
            raise ValueError("not a prefactor spec")
        ns = d.get("norm_scale")
        return cls(
            r=int(d["r"]), s=float(d["s"]), c=float(d["c"]), M=int(d["M"]), seed=int(d.get("seed", 0)),
            norm_scale=None if ns is None else float(ns),
        )

    @classmethod
    def from_json(cls, text: str) -> "PrefactorSpec":
        return cls.from_dict(json.loads(text))


def qmc_prefactor_features(spec: PrefactorSpec, sqnorm) -> np.ndarray:
    """Length-``M`` QMC feature vector at one squared norm."""
    return spec.features([sqnorm])[:, 0]


def qmc_pair_bound(a, b, r, s, c, M) -> float:
    """Worst-case relative QMC error for one pair, valid for ``c < a + b`` and ``s < r``.

    Twice the peak of the unimodal integrand, divided by ``M``.
    """
    if not (c < a + b and s < r):
        raise ValueError("bound requires c < a + b and s < r")
    peak = math.exp(-s * math.log(c) + gammaln(s) - gammaln(r)) * ((r - s) / (math.e * (a + b - c))) ** (r - s)
    return 2.0 * peak / M


def qmc_dataset_bound(r, zeta, M) -> float:
    """Explicit relative error bound for tuned parameters on data with norm ratio ``zeta``."""
    logb = gammaln(r * zeta) - r * zeta * math.log(zeta) - gammaln(r) + r * (zeta - 1.0) * math.log(r / math.e)
    return 2.0 / M * math.exp(logb) * 1.3**r
