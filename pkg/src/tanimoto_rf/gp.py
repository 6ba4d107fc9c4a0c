"""Gaussian process regression with exact kernels and with random features.

The model is ``y = mu + f(x) + eps`` with ``f ~ GP(0, a k)`` and
``eps ~ N(0, sigma^2)``.  With a feature map ``phi`` the kernel is replaced by
``a phi(x).phi(y)``, which is the Bayesian linear model
``f(x) = sqrt(a) phi(x)^T w``, ``w ~ N(0, I)``; all its computations stay in
the ``M``-dimensional weight space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .core import TAG_GP, TAG_THOMPSON, SeedStream, as_dataset
from .kernels import cross_gram
from .trff import read_trff, write_trff

LOG_2PI = math.log(2.0 * math.pi)
JITTER_START = 1e-10
JITTER_MAX = 1e-4


class FactorizationError(ArithmeticError):
    """Cholesky factorization failed even after the largest jitter."""


@dataclass(frozen=True)
class GpHypers:
    mean: float
    amplitude: float
    noise: float

    def __post_init__(self):
        if not (self.amplitude > 0 and self.noise > 0):
            raise ValueError("amplitude and noise must be positive")
        if not all(np.isfinite([self.mean, self.amplitude, self.noise])):
            raise ValueError("hyperparameters must be finite")

    def to_dict(self) -> dict:
        return {"mean": float(self.mean), "amplitude": float(self.amplitude), "noise": float(self.noise)}

    @classmethod
    def from_dict(cls, d: dict) -> "GpHypers":
        return cls(float(d["mean"]), float(d["amplitude"]), float(d["noise"]))

    @classmethod
    def default(cls, y) -> "GpHypers":
        """``mu = mean(y)``, ``a = var(y)``, ``sigma^2 = 0.1 var(y)``, with a floor for constant targets."""
        y = np.asarray(y, dtype=np.float64)
        mu = float(y.mean())
        var = float(y.var())
        floor = noise_floor(mu)
        if var <= floor:
            return cls(mu, floor, floor)
        return cls(mu, var, 0.1 * var)


def noise_floor(mu: float) -> float:
    return 1e-6 * (1.0 + abs(mu))


def jittered_cholesky(C: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``C + j mean(diag(C)) I``.

    ``j`` starts at 1e-10 and grows tenfold, up to 1e-4, until the
    factorization succeeds.  Returns ``(L, jitter_added)``.
    """
    C = np.asarray(C, dtype=np.float64)
    scale = float(np.mean(np.diag(C))) if C.size else 1.0
    jitters = []
    j = JITTER_START
    while j <= JITTER_MAX * (1 + 1e-9):
        jitters.append(j)
        j *= 10.0
    diag = np.arange(C.shape[0])
    for j in jitters:
        work = C.copy()
        work[diag, diag] += j * scale
        try:
            L = cholesky(work, lower=True, overwrite_a=True, check_finite=True)
            return L, j * scale
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError("Cholesky factorization failed after jitter escalation")


def _check_targets(K, y):
    K = np.asarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if K.shape != (y.size, y.size):
        raise ValueError(f"Gram of shape {K.shape} for {y.size} targets")
    return K, y


def _noisy(K, h: GpHypers) -> np.ndarray:
    """``a K + sigma^2 I`` without forming the identity."""
    C = h.amplitude * K
    C[np.diag_indices_from(C)] += h.noise
    return C


def mll_exact(K, y, h: GpHypers, return_grad: bool = False):
    """``log N(y | mu 1, a K + sigma^2 I)``.

    With ``return_grad`` also returns the gradient with respect to
    ``(mu, log a, log sigma^2)``.
    """
    K, y = _check_targets(K, y)
    n = y.size
    L, _ = jittered_cholesky(_noisy(K, h))
    r = y - h.mean
    alpha = cho_solve((L, True), r)
    val = -0.5 * float(r @ alpha) - float(np.log(np.diag(L)).sum()) - 0.5 * n * LOG_2PI
    if not return_grad:
        return val
    Cinv = cho_solve((L, True), np.eye(n))
    g_mu = float(alpha.sum())
    g_a = 0.5 * h.amplitude * (float(alpha @ K @ alpha) - float(np.sum(Cinv * K)))
    g_s = 0.5 * h.noise * (float(alpha @ alpha) - float(np.trace(Cinv)))
    return val, np.array([g_mu, g_a, g_s])


class _SpectralMll:
    """mll of ``a K + sigma^2 I`` for many ``(a, sigma^2)`` from one eigendecomposition."""

    def __init__(self, K, y):
        lam, Q = np.linalg.eigh(K)
        self.lam = np.clip(lam, 0.0, None)
        self.yt = Q.T @ y
        self.ot = Q.T @ np.ones(y.size)
        self.n = y.size

    def best_mean(self, a, s):
        d = a * self.lam + s
        return float(np.sum(self.yt * self.ot / d) / np.sum(self.ot**2 / d))

    def __call__(self, mu, a, s):
        d = a * self.lam + s
        rt = self.yt - mu * self.ot
        return float(-0.5 * np.sum(rt**2 / d) - 0.5 * np.sum(np.log(d)) - 0.5 * self.n * LOG_2PI)


def _golden_max(f, lo, hi, tol=1e-4):
    g = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - g * (hi - lo)
    x2 = lo + g * (hi - lo)
    f1, f2 = f(x1), f(x2)
    while hi - lo > tol:
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + g * (hi - lo)
            f2 = f(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - g * (hi - lo)
            f1 = f(x1)
    x = 0.5 * (lo + hi)
    return x, f(x)


def fit_hypers(D=None, y=None, kernel: str = "tdp", K=None, sweeps: int = 12) -> GpHypers:
    """Maximize the exact marginal likelihood.

    Coordinate ascent over ``log a`` and ``log sigma^2`` with golden-section
    line searches on shrinking windows; ``mu`` is profiled out in closed
    form.  Starts at :meth:`GpHypers.default` and only accepts improvements,
    so the result is never worse than the start.  Pass ``K`` to reuse a
    precomputed Gram matrix.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if K is None:
        K = cross_gram(as_dataset(D), as_dataset(D), kernel)
        K = 0.5 * (K + K.T)
    K, y = _check_targets(K, y)
    init = GpHypers.default(y)
    if y.var() <= noise_floor(init.mean):
        return init
    mll = _SpectralMll(K, y)
    floor = math.log(noise_floor(init.mean))

    def value(la, ls):
        a, s = math.exp(la), math.exp(max(ls, floor))
        return mll(mll.best_mean(a, s), a, s)

    la, ls = math.log(init.amplitude), math.log(init.noise)
    best = mll(init.mean, init.amplitude, init.noise)
    # also accept the profiled mean at the initial point
    cur = value(la, ls)
    width = 4.0
    for _ in range(sweeps):
        x, fx = _golden_max(lambda t: value(t, ls), la - width, la + width)
        if fx > cur:
            la, cur = x, fx
        x, fx = _golden_max(lambda t: value(la, t), max(ls - width, floor), ls + width)
        if fx > cur:
            ls, cur = max(x, floor), fx
        width = max(0.05, 0.5 * width)
    if cur <= best:
        return init
    a, s = math.exp(la), math.exp(ls)
    return GpHypers(mll.best_mean(a, s), a, s)


@dataclass(frozen=True)
class GpPosterior:
    """Posterior over weights: precision ``A = I/a + Phi Phi^T / sigma^2`` and ``b = Phi (y - mu) / sigma^2``."""

    hypers: GpHypers
    factor: np.ndarray  # lower Cholesky factor of A
    target: np.ndarray  # b
    spec: dict | None = field(default=None, compare=False)

    @property
    def M(self) -> int:
        return self.target.size

    @property
    def weights(self) -> np.ndarray:
        """Posterior mean of ``sqrt(a) w``."""
        return cho_solve((self.factor, True), self.target)

    def precision(self) -> np.ndarray:
        return self.factor @ self.factor.T

    def save(self, prefix) -> None:
        """Write ``prefix.json`` (hypers, spec) and ``prefix.trff`` (factor with ``b`` appended as a column)."""
        prefix = str(prefix)
        with open(prefix + ".json", "w") as fh:
            json.dump({"hypers": self.hypers.to_dict(), "spec": self.spec, "M": self.M}, fh)
        write_trff(prefix + ".trff", np.column_stack([self.factor, self.target]))

    @classmethod
    def load(cls, prefix) -> "GpPosterior":
        prefix = str(prefix)
        with open(prefix + ".json") as fh:
            meta = json.load(fh)
        mat, _ = read_trff(prefix + ".trff")
        return cls(GpHypers.from_dict(meta["hypers"]), mat[:, :-1].copy(), mat[:, -1].copy(), meta.get("spec"))


def _features(Phi) -> np.ndarray:
    Phi = np.asarray(Phi, dtype=np.float64)
    if Phi.ndim != 2:
        raise ValueError("feature matrix must be 2-d (M x n)")
    if not np.all(np.isfinite(Phi)):
        raise ValueError("non-finite features")
    return Phi


def rfgp_fit(Phi, y, h: GpHypers, spec: dict | None = None) -> GpPosterior:
    """Condition the Bayesian linear model on ``n`` targets in ``O(n M^2 + M^3)``."""
    Phi = _features(Phi)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    M, n = Phi.shape
    if n != y.size:
        raise ValueError(f"{n} feature columns for {y.size} targets")
    A = np.eye(M) / h.amplitude + (Phi @ Phi.T) / h.noise
    L, _ = jittered_cholesky(A)
    b = Phi @ (y - h.mean) / h.noise
    return GpPosterior(h, L, b, spec)


def rfgp_predict(post: GpPosterior, Phi_star) -> tuple[np.ndarray, np.ndarray]:
    """Marginal predictive means and variances (variances include ``sigma^2``)."""
    Phi_star = _features(Phi_star)
    if Phi_star.shape[0] != post.M:
        raise ValueError(f"features of dim {Phi_star.shape[0]} for a posterior of dim {post.M}")
    mean = post.hypers.mean + Phi_star.T @ post.weights
    Z = solve_triangular(post.factor, Phi_star, lower=True)
    var = np.einsum("ij,ij->j", Z, Z) + post.hypers.noise
    return mean, var


def exact_gp_predict(K, K_cross, k_diag, y, h: GpHypers) -> tuple[np.ndarray, np.ndarray]:
    """Exact GP predictions.

    ``K`` is the train Gram (n x n), ``K_cross`` the train/test kernel
    (n x t) and ``k_diag`` the test self-similarities (t,); all unscaled.
    """
    K, y = _check_targets(K, y)
    K_cross = np.asarray(K_cross, dtype=np.float64)
    L, _ = jittered_cholesky(_noisy(K, h))
    alpha = cho_solve((L, True), y - h.mean)
    mean = h.mean + h.amplitude * (K_cross.T @ alpha)
    V = solve_triangular(L, h.amplitude * K_cross, lower=True)
    var = h.amplitude * np.asarray(k_diag, dtype=np.float64) - np.einsum("ij,ij->j", V, V) + h.noise
    return mean, var


def random_subset(n: int, size: int, seed: int = 0) -> np.ndarray:
    """Sorted indices of a seeded random subset."""
    if not 0 < size <= n:
        raise ValueError(f"subset size must lie in [1, {n}]")
    gen = SeedStream(seed, TAG_GP).generator()
    return np.sort(gen.choice(n, size=size, replace=False))


def exact_subset_gp(D, y, subset_size: int, kernel: str, h: GpHypers, test, seed: int = 0):
    """Exact GP conditioned on a seeded random subset of the training data."""
    D = as_dataset(D)
    test = as_dataset(test)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size != len(D):
        raise ValueError("one target per training point required")
    idx = random_subset(len(D), subset_size, seed)
    S = D.subset(idx)
    K = cross_gram(S, S, kernel)
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, 1.0)
    return exact_gp_predict(K, cross_gram(S, test, kernel), np.ones(len(test)), y[idx], h)


def gaussian_log_density(y, mean, var) -> np.ndarray:
    y, mean, var = (np.asarray(v, dtype=np.float64) for v in (y, mean, var))
    return -0.5 * (LOG_2PI + np.log(var) + (y - mean) ** 2 / var)


def avg_log_prob(y, mean, var) -> float:
    """Mean of the per-point (marginal) Gaussian log densities."""
    return float(np.mean(gaussian_log_density(y, mean, var)))


def r_squared(y, pred) -> float:
    """``1 - SS_res / SS_tot``."""
    y = np.asarray(y, dtype=np.float64)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - np.asarray(pred, dtype=np.float64)) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else -math.inf
    return 1.0 - ss_res / ss_tot


# ---------------------------------------------------------------------------
# Prior sampling and Thompson selection
# ---------------------------------------------------------------------------


def rf_prior_sample(Phi, h: GpHypers, count: int, seed: int = 0) -> np.ndarray:
    """``count`` prior function draws ``mu + sqrt(a) Phi^T w``; shape ``(count, n)``."""
    Phi = _features(Phi)
    W = SeedStream(seed, TAG_THOMPSON).generator().standard_normal((count, Phi.shape[0]))
    return h.mean + math.sqrt(h.amplitude) * (W @ Phi)


def exact_prior_sample(K, h: GpHypers, count: int, seed: int = 0) -> np.ndarray:
    """``count`` draws ``mu + sqrt(a) L z`` with ``L`` the jittered Cholesky factor of ``K``; shape ``(count, n)``."""
    K = np.asarray(K, dtype=np.float64)
    L, _ = jittered_cholesky(K)
    Z = SeedStream(seed, TAG_THOMPSON).generator().standard_normal((count, K.shape[0]))
    return h.mean + math.sqrt(h.amplitude) * (Z @ L.T)


def sample_gp_labels(K, h: GpHypers, seed: int = 0) -> np.ndarray:
    """One draw of noisy targets ``y = mu + sqrt(a) L z + sigma eps`` from the exact model."""
    K = np.asarray(K, dtype=np.float64)
    gen = SeedStream(seed, TAG_GP).child(1).generator()
    L, _ = jittered_cholesky(K)
    f = L @ gen.standard_normal(K.shape[0])
    return h.mean + math.sqrt(h.amplitude) * f + math.sqrt(h.noise) * gen.standard_normal(K.shape[0])


def select_from_scores(scores: np.ndarray) -> list[int]:
    """Argmax of each row, skipping indices already chosen by earlier rows."""
    scores = np.asarray(scores, dtype=np.float64)
    count, n = scores.shape
    if count > n:
        raise ValueError(f"batch {count} exceeds pool size {n}")
    taken = np.zeros(n, dtype=bool)
    out = []
    for row in scores:
        i = int(np.argmax(np.where(taken, -np.inf, row)))
        taken[i] = True
        out.append(i)
    return out


def thompson_select(Phi, h: GpHypers, batch: int, seed: int = 0) -> list[int]:
    """Linear-time batch Thompson sampling from the random-feature prior."""
    Phi = _features(Phi)
    if batch > Phi.shape[1]:
        raise ValueError(f"batch {batch} exceeds pool size {Phi.shape[1]}")
    return select_from_scores(rf_prior_sample(Phi, h, batch, seed))


def exact_thompson_select(K, h: GpHypers, batch: int, seed: int = 0) -> list[int]:
    """Batch Thompson sampling from the exact prior (cubic in the pool size)."""
    if batch > np.shape(K)[0]:
        raise ValueError(f"batch {batch} exceeds pool size {np.shape(K)[0]}")
    return select_from_scores(exact_prior_sample(K, h, batch, seed))
