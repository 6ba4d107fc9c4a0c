import numpy as np
import pytest

from tanimoto_rf import SparseVec


def random_sparse(rng, dim, density=0.3, max_count=5, nonzero=True):
    """A random non-negative count vector; never empty when ``nonzero``."""
    mask = rng.random(dim) < density
    if nonzero and not mask.any():
        mask[rng.integers(dim)] = True
    vals = rng.integers(1, max_count + 1, size=dim) * mask
    return SparseVec.from_dense(vals.astype(float))


def pair_with_similarity(rng, dim, target, max_count=1):
    """Two vectors whose T_MM lands near ``target`` (binary: overlap / union)."""
    union = rng.permutation(dim)[: dim // 2]
    k = max(1, int(round(target * len(union))))
    shared, rest = union[:k], union[k:]
    half = len(rest) // 2
    x = np.zeros(dim)
    y = np.zeros(dim)
    x[shared] = y[shared] = 1
    x[rest[:half]] = 1
    y[rest[half:]] = 1
    if max_count > 1:
        x *= rng.integers(1, max_count + 1, size=dim)
        y *= rng.integers(1, max_count + 1, size=dim)
    return SparseVec.from_dense(x), SparseVec.from_dense(y)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
