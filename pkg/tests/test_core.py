import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tanimoto_rf import (
    Dataset,
    FingerprintFormatError,
    SeedStream,
    SparseVec,
    load_fingerprints,
    mix64,
    parse_fingerprints,
    save_fingerprints,
    sqrt_transform,
    synth_clustered,
    synth_dataset,
)
from tanimoto_rf.core import MASK64, as_dataset, gaussian_from_streams, stream_values, stream_values_at, to_unit


class TestMix64:
    def test_zero_is_fixed_point(self):
        assert mix64(0) == 0

    def test_golden_value_one(self):
        assert mix64(1) == 0x5692161D100B05E5

    def test_splitmix64_reference(self):
        # first output of the public SplitMix64 generator from state 0
        assert mix64(0x9E3779B97F4A7C15) == 0xE220A8397B1DCDAF

    def test_adjacent_inputs_differ(self):
        z = np.arange(10_001, dtype=np.uint64)
        out = mix64(z)
        assert np.all(out[:-1] != out[1:])
        assert len(np.unique(out)) == out.size

    def test_array_matches_scalar(self):
        z = np.array([0, 1, 2, MASK64, 12345678901234567], dtype=np.uint64)
        np.testing.assert_array_equal(mix64(z), np.array([mix64(int(v)) for v in z], dtype=np.uint64))

    @given(st.integers(min_value=0, max_value=MASK64))
    def test_stays_in_range(self, z):
        assert 0 <= mix64(z) <= MASK64


class TestSeedStream:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            SeedStream(-1)
        with pytest.raises(ValueError):
            SeedStream(0, MASK64 + 1)

    def test_children_match_child(self):
        s = SeedStream(42, 3)
        kids = s.children(np.arange(5))
        assert [int(k) for k in kids] == [s.child(i).seed for i in range(5)]

    def test_scalar_counter_shape(self):
        assert SeedStream(3).uint64(5).shape == ()
        assert SeedStream(3).children(np.arange(4)).shape == (4,)

    def test_counter_addressing(self):
        s = SeedStream(7, 1)
        full = s.uint64(np.arange(100))
        np.testing.assert_array_equal(s.uint64(np.array([17, 3])), full[[17, 3]])

    def test_stream_values_at_is_diagonal(self):
        seeds = np.array([1, 2, 3], dtype=np.uint64)
        counters = np.array([5, 6, 7], dtype=np.uint64)
        np.testing.assert_array_equal(stream_values_at(seeds, counters), np.diag(stream_values(seeds, counters)))

    def test_uniform_open_interval(self):
        u = to_unit(np.array([0, MASK64], dtype=np.uint64))
        assert 0 < u[0] < u[1] < 1

    def test_uniform_moments(self):
        u = SeedStream(1).uniform(np.arange(200_000))
        assert abs(u.mean() - 0.5) < 3 * np.sqrt(1 / 12 / u.size)

    def test_gaussian_moments(self):
        z = gaussian_from_streams(np.uint64(SeedStream(3).seed), np.arange(100_000))
        assert abs(z.mean()) < 4 / np.sqrt(z.size)
        assert abs(z.var() - 1) < 4 * np.sqrt(2 / z.size)


class TestSparseVec:
    def test_from_pairs_and_dense(self):
        v = SparseVec.from_pairs(5, [(0, 1.0), (3, 2.0)])
        np.testing.assert_array_equal(v.to_dense(), [1, 0, 0, 2, 0])
        assert v == SparseVec.from_dense([1, 0, 0, 2, 0])
        assert v.sqnorm == 5 and v.l1 == 3 and v.nnz == 2

    def test_validation(self):
        with pytest.raises(ValueError):
            SparseVec(4, [2, 1], [1, 1])
        with pytest.raises(ValueError):
            SparseVec(4, [4], [1])
        with pytest.raises(ValueError):
            SparseVec(4, [0], [np.nan])

    def test_immutable(self):
        v = SparseVec(3, [0], [1.0])
        with pytest.raises(AttributeError):
            v.dim = 4


class TestSqrtTransform:
    def test_perfect_squares(self):
        v = sqrt_transform(SparseVec.from_pairs(4, [(0, 4), (3, 9)]))
        assert v.entries == [(0, 2.0), (3, 3.0)]

    def test_binary_identity(self):
        v = SparseVec.from_pairs(2, [(1, 1)])
        assert sqrt_transform(v) == v

    def test_sqrt_two(self):
        v = sqrt_transform(SparseVec.from_pairs(1, [(0, 2)]))
        assert v.entries[0][1] == np.sqrt(2.0)


class TestSynth:
    def test_forced_all_ones(self):
        D = synth_dataset(1, 8, 1.0, 1)
        np.testing.assert_array_equal(D.to_dense(), np.ones((1, 8)))

    def test_deterministic(self):
        assert synth_dataset(20, 64, 0.1, 3, seed=9) == synth_dataset(20, 64, 0.1, 3, seed=9)
        assert synth_dataset(20, 64, 0.1, 3, seed=9) != synth_dataset(20, 64, 0.1, 3, seed=10)

    def test_mean_nnz_band(self):
        D = synth_dataset(1000, 1024, 0.03)
        mean_nnz = np.mean([v.nnz for v in D])
        assert 24 <= mean_nnz <= 38

    def test_count_range(self):
        X = synth_dataset(50, 100, 0.5, 4, seed=2).to_dense()
        assert set(np.unique(X)) <= {0, 1, 2, 3, 4}

    def test_clustered_shape_and_determinism(self):
        D = synth_clustered(40, 128, 4, 0.1, seed=1)
        assert len(D) == 40 and D.dim == 128
        assert D == synth_clustered(40, 128, 4, 0.1, seed=1)

    def test_clustered_points_resemble_prototypes(self):
        from tanimoto_rf import gram

        D = synth_clustered(60, 256, 3, 0.1, mutation=0.05, seed=4)
        K = gram(D, "tmm")
        off = K[~np.eye(len(D), dtype=bool)]
        # three tight clusters: roughly a third of the pairs are near-duplicates
        assert np.mean(off > 0.5) > 0.2


class TestFingerprintFiles:
    def test_parse_simple(self):
        D = parse_fingerprints("#dim=4\na\t0:1 2:3\n")
        assert D.dim == 4 and list(D.ids) == ["a"]
        assert D[0].entries == [(0, 1.0), (2, 3.0)]

    def test_non_ascending(self):
        with pytest.raises(FingerprintFormatError, match="non-ascending"):
            parse_fingerprints("#dim=4\na\t2:3 0:1\n")

    @pytest.mark.parametrize(
        "text, match",
        [
            ("a\t0:1\n", "#dim"),
            ("#dim=4\na\t9:1\n", "outside"),
            ("#dim=4\na\t0:-1\n", "non-positive"),
            ("#dim=4\na\t0:x\n", "malformed"),
            ("#dim=4\na\t0:1\na\t1:1\n", "duplicate"),
        ],
    )
    def test_errors(self, text, match):
        with pytest.raises(FingerprintFormatError, match=match):
            parse_fingerprints(text)

    def test_empty_vector_allowed(self):
        D = parse_fingerprints("#dim=3\nempty\t\n")
        assert D[0].nnz == 0

    def test_round_trip(self, tmp_path):
        D = synth_dataset(100, 64, 0.1, 5, 7)
        save_fingerprints(D, tmp_path / "fp.txt")
        assert load_fingerprints(tmp_path / "fp.txt") == D

    def test_round_trip_real_values(self, tmp_path):
        D = Dataset.from_dense(np.array([[0.1, 0, 1e-7], [np.pi, 2.5, 0]]))
        save_fingerprints(D, tmp_path / "fp.txt")
        assert load_fingerprints(tmp_path / "fp.txt") == D

    def test_sqrt_counts_on_load(self, tmp_path):
        (tmp_path / "fp.txt").write_text("#dim=2\na\t0:4 1:9\n")
        assert load_fingerprints(tmp_path / "fp.txt", sqrt_counts=True)[0].entries == [(0, 2.0), (1, 3.0)]

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 30), st.integers(1, 40), st.integers(0, 2**32))
    def test_round_trip_property(self, n, dim, seed):
        import tempfile, os

        D = synth_dataset(n, dim, 0.2, 6, seed)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "fp.txt")
            save_fingerprints(D, path)
            assert load_fingerprints(path) == D


class TestDataset:
    def test_subset_and_csr(self):
        D = synth_dataset(10, 16, 0.3, 2, seed=1)
        S = D.subset([3, 1])
        np.testing.assert_array_equal(S.to_dense(), D.to_dense()[[3, 1]])
        np.testing.assert_array_equal(D.csr.toarray(), D.to_dense())

    def test_duplicate_ids_rejected(self):
        v = SparseVec(2, [0], [1.0])
        with pytest.raises(ValueError):
            Dataset(2, ["a", "a"], [v, v])

    def test_as_dataset(self):
        v = SparseVec(2, [0], [1.0])
        assert len(as_dataset(v)) == 1
        assert len(as_dataset([v, v])) == 2
        with pytest.raises(TypeError):
            as_dataset([])
