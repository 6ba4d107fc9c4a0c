import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from tanimoto_rf import GpHypers, TdpFeatureSpec, gram, load_fingerprints, read_trff, rfgp_fit, rfgp_predict, save_fingerprints, synth_dataset, t_mm
from tanimoto_rf.cli import main, read_labels, write_labels
from tanimoto_rf.gp import exact_gp_predict


def read_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0].startswith("#config=")
    config = json.loads(lines[0][len("#config="):])
    body = [l for l in lines[1:] if not l.startswith("#")]
    summary = [json.loads(l[len("#summary="):]) for l in lines if l.startswith("#summary=")]
    return config, list(csv.reader(body)), summary


@pytest.fixture
def fp(tmp_path):
    path = tmp_path / "fp.txt"
    path.write_text("#dim=4\na\t0:1 1:2\nb\t1:1 2:3\nc\t0:2 3:1\n")
    return path


@pytest.fixture
def synth(tmp_path):
    fp, labels = tmp_path / "syn.txt", tmp_path / "labels.csv"
    assert main(["synth", "--n", "120", "--dim", "64", "--density", "0.15", "--clusters", "4", "--labels", str(labels), "--output", str(fp), "--seed", "2"]) == 0
    return fp, labels


class TestGram:
    def test_hand_values(self, fp, tmp_path, capsys):
        out = tmp_path / "g.trff"
        assert main(["gram", "--input", str(fp), "--kernel", "tmm", "--check-psd", "--output", str(out)]) == 0
        K, is_gram = read_trff(out)
        assert is_gram
        # a.b: min sums to 1, max to 1 + 2 + 3; a.c: min 1, max 2 + 2 + 1
        expected = np.array([[1, 1 / 6, 1 / 5], [1 / 6, 1, 0], [1 / 5, 0, 1]])
        np.testing.assert_allclose(K, expected, atol=1e-15)
        assert K[0, 1] == pytest.approx(t_mm([1, 2, 0, 0], [0, 1, 3, 0]))
        printed = capsys.readouterr().out
        assert "n=3" in printed and "min_eigenvalue=" in printed
        assert json.loads((tmp_path / "g.trff.config.json").read_text())["kernel"] == "tmm"

    def test_binary_kernels_agree(self, tmp_path):
        save_fingerprints(synth_dataset(30, 50, 0.2, 1, seed=1), tmp_path / "bin.txt")
        for k in ("tmm", "tdp"):
            assert main(["gram", "--input", str(tmp_path / "bin.txt"), "--kernel", k, "--output", str(tmp_path / f"{k}.trff")]) == 0
        np.testing.assert_allclose(read_trff(tmp_path / "tmm.trff")[0], read_trff(tmp_path / "tdp.trff")[0], atol=1e-12)

    def test_sqrt_counts(self, tmp_path):
        (tmp_path / "c.txt").write_text("#dim=2\na\t0:4\nb\t0:1 1:9\n")
        main(["gram", "--input", str(tmp_path / "c.txt"), "--kernel", "tmm", "--sqrt-counts", "--output", str(tmp_path / "g.trff")])
        assert read_trff(tmp_path / "g.trff")[0][0, 1] == pytest.approx(1 / 5)

    def test_missing_file(self, tmp_path, capsys):
        assert main(["gram", "--input", str(tmp_path / "nope.txt"), "--output", str(tmp_path / "g.trff")]) == 2
        assert "nope.txt" in capsys.readouterr().err

    def test_parse_error(self, tmp_path):
        (tmp_path / "bad.txt").write_text("#dim=4\na\t2:1 0:1\n")
        assert main(["gram", "--input", str(tmp_path / "bad.txt"), "--output", str(tmp_path / "g.trff")]) == 2

    def test_usage_errors(self, fp):
        assert main(["gram", "--input", str(fp)]) == 1
        assert main(["gram", "--input", str(fp), "--kernel", "rbf", "--output", "x"]) == 1
        assert main(["frobnicate"]) == 1
        assert main([]) == 1


class TestFeatures:
    def test_deterministic_bytes(self, synth, tmp_path):
        fp, _ = synth
        spec = tmp_path / "mm.json"
        spec.write_text(json.dumps({"family": "minmax", "M": 64, "seed": 3}))
        for name in ("a", "b"):
            assert main(["features", "--input", str(fp), "--spec", str(spec), "--output", str(tmp_path / f"{name}.trff")]) == 0
        assert (tmp_path / "a.trff").read_bytes() == (tmp_path / "b.trff").read_bytes()

    def test_minmax_shape(self, tmp_path):
        save_fingerprints(synth_dataset(100, 128, 0.1, 2, seed=4), tmp_path / "d.txt")
        (tmp_path / "s.json").write_text(json.dumps({"family": "minmax", "M": 1024}))
        main(["features", "--input", str(tmp_path / "d.txt"), "--spec", str(tmp_path / "s.json"), "--output", str(tmp_path / "f.trff")])
        assert read_trff(tmp_path / "f.trff")[0].shape == (1024, 100)

    def test_tdp_shape_is_allocation_sum(self, synth, tmp_path):
        fp, _ = synth
        spec = TdpFeatureSpec(M=150, zeta=0.2, prefactor_dim=64, poly_dim=64)
        (tmp_path / "s.json").write_text(spec.to_json())
        main(["features", "--input", str(fp), "--spec", str(tmp_path / "s.json"), "--output", str(tmp_path / "f.trff")])
        assert read_trff(tmp_path / "f.trff")[0].shape == (sum(spec.allocation), 120)

    @pytest.mark.parametrize("family", ["prefactor", "tensorsketch"])
    def test_other_families(self, synth, tmp_path, family):
        fp, _ = synth
        d = {"prefactor": {"family": "prefactor", "r": 2, "s": 1.0, "c": 0.5, "M": 32},
             "tensorsketch": {"family": "tensorsketch", "mode": "poly", "degree": 2, "input_dims": [64], "output_dim": 32}}[family]
        (tmp_path / "s.json").write_text(json.dumps(d))
        assert main(["features", "--input", str(fp), "--spec", str(tmp_path / "s.json"), "--output", str(tmp_path / "f.trff")]) == 0
        assert read_trff(tmp_path / "f.trff")[0].shape == (32, 120)

    @pytest.mark.parametrize("text", ["{not json", '{"family": "nope"}', '{"family": "minmax"}', "[1, 2]"])
    def test_invalid_spec(self, fp, tmp_path, text):
        (tmp_path / "s.json").write_text(text)
        assert main(["features", "--input", str(fp), "--spec", str(tmp_path / "s.json"), "--output", str(tmp_path / "f.trff")]) == 2

    def test_threads_do_not_change_output(self, synth, tmp_path):
        fp, _ = synth
        (tmp_path / "s.json").write_text(json.dumps({"family": "tdp", "M": 64, "zeta": 0.2, "m_r": 64, "m_poly": 64}))
        args = ["features", "--input", str(fp), "--spec", str(tmp_path / "s.json")]
        main(args + ["--output", str(tmp_path / "a.trff")])
        main(args + ["--threads", "1", "--output", str(tmp_path / "b.trff")])
        np.testing.assert_allclose(read_trff(tmp_path / "a.trff")[0], read_trff(tmp_path / "b.trff")[0], rtol=0, atol=1e-12)


class TestMseSweep:
    def test_format_and_trials(self, synth, tmp_path):
        fp, _ = synth
        out = tmp_path / "m.csv"
        assert main(["mse-sweep", "--input", str(fp), "--family", "minmax", "--M", "32,128", "--trials", "3", "--output", str(out)]) == 0
        config, rows, _ = read_csv(out)
        assert rows[0] == ["family", "M", "trial", "mse"]
        assert config["family"] == "minmax" and config["M"] == [32, 128]
        mse = [float(r[3]) for r in rows[1:]]
        assert len(mse) == 6 and len(set(mse)) == 6

    @pytest.mark.parametrize("family", ["tdp", "prefactor"])
    def test_families_run(self, synth, tmp_path, family):
        fp, _ = synth
        out = tmp_path / "m.csv"
        assert main(["mse-sweep", "--input", str(fp), "--family", family, "--M", "64", "--trials", "1", "--output", str(out)]) == 0
        assert len(read_csv(out)[1]) == 2

    def test_slope_from_csv(self, tmp_path):
        save_fingerprints(synth_dataset(60, 256, 0.05, 1, seed=3), tmp_path / "d.txt")
        out = tmp_path / "m.csv"
        main(["mse-sweep", "--input", str(tmp_path / "d.txt"), "--family", "minmax", "--M", "128,512,2048", "--trials", "3", "--output", str(out)])
        rows = read_csv(out)[1][1:]
        M = np.array([int(r[1]) for r in rows])
        mse = np.array([float(r[3]) for r in rows])
        med = [np.median(mse[M == m]) for m in (128, 512, 2048)]
        assert -1.25 <= np.polyfit(np.log([128, 512, 2048]), np.log(med), 1)[0] <= -0.75

    def test_oversize(self, tmp_path):
        save_fingerprints(synth_dataset(2001, 8, 0.5, 1, seed=1), tmp_path / "big.txt")
        assert main(["mse-sweep", "--input", str(tmp_path / "big.txt"), "--family", "minmax", "--output", str(tmp_path / "m.csv")]) == 1


class TestGp:
    def split(self, synth, tmp_path):
        fp, labels = synth
        D = load_fingerprints(fp)
        save_fingerprints(D.subset(range(90)), tmp_path / "train.txt")
        save_fingerprints(D.subset(range(90, 120)), tmp_path / "test.txt")
        return tmp_path / "train.txt", tmp_path / "test.txt", labels

    @pytest.mark.parametrize("mode", ["subset", "rf"])
    def test_outputs(self, synth, tmp_path, mode):
        train, test, labels = self.split(synth, tmp_path)
        out = tmp_path / "gp.csv"
        assert main(["gp", "--train", str(train), "--train-labels", str(labels), "--test", str(test), "--test-labels", str(labels),
                     "--mode", mode, "--M", "40", "--output", str(out)]) == 0
        config, rows, summary = read_csv(out)
        assert rows[0] == ["id", "y", "mean", "var", "log_prob"] and len(rows) == 31
        logp = np.array([float(r[4]) for r in rows[1:]])
        assert summary[0]["avg_log_prob"] == pytest.approx(logp.mean(), rel=1e-12)
        assert "hypers" in config

    def test_rf_matches_oracle(self, synth, tmp_path):
        train, test, labels = self.split(synth, tmp_path)
        h = GpHypers(0.1, 1.2, 0.3)
        (tmp_path / "h.json").write_text(json.dumps(h.to_dict()))
        spec = {"family": "minmax", "M": 48, "seed": 5}
        (tmp_path / "s.json").write_text(json.dumps(spec))
        out = tmp_path / "gp.csv"
        assert main(["gp", "--train", str(train), "--train-labels", str(labels), "--test", str(test), "--test-labels", str(labels),
                     "--mode", "rf", "--spec", str(tmp_path / "s.json"), "--hypers", str(tmp_path / "h.json"), "--output", str(out)]) == 0
        rows = read_csv(out)[1][1:]
        from tanimoto_rf import MinMaxFeatureMap

        Dtr, Dte = load_fingerprints(train), load_fingerprints(test)
        y = read_labels(labels, Dtr.ids)
        fmap = MinMaxFeatureMap(M=48, seed=5)
        P, Ps = fmap.transform(Dtr), fmap.transform(Dte)
        m_ref, v_ref = exact_gp_predict(P.T @ P, P.T @ Ps, np.sum(Ps**2, axis=0), y, h)
        np.testing.assert_allclose([float(r[2]) for r in rows], m_ref, rtol=1e-6)
        np.testing.assert_allclose([float(r[3]) for r in rows], v_ref, rtol=1e-6)

    def test_missing_labels(self, synth, tmp_path):
        train, test, _ = self.split(synth, tmp_path)
        (tmp_path / "few.csv").write_text("id,y\nc000,1.0\n")
        assert main(["gp", "--train", str(train), "--train-labels", str(tmp_path / "few.csv"), "--test", str(test),
                     "--test-labels", str(tmp_path / "few.csv"), "--mode", "rf", "--output", str(tmp_path / "o.csv")]) == 2

    def test_subset_too_large(self, synth, tmp_path):
        train, test, labels = self.split(synth, tmp_path)
        assert main(["gp", "--train", str(train), "--train-labels", str(labels), "--test", str(test), "--test-labels", str(labels),
                     "--mode", "subset", "--M", "500", "--output", str(tmp_path / "o.csv")]) == 1


class TestThompson:
    def test_rows(self, synth, tmp_path):
        fp, labels = synth
        out = tmp_path / "t.csv"
        assert main(["thompson", "--pool", str(fp), "--labels", str(labels), "--sizes", "50,100", "--batch", "10",
                     "--M", "32", "--warmup", "0", "--repeats", "1", "--seeds", "2", "--output", str(out)]) == 0
        _, rows, _ = read_csv(out)
        assert rows[0] == ["mode", "n", "wall_time_s", "mean_selected_label", "seed"]
        assert len(rows) == 1 + 2 * 2 * 2
        assert {r[0] for r in rows[1:]} == {"exact", "rf"}

    def test_batch_equals_pool(self, synth, tmp_path):
        fp, labels = synth
        out = tmp_path / "t.csv"
        assert main(["thompson", "--pool", str(fp), "--labels", str(labels), "--sizes", "20", "--batch", "20", "--mode", "rf",
                     "--M", "16", "--warmup", "0", "--repeats", "1", "--output", str(out)]) == 0
        D = load_fingerprints(fp)
        y = read_labels(labels, D.ids)
        from tanimoto_rf.core import TAG_GP, SeedStream
        from tanimoto_rf.cli import _trial_seed

        idx = np.sort(SeedStream(_trial_seed(0, 0), TAG_GP).generator().choice(120, 20, replace=False))
        row = read_csv(out)[1][1]
        assert float(row[3]) == pytest.approx(y[idx].mean(), rel=1e-12)

    def test_batch_too_large(self, synth, tmp_path):
        fp, labels = synth
        assert main(["thompson", "--pool", str(fp), "--labels", str(labels), "--sizes", "20", "--batch", "21", "--output", str(tmp_path / "t.csv")]) == 1


class TestSynth:
    def test_deterministic(self, tmp_path):
        for name in ("a", "b"):
            main(["synth", "--n", "30", "--dim", "32", "--max-count", "3", "--seed", "7", "--output", str(tmp_path / f"{name}.txt")])
        assert (tmp_path / "a.txt").read_text() == (tmp_path / "b.txt").read_text()
        assert len(load_fingerprints(tmp_path / "a.txt")) == 30

    def test_labels_round_trip(self, tmp_path):
        ids = ["p", "q"]
        write_labels(tmp_path / "l.csv", ids, [0.5, -1e-3], {"x": 1})
        np.testing.assert_array_equal(read_labels(tmp_path / "l.csv", ["q", "p"]), [-1e-3, 0.5])

    def test_label_errors(self, tmp_path):
        from tanimoto_rf import FingerprintFormatError

        (tmp_path / "l.csv").write_text("id,y\np,abc\n")
        with pytest.raises(FingerprintFormatError):
            read_labels(tmp_path / "l.csv", ["p"])


def test_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tanimoto_rf.cli", "gram", "--input", str(tmp_path / "missing.txt"), "--output", "x"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "missing.txt" in proc.stderr
