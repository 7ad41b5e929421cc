import subprocess
import sys

import numpy as np
import pytest

from connlatent.cli import main
from connlatent.data import read_matrix, write_matrix

FAST = ["--set", "grid.svm_C=1", "--set", "grid.svm_gamma=0.1", "--set", "grid.rf_n_trees=5",
        "--set", "grid.rf_max_depth=2", "--set", "eval.k=3", "--set", "output.plots=false"]


@pytest.fixture
def synth_files(tmp_path):
    meta, feats = tmp_path / "meta.csv", tmp_path / "x.bin"
    assert main(["synth", "--subjects", "120", "--sites", "3", "--features-dim", "12",
                 "--signal-dim", "3", "--effect-size", "1.5", "--seed", "2",
                 "--out-metadata", str(meta), "--out-features", str(feats)]) == 0
    return meta, feats


class TestExitCodes:
    def test_config_error(self, synth_files, tmp_path, capsys):
        meta, feats = synth_files
        code = main(["classify", "--metadata", str(meta), "--features", str(feats),
                     "--out", str(tmp_path / "o"), "--set", "eval.k=1"])
        assert code == 2
        assert "ConfigError" in capsys.readouterr().err

    def test_malformed_config_file(self, tmp_path):
        (tmp_path / "c.cfg").write_text("seed\n")
        assert main(["run", "--config", str(tmp_path / "c.cfg")]) == 2

    def test_missing_data_file(self, tmp_path, capsys):
        code = main(["classify", "--metadata", str(tmp_path / "none.csv"),
                     "--features", str(tmp_path / "none.bin"), "--out", str(tmp_path / "o")])
        assert code == 3
        assert capsys.readouterr().err.startswith("connlatent:")

    def test_training_failure(self, synth_files, tmp_path):
        meta, feats = synth_files
        x = read_matrix(feats)
        x[0, 0] = np.nan
        write_matrix(tmp_path / "bad.bin", x)
        assert main(["train-dvae", "--features", str(tmp_path / "bad.bin"),
                     "--model-out", str(tmp_path / "m.bin")]) == 4

    def test_evaluation_failure(self, tmp_path):
        (tmp_path / "s.csv").write_text("score,label\n0.1,1\n0.2,1\n")
        assert main(["evaluate", str(tmp_path / "s.csv")]) == 5

    def test_stage_named_on_failure(self, synth_files, tmp_path, capsys):
        meta, feats = synth_files
        code = main(["run", "--metadata", str(meta), "--features", str(feats),
                     "--out", str(tmp_path / "o"), "--set", "harmonize.covariates=age",
                     "--set", "eval.min_per_class=100", "--set", "eval.losocv=true",
                     "--set", "features.use_dvae=false", "--set", "eval.bootstrap=0",
                     "--set", "eval.permutations=0", *FAST])
        assert code == 2
        assert "stage 'losocv'" in capsys.readouterr().err
        assert list((tmp_path / "o").glob("*.partial"))


class TestSubcommands:
    def test_classify_writes_metrics(self, synth_files, tmp_path, capsys):
        meta, feats = synth_files
        out = tmp_path / "o"
        assert main(["classify", "--metadata", str(meta), "--features", str(feats),
                     "--out", str(out), *FAST]) == 0
        assert (out / "metrics.csv").exists()
        assert "holdout" in capsys.readouterr().out

    def test_permtest(self, synth_files, tmp_path):
        meta, feats = synth_files
        out = tmp_path / "o"
        assert main(["permtest", "-N", "3", "--metadata", str(meta), "--features", str(feats),
                     "--out", str(out), *FAST]) == 0
        assert (out / "permutation_svm.csv").exists()

    def test_bootstrap_requires_replicates(self, synth_files, tmp_path):
        meta, feats = synth_files
        assert main(["bootstrap", "-B", "0", "--metadata", str(meta), "--features", str(feats),
                     "--out", str(tmp_path / "o"), *FAST]) == 2

    def test_harmonize_and_reuse_model(self, synth_files, tmp_path):
        meta, feats = synth_files
        a, b, model = tmp_path / "a.bin", tmp_path / "b.bin", tmp_path / "cb.bin"
        assert main(["harmonize", "--metadata", str(meta), "--features", str(feats),
                     "--out", str(a), "--model-out", str(model)]) == 0
        assert main(["harmonize", "--metadata", str(meta), "--features", str(feats),
                     "--out", str(b), "--model", str(model)]) == 0
        np.testing.assert_array_equal(read_matrix(a), read_matrix(b))

    def test_train_and_extract(self, synth_files, tmp_path):
        _, feats = synth_files
        model, lat = tmp_path / "m.bin", tmp_path / "z.csv"
        assert main(["train-dvae", "--features", str(feats), "--model-out", str(model),
                     "--set", "dvae.epochs=3", "--set", "dvae.hidden_dims=8,4",
                     "--set", "dvae.latent_dim=2", "--loss-curve", str(tmp_path / "l.csv")]) == 0
        assert main(["extract", "--model", str(model), "--features", str(feats),
                     "--out", str(lat), "--format", "csv"]) == 0
        assert read_matrix(lat).shape == (120, 4)

    def test_vectorize(self, tmp_path, rng):
        paths = []
        for i in range(3):
            paths.append(tmp_path / f"t{i}.csv")
            write_matrix(paths[-1], rng.standard_normal((30, 5)), fmt="csv")
        assert main(["vectorize", *map(str, paths), "--out", str(tmp_path / "v.bin")]) == 0
        assert read_matrix(tmp_path / "v.bin").shape == (3, 15)

    def test_evaluate(self, tmp_path, capsys):
        (tmp_path / "s.csv").write_text("score,label\n0.1,0\n0.4,0\n0.35,1\n0.8,1\n")
        assert main(["evaluate", str(tmp_path / "s.csv"), "--threshold", "0.3",
                     "--roc", str(tmp_path / "r.csv")]) == 0
        assert "auc          0.7500" in capsys.readouterr().out
        assert (tmp_path / "r.csv").read_text().startswith("model,fpr,tpr\n")

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "connlatent", "--version"],
                             capture_output=True, text=True)
        assert res.returncode == 0 and res.stdout.startswith("connlatent ")

    def test_bad_threads(self, tmp_path):
        (tmp_path / "s.csv").write_text("score,label\n0.1,0\n0.8,1\n")
        assert main(["--threads", "0", "evaluate", str(tmp_path / "s.csv")]) == 2
