import json

import pytest

from poolsel import load_embeddings, load_labels, load_selection
from poolsel.cli import main


@pytest.fixture
def blob_dir(tmp_path):
    data = tmp_path / "data"
    rc = main(
        [
            "gen", "--blobs", "--classes", "10", "--per-class", "100", "--dim", "16",
            "--sigma", "0.1", "--scale", "10", "--seed", "0",
            "--test-per-class", "20", "--out-dir", str(data),
        ]
    )
    assert rc == 0
    return data


class TestGen:
    def test_blob_headers(self, blob_dir):
        m = load_embeddings(blob_dir / "train.emb")
        assert m.n == 1000 and m.d == 16
        labels = load_labels(blob_dir / "train.lbl")
        assert labels.n == 1000 and labels.num_classes == 10
        test = load_embeddings(blob_dir / "test.emb")
        assert test.n == 200

    def test_longtail_sizes(self, tmp_path):
        out = tmp_path / "lt"
        rc = main(
            [
                "gen", "--longtail", "--classes", "3", "--max", "100", "--min", "4",
                "--dim", "4", "--out-dir", str(out),
            ]
        )
        assert rc == 0
        labels = load_labels(out / "train.lbl")
        import numpy as np

        assert np.bincount(labels.labels).tolist() == [100, 20, 4]

    def test_missing_out_dir_created(self, tmp_path):
        out = tmp_path / "a" / "b" / "c"
        rc = main(
            [
                "gen", "--blobs", "--classes", "2", "--per-class", "3",
                "--dim", "2", "--out-dir", str(out),
            ]
        )
        assert rc == 0 and (out / "train.emb").exists()

    def test_blobs_require_per_class(self, tmp_path):
        rc = main(["gen", "--blobs", "--classes", "2", "--out-dir", str(tmp_path)])
        assert rc == 2


class TestSelect:
    def test_kmeans_budget(self, blob_dir, tmp_path):
        out = tmp_path / "sel"
        rc = main(
            [
                "select", "--strategy", "kmeans", "--embeddings", str(blob_dir / "train.emb"),
                "--budget", "10", "--seed", "0", "--out-dir", str(out),
            ]
        )
        assert rc == 0
        sel = load_selection(out / "kmeans_single_b10_s0.sel.json")
        assert sel.size == 10 and len(set(sel.indices)) == 10

    def test_multi_round_boundaries(self, blob_dir, tmp_path):
        out = tmp_path / "sel"
        rc = main(
            [
                "select", "--strategy", "kmeans-multi",
                "--embeddings", str(blob_dir / "train.emb"),
                "--schedule", "10,20,50", "--seed", "0", "--out-dir", str(out),
            ]
        )
        assert rc == 0
        sel = load_selection(out / "kmeans_multi_b50_s0.sel.json")
        assert sel.round_boundaries == (10, 20, 50)

    def test_uniform_without_labels_is_usage_error(self, blob_dir, tmp_path):
        rc = main(
            [
                "select", "--strategy", "uniform", "--embeddings", str(blob_dir / "train.emb"),
                "--per-class", "1", "--out-dir", str(tmp_path / "x"),
            ]
        )
        assert rc == 2

    def test_uniform_with_labels(self, blob_dir, tmp_path):
        out = tmp_path / "sel"
        rc = main(
            [
                "select", "--strategy", "uniform", "--embeddings", str(blob_dir / "train.emb"),
                "--labels", str(blob_dir / "train.lbl"), "--per-class", "2",
                "--seeds", "0,1", "--out-dir", str(out),
            ]
        )
        assert rc == 0
        assert (out / "uniform_b20_s0.sel.json").exists()
        assert (out / "uniform_b20_s1.sel.json").exists()

    def test_coreset_with_generated_initial(self, blob_dir, tmp_path):
        out = tmp_path / "sel"
        rc = main(
            [
                "select", "--strategy", "coreset", "--embeddings", str(blob_dir / "train.emb"),
                "--schedule", "5,15", "--seed", "3", "--out-dir", str(out),
            ]
        )
        assert rc == 0
        sel = load_selection(out / "coreset_b15_s3.sel.json")
        assert sel.size == 15

    def test_coreset_with_initial_file(self, blob_dir, tmp_path):
        first = tmp_path / "first"
        rc = main(
            [
                "select", "--strategy", "kmeans", "--embeddings", str(blob_dir / "train.emb"),
                "--budget", "5", "--seed", "0", "--out-dir", str(first),
            ]
        )
        assert rc == 0
        out = tmp_path / "sel"
        rc = main(
            [
                "select", "--strategy", "coreset", "--embeddings", str(blob_dir / "train.emb"),
                "--schedule", "5,12", "--seed", "0",
                "--initial", str(first / "kmeans_single_b5_s0.sel.json"),
                "--out-dir", str(out),
            ]
        )
        assert rc == 0
        sel = load_selection(out / "coreset_b12_s0.sel.json")
        initial = load_selection(first / "kmeans_single_b5_s0.sel.json")
        assert sel.indices[:5] == initial.indices

    def test_initial_file_size_mismatch_is_runtime_error(self, blob_dir, tmp_path):
        first = tmp_path / "first"
        rc = main(
            [
                "select", "--strategy", "random", "--embeddings", str(blob_dir / "train.emb"),
                "--budget", "3", "--seed", "0", "--out-dir", str(first),
            ]
        )
        assert rc == 0
        rc = main(
            [
                "select", "--strategy", "coreset", "--embeddings", str(blob_dir / "train.emb"),
                "--schedule", "5,12", "--seed", "0",
                "--initial", str(first / "random_b3_s0.sel.json"),
                "--out-dir", str(tmp_path / "x"),
            ]
        )
        assert rc == 1

    def test_max_entropy_roundtrip(self, blob_dir, tmp_path):
        out = tmp_path / "sel"
        rc = main(
            [
                "select", "--strategy", "max-entropy",
                "--embeddings", str(blob_dir / "train.emb"),
                "--labels", str(blob_dir / "train.lbl"),
                "--schedule", "10,15", "--seed", "0",
                "--probe-epochs", "10", "--out-dir", str(out),
            ]
        )
        assert rc == 0
        sel = load_selection(out / "max_entropy_b15_s0.sel.json")
        assert sel.size == 15 and sel.strategy == "max_entropy"

    def test_uniform_kmeans(self, blob_dir, tmp_path):
        out = tmp_path / "sel"
        rc = main(
            [
                "select", "--strategy", "uniform-kmeans",
                "--embeddings", str(blob_dir / "train.emb"),
                "--clusters", "10", "--per-cluster", "3", "--seed", "0",
                "--out-dir", str(out),
            ]
        )
        assert rc == 0
        sel = load_selection(out / "uniform_kmeans_b30_s0.sel.json")
        assert sel.size == 30

    def test_uniform_kmeans_requires_cluster_args(self, blob_dir, tmp_path):
        rc = main(
            [
                "select", "--strategy", "uniform-kmeans",
                "--embeddings", str(blob_dir / "train.emb"),
                "--out-dir", str(tmp_path / "x"),
            ]
        )
        assert rc == 2

    def test_feature_space_flags_pass_through(self, blob_dir, tmp_path):
        out = tmp_path / "sel"
        rc = main(
            [
                "select", "--strategy", "kmeans-multi",
                "--embeddings", str(blob_dir / "train.emb"),
                "--schedule", "5,10", "--seed", "0",
                "--normalize-features", "--recluster-unlabeled-only",
                "--out-dir", str(out),
            ]
        )
        assert rc == 0
        sel = load_selection(out / "kmeans_multi_b10_s0.sel.json")
        assert sel.size == 10 and len(set(sel.indices)) == 10

    def test_missing_budget_is_usage_error(self, blob_dir, tmp_path):
        rc = main(
            [
                "select", "--strategy", "kmeans", "--embeddings", str(blob_dir / "train.emb"),
                "--out-dir", str(tmp_path / "x"),
            ]
        )
        assert rc == 2

    def test_bad_embedding_path_is_runtime_error(self, tmp_path):
        rc = main(
            [
                "select", "--strategy", "kmeans", "--embeddings", str(tmp_path / "no.emb"),
                "--budget", "3", "--out-dir", str(tmp_path / "x"),
            ]
        )
        assert rc == 1


class TestEval:
    def run_select(self, blob_dir, out, seeds="0,1,2"):
        rc = main(
            [
                "select", "--strategy", "kmeans", "--embeddings", str(blob_dir / "train.emb"),
                "--budget", "10", "--seeds", seeds, "--out-dir", str(out),
            ]
        )
        assert rc == 0
        return sorted(str(p) for p in out.glob("*.sel.json"))

    def test_coverage_aggregation(self, blob_dir, tmp_path):
        sels = self.run_select(blob_dir, tmp_path / "sel")
        out = tmp_path / "res"
        rc = main(
            [
                "eval", "--selections", *sels,
                "--train-embeddings", str(blob_dir / "train.emb"),
                "--train-labels", str(blob_dir / "train.lbl"),
                "--metrics", "coverage,histogram", "--out-dir", str(out),
            ]
        )
        assert rc == 0
        doc = json.loads((out / "metrics.json").read_text())
        (cell,) = doc["cells"]
        assert cell["strategy"] == "kmeans_single"
        assert [r["seed"] for r in cell["runs"]] == [0, 1, 2]
        assert cell["coverage_mean"] == 100.0 and cell["coverage_std"] == 0.0
        assert (out / "table_coverage.txt").exists()
        assert (out / "histogram_kmeans_single_b10.csv").exists()

    def test_knn_train_equals_test(self, blob_dir, tmp_path):
        # Selecting the full pool and evaluating against the pool itself is
        # the self-NN case: accuracy must be exactly 100.
        sel_dir = tmp_path / "sel"
        rc = main(
            [
                "select", "--strategy", "random", "--embeddings", str(blob_dir / "train.emb"),
                "--budget", "1000", "--seed", "0", "--out-dir", str(sel_dir),
            ]
        )
        assert rc == 0
        out = tmp_path / "res"
        rc = main(
            [
                "eval", "--selections", str(sel_dir / "random_b1000_s0.sel.json"),
                "--train-embeddings", str(blob_dir / "train.emb"),
                "--train-labels", str(blob_dir / "train.lbl"),
                "--test-embeddings", str(blob_dir / "train.emb"),
                "--test-labels", str(blob_dir / "train.lbl"),
                "--metrics", "knn", "--out-dir", str(out),
            ]
        )
        assert rc == 0
        doc = json.loads((out / "metrics.json").read_text())
        assert doc["cells"][0]["knn_top1_mean"] == 100.0

    def test_mixed_strategy_grid(self, blob_dir, tmp_path):
        sel_dir = tmp_path / "sel"
        for strategy in ("kmeans", "random"):
            rc = main(
                [
                    "select", "--strategy", strategy,
                    "--embeddings", str(blob_dir / "train.emb"),
                    "--budget", "10", "--seeds", "0,1", "--out-dir", str(sel_dir),
                ]
            )
            assert rc == 0
        out = tmp_path / "res"
        rc = main(
            [
                "eval", "--selections", *sorted(str(p) for p in sel_dir.glob("*.sel.json")),
                "--train-embeddings", str(blob_dir / "train.emb"),
                "--train-labels", str(blob_dir / "train.lbl"),
                "--metrics", "coverage", "--out-dir", str(out),
            ]
        )
        assert rc == 0
        doc = json.loads((out / "metrics.json").read_text())
        assert [c["strategy"] for c in doc["cells"]] == ["kmeans_single", "random"]
        table = (out / "table_coverage.txt").read_text()
        assert "kmeans_single" in table and "random" in table

    def test_selection_out_of_range_is_runtime_error(self, blob_dir, tmp_path):
        bad = tmp_path / "bad.sel.json"
        bad.write_text(
            json.dumps(
                {
                    "strategy": "random",
                    "seed": 0,
                    "budget_schedule": [2],
                    "round_boundaries": [2],
                    "indices": [0, 99999],
                }
            )
        )
        rc = main(
            [
                "eval", "--selections", str(bad),
                "--train-embeddings", str(blob_dir / "train.emb"),
                "--train-labels", str(blob_dir / "train.lbl"),
                "--metrics", "coverage", "--out-dir", str(tmp_path / "res"),
            ]
        )
        assert rc == 1

    def test_knn_requires_test_files(self, blob_dir, tmp_path):
        sels = self.run_select(blob_dir, tmp_path / "sel", seeds="0")
        rc = main(
            [
                "eval", "--selections", *sels,
                "--train-embeddings", str(blob_dir / "train.emb"),
                "--train-labels", str(blob_dir / "train.lbl"),
                "--metrics", "knn", "--out-dir", str(tmp_path / "res"),
            ]
        )
        assert rc == 2

    def test_unknown_metric(self, blob_dir, tmp_path):
        sels = self.run_select(blob_dir, tmp_path / "sel", seeds="0")
        rc = main(
            [
                "eval", "--selections", *sels,
                "--train-embeddings", str(blob_dir / "train.emb"),
                "--train-labels", str(blob_dir / "train.lbl"),
                "--metrics", "tsne", "--out-dir", str(tmp_path / "res"),
            ]
        )
        assert rc == 2


class TestConfigFile:
    def test_config_supplies_defaults_flags_win(self, blob_dir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("budget=10\nseed=5\nout-dir={}\n".format(tmp_path / "from_cfg"))
        rc = main(
            [
                "select", "--strategy", "kmeans", "--embeddings", str(blob_dir / "train.emb"),
                "--config", str(cfg), "--seed", "7",
            ]
        )
        assert rc == 0
        # budget and out-dir came from the config; --seed 7 beat seed=5.
        assert (tmp_path / "from_cfg" / "kmeans_single_b10_s7.sel.json").exists()

    def test_config_coerces_typed_options_with_none_default(self, blob_dir, tmp_path):
        # --per-class has no default; its value must still arrive as an int.
        cfg = tmp_path / "run.cfg"
        cfg.write_text("per-class=2\nout-dir={}\n".format(tmp_path / "out"))
        rc = main(
            [
                "select", "--strategy", "uniform", "--embeddings", str(blob_dir / "train.emb"),
                "--labels", str(blob_dir / "train.lbl"), "--config", str(cfg),
            ]
        )
        assert rc == 0
        assert (tmp_path / "out" / "uniform_b20_s0.sel.json").exists()

    def test_config_bad_value_is_usage_error(self, blob_dir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("budget=ten\n")
        rc = main(
            [
                "select", "--strategy", "kmeans", "--embeddings", str(blob_dir / "train.emb"),
                "--config", str(cfg), "--out-dir", str(tmp_path / "x"),
            ]
        )
        assert rc == 2

    def test_unknown_config_key(self, blob_dir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("no-such-option=1\n")
        rc = main(
            [
                "select", "--strategy", "kmeans", "--embeddings", str(blob_dir / "train.emb"),
                "--budget", "3", "--config", str(cfg), "--out-dir", str(tmp_path / "x"),
            ]
        )
        assert rc == 2


class TestReproduceCommand:
    def test_single_criterion_passes(self, capsys):
        rc = main(["reproduce", "--only", "A10"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "A10 PASS" in out

    def test_force_fail_hook_gives_nonzero_exit(self, monkeypatch, capsys):
        monkeypatch.setenv("POOLSEL_FORCE_FAIL", "A10")
        rc = main(["reproduce", "--only", "A10"])
        assert rc == 1
        assert "A10 FAIL" in capsys.readouterr().out

    def test_quick_subset_under_a_minute(self, capsys):
        import time

        start = time.perf_counter()
        rc = main(["reproduce", "--quick"])
        elapsed = time.perf_counter() - start
        assert rc == 0
        assert elapsed < 60.0
        assert "all 7 criteria passed" in capsys.readouterr().out
