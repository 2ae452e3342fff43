import filecmp
import json
import os

import numpy as np
import pytest

from fraudring.cli import main
from fraudring.features import load_dataset
from fraudring.graph import ClaimEvent, LoginEvent, load_graph, save_claim_events, save_login_events

SMALL_SYNTH = [
    "--n-regular", "40", "--n-rings", "2",
    "--ring-size-min", "4", "--ring-size-max", "4",
    "--devices-per-ring-min", "2", "--devices-per-ring-max", "3",
    "--regular-devices-min", "1", "--regular-devices-max", "2",
    "--family-share-prob", "0.3", "--tag-miss-rate", "0.25",
    "--feature-dim", "5", "--fraud-shift", "1.5", "--seed", "3",
]

FAST_TRAIN = {
    "gnn": ["--epochs", "5", "--hidden-dim", "4", "--layers", "1"],
    "gbdt": ["--trees", "10", "--max-depth", "3"],
    "node2vec-gbdt": [
        "--trees", "10", "--max-depth", "3", "--dimensions", "4",
        "--walk-length", "6", "--walks-per-node", "4", "--window", "2",
        "--n2v-epochs", "1",
    ],
}


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["synth", "--out", str(out)] + SMALL_SYNTH) == 0
    return out


@pytest.fixture(scope="module")
def models_dir(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("cli-models")
    for model, flags in FAST_TRAIN.items():
        code = main(
            ["train", "--model", model, "--data", str(data_dir), "--out", str(out)] + flags
        )
        assert code == 0
    return out


def dir_snapshot(path):
    return {name: (path / name).read_bytes() for name in sorted(os.listdir(path))}


class TestSynth:
    def test_reruns_are_byte_identical(self, tmp_path, capsys):
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert main(["synth", "--out", str(a)] + SMALL_SYNTH) == 0
        assert main(["synth", "--out", str(b)] + SMALL_SYNTH) == 0
        assert dir_snapshot(a) == dir_snapshot(b)

    def test_output_is_loadable_and_reported(self, data_dir, capsys):
        ds = load_dataset(str(data_dir))
        assert ds.graph.num_nodes > 0
        assert ds.ground_truth is not None

    def test_missing_out_flag_is_usage_error(self, capsys):
        assert main(["synth", "--seed", "1"]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_stdout_summary(self, tmp_path, capsys):
        out = tmp_path / "d"
        main(["synth", "--out", str(out)] + SMALL_SYNTH)
        text = capsys.readouterr().out
        assert f"wrote dataset to {out}" in text
        assert "accounts: 48" in text
        assert "8 fraud" in text
        assert "will be pruned" in text


class TestBuildGraph:
    def write_events(self, tmp_path):
        claims = [ClaimEvent("acct1", 950), ClaimEvent("acct2", 980), ClaimEvent("acct3", 999)]
        logins = [
            LoginEvent("acct1", "dev1", 900),
            LoginEvent("acct2", "dev1", 910),
            LoginEvent("acct3", "dev2", 920),
        ]
        cpath = tmp_path / "claims.tsv"
        lpath = tmp_path / "logins.tsv"
        save_claim_events(claims, str(cpath))
        save_login_events(logins, str(lpath))
        return cpath, lpath

    def test_counts_match_hand_fixture(self, tmp_path, capsys):
        cpath, lpath = self.write_events(tmp_path)
        out = tmp_path / "graph.tsv"
        code = main([
            "build-graph", "--claims", str(cpath), "--logins", str(lpath),
            "--reference-time", "1000", "--claim-window-days", "1",
            "--device-window-days", "2", "--out", str(out),
        ])
        assert code == 0
        # acct3+dev2 form a singleton component and are pruned
        assert "nodes: 3, edges: 2" in capsys.readouterr().out
        g = load_graph(str(out))
        assert g.num_nodes == 3
        assert sum(1 for _ in g.edges()) == 2

    def test_no_prune_keeps_singletons(self, tmp_path, capsys):
        cpath, lpath = self.write_events(tmp_path)
        out = tmp_path / "graph.tsv"
        code = main([
            "build-graph", "--claims", str(cpath), "--logins", str(lpath),
            "--reference-time", "1000", "--claim-window-days", "1",
            "--device-window-days", "2", "--no-prune", "--out", str(out),
        ])
        assert code == 0
        assert "nodes: 5, edges: 3 (pruning skipped)" in capsys.readouterr().out
        assert load_graph(str(out)).num_nodes == 5

    def test_empty_logs_warn_but_succeed(self, tmp_path, capsys):
        cpath = tmp_path / "claims.tsv"
        lpath = tmp_path / "logins.tsv"
        cpath.write_text("", encoding="utf-8")
        lpath.write_text("", encoding="utf-8")
        out = tmp_path / "graph.tsv"
        code = main([
            "build-graph", "--claims", str(cpath), "--logins", str(lpath),
            "--reference-time", "1000", "--out", str(out),
        ])
        assert code == 0
        assert "warning: no in-window events" in capsys.readouterr().err
        assert load_graph(str(out)).num_nodes == 0

    def test_missing_input_file_is_data_error(self, tmp_path, capsys):
        code = main([
            "build-graph", "--claims", str(tmp_path / "nope.tsv"),
            "--logins", str(tmp_path / "nope2.tsv"),
            "--reference-time", "1000", "--out", str(tmp_path / "g.tsv"),
        ])
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestTrain:
    def test_gnn_writes_checkpoint_and_report(self, data_dir, tmp_path, capsys):
        out = tmp_path / "gnn"
        code = main(
            ["train", "--model", "gnn", "--data", str(data_dir), "--out", str(out)]
            + FAST_TRAIN["gnn"]
        )
        assert code == 0
        text = capsys.readouterr().out
        assert "training gnn: 5 epochs" in text
        assert "loss: " in text and " -> " in text
        assert (out / "gnn.ckpt").exists()
        assert (out / "train_report.tsv").exists()
        report_lines = (out / "train_report.tsv").read_text(encoding="utf-8").splitlines()
        assert report_lines[0] == "epoch\tloss\tn_sampled_neg"
        assert len(report_lines) == 6

    def test_gnn_training_is_deterministic(self, data_dir, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        argv = ["train", "--model", "gnn", "--data", str(data_dir)] + FAST_TRAIN["gnn"]
        assert main(argv + ["--out", str(a)]) == 0
        assert main(argv + ["--out", str(b)]) == 0
        assert filecmp.cmp(a / "gnn.ckpt", b / "gnn.ckpt", shallow=False)

    def test_gbdt_echoes_configuration(self, data_dir, tmp_path, capsys):
        out = tmp_path / "gbdt"
        code = main(
            ["train", "--model", "gbdt", "--data", str(data_dir), "--out", str(out)]
            + FAST_TRAIN["gbdt"]
        )
        assert code == 0
        text = capsys.readouterr().out
        assert (
            "gbdt configuration: 10 trees, max depth 3, row sampling rate 0.6, "
            "feature sampling rate 0.7, learning rate 0.009" in text
        )
        assert (out / "gbdt.model").exists()

    def test_node2vec_writes_embeddings_and_model(self, data_dir, tmp_path):
        out = tmp_path / "n2v"
        code = main(
            ["train", "--model", "node2vec-gbdt", "--data", str(data_dir), "--out", str(out)]
            + FAST_TRAIN["node2vec-gbdt"]
        )
        assert code == 0
        assert (out / "node2vec_gbdt.model").exists()
        assert (out / "embeddings.tsv").exists()

    def test_unknown_model_is_usage_error(self, data_dir, tmp_path, capsys):
        code = main(
            ["train", "--model", "svm", "--data", str(data_dir), "--out", str(tmp_path)]
        )
        assert code == 1
        assert "usage error" in capsys.readouterr().err


class TestEvaluate:
    def test_full_report_with_all_models(self, data_dir, models_dir, tmp_path, capsys):
        out = tmp_path / "eval"
        code = main([
            "evaluate", "--data", str(data_dir), "--models", str(models_dir),
            "--out", str(out),
        ])
        assert code == 0
        text = capsys.readouterr().out
        lines = [ln for ln in text.splitlines() if ln]
        assert lines[0] == "model\tthreshold\tprecision\trecall\tf1\tde"
        assert [ln.split("\t")[0] for ln in lines[1:4]] == ["gnn", "gbdt", "node2vec-gbdt"]
        assert (out / "report.tsv").exists()
        assert (out / "pr_curves.tsv").exists()
        saved = (out / "report.tsv").read_text(encoding="utf-8").splitlines()
        assert len(saved) == 4

    def test_missing_model_warns_and_omits(self, data_dir, models_dir, tmp_path, capsys):
        partial = tmp_path / "partial"
        partial.mkdir()
        (partial / "gbdt.model").write_bytes((models_dir / "gbdt.model").read_bytes())
        out = tmp_path / "eval"
        code = main([
            "evaluate", "--data", str(data_dir), "--models", str(partial),
            "--out", str(out),
        ])
        assert code == 0
        captured = capsys.readouterr()
        assert "omitting gnn" in captured.err
        assert "omitting node2vec-gbdt" in captured.err
        rows = (out / "report.tsv").read_text(encoding="utf-8").splitlines()
        assert len(rows) == 2 and rows[1].startswith("gbdt\t")

    def test_ground_truth_labels_add_audit_line(self, data_dir, models_dir, tmp_path, capsys):
        out = tmp_path / "eval"
        code = main([
            "evaluate", "--data", str(data_dir), "--models", str(models_dir),
            "--out", str(out), "--labels", "ground-truth",
        ])
        assert code == 0
        text = capsys.readouterr().out
        assert "audit: rule tags disagree with ground truth on" in text

    def test_feature_width_mismatch_is_data_error(self, models_dir, tmp_path, capsys):
        other = tmp_path / "other-data"
        code = main(["synth", "--out", str(other)] + SMALL_SYNTH[:-4] + ["--feature-dim", "6", "--seed", "3"])
        assert code == 0
        capsys.readouterr()
        # All three models present: the gnn checkpoint trips first.
        code = main([
            "evaluate", "--data", str(other), "--models", str(models_dir),
            "--out", str(tmp_path / "eval"),
        ])
        assert code == 2
        assert "does not match" in capsys.readouterr().err
        # With only the gbdt model the width check names its expectation.
        partial = tmp_path / "gbdt-only"
        partial.mkdir()
        (partial / "gbdt.model").write_bytes((models_dir / "gbdt.model").read_bytes())
        code = main([
            "evaluate", "--data", str(other), "--models", str(partial),
            "--out", str(tmp_path / "eval2"),
        ])
        assert code == 2
        assert "expects 5 features, dataset has 6" in capsys.readouterr().err


class TestGradCheck:
    def test_passes_at_default_settings(self, capsys):
        assert main(["grad-check"]) == 0
        text = capsys.readouterr().out
        assert "max relative gradient error:" in text
        assert "(12 nodes, hidden dim 4, 2 layers, eps 1e-05)" in text

    def test_corrupted_gradient_fails_with_exit_3(self, capsys):
        assert main(["grad-check", "--corrupt", "ws"]) == 3
        captured = capsys.readouterr()
        assert "FAILED: exceeds 0.0001" in captured.err

    def test_coarser_epsilon_still_passes(self, capsys):
        assert main(["grad-check", "--eps", "1e-3"]) == 0
        assert "eps 0.001" in capsys.readouterr().out


class TestExportDot:
    def test_writes_dot_with_highlights(self, data_dir, tmp_path, capsys):
        out = tmp_path / "graph.dot"
        code = main([
            "export-dot", "--graph", str(data_dir / "graph.tsv"),
            "--features", str(data_dir / "features.tsv"), "--out", str(out),
        ])
        assert code == 0
        text = out.read_text(encoding="utf-8")
        assert text.startswith("graph ")
        assert "shape=box" in text and "shape=ellipse" in text
        assert 'fillcolor="red"' in text

    def test_plain_export_has_no_highlight(self, data_dir, tmp_path):
        out = tmp_path / "plain.dot"
        code = main(["export-dot", "--graph", str(data_dir / "graph.tsv"), "--out", str(out)])
        assert code == 0
        assert "fillcolor" not in out.read_text(encoding="utf-8")


class TestConfigFile:
    def test_config_supplies_defaults_and_flags_override(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_regular": 30, "n_rings": 1, "feature_dim": 5}), encoding="utf-8")
        out = tmp_path / "data"
        code = main([
            "synth", "--out", str(out), "--config", str(cfg),
            "--n-rings", "2", "--ring-size-min", "4", "--ring-size-max", "4",
        ])
        assert code == 0
        # 30 regular from config + 2 rings of 4 from the flag override
        assert "accounts: 38" in capsys.readouterr().out

    def test_unknown_config_key_is_usage_error(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_regula": 30}), encoding="utf-8")
        code = main(["synth", "--out", str(tmp_path / "x"), "--config", str(cfg)])
        assert code == 1
        assert "unknown keys ['n_regula']" in capsys.readouterr().err

    def test_invalid_json_is_usage_error(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{broken", encoding="utf-8")
        code = main(["synth", "--out", str(tmp_path / "x"), "--config", str(cfg)])
        assert code == 1
        assert "invalid JSON" in capsys.readouterr().err

    def test_train_accepts_shared_config(self, data_dir, tmp_path, capsys):
        # One config file may carry keys for several train branches.
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps({"epochs": 4, "trees": 10, "dimensions": 4, "hidden_dim": 4, "layers": 1}),
            encoding="utf-8",
        )
        out = tmp_path / "gnn"
        code = main([
            "train", "--model", "gnn", "--data", str(data_dir),
            "--out", str(out), "--config", str(cfg),
        ])
        assert code == 0
        assert "training gnn: 4 epochs" in capsys.readouterr().out
