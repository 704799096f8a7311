import csv
import json
import os

import numpy as np
import pytest

from lobsad import cli, data, nnet


def write_config(path, train=None, synth=None):
    doc = {"version": 1,
           "train": train or {},
           "synth": synth or {}}
    path.write_text(json.dumps(doc))
    return str(path)


TINY_TRAIN = {"pretrain_epochs": 2, "main_epochs": 3, "batch_size": 32,
              "layer_dims": [20, 12, 20], "seed": 0}
TINY_SYNTH = {"n_rows": 400, "anomaly_rate": 0.03, "n_labeled": 6, "seed": 0}


@pytest.fixture
def tiny_config(tmp_path):
    return write_config(tmp_path / "cfg.json", TINY_TRAIN, TINY_SYNTH)


@pytest.fixture
def generated(tmp_path, tiny_config):
    out = tmp_path / "gen"
    assert cli.main(["generate", "--config", tiny_config, "--out", str(out)]) == 0
    return out


class TestGenerate:
    def test_writes_three_files_with_matching_counts(self, generated):
        rows = list(csv.reader(open(generated / "lob.csv")))
        assert len(rows) == 401
        labels = [l for l in open(generated / "labels.txt").read().split() if l]
        assert len(labels) == 6
        gt = list(csv.reader(open(generated / "ground_truth.csv")))
        assert gt[0] == ["row_index", "archetype", "labeled"]
        assert sum(int(r[2]) for r in gt[1:]) == 6

    def test_seed_flag_deterministic(self, tmp_path, tiny_config):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert cli.main(["generate", "--config", tiny_config,
                             "--out", str(out), "--seed", "1"]) == 0
            outs.append((out / "lob.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_malformed_json_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"version": 1,\n  "train": {,}\n}')
        code = cli.main(["generate", "--config", str(bad), "--out",
                         str(tmp_path / "o")])
        assert code == 2
        err = capsys.readouterr().err
        assert "line 2" in err

    def test_unknown_key_rejected(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"bogus_knob": 1}, {})
        assert cli.main(["generate", "--config", cfg,
                         "--out", str(tmp_path / "o")]) == 2


def run_experiment_cli(tmp_path, tiny_config, generated, extra=()):
    out = tmp_path / "run"
    code = cli.main(["run", "--config", tiny_config,
                     "--data", str(generated / "lob.csv"),
                     "--labels", str(generated / "labels.txt"),
                     "--out", str(out), *extra])
    return code, out


class TestRun:
    def test_full_run_six_trials(self, tmp_path, tiny_config, generated):
        code, out = run_experiment_cli(tmp_path, tiny_config, generated)
        assert code == 0
        rows = list(csv.reader(open(out / "results.csv")))[1:]
        assert {int(r[0]) for r in rows} == {1, 2, 3, 4, 5, 6}
        assert len(rows) == 6 * 8
        assert (out / "run_manifest.json").exists()
        assert (out / "trial1_fold0_svdd.ckpt").exists()
        assert (out / "trial1_fold0_sad.ckpt").exists()
        assert (out / "trial1_scatter_sad_train.csv").exists()
        docs = json.load(open(out / "results.json"))
        assert len(docs) == 6

    def test_svdd_only_mode(self, tmp_path, tiny_config, generated):
        code, out = run_experiment_cli(tmp_path, tiny_config, generated,
                                       ("--mode", "svdd-only"))
        assert code == 0
        rows = list(csv.reader(open(out / "results.csv")))[1:]
        assert {r[2] for r in rows} == {"svdd"}

    def test_missing_labels_exit_2(self, tmp_path, tiny_config, generated, capsys):
        code = cli.main(["run", "--config", tiny_config,
                         "--data", str(generated / "lob.csv"),
                         "--labels", str(generated / "nope.txt"),
                         "--out", str(tmp_path / "r")])
        assert code == 2
        assert "nope.txt" in capsys.readouterr().err

    def test_determinism_byte_identical(self, tmp_path, tiny_config, generated):
        blobs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            code = cli.main(["run", "--config", tiny_config,
                             "--data", str(generated / "lob.csv"),
                             "--labels", str(generated / "labels.txt"),
                             "--out", str(out), "--jobs", "1"])
            assert code == 0
            blobs.append((out / "results.csv").read_bytes())
        assert blobs[0] == blobs[1]


class TestScore:
    def test_self_consistency_with_stored_scores(self, tmp_path, tiny_config,
                                                 generated):
        code, out = run_experiment_cli(tmp_path, tiny_config, generated)
        assert code == 0
        score_path = tmp_path / "scores.csv"
        code = cli.main(["score",
                         "--checkpoint", str(out / "trial1_fold0_sad.ckpt"),
                         "--data", str(generated / "lob.csv"),
                         "--out", str(score_path)])
        assert code == 0
        scored = {int(r[0]): float(r[1])
                  for r in list(csv.reader(open(score_path)))[1:]}
        stored = {int(r[0]): float(r[1]) for r in
                  list(csv.reader(open(out / "trial1_scores_sad_train.csv")))[1:]}
        assert stored
        for row, s in stored.items():
            assert scored[row] == pytest.approx(s, abs=1e-12)

    def test_empty_data_header_only(self, tmp_path, tiny_config, generated):
        code, out = run_experiment_cli(tmp_path, tiny_config, generated,
                                       ("--mode", "svdd-only"))
        empty = tmp_path / "empty.csv"
        empty.write_text(",".join(data.CSV_COLUMNS) + "\n")
        score_path = tmp_path / "s.csv"
        code = cli.main(["score",
                         "--checkpoint", str(out / "trial1_fold0_svdd.ckpt"),
                         "--data", str(empty), "--out", str(score_path)])
        assert code == 0
        assert score_path.read_text().strip() == "row,score"

    def test_dim_mismatch_exit_2(self, tmp_path, generated, capsys):
        model = nnet.mlp_init(0, (10, 5, 10))
        ckpt = tmp_path / "bad.ckpt"
        nnet.save_checkpoint(model, ckpt, extra={
            "center": np.zeros(10), "norm_mean": np.zeros(10),
            "norm_std": np.ones(10)})
        code = cli.main(["score", "--checkpoint", str(ckpt),
                         "--data", str(generated / "lob.csv"),
                         "--out", str(tmp_path / "s.csv")])
        assert code == 2
        err = capsys.readouterr().err
        assert "10" in err and "20" in err


class TestReport:
    def test_regenerates_identical_csv(self, tmp_path, tiny_config, generated):
        code, out = run_experiment_cli(tmp_path, tiny_config, generated)
        assert code == 0
        rep_out = tmp_path / "rep"
        code = cli.main(["report", "--results", str(out / "results.json"),
                         "--out", str(rep_out)])
        assert code == 0
        assert (rep_out / "results.csv").read_bytes() == \
            (out / "results.csv").read_bytes()


class TestUsage:
    def test_no_command_exit_2(self, capsys):
        assert cli.main([]) == 2

    def test_unknown_flag_exit_2(self, capsys):
        assert cli.main(["generate", "--config", "x", "--out", "y",
                         "--frobnicate"]) == 2
