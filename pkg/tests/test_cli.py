import os
import shutil
import pandas as pd
import pytest
from keys import Keys
from main import main
from modules import read_json, read_jsonl


@pytest.fixture
def cli_data(tmp_path):
    directory = str(tmp_path / "synthetic")
    code = main(["synth", "--out", directory, "--fields", "6", "--informative", "3", "--vocab", "5",
                 "--records", "600", "--seed", "3", "--weight_scale", "2.0"])
    assert code == 0
    return directory


@pytest.fixture
def cli_config(cli_data, tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(f"batch_size = 64\nd1 = 4\nd2 = 2\nmax_epochs = 1\nlr = 0.01\nhidden_dims = 8\n"
                    f"data = {cli_data}\n")
    return str(path)


def _only_run(root):
    runs = [name for name in os.listdir(root) if not name.startswith("compare_")]
    assert len(runs) == 1
    return os.path.join(root, runs[0])


def test_params_prints_reductions(capsys):
    assert main(["params", "--vocab", "2018012", "--d1", "32", "--d2", "4"]) == 0
    out = capsys.readouterr().out
    assert "64,576,384" in out and "8,072,048" in out
    assert "37.50%" in out and "50.00%" in out
    assert main(["params", "--vocab", "2018012", "--d1", "32", "--d2", "16"]) == 0
    assert "0.00%" in capsys.readouterr().out


def test_params_sweeps_auxiliary_sizes(capsys):
    assert main(["params", "--vocab", "1000", "--d1", "32", "--sweep", "2,4,8,16"]) == 0
    out = capsys.readouterr().out
    for expected in ("43.75%", "37.50%", "25.00%", "0.00%"):
        assert expected in out


def test_synth_writes_dataset(cli_data):
    for name in (Keys.DATA_FILE, Keys.SCHEMA_FILE, Keys.INFORMATIVE_FILE, Keys.MANIFEST_FILE):
        assert os.path.exists(os.path.join(cli_data, name))
    assert read_json(os.path.join(cli_data, Keys.MANIFEST_FILE))["status"] == "ok"


def test_train_writes_a_run_directory_once(cli_config, tmp_path):
    out = str(tmp_path / "runs")
    assert main(["train", "--config", cli_config, "--out", out, "--seed", "1"]) == 0
    run_dir = _only_run(out)
    assert run_dir.endswith("_seed1")
    for name in (Keys.CONFIG_FILE, Keys.VOCAB_FILE, Keys.CHECKPOINT_FILE, Keys.TRAIN_REPORT_FILE,
                 Keys.METRICS_REPORT + ".jsonl", Keys.METRICS_REPORT + ".txt", Keys.MANIFEST_FILE):
        assert os.path.exists(os.path.join(run_dir, name)), name
    manifest = read_json(os.path.join(run_dir, Keys.MANIFEST_FILE))
    assert manifest["status"] == "ok" and manifest["seed"] == 1
    assert len(manifest["inputs"]["data_sha256"]) == 64
    (row,) = read_jsonl(os.path.join(run_dir, Keys.METRICS_REPORT + ".jsonl"))
    assert row["method"] == "aefs" and row["delta_pae"] == 0.0
    assert main(["train", "--config", cli_config, "--out", out, "--seed", "1"]) == 1
    assert main(["train", "--config", cli_config, "--out", out, "--seed", "1", "--force"]) == 0


def test_train_flags_select_the_ablation(cli_config, tmp_path):
    out = str(tmp_path / "runs")
    assert main(["train", "--config", cli_config, "--out", out, "--d1", "8", "--no_pal"]) == 0
    config_text = open(os.path.join(_only_run(out), Keys.CONFIG_FILE)).read()
    assert "enable_pal = false" in config_text and "enable_eal = true" in config_text
    assert "d1 = 8" in config_text


def test_error_exit_codes(cli_config, tmp_path):
    out = str(tmp_path / "runs")
    assert main(["train", "--config", cli_config, "--out", out, "--method", "lasso"]) == 1
    assert main(["train", "--config", cli_config, "--out", out, "--data", str(tmp_path / "nowhere")]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.cfg")]) == 1


def _copy_with_data(cli_data, target, frame=None):
    os.makedirs(target)
    shutil.copy(os.path.join(cli_data, Keys.SCHEMA_FILE), target)
    path = os.path.join(target, Keys.DATA_FILE)
    if frame is None:
        open(path, "w").close()
    else:
        frame.to_csv(path, index=False)
    return target


def test_unusable_data_exits_with_data_error(cli_config, cli_data, tmp_path):
    out = str(tmp_path / "runs")
    empty = _copy_with_data(cli_data, str(tmp_path / "empty"))
    assert main(["train", "--config", cli_config, "--out", out, "--data", empty]) == 2
    frame = pd.read_csv(os.path.join(cli_data, Keys.DATA_FILE), dtype=str, keep_default_na=False)
    frame["label"] = "0"
    one_class = _copy_with_data(cli_data, str(tmp_path / "one_class"), frame)
    assert main(["train", "--config", cli_config, "--out", out, "--data", one_class]) == 2


def test_params_rejects_a_malformed_vocabulary(tmp_path):
    path = tmp_path / "vocab.json"
    path.write_text("{}")
    assert main(["params", "--vocab", str(path)]) == 2


def test_metrics_report_does_not_depend_on_output_root(cli_config, tmp_path):
    reports = []
    for root in ("first", "second"):
        out = str(tmp_path / root)
        assert main(["train", "--config", cli_config, "--out", out]) == 0
        with open(os.path.join(_only_run(out), Keys.METRICS_REPORT + ".jsonl"), "rb") as f:
            reports.append(f.read())
    assert reports[0] == reports[1]


def test_evaluate_reproduces_the_test_metrics(cli_config, tmp_path):
    out = str(tmp_path / "runs")
    assert main(["train", "--config", cli_config, "--out", out]) == 0
    run_dir = _only_run(out)
    assert main(["evaluate", run_dir, "--dump"]) == 0
    (trained,) = read_jsonl(os.path.join(run_dir, Keys.METRICS_REPORT + ".jsonl"))
    (again,) = read_jsonl(os.path.join(run_dir, "evaluate", Keys.METRICS_REPORT + ".jsonl"))
    assert again["auc"] == trained["auc"] and again["logloss"] == trained["logloss"]
    assert os.path.exists(os.path.join(run_dir, "evaluate", Keys.SELECTION_DUMP_FILE))


def test_compare_repeated_method_is_indistinguishable(cli_config, tmp_path):
    out = str(tmp_path / "runs")
    assert main(["compare", "--config", cli_config, "--out", out, "--methods", "aefs,aefs",
                 "--seeds", "1,2"]) == 0
    (compare_dir,) = [os.path.join(out, name) for name in os.listdir(out)]
    cells = read_jsonl(os.path.join(compare_dir, "cells.jsonl"))
    assert [(c["method"], c["seed"]) for c in cells] == [("aefs", 1), ("aefs", 2), ("aefs#2", 1), ("aefs#2", 2)]
    p_values = {r["method"]: r["p_values"] for r in read_jsonl(os.path.join(compare_dir, "p_values.jsonl"))}
    assert p_values["aefs"]["aefs#2"] == 1.0
    summary = {r["method"]: r for r in read_jsonl(os.path.join(compare_dir, Keys.METRICS_REPORT + ".jsonl"))}
    assert summary["aefs"]["auc"] == summary["aefs#2"]["auc"]


def test_compare_two_methods(cli_config, tmp_path):
    out = str(tmp_path / "runs")
    assert main(["compare", "--config", cli_config, "--out", out, "--methods", "none,aefs",
                 "--seeds", "1,2"]) == 0
    (compare_dir,) = [os.path.join(out, name) for name in os.listdir(out)]
    summary = {r["method"]: r for r in read_jsonl(os.path.join(compare_dir, Keys.METRICS_REPORT + ".jsonl"))}
    assert set(summary) == {"none", "aefs"}
    assert summary["none"]["delta_pae"] == 0.0 and summary["aefs"]["seeds"] == 2
    with open(os.path.join(compare_dir, "p_values.txt"), encoding="utf-8") as f:
        assert f.readline().split() == ["p-value", "none", "aefs"]
    assert main(["compare", "--config", cli_config, "--out", out, "--methods", "aefs", "--seeds", "1"]) == 1


def test_prepare_then_params_from_the_vocabulary(cli_config, tmp_path, capsys):
    vocab_path = str(tmp_path / "vocab.json")
    assert main(["prepare", "--config", cli_config, "--out", vocab_path]) == 0
    vocab = read_json(vocab_path)
    assert len(vocab["vocab_sizes"]) == 6
    capsys.readouterr()
    assert main(["params", "--vocab", vocab_path, "--d1", "4", "--d2", "2"]) == 0
    assert f"{sum(vocab['vocab_sizes']) * 4:,}" in capsys.readouterr().out


def test_compare_passes_training_flags_to_every_cell(cli_config, tmp_path):
    out = str(tmp_path / "runs")
    assert main(["compare", "--config", cli_config, "--out", out, "--methods", "none,aefs", "--seeds", "1",
                 "--batch_size", "32", "--lr", "0.02", "--hidden_dims", "6", "--split_seed", "5"]) == 0
    (compare_dir,) = [os.path.join(out, name) for name in os.listdir(out)]
    for label in ("none", "aefs"):
        config_text = open(os.path.join(compare_dir, label, "seed1", Keys.CONFIG_FILE)).read()
        assert "batch_size = 32" in config_text and "lr = 0.02" in config_text
        assert "hidden_dims = 6" in config_text and "split_seed = 5" in config_text
