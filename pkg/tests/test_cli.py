import json

import pytest

from embsurg import container
from embsurg.cli import main

TINY = [
    "--set", "metrics.n_images=16", "--set", "metrics.n_pairs=8", "--set", "metrics.is_splits=2",
    "--set", "metrics.mix_each=8", "--set", "optimization.batch_size=4", "--set", "optimization.num_pairs=3",
    "--set", "gan_train.batch_size=16", "--set", "classifier_train.batch_size=16",
]


def run(capsys, *argv):
    code = main(list(argv) + TINY)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    for which, name in (("gan_data", "data"), ("classifier_data", "cdata"), ("reference_data", "ref")):
        assert main(["synth-data", "--which", which, "--per-class", "8", "--out", str(root / f"{name}.emb")] + TINY) == 0
    assert main(["train-classifier", "--data", str(root / "cdata.emb"), "--epochs", "1",
                 "--out", str(root / "clf.emb")] + TINY) == 0
    assert main(["train-gan", "--data", str(root / "data.emb"), "--iterations", "4", "--snapshot-interval", "2",
                 "--out-dir", str(root / "run")] + TINY) == 0
    return root


def test_training_outputs(workspace):
    assert (workspace / "run" / "generator.emb").exists()
    assert sorted(p.name for p in (workspace / "run").glob("snapshot_*.emb")) == ["snapshot_2.emb", "snapshot_4.emb"]
    assert container.read_header(workspace / "clf.emb")["type"] == "classifier"


def test_corrupt_optimize_evaluate_report(workspace, capsys):
    w = workspace
    code, out, _ = run(capsys, "corrupt", "--generator", str(w / "run/generator.emb"), "--class", "1",
                       "--out", str(w / "gc.emb"))
    assert code == 0 and json.loads(out)["corruption"]["mode"] == "random-far"
    code, out, _ = run(capsys, "optimize", "--generator", str(w / "gc.emb"), "--classifier", str(w / "clf.emb"),
                       "--class", "1", "--trials", "2", "--steps", "3", "--reference-data", str(w / "ref.emb"),
                       "--out-dir", str(w / "res/opt"))
    assert code == 0
    assert {"trial_0.emb", "trial_1.emb", "trial_0_trace.csv", "grid_class1_before_after.png"} <= {
        p.name for p in (w / "res/opt").iterdir()}
    trial = container.load(w / "res/opt/trial_0.emb", expect="trial_result")
    assert trial.target_class == 1 and trial.trace.shape == (3, 3)
    code, _, _ = run(capsys, "evaluate", "--generator", str(w / "gc.emb"), "--classifier", str(w / "clf.emb"),
                     "--classes", "0,1", "--out-dir", str(w / "res/eval"))
    assert code == 0 and (w / "res/eval/metrics.csv").exists()
    code, out, _ = run(capsys, "report", "--results", str(w / "res"))
    assert code == 0 and "| optimize |" in out and "| evaluate |" in out
    assert (w / "res/report.json").exists()


def test_baselines_and_interpolate(workspace, capsys):
    w = workspace
    code, _, _ = run(capsys, "baseline", "--generator", str(w / "run/generator.emb"), "--class", "0",
                     "--method", "noise", "--sigma", "0.3", "--relative", "--out-dir", str(w / "base"))
    assert code == 0
    code, _, err = run(capsys, "baseline", "--generator", str(w / "run/generator.emb"), "--class", "0",
                       "--method", "finetune", "--out-dir", str(w / "base"))
    assert code == 3 and json.loads(err)["error"] == "CapabilityError"
    code, _, _ = run(capsys, "baseline", "--generator", str(w / "run/generator.emb"), "--class", "0",
                     "--method", "finetune", "--iters", "2", "--discriminator", str(w / "run/discriminator.emb"),
                     "--out-dir", str(w / "base"))
    assert code == 0 and (w / "base/baseline_finetune_class0.emb").exists()
    code, _, _ = run(capsys, "interpolate", "--generator", str(w / "run/generator.emb"), "--class", "0",
                     "--start-trial", str(w / "base/baseline_noise_class0.emb"), "--steps", "3", "--rows", "2",
                     "--out-dir", str(w / "interp"))
    assert code == 0 and (w / "interp/interpolate_embedding_class0.png").exists()


def test_show_config_seed_precedence(capsys, monkeypatch):
    monkeypatch.setenv("EMBSURG_SEED", "5")
    assert main(["show-config"]) == 0
    assert "seed: 5" in capsys.readouterr().out
    assert main(["show-config", "--seed", "9"]) == 0
    assert "seed: 9" in capsys.readouterr().out


def test_report_on_empty_directory_exits_2(tmp_path, capsys):
    code, _, err = run(capsys, "report", "--results", str(tmp_path))
    assert code == 2 and "no results" in json.loads(err)["message"]


def test_bad_override_and_missing_file(tmp_path, capsys):
    assert main(["show-config", "--set", "optimization.nope=1"]) == 2
    assert json.loads(capsys.readouterr().err)["field"] == "optimization.nope"
    code, _, err = run(capsys, "corrupt", "--generator", str(tmp_path / "x.emb"), "--class", "0",
                       "--out", str(tmp_path / "y.emb"))
    assert code == 2


def test_corrupt_file_exits_3(tmp_path, capsys):
    bad = tmp_path / "bad.emb"
    bad.write_bytes(b"EMBSURG1" + b"\0" * 60)
    code, _, err = run(capsys, "corrupt", "--generator", str(bad), "--class", "0", "--out", str(tmp_path / "o.emb"))
    assert code == 3 and json.loads(err)["error"] == "IntegrityError"


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as info:
        main(["optimize"])
    assert info.value.code == 2
