"""Command-line interface: the synth/train/eval/infer chain and exit codes."""
import json

import numpy as np
import pytest

import crossseg.cli as cli
from crossseg.cli import EXIT_CHECK_FAILED, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from crossseg.errors import NumericsError
from crossseg.netpbm import read_pgm, read_ppm, write_ppm

TINY_CONFIG = {
    "model": {"input_size": 32, "channels": [4, 8, 16, 32], "state_size": 2,
              "shuffle_groups": 2, "attention_reduction": 2},
    "train": {"epochs": 1, "batch_size": 4, "lr": 1e-3, "max_steps": 2, "seed": 0},
    "augment": {"flip_prob": 0.5, "rotation_degrees": 0.0,
                "brightness": 0.0, "contrast": 0.0},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One synth -> train chain shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.json"
    spec.write_text(json.dumps({"count": 8, "image_size": 32, "seed": 0}))
    data = root / "data"
    assert main(["synth", "--spec", str(spec), "--out", str(data)]) == EXIT_OK
    cfg = root / "config.json"
    cfg.write_text(json.dumps(TINY_CONFIG))
    run = root / "run"
    assert main(["train", "--data", str(data), "--out", str(run),
                 "--config", str(cfg)]) == EXIT_OK
    return {"root": root, "data": data, "config": cfg,
            "ckpt": run / "model_best.ckpt", "log": run / "train_log.jsonl"}


def test_print_defaults_is_json(capsys):
    assert main(["synth", "--print-defaults"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["dataset"]["count"] == 200
    assert doc["model"]["input_size"] == 64
    assert doc["train"]["epochs"] == 10


def test_synth_requires_out():
    assert main(["synth"]) == EXIT_USAGE


def test_synth_flag_overrides(tmp_path, capsys):
    out = tmp_path / "d"
    assert main(["synth", "--out", str(out), "--count", "3", "--size", "32",
                 "--seed", "7"]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7
    assert manifest["spec"]["count"] == 3
    assert str(out) in capsys.readouterr().out


def test_train_artifacts_and_log(workdir, capsys):
    assert workdir["ckpt"].exists()
    lines = workdir["log"].read_text().splitlines()
    assert len(lines) == 1
    rec = json.loads(lines[0])
    assert set(rec) >= {"epoch", "lr", "mean_loss", "train_mdice", "val_mdice"}


def test_train_prints_epoch_records(workdir, tmp_path, capsys):
    out = tmp_path / "run2"
    assert main(["train", "--data", str(workdir["data"]), "--out", str(out),
                 "--config", str(workdir["config"]), "--seed", "1"]) == EXIT_OK
    stdout = capsys.readouterr().out
    first = json.loads(stdout.splitlines()[0])
    assert first["epoch"] == 0
    assert "best val mDice" in stdout


@pytest.mark.parametrize("flag", ["--no-cmd", "--no-msa", "--no-fd"])
def test_train_ablation_flags_run(workdir, tmp_path, flag):
    out = tmp_path / ("run" + flag)
    assert main(["train", "--data", str(workdir["data"]), "--out", str(out),
                 "--config", str(workdir["config"]), flag]) == EXIT_OK
    assert (out / "model_best.ckpt").exists()


def test_train_size_mismatch_is_usage_error(workdir, tmp_path, capsys):
    # desk-profile model wants 64x64; the generated data is 32x32
    out = tmp_path / "bad"
    code = main(["train", "--data", str(workdir["data"]), "--out", str(out)])
    assert code == EXIT_USAGE
    assert "32" in capsys.readouterr().err


def test_eval_table_and_report(workdir, tmp_path, capsys):
    report = tmp_path / "report.json"
    assert main(["eval", "--model", str(workdir["ckpt"]), "--data",
                 str(workdir["data"]), "--report", str(report)]) == EXIT_OK
    table = capsys.readouterr().out
    assert table.startswith("metric")
    assert "mDice" in table
    doc = json.loads(report.read_text())
    assert doc["n_images"] == 2
    assert set(doc["means"]) == {"mdice", "miou", "fbw", "s_alpha", "e_xi", "mae"}


def test_eval_train_split(workdir, capsys):
    assert main(["eval", "--model", str(workdir["ckpt"]), "--data",
                 str(workdir["data"]), "--split", "train"]) == EXIT_OK
    capsys.readouterr()


def test_eval_missing_model_is_usage_error(workdir, capsys):
    code = main(["eval", "--model", str(workdir["root"] / "nope.ckpt"),
                 "--data", str(workdir["data"])])
    assert code == EXIT_USAGE
    assert "error:" in capsys.readouterr().err


def test_infer_writes_masks(workdir, tmp_path, capsys):
    rng = np.random.default_rng(0)
    image = tmp_path / "in.ppm"
    write_ppm(image, rng.random((3, 48, 40)))     # non-square, non-native size
    mask_out = tmp_path / "mask.pgm"
    prob_out = tmp_path / "prob.pgm"
    assert main(["infer", "--model", str(workdir["ckpt"]), "--image", str(image),
                 "--out", str(mask_out), "--prob", str(prob_out)]) == EXIT_OK
    capsys.readouterr()
    mask = read_pgm(mask_out)
    assert mask.shape == (48, 40)
    assert set(np.unique(mask)) <= {0, 255}
    prob = read_pgm(prob_out)
    assert prob.shape == (48, 40)


def test_infer_rejects_ascii_input(workdir, tmp_path, capsys):
    bad = tmp_path / "a.ppm"
    bad.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    code = main(["infer", "--model", str(workdir["ckpt"]), "--image", str(bad),
                 "--out", str(tmp_path / "m.pgm")])
    assert code == EXIT_USAGE
    assert "ASCII" in capsys.readouterr().err


def test_bad_config_is_usage_error(workdir, tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"train": {"learning_rate": 1.0}}))
    code = main(["train", "--data", str(workdir["data"]),
                 "--out", str(tmp_path / "o"), "--config", str(cfg)])
    assert code == EXIT_USAGE
    assert "learning_rate" in capsys.readouterr().err


def test_numeric_abort_exit_code(workdir, tmp_path, capsys, monkeypatch):
    def explode(*a, **k):
        raise NumericsError("non-finite loss at step 0; first non-finite op: conv2d")
    monkeypatch.setattr(cli, "train_loop", explode)
    code = main(["train", "--data", str(workdir["data"]),
                 "--out", str(tmp_path / "o"), "--config", str(workdir["config"])])
    assert code == EXIT_NUMERIC
    assert "numerical abort" in capsys.readouterr().err


def test_selfcheck_passes(capsys):
    assert main(["selfcheck"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "scan_bijectivity" in out and "0 failed" in out


def test_selfcheck_detects_injected_fault(capsys):
    assert main(["selfcheck", "--inject-fault", "scan"]) == EXIT_CHECK_FAILED
    out = capsys.readouterr().out
    assert "scan_bijectivity" in out


def test_no_subcommand_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == EXIT_USAGE
    capsys.readouterr()
