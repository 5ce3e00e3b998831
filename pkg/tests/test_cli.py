# tests/test_cli.py
import json
import logging

import pandas as pd
import pytest

import settings
from main import main
from utils.logger import ROOT_LOGGER_NAME

TINY_CONFIG = {
    "d_model": 8, "n_heads": 2, "encoder_depths": [1, 1, 1], "volume_dims": [8, 8, 8], "patch_size": 4,
    "max_len": 64, "batch_size": 8, "dropout": 0.0,
}


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert settings.APP_VERSION in capsys.readouterr().out


def test_missing_required_flag_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--out-dir", str(tmp_path)])
    assert exc.value.code == 1


def test_missing_file_exits_with_validation_code(tmp_path, capsys):
    code = main(["evaluate", "--checkpoint", str(tmp_path / "none.ckpt"),
                 "--manifest", str(tmp_path / "none.jsonl"), "--out-dir", str(tmp_path)])
    assert code == 1
    assert "--checkpoint" in capsys.readouterr().err


def test_scm_verify_example(tmp_path, capsys):
    assert main(["scm-verify", "--example", "frontdoor", "--out-dir", str(tmp_path)]) == 0
    table = pd.read_csv(tmp_path / "scm_comparison.csv")
    assert set(table["method"]) == {"oracle", "observational", "frontdoor", "backdoor"}
    for method in ("frontdoor", "backdoor"):
        rows = table[table["method"] == method]
        assert rows["max_abs_error_vs_oracle"].max() <= 1e-10
    assert "criterion passed=True" in capsys.readouterr().out
    assert (tmp_path / "logs").is_dir()


def test_scm_verify_file_with_backdoor_set(tmp_path):
    from services.scm_service import backdoor_scm, scm_to_document

    path = tmp_path / "bd.json"
    path.write_text(json.dumps(scm_to_document(backdoor_scm(0.5, [0.2, 0.8], [0.1, 0.5, 0.4, 0.9]))))
    code = main(["scm-verify", "--scm", str(path), "--mediator", "S", "--adjust", "S",
                 "--out-dir", str(tmp_path / "out")])
    assert code == 0
    table = pd.read_csv(tmp_path / "out" / "scm_comparison.csv")
    assert set(table["method"]) == {"oracle", "observational", "backdoor"}


def test_scm_verify_skips_backdoor_without_positivity(tmp_path):
    from services.scm_service import backdoor_scm, scm_to_document

    # X copies S, so no stratum of S sees both values of X
    path = tmp_path / "deterministic.json"
    path.write_text(json.dumps(scm_to_document(backdoor_scm(0.5, [0.0, 1.0], [0.1, 0.5, 0.4, 0.9]))))
    flags = ["scm-verify", "--scm", str(path), "--mediator", "S"]

    assert main(flags + ["--out-dir", str(tmp_path / "default")]) == 0
    table = pd.read_csv(tmp_path / "default" / "scm_comparison.csv")
    assert set(table["method"]) == {"oracle", "observational"}

    assert main(flags + ["--adjust", "S", "--out-dir", str(tmp_path / "explicit")]) == 1


def test_scm_verify_random(tmp_path):
    assert main(["scm-verify", "--random", "20", "--out-dir", str(tmp_path)]) == 0
    assert len(pd.read_csv(tmp_path / "scm_random.csv")) == 20


def test_synth_then_train_then_evaluate(tmp_path):
    data = tmp_path / "data"
    assert main(["synth-data", "--counts", "10", "10", "10", "--dims", "8", "8", "8", "--out-dir", str(data)]) == 0
    manifest = data / "manifest.jsonl"
    assert manifest.exists()

    config = tmp_path / "config.json"
    config.write_text(json.dumps(TINY_CONFIG))
    run = tmp_path / "run"
    assert main(["train", "--config", str(config), "--manifest", str(manifest), "--epochs", "1",
                 "--out-dir", str(run)]) == 0
    assert (run / "best.ckpt").exists() and (run / "history.csv").exists()

    outputs = []
    for name in ("eval_a", "eval_b"):
        assert main(["evaluate", "--checkpoint", str(run / "best.ckpt"), "--manifest", str(manifest),
                     "--out-dir", str(tmp_path / name)]) == 0
        outputs.append((tmp_path / name / "metrics_test.json").read_text())
    assert outputs[0] == outputs[1]


def test_bad_config_key_fails_validation(tmp_path, tiny_manifest):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"learning_rate": 0.1}))
    code = main(["train", "--config", str(config), "--manifest", str(tiny_manifest), "--out-dir", str(tmp_path)])
    assert code == 1


def test_saliency_and_export(tmp_path, trained_run, capsys):
    manifest, checkpoint = trained_run
    assert main(["saliency", "--checkpoint", str(checkpoint), "--manifest", str(manifest), "--class", "MCI",
                 "--top-k", "3", "--out-dir", str(tmp_path)]) == 0
    assert len(pd.read_csv(tmp_path / "saliency_MCI.csv")) == 3

    assert main(["export-features", "--checkpoint", str(checkpoint), "--manifest", str(manifest),
                 "--stage", "multimodal_pooled", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "features_multimodal_pooled.csv").exists()


def test_run_logs_are_closed_after_each_command(tmp_path):
    root = logging.getLogger(ROOT_LOGGER_NAME)
    for name in ("first", "second"):
        assert main(["scm-verify", "--example", "frontdoor", "--out-dir", str(tmp_path / name)]) == 0
        assert not [h for h in root.handlers if isinstance(h, logging.FileHandler)]
    assert list((tmp_path / "second" / "logs").glob("adpc_*.log"))


def test_ablate_runs_the_single_seed_flag(tmp_path, tiny_manifest):
    config = tmp_path / "config.json"
    config.write_text(json.dumps(TINY_CONFIG))
    out = tmp_path / "ablation"
    assert main(["ablate", "--config", str(config), "--manifest", str(tiny_manifest), "--epochs", "1",
                 "--seed", "3", "--out-dir", str(out)]) == 0
    runs = pd.read_csv(out / "ablation.csv")
    assert set(runs["seed"]) == {3}
    assert (out / "ablation_deltas.csv").exists()
