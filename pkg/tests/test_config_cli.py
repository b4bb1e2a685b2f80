import json

import numpy as np
import pytest

from protoscale.cli import entrypoint
from protoscale.config import load_run_config, parse_run_config, resolved_text
from protoscale.errors import ConfigError

TINY_CONFIG = """
[model]
input_size = 32
channels = 4,8,16
dim = 8
attention_heads = 2
n_semantic = 4
n_auxiliary = 2
n_instance = 3

[train]
steps = 3
batch_size = 2
checkpoint_interval = 2
log_interval = 1
"""


# -- parsing ------------------------------------------------------------------


def test_empty_config_is_all_defaults():
    config = parse_run_config("")
    assert config.model.input_size == 64
    assert config.model.channels == (32, 64, 128)
    assert config.model.n_semantic == 16
    assert config.model.tau == 0.1
    assert config.weights.semantic == 1.0
    assert config.weights.instance == 2.0
    assert config.train.steps == 2000
    assert config.train.batch_size == 8
    assert config.train.ema_momentum == 0.99
    assert config.augment.crop_prob == 0.5


def test_overrides_take_effect():
    config = parse_run_config(TINY_CONFIG)
    assert config.model.input_size == 32
    assert config.model.channels == (4, 8, 16)
    assert config.model.dim == 8
    assert config.train.steps == 3
    assert config.train.batch_size == 2


def test_unknown_section_rejected():
    with pytest.raises(ConfigError):
        parse_run_config("[mode]\ninput_size = 64\n")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        parse_run_config("[model]\ninput_sise = 64\n")


def test_malformed_value_rejected():
    with pytest.raises(ConfigError):
        parse_run_config("[model]\ndim = thirty\n")


def test_malformed_ini_rejected():
    with pytest.raises(ConfigError):
        parse_run_config("no section header\n")


def test_student_view_count_is_pinned():
    assert parse_run_config("[augment]\nstudent_views = 4\n")
    with pytest.raises(ConfigError):
        parse_run_config("[augment]\nstudent_views = 3\n")


def test_invalid_combinations_rejected_at_parse():
    with pytest.raises(ConfigError):
        parse_run_config("[model]\ndim = 30\nattention_heads = 4\n")
    with pytest.raises(ConfigError):
        parse_run_config("[model]\ntau = 0.0\n")
    with pytest.raises(ConfigError):
        parse_run_config("[model]\nthreshold = 1.5\n")
    with pytest.raises(ConfigError):
        parse_run_config("[model]\nprior_sigma = -1.0\n")
    with pytest.raises(ConfigError):
        parse_run_config("[loss]\nsemantic = -0.5\n")
    with pytest.raises(ConfigError):
        parse_run_config("[model]\nchannels = 4,8\n")
    with pytest.raises(ConfigError):
        parse_run_config("[model]\ninput_size = 40\n")


def test_resolved_text_round_trips():
    config = parse_run_config(TINY_CONFIG)
    text = resolved_text(config)
    assert parse_run_config(text) == config
    assert "student_views = 4" in text


def test_boolean_parsing():
    assert parse_run_config("[model]\nuse_prior = false\n").model.use_prior is False
    assert parse_run_config("[model]\nuse_prior = 1\n").model.use_prior is True
    with pytest.raises(ConfigError):
        parse_run_config("[model]\nuse_prior = maybe\n")


def test_missing_config_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "nope.ini")


# -- CLI ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    code = entrypoint(
        ["generate", "--count", "8", "--out", str(out), "--seed", "5", "--size", "32"]
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, tiny_dataset):
    out = tmp_path_factory.mktemp("run")
    config = out / "run.ini"
    config.write_text(TINY_CONFIG)
    code = entrypoint(
        [
            "train",
            "--config", str(config),
            "--data", str(tiny_dataset),
            "--out", str(out),
        ]
    )
    assert code == 0
    return out


def test_generate_writes_manifest(tiny_dataset):
    manifest = json.loads((tiny_dataset / "manifest.json").read_text())
    assert manifest["count"] == 8
    assert manifest["size"] == 32
    assert len(manifest["scenes"]) == 8


def test_generate_zero_count(tmp_path):
    out = tmp_path / "empty"
    assert entrypoint(["generate", "--count", "0", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["scenes"] == []


def test_generate_negative_count_exits_2(tmp_path):
    assert entrypoint(["generate", "--count", "-1", "--out", str(tmp_path / "x")]) == 2


def test_generate_missing_out_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        entrypoint(["generate", "--count", "1"])
    assert excinfo.value.code == 2


def test_generate_deterministic_across_runs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert (
            entrypoint(
                ["generate", "--count", "3", "--out", str(out), "--seed", "9"]
            )
            == 0
        )
    for name in sorted(p.name for p in a.iterdir()):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_train_outputs(trained_run):
    assert (trained_run / "ckpt_final.bin").exists()
    assert (trained_run / "ckpt_000002.bin").exists()
    rows = (trained_run / "metrics.csv").read_text().splitlines()
    assert rows[0] == "step,total,sem,inst,hier,sparsity,diversity,lr"
    assert len(rows) == 4


def test_train_config_echo(trained_run):
    echoed = (trained_run / "config.resolved").read_text()
    assert parse_run_config(echoed) == parse_run_config(TINY_CONFIG)


def test_train_bad_config_exits_2(tmp_path, tiny_dataset):
    config = tmp_path / "bad.ini"
    config.write_text("[model]\nnonsense = 1\n")
    code = entrypoint(
        [
            "train",
            "--config", str(config),
            "--data", str(tiny_dataset),
            "--out", str(tmp_path / "out"),
        ]
    )
    assert code == 2


def test_train_missing_data_exits_3(tmp_path):
    config = tmp_path / "run.ini"
    config.write_text(TINY_CONFIG)
    code = entrypoint(
        [
            "train",
            "--config", str(config),
            "--data", str(tmp_path / "missing"),
            "--out", str(tmp_path / "out"),
        ]
    )
    assert code == 3


def test_train_size_mismatch_exits_2(tmp_path, tiny_dataset):
    config = tmp_path / "run.ini"
    config.write_text("[train]\nsteps = 1\n")
    code = entrypoint(
        [
            "train",
            "--config", str(config),
            "--data", str(tiny_dataset),
            "--out", str(tmp_path / "out"),
        ]
    )
    assert code == 2


def test_train_resume_of_final_checkpoint_immediate(tmp_path, tiny_dataset, trained_run):
    config = tmp_path / "run.ini"
    config.write_text(TINY_CONFIG)
    out = tmp_path / "resumed"
    code = entrypoint(
        [
            "train",
            "--config", str(config),
            "--data", str(tiny_dataset),
            "--out", str(out),
            "--resume", str(trained_run / "ckpt_final.bin"),
        ]
    )
    assert code == 0
    rows = (out / "metrics.csv").read_text().splitlines()
    assert len(rows) == 1
    assert (out / "ckpt_final.bin").read_bytes() == (
        trained_run / "ckpt_final.bin"
    ).read_bytes()


def test_train_nonfinite_abort_exits_4(tmp_path, tiny_dataset):
    # lr large enough that the first update overflows the conv stack to inf
    # on the following forward pass, whatever the init scale.
    config = tmp_path / "explode.ini"
    config.write_text(
        TINY_CONFIG.replace("steps = 3", "steps = 4") + "lr = 1e160\n"
    )
    code = entrypoint(
        [
            "train",
            "--config", str(config),
            "--data", str(tiny_dataset),
            "--out", str(tmp_path / "out"),
        ]
    )
    assert code == 4


def test_eval_writes_reports(tmp_path, tiny_dataset, trained_run):
    out = tmp_path / "eval"
    code = entrypoint(
        [
            "eval",
            "--ckpt", str(trained_run / "ckpt_final.bin"),
            "--data", str(tiny_dataset),
            "--out", str(out),
        ]
    )
    assert code == 0
    report = json.loads((out / "metrics.json").read_text())
    assert report["n_scenes"] == 1
    assert len(report["per_scale"]) == 3
    assert np.isfinite(report["instance_ari"])
    rows = (out / "eval.csv").read_text().splitlines()
    assert rows[0].startswith("step,")
    assert rows[1].startswith("3,")


def test_eval_idempotent(tmp_path, tiny_dataset, trained_run):
    out = tmp_path / "eval"
    args = [
        "eval",
        "--ckpt", str(trained_run / "ckpt_final.bin"),
        "--data", str(tiny_dataset),
        "--out", str(out),
    ]
    assert entrypoint(args) == 0
    first = (out / "metrics.json").read_bytes()
    assert entrypoint(args) == 0
    assert (out / "metrics.json").read_bytes() == first
    rows = (out / "eval.csv").read_text().splitlines()
    assert len(rows) == 3
    assert rows[1] == rows[2]


def test_eval_export_maps_count(tmp_path, tiny_dataset, trained_run):
    out = tmp_path / "eval"
    code = entrypoint(
        [
            "eval",
            "--ckpt", str(trained_run / "ckpt_final.bin"),
            "--data", str(tiny_dataset),
            "--out", str(out),
            "--export-maps",
        ]
    )
    assert code == 0
    files = list((out / "maps").iterdir())
    assert len(files) == 3 * (4 + 3 + 3) + 3


def test_eval_corrupt_checkpoint_exits_5(tmp_path, tiny_dataset, trained_run):
    corrupt = tmp_path / "corrupt.bin"
    blob = bytearray((trained_run / "ckpt_final.bin").read_bytes())
    blob[len(blob) // 2] ^= 0x40
    corrupt.write_bytes(bytes(blob))
    code = entrypoint(
        [
            "eval",
            "--ckpt", str(corrupt),
            "--data", str(tiny_dataset),
            "--out", str(tmp_path / "out"),
        ]
    )
    assert code == 5


def test_eval_missing_checkpoint_exits_3(tmp_path, tiny_dataset):
    code = entrypoint(
        [
            "eval",
            "--ckpt", str(tmp_path / "missing.bin"),
            "--data", str(tiny_dataset),
            "--out", str(tmp_path / "out"),
        ]
    )
    assert code == 3


def test_eval_random_init_baseline_finite(tmp_path, tiny_dataset):
    # A 0-step run produces the random-init checkpoint; its evaluation
    # must still be finite and well-formed.
    config = tmp_path / "zero.ini"
    config.write_text(TINY_CONFIG.replace("steps = 3", "steps = 0"))
    run = tmp_path / "run"
    assert (
        entrypoint(
            [
                "train",
                "--config", str(config),
                "--data", str(tiny_dataset),
                "--out", str(run),
            ]
        )
        == 0
    )
    out = tmp_path / "eval"
    assert (
        entrypoint(
            [
                "eval",
                "--ckpt", str(run / "ckpt_final.bin"),
                "--data", str(tiny_dataset),
                "--out", str(out),
            ]
        )
        == 0
    )
    report = json.loads((out / "metrics.json").read_text())
    for key in ("semantic_purity", "instance_ari", "hierarchy_ari", "usage_entropy"):
        assert np.isfinite(report[key])


def test_eval_no_validation_split_exits_2(tmp_path, trained_run):
    empty = tmp_path / "empty"
    assert (
        entrypoint(["generate", "--count", "0", "--out", str(empty), "--size", "32"])
        == 0
    )
    code = entrypoint(
        [
            "eval",
            "--ckpt", str(trained_run / "ckpt_final.bin"),
            "--data", str(empty),
            "--out", str(tmp_path / "out"),
        ]
    )
    assert code == 2
