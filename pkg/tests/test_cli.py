"""
Tests for config loading, the pipeline commands and the command-line entry point
"""
import os
import sys
import json
import pytest
import yaml

# Add the project root to the path
ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, ROOT)

from deferkit.commands import cmd_attack, cmd_eval, cmd_gen, cmd_report, cmd_train
from deferkit.config import OUTPUT_ROOT_ENV, config_hash, load_config, output_dir, validate_config
from deferkit.errors import ConfigurationError


def small_config(out):
    """A classification experiment small enough to train in a test."""
    return {
        "name": "tiny",
        "task": "classification",
        "seed": 3,
        "output_dir": out,
        "data": {"source": "blobs", "n": 40, "d": 2, "K": 2, "separation": 3.0, "train_fraction": 0.75},
        "panel": {"experts": [{"kind": "class_specialist", "id": 1, "p": 0.9, "classes": [0]}]},
        "costs": {"expert_fees": [0.1], "alpha": 0.9},
        "loss": {"kappa": 0.5, "gamma": 0.2},
        "attack": {"steps": 2, "restarts": 0},
        "train": {"epochs": 2, "batch_size": 16, "objective": "rerm_c"},
        "eval": {"modes": ["clean", "untargeted", "targeted"], "split": "test"},
        "verify": {"trials": 1, "gradient_configs": 1, "reduction_instances": 2, "smooth_bound_tuples": 2,
                   "bayes_instances": 1, "epoch_shapes": [[10, 4, 5]], "grid_resolution": 51},
    }


@pytest.fixture
def config_file(tmp_path):
    """Write the small config as YAML and return its path."""
    def _write():
        doc = small_config(str(tmp_path / "out"))
        path = tmp_path / "experiment.yml"
        path.write_text(yaml.safe_dump(doc))
        return str(path)
    return _write


def test_shipped_configs_load():
    """config.json and both presets validate."""
    for name in ("config.json", "presets/blobs_class.yml", "presets/linreg_defer.yml"):
        cfg = load_config(os.path.join(ROOT, name))
        assert len(config_hash(cfg)) == 12
        assert (cfg.verify.gradient_configs, cfg.verify.reduction_instances) == (100, 1000)
        assert (cfg.verify.smooth_bound_tuples, cfg.verify.bayes_instances) == (1000, 100)
        assert len(cfg.verify.epoch_shapes) == 3


def test_overrides(config_file):
    """Dotted overrides reach nested fields and list items."""
    cfg = load_config(config_file(), ["loss.gamma=0.25", "panel.experts.0.p=0.7", "eval.modes=[clean]"])
    assert cfg.loss.gamma == 0.25
    assert cfg.panel.experts[0].p == 0.7
    assert cfg.eval.modes == ["clean"]


def test_malformed_override(config_file):
    """An override without '=' is a configuration error."""
    with pytest.raises(ConfigurationError):
        load_config(config_file(), ["loss.gamma"])


def test_every_problem_is_listed(tmp_path):
    """One error lists each violated field."""
    doc = small_config(str(tmp_path))
    doc["costs"] = {"expert_fees": [0.1, 0.2], "alpha": 0.9}
    doc["train"] = {"objective": "rerm_r"}
    doc["eval"] = {"modes": ["clean", "adaptive"]}
    with pytest.raises(ConfigurationError) as info:
        validate_config(doc)
    errors = info.value.errors
    assert any(e.startswith("costs.expert_fees") for e in errors)
    assert any(e.startswith("train.objective") for e in errors)
    assert any("adaptive" in e for e in errors)


def test_strict_clamp_rejects_large_fees(tmp_path):
    """alpha + fee above 1 fails under the strict policy only."""
    doc = small_config(str(tmp_path))
    doc["costs"] = {"expert_fees": [0.2], "alpha": 0.9}
    with pytest.raises(ConfigurationError):
        validate_config(doc)
    doc["costs"]["clamp_policy"] = "none"
    validate_config(doc)


def test_missing_config_file(tmp_path):
    """A path that does not exist is a configuration error."""
    with pytest.raises(ConfigurationError):
        load_config(str(tmp_path / "absent.json"))


def test_hash_ignores_output_dir(tmp_path):
    """Same experiment in another directory has the same hash; a changed field does not."""
    a = validate_config(small_config(str(tmp_path / "a")))
    b = validate_config(small_config(str(tmp_path / "b")))
    assert config_hash(a) == config_hash(b)
    changed = small_config(str(tmp_path / "a"))
    changed["loss"]["gamma"] = 0.3
    assert config_hash(validate_config(changed)) != config_hash(a)


def test_output_root_env(monkeypatch, tmp_path):
    """Relative output directories move under $DEFERKIT_OUTPUT_ROOT, absolute ones stay."""
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    cfg = validate_config(small_config("runs/tiny"))
    assert output_dir(cfg) == os.path.join(str(tmp_path), "runs/tiny")
    absolute = validate_config(small_config("/abs/tiny"))
    assert output_dir(absolute) == "/abs/tiny"


def test_training_is_reproducible(config_file):
    """Training twice with one config writes identical checkpoints and manifests."""
    cfg = load_config(config_file())
    first = cmd_train(cfg)
    with open(first["checkpoint"], "rb") as f:
        checkpoint = f.read()
    with open(first["manifest"], "rb") as f:
        manifest = f.read()
    second = cmd_train(cfg)
    with open(second["checkpoint"], "rb") as f:
        assert f.read() == checkpoint
    with open(second["manifest"], "rb") as f:
        assert f.read() == manifest
    assert json.loads(manifest)["config_hash"] == config_hash(cfg)


def test_pipeline_commands(config_file):
    """gen, train, attack, eval and report write hash-stamped outputs."""
    cfg = load_config(config_file())
    run_id = config_hash(cfg)
    generated = cmd_gen(cfg)
    with open(generated["dataset"]) as f:
        assert f.readline().strip() == f"# config_hash={run_id}"

    cmd_train(cfg)
    attacked = cmd_attack(cfg)
    assert set(attacked) == {"untargeted", "targeted"}
    with open(attacked["targeted"]) as f:
        assert f.readline().strip() == f"# config_hash={run_id}"

    evaluated = cmd_eval(cfg)
    assert set(evaluated) == {"clean", "untargeted", "targeted", "summary"}
    frame = cmd_report(cfg)
    assert sorted(frame["attack_mode"]) == ["clean", "summary", "targeted", "untargeted"]
    assert os.path.exists(os.path.join(output_dir(cfg), "report.csv"))


def test_main_exit_codes(config_file, capsys):
    """verify exits 0 on success; a bad config exits 2 with a JSON error on stderr."""
    import run

    assert run.main(["verify", "--config", config_file()]) == 0
    assert "Status: PASSED" in capsys.readouterr().out

    assert run.main(["train", "--config", config_file(), "--set", "train.objective=clean_reg"]) == 2
    document = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert document["error"] == "ConfigurationError"
    assert document["details"]["errors"]


def test_unexpected_errors_exit_one(tmp_path, capsys):
    """An output directory under a regular file fails with exit 1 and a JSON error, not a traceback."""
    import run

    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    path = tmp_path / "experiment.yml"
    path.write_text(yaml.safe_dump(small_config(str(tmp_path / "out"))))
    assert run.main(["gen", "--config", str(path), "--set", f"output_dir={blocker}/out"]) == 1
    document = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert document["error"] in ("NotADirectoryError", "FileExistsError")
    assert document["details"] == {}


def test_minmax_data_gets_a_unit_box(tmp_path):
    """Under minmax normalization attacks stay in [0, 1] unless loss.box says otherwise."""
    from deferkit.config import build_ball

    doc = small_config(str(tmp_path))
    assert build_ball(validate_config(doc)).box is None
    doc["data"]["normalize"] = "minmax"
    assert build_ball(validate_config(doc)).box == (0.0, 1.0)
    doc["loss"]["box"] = [-0.5, 1.5]
    assert build_ball(validate_config(doc)).box == (-0.5, 1.5)
    doc["loss"]["box"] = [1.0, 0.0]
    with pytest.raises(ConfigurationError):
        validate_config(doc)
