import importlib
import json

import pytest

import main as cli

TINY = {
    "experiment": {
        "beam_size": [0.04, 0.02, 0.02],
        "steps": 3,
        "weights": [0.01, 0.02, 0.03],
        "splits": [1, 1, 1],
        "marker_count": 4,
    },
    "fit": {"lbfgs_max_iters": 20},
    "net": {"num_blocks": 1, "layers_per_block": 1, "hidden_size": 16},
    "train": {"epochs": 3, "batch_size": 4},
    "sysid": {"grid_E_bounds": [2e5, 2.4e5], "grid_resolution_E": 4e4, "nu_grid": [0.45], "max_iters": 2},
    "method": "ResPhys",
    "simulator": 1,
}


@pytest.fixture
def config(tmp_path):
    def _config(**overrides):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({**TINY, **overrides}))
        return str(path)

    return _config


def _run(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    print(f"exit {code}\nstdout: {captured.out}\nstderr: {captured.err}")
    return code, captured


def _result(captured):
    return json.loads(captured.out.strip().splitlines()[-1])


def _error(captured):
    return json.loads(captured.err.strip().splitlines()[-1])


def test_simulate(config, tmp_path, capsys):
    code, captured = _run(capsys, "simulate", config(), "--out-dir", str(tmp_path / "out"))
    assert code == 0
    assert _result(captured)["steps"] == 3
    manifest = json.loads((tmp_path / "out" / "simulate" / "manifest.json").read_text())
    assert manifest["T"] == 3
    assert manifest["simulator"] == 1


def test_gen_writes_trajectories_and_splits(config, tmp_path, capsys):
    code, captured = _run(capsys, "gen", config(), "--out-dir", str(tmp_path / "out"), "--seed", "3")
    assert code == 0
    assert _result(captured)["trajectories"] == 3
    splits = json.loads((tmp_path / "out" / "gen" / "splits.json").read_text())
    assert {tag: len(names) for tag, names in splits.items()} == {"train": 1, "val": 1, "test": 1, "unused": 0}
    for name in splits["train"] + splits["val"] + splits["test"]:
        assert (tmp_path / "out" / "gen" / name / "manifest.json").exists()


def test_gen_pseudo_real_writes_marker_files(config, tmp_path, capsys):
    experiment = {**TINY["experiment"], "kind": "pseudo_real", "steps": 2}
    code, _ = _run(capsys, "gen", config(experiment=experiment), "--out-dir", str(tmp_path / "out"))
    assert code == 0
    manifest = json.loads((tmp_path / "out" / "gen" / "pseudo_real_000_markers" / "manifest.json").read_text())
    # undeformed layout plus states 0..T
    assert manifest["fields"]["markers"] == [4, 4, 3]
    assert manifest["m"] == 4


def test_fit_train_rollout_eval(config, tmp_path, capsys):
    """
    Whole learned-method chain on a tiny beam:
    - fit writes the residual dataset
    - train writes the ResPhys and SimFree checkpoints
    - rollout and eval read them back
    """
    out = str(tmp_path / "out")
    cfg = config()
    assert _run(capsys, "fit", cfg, "--out-dir", out)[0] == 0
    assert (tmp_path / "out" / "dataset" / "splits.json").exists()

    code, captured = _run(capsys, "train", cfg, "--out-dir", out, "--simfree")
    assert code == 0
    assert "simfree_val_loss" in _result(captured)
    assert (tmp_path / "out" / "checkpoint" / "manifest.json").exists()
    assert (tmp_path / "out" / "checkpoint_simfree" / "params.f64").exists()

    code, captured = _run(capsys, "rollout", cfg, "--out-dir", out)
    assert code == 0
    assert _result(captured)["trajectories"] == 1

    code, captured = _run(capsys, "eval", cfg, "--out-dir", out)
    assert code == 0
    result = _result(captured)
    assert result["Original"]["E_q"] > 0
    assert result["ResPhys"]["E_q"] >= 0
    assert (tmp_path / "out" / "metrics" / "summary.csv").exists()

    code, captured = _run(capsys, "eval", config(method="SimFree"), "--out-dir", out)
    assert code == 0
    assert "SimFree" in _result(captured)


def test_sysid_then_eval(config, tmp_path, capsys):
    out = str(tmp_path / "out")
    code, captured = _run(capsys, "sysid", config(), "--out-dir", out)
    assert code == 0
    result = _result(captured)
    assert set(result["grid_argmin"]) == {"E_pa", "nu", "loss"}
    assert result["grid_argmin"]["nu"] == 0.45
    assert (tmp_path / "out" / "sysid_grid.csv").exists()

    code, captured = _run(capsys, "eval", config(method="SysID"), "--out-dir", out)
    assert code == 0
    assert _result(captured)["SysID"]["E_q"] >= 0


def test_missing_config_is_a_json_error(tmp_path, capsys):
    code, captured = _run(capsys, "gen", str(tmp_path / "nope.json"), "--out-dir", str(tmp_path / "out"))
    assert code == 1
    error = _error(captured)
    assert error["error"] == "ArtifactError"
    assert "nope.json" in error["message"]


def test_invalid_config_is_a_json_error(config, tmp_path, capsys):
    code, captured = _run(capsys, "gen", config(fit={"reg_lambda": -1}), "--out-dir", str(tmp_path / "out"))
    assert code == 1
    assert _error(captured)["error"] == "ValidationError"


def test_missing_artifacts_are_named(config, tmp_path, capsys):
    out = str(tmp_path / "out")
    code, captured = _run(capsys, "eval", config(), "--out-dir", out)
    assert code == 1
    assert _error(captured)["error"] == "ArtifactError"
    assert "checkpoint" in _error(captured)["message"]

    code, captured = _run(capsys, "rollout", config(method="Original"), "--out-dir", out)
    assert code == 1
    assert "learned method" in _error(captured)["message"]


def test_unknown_command_exits():
    with pytest.raises(SystemExit):
        cli.parse_args(["explode", "run.json"])


def test_env_defaults(monkeypatch):
    monkeypatch.setenv("RESPHYS_JOBS", "3")
    monkeypatch.setenv("RESPHYS_SEED", "11")
    monkeypatch.setenv("RESPHYS_OUT_DIR", "elsewhere")
    try:
        importlib.reload(cli)
        args = cli.parse_args(["gen", "run.json"])
        assert (args.jobs, args.seed, str(args.out_dir)) == (3, 11, "elsewhere")
        assert cli.parse_args(["gen", "run.json", "--jobs", "2"]).jobs == 2
    finally:
        monkeypatch.undo()
        importlib.reload(cli)


def test_impossible_splits_are_a_json_error(config, tmp_path, capsys):
    experiment = {**TINY["experiment"], "splits": [2, 2, 2]}
    code, captured = _run(capsys, "gen", config(experiment=experiment), "--out-dir", str(tmp_path / "out"))
    assert code == 1
    error = _error(captured)
    assert error["error"] == "ConfigError"
    assert "need 6 trajectories" in error["message"]
