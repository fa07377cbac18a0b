import json
import os

import pytest

from main import build_parser, main

SMALL = {
    "grid": {"state_points": 21, "action_points": 9},
    "experiment": {"episodes_per_batch": 2, "batch_count": 2, "max_steps": 5},
    "learner": {"search": {"state_lengthscales": [0.2], "action_lengthscales": [0.1]}},
}


def write_config(tmp_path, data, name="config.json"):
    path = os.path.join(tmp_path, name)
    with open(path, "w") as f:
        json.dump(data, f)
    return path


def run_cli(*argv):
    return main(list(argv) + ["--logging", "false", "--no_progress"])


def exit_code(capsys, *argv):
    with pytest.raises(SystemExit) as excinfo:
        run_cli(*argv)
    return excinfo.value.code, capsys.readouterr().err


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
    args = build_parser().parse_args(["sweep", "--seeds", "1", "2"])
    assert args.seeds == [1, 2]
    assert args.logging == "true"


def test_viability_and_critical_write_sets(tmp_path):
    config = write_config(tmp_path, SMALL)
    out = os.path.join(tmp_path, "oracle")
    assert run_cli("viability", "--config", config, "--out", out) == 0
    for name in ("q_viable.json", "s_kernel.json", "viability.csv"):
        assert os.path.exists(os.path.join(out, name))

    critical_out = os.path.join(tmp_path, "critical")
    oracle = os.path.join(out, "q_viable.json")
    assert run_cli("critical", "--config", config, "--out", critical_out, "--oracle", oracle) == 0
    for name in ("q_crit.json", "q_crit.csv", "opt_graph.json", "opt_graph.csv"):
        assert os.path.exists(os.path.join(critical_out, name))


def test_learn_then_evaluate(tmp_path):
    config = write_config(tmp_path, SMALL)
    run_dir = os.path.join(tmp_path, "run")
    assert run_cli("learn", "--config", config, "--out", run_dir) == 0
    assert os.path.exists(os.path.join(run_dir, "report.txt"))

    assert run_cli("evaluate", "--config", config, "--run_dir", run_dir) == 0
    with open(os.path.join(run_dir, "evaluation.json")) as f:
        evaluation = json.load(f)
    verdicts = evaluation["admissibility"]
    assert set(verdicts) == {"theorem", "direct"}
    assert verdicts["theorem"]["admissible"] == verdicts["direct"]["admissible"]
    assert evaluation["metrics"]["admissible"] == verdicts["theorem"]["admissible"]
    with open(os.path.join(run_dir, "run.json")) as f:
        stored = json.load(f)["metrics"]
    assert stored["khat_count"] == evaluation["metrics"]["khat_count"]


def test_learn_without_metrics(tmp_path):
    config = write_config(tmp_path, SMALL)
    run_dir = os.path.join(tmp_path, "run")
    assert run_cli("learn", "--config", config, "--out", run_dir, "--skip_metrics", "--seed", "3") == 0
    with open(os.path.join(run_dir, "run.json")) as f:
        payload = json.load(f)
    assert payload["metrics"] is None
    assert payload["config"]["seed"] == 3


def test_sweep_writes_one_run_per_seed(tmp_path):
    config = write_config(tmp_path, SMALL)
    out = os.path.join(tmp_path, "sweep")
    assert run_cli("sweep", "--config", config, "--out", out, "--seeds", "1", "2", "--num_threads", "2") == 0
    assert os.path.exists(os.path.join(out, "seed_1", "run.json"))
    assert os.path.exists(os.path.join(out, "seed_2", "run.json"))
    with open(os.path.join(out, "sweep_report.txt")) as f:
        report = f.read()
    assert report.count("| ok") == 2


def test_log_file(tmp_path):
    config = write_config(tmp_path, SMALL)
    log_file = os.path.join(tmp_path, "viability.log")
    argv = ["viability", "--config", config, "--out", os.path.join(tmp_path, "out"), "--log_file", log_file]
    assert main(argv + ["--no_progress"]) == 0
    with open(log_file) as f:
        assert "VIABILITY" in f.read()


def test_missing_config_exits_with_parse_code(tmp_path, capsys):
    code, err = exit_code(capsys, "viability", "--config", os.path.join(tmp_path, "absent.json"))
    assert code == 3
    assert err.startswith("error 3 ConfigParseError:")


def test_schema_error_exit_code(tmp_path, capsys):
    config = write_config(tmp_path, {"modle": "hovership"})
    code, err = exit_code(capsys, "viability", "--config", config)
    assert code == 4
    assert "modle" in err


def test_range_error_exit_code(tmp_path, capsys):
    config = write_config(tmp_path, {"learner": {"threshold": 0.0}})
    code, _ = exit_code(capsys, "learn", "--config", config)
    assert code == 5


def test_oracle_on_another_grid_exits_with_mismatch(tmp_path, capsys):
    config = write_config(tmp_path, SMALL)
    out = os.path.join(tmp_path, "oracle")
    run_cli("viability", "--config", config, "--out", out)
    other = write_config(tmp_path, {**SMALL, "grid": {"state_points": 11, "action_points": 9}}, "other.json")
    code, err = exit_code(
        capsys, "learn", "--config", other, "--out", str(tmp_path), "--oracle", os.path.join(out, "q_viable.json")
    )
    assert code == 8
    assert "GridMismatchError" in err


def test_empty_estimate_exits_unrecoverable(tmp_path, capsys):
    data = {
        **SMALL,
        "learner": {
            "lengthscales": {"state": 0.2, "action": 0.01},
            "seed_samples": [{"state": [0.605], "action": [0.05]}],
            "search": None,
        },
    }
    config = write_config(tmp_path, data)
    code, err = exit_code(capsys, "learn", "--config", config, "--out", str(tmp_path), "--skip_metrics")
    assert code == 10
    assert err.startswith("error 10 UnrecoverableConstraintError:")


@pytest.mark.parametrize(
    "argv",
    [[], ["viability", "--bogus"], ["learn", "--num_threads", "many"], ["sweep"], ["train"]],
)
def test_usage_errors_are_one_line(capsys, argv):
    with pytest.raises(SystemExit) as excinfo:
        main(argv)
    err = capsys.readouterr().err
    assert excinfo.value.code == 2
    assert err.startswith("error 2 UsageError:")
    assert err.count("\n") == 1
