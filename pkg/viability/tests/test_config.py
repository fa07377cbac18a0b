import json
import os

import pytest

from config import (
    apply_overrides,
    build_experiment,
    build_learner,
    build_model,
    build_policy,
    config_to_dict,
    load_config,
    parse_config,
)
from errors import ConfigParseError, ConfigRangeError, ConfigSchemaError

INLINE = {
    "name": "drift",
    "state_box": {"lower": [0.0], "upper": [1.0]},
    "action_box": {"lower": [0.0], "upper": [0.5]},
    "vector_field": "sink",
}


def test_defaults_describe_the_hovership_benchmark():
    config = load_config(None)
    experiment = build_experiment(config)
    assert experiment.model.name == "hovership"
    assert (experiment.grid.n_states, experiment.grid.n_actions) == (201, 161)
    assert (experiment.batch_count, experiment.episodes_per_batch, experiment.max_steps) == (2, 10, 10)
    assert experiment.seed == 7
    assert experiment.policy([0.0])[0] == pytest.approx(0.7)
    assert experiment.learner.threshold == 0.5
    assert len(experiment.learner.seeds) == 5
    assert len(experiment.learner.search_grid) == 3 * 3 * 2


def test_inline_model_is_built():
    config = parse_config({"model": INLINE, "grid": {"state_points": 11, "action_points": 6}})
    model = build_model(config)
    assert model.name == "drift"
    assert model.action_box.upper == (0.5,)
    experiment = build_experiment(config)
    assert experiment.grid.n_states == 11


def test_negative_hold_is_a_range_error():
    with pytest.raises(ConfigRangeError) as excinfo:
        parse_config({"model": {**INLINE, "hold_duration": -1.0}})
    assert "model.hold_duration" in str(excinfo.value)
    assert excinfo.value.exit_code == 5


@pytest.mark.parametrize(
    "data, path",
    [
        ({"model": {**INLINE, "hold_duration": -1.0}}, "model.hold_duration: "),
        ({"model": {**INLINE, "substep": 0.3}}, "model: "),
        ({"model": {**INLINE, "state_box": {"lower": [1.0], "upper": [0.0]}}}, "model.state_box: "),
        ({"model": {**INLINE, "speed": 1.0}}, "model.speed: "),
        ({"model": 5}, "model: "),
        ({"grid": {"state_points": "many"}}, "grid.state_points: "),
        ({"grid": {"action_points": [4, 1]}}, "grid.action_points: "),
        ({"policy": {"kind": "epsilon_greedy", "epsilon": -0.1}}, "policy.epsilon: "),
        ({"learner": {"seed_samples": [{"state": [0.6]}]}}, "learner.seed_samples.0.action: "),
    ],
)
def test_errors_name_the_offending_key(data, path):
    with pytest.raises((ConfigRangeError, ConfigSchemaError)) as excinfo:
        parse_config(data)
    message = str(excinfo.value)
    assert message.startswith(path)
    assert "[" not in message.split(":")[0]
    assert "function-after" not in message


def test_substep_must_divide_hold():
    with pytest.raises(ConfigRangeError):
        parse_config({"model": {**INLINE, "substep": 0.3}})


def test_misspelled_key_is_a_schema_error():
    with pytest.raises(ConfigSchemaError) as excinfo:
        parse_config({"modle": "hovership"})
    assert "modle" in str(excinfo.value)
    assert excinfo.value.exit_code == 4


def test_unknown_vector_field_is_a_schema_error():
    with pytest.raises(ConfigSchemaError):
        parse_config({"model": {**INLINE, "vector_field": "rocket"}})


def test_out_of_range_values():
    for data in (
        {"grid": {"state_points": 1}},
        {"learner": {"threshold": 1.5}},
        {"learner": {"jitter_ladder": [1e-4, 0.0]}},
        {"experiment": {"max_steps": 0}},
        {"policy": {"kind": "epsilon_greedy", "epsilon": 2.0}},
    ):
        with pytest.raises(ConfigRangeError):
            parse_config(data)


def test_wrong_schema_version():
    with pytest.raises(ConfigSchemaError):
        parse_config({"schema_version": 2})


def test_unreadable_files_are_parse_errors(tmp_path):
    with pytest.raises(ConfigParseError):
        load_config(os.path.join(tmp_path, "missing.json"))
    path = os.path.join(tmp_path, "broken.json")
    with open(path, "w") as f:
        f.write("{not json")
    with pytest.raises(ConfigParseError) as excinfo:
        load_config(path)
    assert excinfo.value.exit_code == 3


def test_overrides_win_over_the_file(tmp_path):
    path = os.path.join(tmp_path, "config.json")
    with open(path, "w") as f:
        json.dump({"experiment": {"seed": 3}, "output_dir": "somewhere"}, f)
    config = apply_overrides(load_config(path), seed=11, output_dir="elsewhere", conservative=True, num_threads=4)
    assert config.experiment.seed == 11
    assert config.output_dir == "elsewhere"
    assert config.conservative_membership
    assert config.num_threads == 4
    assert apply_overrides(load_config(path)).experiment.seed == 3
    with pytest.raises(ConfigRangeError):
        apply_overrides(config, num_threads=0)


def test_stochastic_policies_default_to_seed_plus_one():
    config = parse_config({"policy": {"kind": "uniform"}, "experiment": {"seed": 20}})
    model = build_model(config)
    assert build_policy(config, model).seed == 21
    pinned = parse_config({"policy": {"kind": "epsilon_greedy", "epsilon": 0.2, "seed": 5}})
    assert build_policy(pinned, model).seed == 5


def test_uniform_policy_seeds_on_the_default_affine_graph():
    config = parse_config({"policy": {"kind": "uniform"}})
    seeds = build_learner(config, build_model(config)).seeds
    for s in seeds:
        assert s.action[0] == pytest.approx(0.7 - 0.3 * s.state[0])


def test_explicit_seed_samples():
    config = parse_config({"learner": {"seed_samples": [{"state": [0.6], "action": [0.5]}], "search": None}})
    learner = build_learner(config, build_model(config))
    assert [(s.state, s.action, s.label) for s in learner.seeds] == [((0.6,), (0.5,), 1.0)]
    assert learner.search_grid == ()


def test_operating_point_dimension_is_checked():
    config = parse_config({"learner": {"operating_point": [0.6, 0.1]}})
    with pytest.raises(ConfigSchemaError):
        build_learner(config, build_model(config))


def test_config_round_trips_through_dict():
    config = parse_config({"model": INLINE, "policy": {"kind": "uniform", "seed": 2}})
    assert parse_config(config_to_dict(config)) == config


@pytest.mark.parametrize(
    "name", ["hovership_affine.json", "hovership_uniform.json", "hovership_epsilon.json", "sink_inline.json"]
)
def test_shipped_configs_are_valid(name):
    path = os.path.join(os.path.dirname(__file__), "..", "configs", name)
    config = load_config(path)
    assert build_experiment(config).seed == 7
