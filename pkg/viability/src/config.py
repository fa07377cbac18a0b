"""
Experiment configuration: a JSON file validated by pydantic, plus builders
that turn the validated sections into models, grids, policies and learners.
"""

import json
import os
from typing import Annotated, List, Literal, Optional, Union

from pydantic import (
    BaseModel,
    ConfigDict,
    Discriminator,
    Field,
    Tag,
    ValidationError,
    field_validator,
    model_validator,
)

try:
    from .constrained_policy import AffinePolicy, EpsilonGreedyPolicy, UniformRandomPolicy
    from .dynamics import BUILTIN_MODELS, FAILURE_KINDS, VECTOR_FIELDS, Box, make_model
    from .errors import ConfigParseError, ConfigRangeError, ConfigSchemaError
    from .experiment import FALLBACKS, REFIT_MODES, ExperimentConfig
    from .gp_learner import DEFAULT_JITTER_LADDER, Hyperparameters, LearnerConfig, Sample, hyperparameter_grid, seed_samples
    from .grid_utils import GridSpec
except ImportError:
    from constrained_policy import AffinePolicy, EpsilonGreedyPolicy, UniformRandomPolicy
    from dynamics import BUILTIN_MODELS, FAILURE_KINDS, VECTOR_FIELDS, Box, make_model
    from errors import ConfigParseError, ConfigRangeError, ConfigSchemaError
    from experiment import FALLBACKS, REFIT_MODES, ExperimentConfig
    from gp_learner import DEFAULT_JITTER_LADDER, Hyperparameters, LearnerConfig, Sample, hyperparameter_grid, seed_samples
    from grid_utils import GridSpec

SCHEMA_VERSION = 1

# pydantic error types that mean "well-formed but outside the allowed bounds"
_RANGE_ERROR_TYPES = {"greater_than", "greater_than_equal", "less_than", "less_than_equal"}
_RANGE_MARKER = "out of range"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BoxSection(_Section):
    lower: List[float] = Field(min_length=1)
    upper: List[float] = Field(min_length=1)

    @model_validator(mode="after")
    def _ordered(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper must have the same length")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError(f"{_RANGE_MARKER}: every lower bound must be below its upper bound")
        return self


class InlineModelSection(_Section):
    name: str = "custom"
    state_box: BoxSection
    action_box: BoxSection
    vector_field: str
    hold_duration: float = Field(default=1.0, gt=0)
    substep: float = Field(default=0.01, gt=0)
    failure: str = "outside_box"

    @field_validator("vector_field")
    @classmethod
    def _known_field(cls, value):
        if value not in VECTOR_FIELDS:
            raise ValueError(f"unknown vector field '{value}', expected one of {sorted(VECTOR_FIELDS)}")
        return value

    @field_validator("failure")
    @classmethod
    def _known_failure(cls, value):
        if value not in FAILURE_KINDS:
            raise ValueError(f"unknown failure kind '{value}', expected one of {list(FAILURE_KINDS)}")
        return value

    @model_validator(mode="after")
    def _substep_fits(self):
        ratio = self.hold_duration / self.substep
        if self.substep > self.hold_duration or abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"{_RANGE_MARKER}: substep {self.substep} must divide hold_duration {self.hold_duration}")
        return self


class GridSection(_Section):
    state_points: Union[int, List[int]] = 201
    action_points: Union[int, List[int]] = 161

    @field_validator("state_points", "action_points")
    @classmethod
    def _at_least_two(cls, value):
        counts = [value] if isinstance(value, int) else value
        if not counts or min(counts) < 2:
            raise ValueError(f"{_RANGE_MARKER}: every axis needs at least 2 points")
        return value


class AffineSection(_Section):
    kind: Literal["affine"] = "affine"
    gain: List[List[float]] = [[-0.3]]
    offset: List[float] = [0.7]


class UniformSection(_Section):
    kind: Literal["uniform"]
    seed: Optional[int] = None


class EpsilonGreedySection(_Section):
    kind: Literal["epsilon_greedy"]
    epsilon: float = Field(ge=0.0, le=1.0)
    gain: List[List[float]] = [[-0.3]]
    offset: List[float] = [0.7]
    seed: Optional[int] = None


class LengthscaleSection(_Section):
    state: float = Field(default=0.2, gt=0)
    action: float = Field(default=0.1, gt=0)


class SearchSection(_Section):
    state_lengthscales: List[float] = Field(default=[0.1, 0.2, 0.4], min_length=1)
    action_lengthscales: List[float] = Field(default=[0.05, 0.1, 0.2], min_length=1)
    signal_variances: List[float] = Field(default=[0.5, 1.0], min_length=1)
    noise_variances: List[float] = Field(default=[1e-4], min_length=1)

    @model_validator(mode="after")
    def _positive(self):
        values = self.state_lengthscales + self.action_lengthscales + self.signal_variances + self.noise_variances
        if min(values) <= 0:
            raise ValueError(f"{_RANGE_MARKER}: search candidates must be positive")
        return self


class SeedSampleSection(_Section):
    state: List[float]
    action: List[float]


class LearnerSection(_Section):
    threshold: float = Field(default=0.5, gt=0.0, lt=1.0)
    prior_mean: float = 0.0
    lengthscales: LengthscaleSection = LengthscaleSection()
    signal_variance: float = Field(default=1.0, gt=0)
    noise_variance: float = Field(default=1e-4, gt=0)
    operating_point: List[float] = [0.6]
    seed_halfwidth: float = Field(default=0.1, ge=0)
    seed_count: int = Field(default=5, ge=1)
    # explicit seeds replace the operating-point segment
    seed_samples: Optional[List[SeedSampleSection]] = None
    # policy whose graph carries the seeds; defaults to the nominal policy's affine part
    seed_policy: Optional[AffineSection] = None
    search: Optional[SearchSection] = SearchSection()
    jitter_ladder: List[float] = list(DEFAULT_JITTER_LADDER)

    @field_validator("jitter_ladder")
    @classmethod
    def _ladder(cls, value):
        if not value or any(j < 0 for j in value) or value != sorted(value):
            raise ValueError(f"{_RANGE_MARKER}: jitter ladder must be a nonempty ascending list of values >= 0")
        return value

    @field_validator("seed_samples")
    @classmethod
    def _nonempty_seeds(cls, value):
        if value is not None and len(value) == 0:
            raise ValueError("seed_samples must not be empty")
        return value


class ExperimentSection(_Section):
    episodes_per_batch: int = Field(default=10, ge=1)
    batch_count: int = Field(default=2, ge=1)
    max_steps: int = Field(default=10, ge=1)
    seed: int = 7
    fallback: str = "nominal"
    refit: str = "sample"

    @field_validator("fallback")
    @classmethod
    def _fallback(cls, value):
        if value not in FALLBACKS:
            raise ValueError(f"fallback must be one of {list(FALLBACKS)}")
        return value

    @field_validator("refit")
    @classmethod
    def _refit(cls, value):
        if value not in REFIT_MODES:
            raise ValueError(f"refit must be one of {list(REFIT_MODES)}")
        return value


def _model_tag(value):
    return "builtin" if isinstance(value, str) else "inline"


class Config(_Section):
    schema_version: Literal[1] = 1
    model: Annotated[
        Union[Annotated[str, Tag("builtin")], Annotated[InlineModelSection, Tag("inline")]],
        Discriminator(_model_tag),
    ] = "hovership"
    grid: GridSection = GridSection()
    policy: Union[AffineSection, UniformSection, EpsilonGreedySection] = Field(
        default_factory=AffineSection, discriminator="kind"
    )
    learner: LearnerSection = LearnerSection()
    experiment: ExperimentSection = ExperimentSection()
    output_dir: str = "results"
    num_threads: int = Field(default=1, ge=1)
    conservative_membership: bool = False

    @field_validator("model")
    @classmethod
    def _known_model(cls, value):
        if isinstance(value, str) and value not in BUILTIN_MODELS:
            raise ValueError(f"unknown builtin model '{value}', expected one of {sorted(BUILTIN_MODELS)}")
        return value


def _field_names():
    names = set()
    pending = [_Section]
    while pending:
        cls = pending.pop()
        names.update(cls.model_fields)
        pending.extend(cls.__subclasses__())
    return frozenset(names)


def _config_path(detail):
    """
    Dotted path of the offending key. pydantic puts union tags and validator
    names between the keys, so only list indices and known field names are
    kept, plus the rejected key itself for extra fields.
    """
    loc = detail["loc"]
    parts = [str(part) for part in loc[:-1] if isinstance(part, int) or part in _FIELD_NAMES]
    if loc and (isinstance(loc[-1], int) or loc[-1] in _FIELD_NAMES or detail["type"] == "extra_forbidden"):
        parts.append(str(loc[-1]))
    return ".".join(parts) or "<root>"


def _classify(error):
    """
    Map a pydantic error to a config error naming its dotted path. Union
    members each report an error; the deepest location is the real one, and
    on equal depth a member's own error beats a plain type mismatch.
    """
    first = max(error.errors(), key=lambda e: (len(e["loc"]), e["type"] not in _TYPE_MISMATCH))
    reason = f"{_config_path(first)}: {first['msg']}"
    if first["type"] in _RANGE_ERROR_TYPES or _RANGE_MARKER in first["msg"]:
        return ConfigRangeError(reason)
    return ConfigSchemaError(reason)


_TYPE_MISMATCH = {"string_type", "int_type", "list_type", "model_type", "dict_type"}
_FIELD_NAMES = _field_names()


def parse_config(data):
    try:
        return Config.model_validate(data)
    except ValidationError as e:
        raise _classify(e) from e


def load_config(path):
    if path is None:
        return Config()
    if not os.path.exists(path):
        raise ConfigParseError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigParseError(f"cannot parse {path}: {e}") from e
    return parse_config(data)


def apply_overrides(config, seed=None, output_dir=None, conservative=None, num_threads=None):
    """Command-line flags win over the file."""
    update = {}
    if seed is not None:
        update["experiment"] = config.experiment.model_copy(update={"seed": seed})
    if output_dir is not None:
        update["output_dir"] = output_dir
    if conservative:
        update["conservative_membership"] = True
    if num_threads is not None:
        if num_threads < 1:
            raise ConfigRangeError(f"num_threads: must be at least 1, got {num_threads}")
        update["num_threads"] = num_threads
    return config.model_copy(update=update)


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def build_model(config):
    section = config.model
    if isinstance(section, str):
        return BUILTIN_MODELS[section]()
    return make_model(
        section.name,
        Box(tuple(section.state_box.lower), tuple(section.state_box.upper)),
        Box(tuple(section.action_box.lower), tuple(section.action_box.upper)),
        section.vector_field,
        hold_duration=section.hold_duration,
        substep=section.substep,
        failure=section.failure,
    )


def build_grid(config, model):
    return GridSpec.for_model(model, config.grid.state_points, config.grid.action_points)


def _affine(section, model):
    return AffinePolicy(
        tuple(map(tuple, section.gain)),
        tuple(section.offset),
        model.action_box.lower,
        model.action_box.upper,
    )


def build_policy(config, model):
    """Stochastic policies without their own seed draw from experiment seed + 1."""
    section = config.policy
    default_seed = config.experiment.seed + 1
    if section.kind == "affine":
        return _affine(section, model)
    if section.kind == "uniform":
        seed = default_seed if section.seed is None else section.seed
        return UniformRandomPolicy(seed, model.action_box.lower, model.action_box.upper)
    seed = default_seed if section.seed is None else section.seed
    return EpsilonGreedyPolicy(_affine(section, model), section.epsilon, seed)


def _seed_policy(config, model):
    learner = config.learner
    if learner.seed_policy is not None:
        return _affine(learner.seed_policy, model)
    if config.policy.kind == "uniform":
        return _affine(AffineSection(), model)
    return _affine(config.policy, model)


def build_learner(config, model):
    section = config.learner
    ls = [section.lengthscales.state] * model.state_dim + [section.lengthscales.action] * model.action_dim
    hyper = Hyperparameters(tuple(ls), section.signal_variance, section.noise_variance, section.prior_mean)

    if section.seed_samples is not None:
        seeds = tuple(Sample(s.state, s.action, 1.0) for s in section.seed_samples)
    else:
        if len(section.operating_point) != model.state_dim:
            raise ConfigSchemaError(
                f"learner.operating_point: expected {model.state_dim} coordinates, got {len(section.operating_point)}"
            )
        seeds = seed_samples(
            _seed_policy(config, model),
            section.operating_point,
            halfwidth=section.seed_halfwidth,
            count=section.seed_count,
            state_box=model.state_box,
        )

    search_grid = ()
    if section.search is not None:
        options = [section.search.state_lengthscales] * model.state_dim + [
            section.search.action_lengthscales
        ] * model.action_dim
        search_grid = hyperparameter_grid(
            options, section.search.signal_variances, section.search.noise_variances, section.prior_mean
        )
    return LearnerConfig(
        hyper=hyper,
        seeds=seeds,
        threshold=section.threshold,
        search_grid=search_grid,
        jitter_ladder=tuple(section.jitter_ladder),
    )


def build_experiment(config, model=None, grid=None):
    model = model if model is not None else build_model(config)
    grid = grid if grid is not None else build_grid(config, model)
    section = config.experiment
    return ExperimentConfig(
        model=model,
        grid=grid,
        policy=build_policy(config, model),
        learner=build_learner(config, model),
        episodes_per_batch=section.episodes_per_batch,
        batch_count=section.batch_count,
        max_steps=section.max_steps,
        seed=section.seed,
        fallback=section.fallback,
        refit=section.refit,
    )


def config_to_dict(config):
    return config.model_dump(mode="json")
