"""
Discrete-time dynamics s_{k+1} = T(s_k, a_k) obtained by integrating a
continuous-time vector field under a zero-order hold.

All integration is done in batches: states are arrays of shape (N, n) and
actions (N, m). The single-pair helpers `flow` and `step` run a batch of one,
so the table built by the oracle and the transitions seen by the learner go
through the same arithmetic.
"""

from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np

try:
    from .errors import IntegrationDivergenceError, PreconditionError
except ImportError:
    from errors import IntegrationDivergenceError, PreconditionError

# Tolerances used when splitting a duration into substeps
_STEP_COUNT_SLACK = 1e-9
_REMAINDER_TOL = 1e-12


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box [lower, upper] in R^d."""

    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        lower = tuple(float(x) for x in self.lower)
        upper = tuple(float(x) for x in self.upper)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if len(lower) == 0 or len(lower) != len(upper):
            raise PreconditionError(f"box bounds must be nonempty and equally sized: {lower}, {upper}")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise PreconditionError(f"box bounds must be finite: {lower}, {upper}")
        if any(lo > hi for lo, hi in zip(lower, upper)):
            raise PreconditionError(f"box is empty: lower {lower} exceeds upper {upper}")

    @property
    def dim(self):
        return len(self.lower)

    @property
    def widths(self):
        return np.asarray(self.upper) - np.asarray(self.lower)

    def contains(self, x):
        """Membership test over the last axis; accepts (d,) or (N, d)."""
        x = np.asarray(x, dtype=float)
        return np.all((x >= np.asarray(self.lower)) & (x <= np.asarray(self.upper)), axis=-1)


@dataclass(frozen=True)
class OutsideBox:
    """Failure predicate: true for every state not in `box`."""

    box: Box

    def __call__(self, states):
        return ~self.box.contains(states)


@dataclass(frozen=True)
class NeverFails:
    def __call__(self, states):
        states = np.asarray(states, dtype=float)
        return np.zeros(states.shape[:-1], dtype=bool)


def hovership_field(states, actions):
    return actions - 0.1 - np.tanh(0.75 * states)


def zero_field(states, actions):
    return np.zeros_like(states)


def sink_field(states, actions):
    return -np.ones_like(states)


VECTOR_FIELDS = {
    "hovership": hovership_field,
    "zero": zero_field,
    "sink": sink_field,
}

FAILURE_KINDS = ("outside_box", "never")


@dataclass(frozen=True)
class SystemModel:
    name: str
    state_box: Box
    action_box: Box
    vector_field: Callable = field(compare=False)
    hold_duration: float = 1.0
    substep: float = 0.01
    failure_predicate: Callable = field(default=None, compare=False)

    def __post_init__(self):
        if self.failure_predicate is None:
            object.__setattr__(self, "failure_predicate", OutsideBox(self.state_box))
        if not (np.isfinite(self.substep) and self.substep > 0):
            raise PreconditionError(f"substep must be positive, got {self.substep}")
        if not (np.isfinite(self.hold_duration) and self.hold_duration > 0):
            raise PreconditionError(f"hold_duration must be positive, got {self.hold_duration}")
        ratio = self.hold_duration / self.substep
        if abs(ratio - round(ratio)) > _STEP_COUNT_SLACK * max(1.0, ratio):
            raise PreconditionError(
                f"substep {self.substep} does not divide hold_duration {self.hold_duration}"
            )

    @property
    def state_dim(self):
        return self.state_box.dim

    @property
    def action_dim(self):
        return self.action_box.dim

    @property
    def hold_substeps(self):
        return int(round(self.hold_duration / self.substep))

    def is_failure(self, states):
        return np.asarray(self.failure_predicate(np.asarray(states, dtype=float)), dtype=bool)


@dataclass(frozen=True)
class StepOutcome:
    """Alive(next_state) or Failed(first_failure_state)."""

    failed: bool
    state: np.ndarray = field(compare=False)

    @property
    def alive(self):
        return not self.failed

    @classmethod
    def Alive(cls, next_state):
        return cls(False, _frozen(next_state))

    @classmethod
    def Failed(cls, failure_state):
        return cls(True, _frozen(failure_state))

    def __eq__(self, other):
        if not isinstance(other, StepOutcome):
            return NotImplemented
        return self.failed == other.failed and np.array_equal(self.state, other.state)

    def __hash__(self):
        return hash((self.failed, self.state.tobytes()))


def _frozen(x):
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


def _rk4_substep(vector_field, states, actions, h):
    k1 = vector_field(states, actions) * h
    k2 = vector_field(states + 0.5 * k1, actions) * h
    k3 = vector_field(states + 0.5 * k2, actions) * h
    k4 = vector_field(states + k3, actions) * h
    return states + (k1 + 2.0 * (k2 + k3) + k4) / 6.0


def substep_schedule(duration, substep):
    """Split `duration` into full substeps plus a (possibly zero) remainder."""
    if not np.isfinite(duration) or duration < 0:
        raise PreconditionError(f"duration must be finite and non-negative, got {duration}")
    n_full = int(np.floor(duration / substep + _STEP_COUNT_SLACK))
    remainder = duration - n_full * substep
    if abs(remainder) <= _REMAINDER_TOL * max(1.0, duration):
        remainder = 0.0
    return n_full, max(remainder, 0.0)


def _as_batch(x, dim, what):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise PreconditionError(f"{what} must have shape (N, {dim}), got {np.shape(x)}")
    return arr


def _check_actions(model, actions):
    if not np.all(model.action_box.contains(actions)):
        raise PreconditionError(f"actions outside the action box {model.action_box}")


def _check_finite(states, rows=None):
    values = states if rows is None else states[rows]
    if not np.all(np.isfinite(values)):
        raise IntegrationDivergenceError("integration produced a non-finite state")


def flow_many(model, states, actions, duration):
    states = _as_batch(states, model.state_dim, "states").copy()
    actions = _as_batch(actions, model.action_dim, "actions")
    _check_actions(model, actions)
    n_full, remainder = substep_schedule(duration, model.substep)
    for _ in range(n_full):
        states = _rk4_substep(model.vector_field, states, actions, model.substep)
        _check_finite(states)
    if remainder > 0.0:
        states = _rk4_substep(model.vector_field, states, actions, remainder)
        _check_finite(states)
    return states


def flow(model, s, a, duration):
    """Integrate from s with the action held at a for `duration` seconds."""
    s = np.asarray(s, dtype=float)
    if duration == 0:
        return s.copy()
    return flow_many(model, s, a, duration)[0]


def step_many(model, states, actions):
    """
    One zero-order-hold step for every row. Returns (final_states, failed)
    where failed rows hold the first substep state that satisfied the
    failure predicate.
    """
    states = _as_batch(states, model.state_dim, "states").copy()
    actions = _as_batch(actions, model.action_dim, "actions")
    _check_actions(model, actions)
    if states.shape[0] != actions.shape[0]:
        raise PreconditionError("states and actions must have the same number of rows")

    failed = model.is_failure(states)
    if np.any(failed):
        raise PreconditionError("step started from a failing state")

    alive = np.ones(states.shape[0], dtype=bool)
    for _ in range(model.hold_substeps):
        advanced = _rk4_substep(model.vector_field, states, actions, model.substep)
        states = np.where(alive[:, None], advanced, states)
        _check_finite(states, alive)
        newly_failed = alive & model.is_failure(states)
        failed |= newly_failed
        alive &= ~newly_failed
        if not np.any(alive):
            break
    return states, failed


def step(model, s, a):
    s = np.asarray(s, dtype=float)
    if bool(model.is_failure(s)):
        raise PreconditionError(f"step started from a failing state {s.tolist()}")
    states, failed = step_many(model, s, a)
    if failed[0]:
        return StepOutcome.Failed(states[0])
    return StepOutcome.Alive(states[0])


def hovership_model(substep=0.01):
    """The hovership benchmark: s in [0, 2], a in [0, 0.8], one-second hold."""
    state_box = Box((0.0,), (2.0,))
    return SystemModel(
        name="hovership",
        state_box=state_box,
        action_box=Box((0.0,), (0.8,)),
        vector_field=hovership_field,
        hold_duration=1.0,
        substep=substep,
        failure_predicate=OutsideBox(state_box),
    )


BUILTIN_MODELS = {"hovership": hovership_model}


def make_model(name, state_box, action_box, vector_field, hold_duration=1.0, substep=0.01, failure="outside_box"):
    """Build a model from registry names, as used by inline config models."""
    if vector_field not in VECTOR_FIELDS:
        raise PreconditionError(
            f"unknown vector field '{vector_field}', expected one of {sorted(VECTOR_FIELDS)}"
        )
    if failure not in FAILURE_KINDS:
        raise PreconditionError(f"unknown failure kind '{failure}', expected one of {FAILURE_KINDS}")
    state_box = state_box if isinstance(state_box, Box) else Box(*state_box)
    action_box = action_box if isinstance(action_box, Box) else Box(*action_box)
    predicate = OutsideBox(state_box) if failure == "outside_box" else NeverFails()
    return SystemModel(
        name=name,
        state_box=state_box,
        action_box=action_box,
        vector_field=VECTOR_FIELDS[vector_field],
        hold_duration=hold_duration,
        substep=substep,
        failure_predicate=predicate,
    )
