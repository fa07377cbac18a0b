"""
The constrained controller OPT(K): per state, the action in the slice of K
closest to the nominal policy. Also the critical set and the admissibility
decision for a candidate constraint K.
"""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

try:
    from .errors import GridMismatchError, InvariantViolationError, PreconditionError
    from .grid_utils import QSet, action_slice, locate_many, project
except ImportError:
    from errors import GridMismatchError, InvariantViolationError, PreconditionError
    from grid_utils import QSet, action_slice, locate_many, project

INFEASIBLE = -1


def squared_distance_cost(actions, nominal):
    """J(s, a) = ||a - a_nom||^2 over the last axis."""
    diff = np.asarray(actions, dtype=float) - np.asarray(nominal, dtype=float)
    return np.sum(diff * diff, axis=-1)


# ---------------------------------------------------------------------------
# Nominal policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AffinePolicy:
    """a = offset + gain @ s, clamped to the action box."""

    gain: Tuple[Tuple[float, ...], ...]
    offset: Tuple[float, ...]
    action_lower: Tuple[float, ...]
    action_upper: Tuple[float, ...]
    kind: str = field(default="affine", init=False)
    deterministic: bool = field(default=True, init=False)

    def __post_init__(self):
        gain = np.atleast_2d(np.asarray(self.gain, dtype=float))
        offset = np.atleast_1d(np.asarray(self.offset, dtype=float))
        if gain.shape[0] != offset.shape[0] or offset.shape[0] != len(self.action_lower):
            raise PreconditionError(f"affine policy shapes disagree: gain {gain.shape}, offset {offset.shape}")
        object.__setattr__(self, "gain", tuple(map(tuple, gain.tolist())))
        object.__setattr__(self, "offset", tuple(offset.tolist()))
        object.__setattr__(self, "action_lower", tuple(float(x) for x in self.action_lower))
        object.__setattr__(self, "action_upper", tuple(float(x) for x in self.action_upper))

    def actions_for(self, states):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        raw = states @ np.asarray(self.gain).T + np.asarray(self.offset)
        return np.clip(raw, self.action_lower, self.action_upper)

    def __call__(self, s):
        return self.actions_for(s)[0]

    def sample(self, s, rng):
        return self(s)

    def to_dict(self):
        return {"kind": self.kind, "gain": [list(row) for row in self.gain], "offset": list(self.offset)}


@dataclass(frozen=True)
class UniformRandomPolicy:
    """Draws every action uniformly from the action box."""

    seed: int
    action_lower: Tuple[float, ...]
    action_upper: Tuple[float, ...]
    kind: str = field(default="uniform", init=False)
    deterministic: bool = field(default=False, init=False)

    def make_rng(self):
        return np.random.default_rng(self.seed)

    def sample(self, s, rng):
        return rng.uniform(self.action_lower, self.action_upper)

    def to_dict(self):
        return {"kind": self.kind, "seed": self.seed}


@dataclass(frozen=True)
class EpsilonGreedyPolicy:
    """With probability epsilon draw uniformly, otherwise follow `base`."""

    base: AffinePolicy
    epsilon: float
    seed: int
    kind: str = field(default="epsilon_greedy", init=False)
    deterministic: bool = field(default=False, init=False)

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise PreconditionError(f"epsilon must lie in [0, 1], got {self.epsilon}")

    @property
    def action_lower(self):
        return self.base.action_lower

    @property
    def action_upper(self):
        return self.base.action_upper

    def make_rng(self):
        return np.random.default_rng(self.seed)

    def sample(self, s, rng):
        explore = rng.random() < self.epsilon
        uniform = rng.uniform(self.action_lower, self.action_upper)
        return uniform if explore else self.base(s)

    def to_dict(self):
        return {"kind": self.kind, "epsilon": self.epsilon, "seed": self.seed, "base": self.base.to_dict()}


class TablePolicy:
    """Deterministic policy given as one action per state cell of `grid`."""

    kind = "table"
    deterministic = True

    def __init__(self, grid, actions):
        actions = np.array(actions, dtype=float).reshape(grid.n_states, -1)
        actions.setflags(write=False)
        self.grid = grid
        self.actions = actions

    @property
    def action_lower(self):
        return tuple(self.grid.action_lower.tolist())

    @property
    def action_upper(self):
        return tuple(self.grid.action_upper.tolist())

    def actions_for(self, states):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        lower = np.array([axis.lower for axis in self.grid.state_axes])
        upper = np.array([axis.upper for axis in self.grid.state_axes])
        cells = locate_many(self.grid, np.clip(states, lower, upper))
        return self.actions[cells]

    def __call__(self, s):
        return self.actions_for(s)[0]

    def sample(self, s, rng):
        return self(s)

    def to_dict(self):
        return {"kind": self.kind, "actions": self.actions.tolist()}


def nominal_actions(pi, grid):
    """Nominal action at every state grid point; deterministic policies only."""
    if not pi.deterministic:
        raise PreconditionError(f"a deterministic nominal policy is required, got '{pi.kind}'")
    return pi.actions_for(grid.state_points)


def cost_matrix(grid, nominal, cost=squared_distance_cost):
    """C[i, j] = J(state i, action j) against the nominal action of state i."""
    return cost(grid.action_points[None, :, :], np.asarray(nominal, dtype=float)[:, None, :])


# ---------------------------------------------------------------------------
# OPT(K)
# ---------------------------------------------------------------------------


def opt(k, s_cell, a_nom, cost=squared_distance_cost):
    """
    argmin of J over the action slice of k at s_cell; INFEASIBLE for an empty
    slice. Ties go to the smallest action cell.
    """
    candidates = action_slice(k, s_cell)
    if len(candidates) == 0:
        return INFEASIBLE
    costs = cost(k.grid.action_points[candidates], np.asarray(a_nom, dtype=float))
    return int(candidates[np.argmin(costs)])


def opt_table(k, costs):
    """Row-wise opt over a precomputed cost matrix."""
    masked = np.where(k.membership, costs, np.inf)
    best = np.argmin(masked, axis=1)
    return np.where(k.membership.any(axis=1), best, INFEASIBLE)


def opt_sets(k, costs):
    """All minimisers of each row of k (the set-valued OPT), as a bool mask."""
    masked = np.where(k.membership, costs, np.inf)
    row_min = masked.min(axis=1)
    return k.membership & (costs == row_min[:, None])


def optimal_policy(viable, pi, cost=squared_distance_cost):
    """OPT(Q_V) as an action cell per state cell (INFEASIBLE off the kernel)."""
    if project(viable).is_empty():
        raise PreconditionError("the viable set is empty")
    costs = cost_matrix(viable.grid, nominal_actions(pi, viable.grid), cost)
    return opt_table(viable, costs)


def opt_graph(result, pi, cost=squared_distance_cost, set_valued=True):
    """The graph of OPT(Q_V) as a state-action set."""
    costs = cost_matrix(result.grid, nominal_actions(pi, result.grid), cost)
    if set_valued:
        return QSet(result.grid, opt_sets(result.viable, costs))
    best = opt_table(result.viable, costs)
    membership = np.zeros((result.grid.n_states, result.grid.n_actions), dtype=bool)
    rows = np.flatnonzero(best != INFEASIBLE)
    membership[rows, best[rows]] = True
    return QSet(result.grid, membership)


# ---------------------------------------------------------------------------
# Critical set and admissibility
# ---------------------------------------------------------------------------


def critical_set(result, pi, cost=squared_distance_cost):
    """
    Unviable pairs at kernel states whose cost is no greater than the
    constrained optimum. For a stochastic nominal policy this is the union
    over every nominal draw, i.e. all unviable pairs at kernel states.
    """
    kernel = result.kernel.membership
    viable = result.viable.membership
    unviable_at_kernel = kernel[:, None] & ~viable
    if pi.deterministic:
        costs = cost_matrix(result.grid, nominal_actions(pi, result.grid), cost)
        best = np.where(viable, costs, np.inf).min(axis=1)
        critical = unviable_at_kernel & (costs <= best[:, None])
    else:
        critical = unviable_at_kernel

    if np.any(critical & viable) or np.any(critical.any(axis=1) & ~kernel):
        raise InvariantViolationError("critical set intersects the viable set or leaves the kernel")
    return QSet(result.grid, critical)


@dataclass(frozen=True)
class AdmissibilityVerdict:
    admissible: bool
    mode: str
    missing_opt_cells: np.ndarray = field(compare=False)
    critical_cells: np.ndarray = field(compare=False)
    disagreeing_states: np.ndarray = field(compare=False)

    def __bool__(self):
        return self.admissible

    def to_dict(self):
        return {
            "admissible": self.admissible,
            "mode": self.mode,
            "missing_opt_cells": self.missing_opt_cells.tolist(),
            "critical_cells": self.critical_cells.tolist(),
            "disagreeing_states": self.disagreeing_states.tolist(),
        }


def direct_policy_check(k, result, pi, cost=squared_distance_cost, set_valued=True):
    """Kernel states where OPT(k) and OPT(Q_V) differ."""
    costs = cost_matrix(result.grid, nominal_actions(pi, result.grid), cost)
    kernel = result.kernel.membership
    if set_valued:
        differs = np.any(opt_sets(k, costs) != opt_sets(result.viable, costs), axis=1)
    else:
        differs = opt_table(k, costs) != opt_table(result.viable, costs)
    return np.flatnonzero(kernel & differs)


def is_admissible(k, result, pi, cost=squared_distance_cost, mode="theorem"):
    """
    "theorem": k must contain the (set-valued) graph of OPT(Q_V) and avoid the
    critical set. "direct": OPT(k) must equal OPT(Q_V) on every kernel state.
    """
    if k.grid != result.grid:
        raise GridMismatchError("constraint and oracle live on different grids")
    empty = np.zeros((0, 2), dtype=np.int64)
    if mode == "theorem":
        graph = opt_graph(result, pi, cost, set_valued=True).membership
        missing = np.argwhere(graph & ~k.membership)
        critical = np.argwhere(k.membership & critical_set(result, pi, cost).membership)
        return AdmissibilityVerdict(
            admissible=len(missing) == 0 and len(critical) == 0,
            mode=mode,
            missing_opt_cells=missing,
            critical_cells=critical,
            disagreeing_states=np.zeros(0, dtype=np.int64),
        )
    if mode == "direct":
        states = direct_policy_check(k, result, pi, cost)
        return AdmissibilityVerdict(
            admissible=len(states) == 0,
            mode=mode,
            missing_opt_cells=empty,
            critical_cells=empty,
            disagreeing_states=states,
        )
    raise PreconditionError(f"unknown admissibility mode '{mode}'")
