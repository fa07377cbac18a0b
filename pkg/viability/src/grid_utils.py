"""
Boolean lattices over regular state and state-action grids.

State cells and action cells are flat indices into the C-ordered product of
the per-axis grids, so for a single axis the cell index is the point index
and, with several axes, ascending cell index is lexicographic order of the
coordinates.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Tuple

import numpy as np

try:
    from .errors import GridMismatchError, PreconditionError
except ImportError:
    from errors import GridMismatchError, PreconditionError

OUTSIDE = -1

_SNAP_TOL = 1e-9


class Axis(NamedTuple):
    lower: float
    upper: float
    count: int

    @property
    def spacing(self):
        return (self.upper - self.lower) / (self.count - 1)

    def points(self):
        return np.linspace(self.lower, self.upper, self.count)


def _as_axes(axes):
    return tuple(Axis(float(lo), float(hi), int(n)) for lo, hi, n in axes)


@dataclass(frozen=True)
class GridSpec:
    state_axes: Tuple[Axis, ...]
    action_axes: Tuple[Axis, ...]

    def __post_init__(self):
        object.__setattr__(self, "state_axes", _as_axes(self.state_axes))
        object.__setattr__(self, "action_axes", _as_axes(self.action_axes))
        if not self.state_axes or not self.action_axes:
            raise PreconditionError("grid needs at least one state axis and one action axis")
        for axis in self.state_axes + self.action_axes:
            if axis.count < 2:
                raise PreconditionError(f"axis {axis} needs at least 2 points")
            if not (np.isfinite(axis.lower) and np.isfinite(axis.upper)) or axis.lower >= axis.upper:
                raise PreconditionError(f"axis {axis} needs finite lower < upper")

    @classmethod
    def for_model(cls, model, state_points, action_points):
        """Grid spanning the model's boxes with the given points per axis."""
        state_points = _per_axis(state_points, model.state_dim)
        action_points = _per_axis(action_points, model.action_dim)
        return cls(
            tuple(zip(model.state_box.lower, model.state_box.upper, state_points)),
            tuple(zip(model.action_box.lower, model.action_box.upper, action_points)),
        )

    @property
    def state_shape(self):
        return tuple(axis.count for axis in self.state_axes)

    @property
    def action_shape(self):
        return tuple(axis.count for axis in self.action_axes)

    @property
    def n_states(self):
        return int(np.prod(self.state_shape))

    @property
    def n_actions(self):
        return int(np.prod(self.action_shape))

    @property
    def action_lower(self):
        return np.array([axis.lower for axis in self.action_axes])

    @property
    def action_upper(self):
        return np.array([axis.upper for axis in self.action_axes])

    @cached_property
    def state_points(self):
        return _product_points(self.state_axes)

    @cached_property
    def action_points(self):
        return _product_points(self.action_axes)

    def state_point(self, cell):
        return self.state_points[cell]

    def action_point(self, cell):
        return self.action_points[cell]

    def to_dict(self):
        return {
            "state_axes": [list(axis) for axis in self.state_axes],
            "action_axes": [list(axis) for axis in self.action_axes],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(data["state_axes"]), tuple(data["action_axes"]))


def _per_axis(points, dim):
    if isinstance(points, int):
        return [points] * dim
    points = list(points)
    if len(points) != dim:
        raise PreconditionError(f"expected {dim} point counts, got {points}")
    return points


def _product_points(axes):
    mesh = np.meshgrid(*[axis.points() for axis in axes], indexing="ij")
    points = np.stack([m.reshape(-1) for m in mesh], axis=1)
    points.setflags(write=False)
    return points


def _axis_positions(axes, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != len(axes):
        raise PreconditionError(f"expected points of dimension {len(axes)}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise PreconditionError("cannot locate a non-finite point")
    lower = np.array([axis.lower for axis in axes])
    upper = np.array([axis.upper for axis in axes])
    spacing = np.array([axis.spacing for axis in axes])
    inside = np.all((x >= lower) & (x <= upper), axis=1)
    return (x - lower) / spacing, inside


def _nearest_indices(axes, x):
    positions, inside = _axis_positions(axes, x)
    counts = np.array([axis.count for axis in axes])
    # ceil(p - 1/2) rounds half-way points down to the lower index
    nearest = np.clip(np.ceil(positions - 0.5).astype(np.int64), 0, counts - 1)
    flat = np.ravel_multi_index(tuple(nearest.T), tuple(counts))
    return flat, inside


def locate_many(grid, states):
    flat, inside = _nearest_indices(grid.state_axes, states)
    return np.where(inside, flat, OUTSIDE)


def locate(grid, s):
    """Nearest state cell of s, or OUTSIDE when s is not in the state box."""
    return int(locate_many(grid, s)[0])


def locate_action(grid, a):
    """Nearest action cell of a; points outside the action box are clipped first."""
    a = np.clip(np.asarray(a, dtype=float), grid.action_lower, grid.action_upper)
    flat, _ = _nearest_indices(grid.action_axes, a)
    return int(flat[0])


def enclosing_many(grid, states):
    """
    Cells of the 2^n grid points enclosing each state, shape (N, 2^n).
    States sitting on a grid coordinate use that coordinate on both sides.
    Rows for states outside the box are all OUTSIDE.
    """
    positions, inside = _axis_positions(grid.state_axes, states)
    counts = np.array(grid.state_shape)
    snapped = np.round(positions)
    on_point = np.abs(positions - snapped) < _SNAP_TOL
    low = np.where(on_point, snapped, np.floor(positions))
    high = np.where(on_point, snapped, np.ceil(positions))
    low = np.clip(low, 0, counts - 1).astype(np.int64)
    high = np.clip(high, 0, counts - 1).astype(np.int64)

    n_dims = len(counts)
    corners = []
    for mask in range(2 ** n_dims):
        pick = np.array([(mask >> d) & 1 for d in range(n_dims)], dtype=bool)
        idx = np.where(pick, high, low)
        corners.append(np.ravel_multi_index(tuple(idx.T), tuple(counts)))
    cells = np.stack(corners, axis=1)
    return np.where(inside[:, None], cells, OUTSIDE)


class _Lattice:
    """Shared behaviour of QSet and SSet: an immutable bit array on a grid."""

    def __init__(self, grid, membership):
        membership = np.array(membership, dtype=bool)
        if membership.shape != self._shape_for(grid):
            raise PreconditionError(
                f"membership shape {membership.shape} does not match grid shape {self._shape_for(grid)}"
            )
        membership.setflags(write=False)
        self.grid = grid
        self.membership = membership

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.membership, other.membership)

    __hash__ = None

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.membership.shape}, count={self.count()})"

    def count(self):
        return int(np.count_nonzero(self.membership))

    def is_empty(self):
        return not self.membership.any()

    def cells(self):
        return np.argwhere(self.membership)


class QSet(_Lattice):
    """Subset of the state-action grid, indexed by (state cell, action cell)."""

    @staticmethod
    def _shape_for(grid):
        return (grid.n_states, grid.n_actions)


class SSet(_Lattice):
    """Subset of the state grid, indexed by state cell."""

    @staticmethod
    def _shape_for(grid):
        return (grid.n_states,)


def empty_qset(grid):
    return QSet(grid, np.zeros((grid.n_states, grid.n_actions), dtype=bool))


def full_qset(grid):
    return QSet(grid, np.ones((grid.n_states, grid.n_actions), dtype=bool))


def qset_from_cells(grid, cells):
    membership = np.zeros((grid.n_states, grid.n_actions), dtype=bool)
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    membership[cells[:, 0], cells[:, 1]] = True
    return QSet(grid, membership)


def empty_sset(grid):
    return SSet(grid, np.zeros(grid.n_states, dtype=bool))


def full_sset(grid):
    return SSet(grid, np.ones(grid.n_states, dtype=bool))


def project(q):
    """States paired with at least one action in q."""
    return SSet(q.grid, q.membership.any(axis=1))


def action_slice(q, state_cell):
    if not 0 <= state_cell < q.grid.n_states:
        raise PreconditionError(f"state cell {state_cell} out of range")
    return np.flatnonzero(q.membership[state_cell])


def _check_same(a, b):
    if type(a) is not type(b):
        raise GridMismatchError(f"cannot combine {type(a).__name__} with {type(b).__name__}")
    if a.grid != b.grid:
        raise GridMismatchError("sets live on different grids")


def union(a, b):
    _check_same(a, b)
    return type(a)(a.grid, a.membership | b.membership)


def difference(a, b):
    _check_same(a, b)
    return type(a)(a.grid, a.membership & ~b.membership)


def intersect(a, b):
    _check_same(a, b)
    return type(a)(a.grid, a.membership & b.membership)


def is_subset(a, b):
    _check_same(a, b)
    return not np.any(a.membership & ~b.membership)


def count(a):
    return a.count()


def contains_state(sset, s, conservative=False):
    """
    Continuous-state membership: nearest grid point by default, or every
    enclosing grid point in conservative mode.
    """
    if conservative:
        cells = enclosing_many(sset.grid, s)[0]
    else:
        cells = locate_many(sset.grid, s)
    if np.any(cells == OUTSIDE):
        return False
    return bool(np.all(sset.membership[cells]))
