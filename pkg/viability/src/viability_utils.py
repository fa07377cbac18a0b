"""
Brute-force ground truth on the grid: the transition table, the viability
kernel and viable set by fixed-point iteration, and the control-constraint
predicate with its pruning rule.
"""

import concurrent.futures
import os
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from tqdm import tqdm

try:
    from .dynamics import step_many
    from .errors import GridMismatchError, InvariantViolationError, PreconditionError, RunArtifactError
    from .grid_utils import (
        OUTSIDE,
        QSet,
        SSet,
        difference,
        enclosing_many,
        locate_many,
        project,
    )
    from .logger import NullLogger
    from .set_io import load_set, save_set, write_set_csv
except ImportError:
    from dynamics import step_many
    from errors import GridMismatchError, InvariantViolationError, PreconditionError, RunArtifactError
    from grid_utils import (
        OUTSIDE,
        QSet,
        SSet,
        difference,
        enclosing_many,
        locate_many,
        project,
    )
    from logger import NullLogger
    from set_io import load_set, save_set, write_set_csv

FAILED = OUTSIDE


@dataclass(frozen=True)
class TransitionTable:
    """
    successors[i, j] lists the grid cells that (i, j) maps to: one nearest
    cell, or the 2^n enclosing cells in conservative mode. FAILED marks a
    transition into the failure set or out of the grid box.
    """

    grid: object
    successors: np.ndarray = field(compare=False)
    failing_states: np.ndarray = field(compare=False)

    def __post_init__(self):
        succ = np.array(self.successors, dtype=np.int64)
        if succ.ndim == 2:
            succ = succ[:, :, None]
        expected = (self.grid.n_states, self.grid.n_actions)
        if succ.shape[:2] != expected:
            raise PreconditionError(f"successor table shape {succ.shape} does not match grid {expected}")
        if np.any((succ != FAILED) & ((succ < 0) | (succ >= self.grid.n_states))):
            raise PreconditionError("successor table references cells outside the grid")
        failing = np.array(self.failing_states, dtype=bool).reshape(self.grid.n_states)
        # failing states are not part of Q, so none of their pairs has a successor
        succ[failing] = FAILED
        succ.setflags(write=False)
        failing.setflags(write=False)
        object.__setattr__(self, "successors", succ)
        object.__setattr__(self, "failing_states", failing)

    @property
    def next_cells(self):
        """(n_states, n_actions) successor cells; nearest-cell tables only."""
        if self.successors.shape[2] != 1:
            raise PreconditionError("next_cells is only defined for nearest-cell tables")
        return self.successors[:, :, 0]

    def successors_in(self, state_mask):
        """Pairs all of whose successor cells are members of `state_mask`."""
        state_mask = np.asarray(state_mask, dtype=bool)
        valid = self.successors != FAILED
        hit = state_mask[np.where(valid, self.successors, 0)] & valid
        return np.all(hit, axis=2)


@dataclass(frozen=True)
class ViabilityResult:
    kernel: SSet
    viable: QSet
    iterations: int
    trace: Tuple[int, ...] = ()
    transition_table: Optional[TransitionTable] = field(default=None, compare=False)
    model_name: str = ""

    @property
    def grid(self):
        return self.viable.grid


@dataclass(frozen=True)
class ConstraintCheck:
    passed: bool
    witness: Optional[Tuple[int, int]] = None

    def __bool__(self):
        return self.passed


@dataclass(frozen=True)
class PruneRejection:
    """prune refused: removing the cells empties the slice of `state_cell`."""

    state_cell: int


def _tabulate_rows(model, grid, rows, conservative):
    n_actions = grid.n_actions
    states = np.repeat(grid.state_points[rows], n_actions, axis=0)
    actions = np.tile(grid.action_points, (len(rows), 1))
    next_states, failed = step_many(model, states, actions)
    if conservative:
        cells = enclosing_many(grid, next_states)
    else:
        cells = locate_many(grid, next_states)[:, None]
    cells = np.where(failed[:, None], FAILED, cells)
    return cells.reshape(len(rows), n_actions, -1)


def tabulate(model, grid, conservative=False, num_threads=1, chunk_size=64, logger=None, show_progress=False):
    """Apply step + locate to every (state cell, action cell) pair."""
    if logger is None:
        logger = NullLogger()
    if grid.state_points.shape[1] != model.state_dim or grid.action_points.shape[1] != model.action_dim:
        raise GridMismatchError("grid dimensions do not match the model")

    failing = model.is_failure(grid.state_points)
    width = 2 ** model.state_dim if conservative else 1
    successors = np.full((grid.n_states, grid.n_actions, width), FAILED, dtype=np.int64)

    live_rows = np.flatnonzero(~failing)
    chunks = [live_rows[i : i + chunk_size] for i in range(0, len(live_rows), chunk_size)]
    logger.info(
        f"Tabulating {len(live_rows)} x {grid.n_actions} transitions in {len(chunks)} chunks "
        f"({'conservative' if conservative else 'nearest'} membership, {num_threads} threads)"
    )

    with tqdm(total=len(chunks), desc="Tabulating", unit="chunk", disable=not show_progress) as pbar:
        if num_threads <= 1:
            for rows in chunks:
                successors[rows] = _tabulate_rows(model, grid, rows, conservative)
                pbar.update(1)
        else:
            with concurrent.futures.ThreadPoolExecutor(max_workers=num_threads) as executor:
                future_to_rows = {
                    executor.submit(_tabulate_rows, model, grid, rows, conservative): i
                    for i, rows in enumerate(chunks)
                }
                # chunks own disjoint rows
                for future in concurrent.futures.as_completed(future_to_rows):
                    rows = chunks[future_to_rows[future]]
                    successors[rows] = future.result()
                    pbar.update(1)

    return TransitionTable(grid, successors, failing)


def viability_from_table(table):
    """
    Fixed point S^{k+1} = project(Q^k) ∩ S^k with Q^k the pairs mapping into
    S^k, starting from the non-failing states.
    """
    grid = table.grid
    current = ~table.failing_states
    viable = np.zeros((grid.n_states, grid.n_actions), dtype=bool)
    trace = [int(current.sum())]
    sweeps = 0
    while current.any():
        viable = table.successors_in(current) & current[:, None]
        sweeps += 1
        shrunk = viable.any(axis=1)
        trace.append(int(shrunk.sum()))
        if np.array_equal(shrunk, current):
            break
        current = shrunk
    if not current.any():
        viable = np.zeros_like(viable)

    kernel = SSet(grid, current)
    viable = QSet(grid, viable)
    if project(viable) != kernel:
        raise InvariantViolationError("projection of the viable set differs from the kernel")
    return kernel, viable, max(sweeps, 1), tuple(trace)


def compute_viability(model, grid, conservative=False, num_threads=1, logger=None, show_progress=False):
    if logger is None:
        logger = NullLogger()
    table = tabulate(
        model,
        grid,
        conservative=conservative,
        num_threads=num_threads,
        logger=logger,
        show_progress=show_progress,
    )
    kernel, viable, iterations, trace = viability_from_table(table)
    logger.info(
        f"Viability fixed point after {iterations} sweeps: kernel {kernel.count()}/{grid.n_states} "
        f"states, viable {viable.count()}/{grid.n_states * grid.n_actions} pairs"
    )
    return ViabilityResult(
        kernel=kernel,
        viable=viable,
        iterations=iterations,
        trace=trace,
        transition_table=table,
        model_name=model.name,
    )


def _require_table(result):
    if result.transition_table is None:
        raise PreconditionError("this check needs the transition table; recompute the oracle")
    return result.transition_table


def _check_grid(lattice, result):
    if lattice.grid != result.grid:
        raise GridMismatchError("set and oracle live on different grids")


def is_control_constraint(q, result):
    """Every member of q must map into q's own state projection."""
    _check_grid(q, result)
    table = _require_table(result)
    closes = table.successors_in(project(q).membership)
    violators = np.argwhere(q.membership & ~closes)
    if len(violators) == 0:
        return ConstraintCheck(True)
    return ConstraintCheck(False, (int(violators[0][0]), int(violators[0][1])))


def prune(a, c, result):
    """
    a minus c, provided the removal leaves the projection of a untouched;
    otherwise a PruneRejection naming the first state whose slice emptied.
    """
    _check_grid(c, result)
    check = is_control_constraint(a, result)
    if not check.passed:
        raise PreconditionError(f"prune needs a control constraint, violated at {check.witness}")
    pruned = difference(a, c)
    emptied = project(a).membership & ~project(pruned).membership
    if emptied.any():
        return PruneRejection(int(np.flatnonzero(emptied)[0]))
    return pruned


def viability_metadata(result, conservative=False):
    return {
        "model": result.model_name,
        "iterations": result.iterations,
        "trace": list(result.trace),
        "conservative_membership": bool(conservative),
        "kernel_count": result.kernel.count(),
        "viable_count": result.viable.count(),
    }


def save_viability_result(result, output_dir, conservative=False):
    """Writes q_viable.json, s_kernel.json and viability.csv; returns their paths."""
    metadata = viability_metadata(result, conservative)
    paths = {
        "q_viable": os.path.join(output_dir, "q_viable.json"),
        "s_kernel": os.path.join(output_dir, "s_kernel.json"),
        "viability_csv": os.path.join(output_dir, "viability.csv"),
    }
    save_set(paths["q_viable"], result.viable, metadata)
    save_set(paths["s_kernel"], result.kernel, metadata)
    write_set_csv(paths["viability_csv"], result.viable)
    return paths


def load_viability_result(q_viable_path):
    """Reload an oracle from q_viable.json. The transition table is not stored."""
    viable, metadata = load_set(q_viable_path)
    if not isinstance(viable, QSet):
        raise RunArtifactError(f"{q_viable_path} does not hold a state-action set")
    return ViabilityResult(
        kernel=project(viable),
        viable=viable,
        iterations=int(metadata.get("iterations", 1)),
        trace=tuple(metadata.get("trace", ())),
        transition_table=None,
        model_name=metadata.get("model", ""),
    )
