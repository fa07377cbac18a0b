"""
Greedy on-policy constraint learning.

Each step executes OPT(K̂) when the learned constraint offers an action at
the current state and falls back to the nominal action otherwise, observes
the outcome, and refits the regressor. Episodes end on failure or after
max_steps; hyperparameters are re-selected after every batch.
"""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from tqdm import tqdm

try:
    from .constrained_policy import (
        INFEASIBLE,
        cost_matrix,
        critical_set,
        is_admissible,
        nominal_actions,
        opt,
        opt_table,
        squared_distance_cost,
    )
    from .dynamics import step
    from .errors import GridMismatchError, InvariantViolationError, PreconditionError, UnrecoverableConstraintError
    from .gp_learner import Sample, constraint_estimate, fit, observe, update_hyperparameters
    from .grid_utils import OUTSIDE, difference, intersect, locate, locate_action, project
    from .logger import NullLogger
except ImportError:
    from constrained_policy import (
        INFEASIBLE,
        cost_matrix,
        critical_set,
        is_admissible,
        nominal_actions,
        opt,
        opt_table,
        squared_distance_cost,
    )
    from dynamics import step
    from errors import GridMismatchError, InvariantViolationError, PreconditionError, UnrecoverableConstraintError
    from gp_learner import Sample, constraint_estimate, fit, observe, update_hyperparameters
    from grid_utils import OUTSIDE, difference, intersect, locate, locate_action, project
    from logger import NullLogger

FALLBACKS = ("nominal", "uniform")
REFIT_MODES = ("sample", "episode")


@dataclass(frozen=True)
class ExperimentConfig:
    model: object
    grid: object
    policy: object
    learner: object
    episodes_per_batch: int = 10
    batch_count: int = 2
    max_steps: int = 10
    seed: int = 7
    fallback: str = "nominal"
    refit: str = "sample"

    def __post_init__(self):
        for name in ("episodes_per_batch", "batch_count", "max_steps"):
            if getattr(self, name) < 1:
                raise PreconditionError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.fallback not in FALLBACKS:
            raise PreconditionError(f"fallback must be one of {FALLBACKS}, got '{self.fallback}'")
        if self.refit not in REFIT_MODES:
            raise PreconditionError(f"refit must be one of {REFIT_MODES}, got '{self.refit}'")

    @property
    def total_episodes(self):
        return self.episodes_per_batch * self.batch_count


@dataclass(frozen=True)
class ActionChoice:
    action: np.ndarray = field(compare=False)
    feasible: bool
    nominal: np.ndarray = field(compare=False)
    # the nominal action survived the constraint unchanged (up to grid resolution)
    nominal_allowed: bool = False


@dataclass(frozen=True)
class StepLog:
    episode: int
    step: int
    state: Tuple[float, ...]
    nominal_action: Tuple[float, ...]
    action: Tuple[float, ...]
    feasible: bool
    nominal_allowed: bool
    failed: bool
    next_state: Tuple[float, ...]

    @property
    def label(self):
        return 0.0 if self.failed else 1.0


@dataclass(frozen=True)
class EpisodeLog:
    episode: int
    batch: int
    initial_state: Tuple[float, ...]
    steps: Tuple[StepLog, ...]

    @property
    def failed(self):
        return bool(self.steps) and self.steps[-1].failed

    def __len__(self):
        return len(self.steps)


@dataclass(frozen=True)
class RunRecord:
    config: dict
    episodes: Tuple[EpisodeLog, ...]
    hyperparameters: Tuple[object, ...]
    khat_initial: object
    khat_batches: Tuple[object, ...]
    seeds: Tuple[object, ...] = ()

    @property
    def steps(self):
        return tuple(s for episode in self.episodes for s in episode.steps)

    @property
    def khat_final(self):
        return self.khat_batches[-1]

    @property
    def total_samples(self):
        return sum(len(episode) for episode in self.episodes)


def _tuple(x):
    return tuple(float(v) for v in np.atleast_1d(x))


def policy_rng(pi, seed):
    """Nominal and fallback draws: the policy's own seed when it has one, else seed + 1."""
    if hasattr(pi, "make_rng"):
        return pi.make_rng()
    return np.random.default_rng(seed + 1)


def explore_action(khat, s, pi, rng, fallback="nominal", cost=squared_distance_cost):
    """
    OPT(K̂)(s) against a fresh nominal draw when the action slice at s is
    nonempty; otherwise the nominal action itself (or a uniform draw).
    """
    grid = khat.grid
    a_nom = np.atleast_1d(np.asarray(pi.sample(s, rng), dtype=float))
    cell = locate(grid, s)
    best = INFEASIBLE if cell == OUTSIDE else opt(khat, cell, a_nom, cost)
    if best != INFEASIBLE:
        return ActionChoice(
            action=np.array(grid.action_point(best)),
            feasible=True,
            nominal=a_nom,
            nominal_allowed=best == locate_action(grid, a_nom),
        )
    if fallback == "uniform":
        action = np.atleast_1d(rng.uniform(grid.action_lower, grid.action_upper))
    else:
        action = a_nom
    return ActionChoice(action=action, feasible=False, nominal=a_nom)


def run_episode(
    state0,
    khat,
    model,
    pi,
    learner,
    max_steps,
    rng,
    threshold,
    fallback="nominal",
    refit="sample",
    episode=0,
    batch=0,
    cost=squared_distance_cost,
):
    """
    One episode from state0. Returns (EpisodeLog, learner'). With refit
    "sample" the regressor is refit after every transition and the next
    action is chosen from the refreshed K̂; with "episode" K̂ stays fixed and
    the transitions are added once the episode is over.
    """
    grid = khat.grid
    if locate(grid, state0) == OUTSIDE or not project(khat).membership[locate(grid, state0)]:
        raise PreconditionError(f"episode start {np.atleast_1d(state0).tolist()} is outside the projection of K̂")

    s = np.atleast_1d(np.asarray(state0, dtype=float))
    current = khat
    pending = []
    logs = []
    for t in range(max_steps):
        choice = explore_action(current, s, pi, rng, fallback, cost)
        outcome = step(model, s, choice.action)
        logs.append(
            StepLog(
                episode=episode,
                step=t,
                state=_tuple(s),
                nominal_action=_tuple(choice.nominal),
                action=_tuple(choice.action),
                feasible=bool(choice.feasible),
                nominal_allowed=bool(choice.nominal_allowed),
                failed=outcome.failed,
                next_state=_tuple(outcome.state),
            )
        )
        if refit == "sample":
            learner = observe(learner, s, choice.action, outcome, episode, t)
        else:
            pending.append((s, choice.action, 0.0 if outcome.failed else 1.0))
        if outcome.failed:
            break
        s = np.array(outcome.state)
        if refit == "sample":
            cell = locate(grid, s)
            # only the row at the next state is consulted by explore_action
            current = constraint_estimate(learner, grid, threshold, state_cells=[] if cell == OUTSIDE else [cell])

    if pending:
        observed = tuple(Sample(*entry, episode=episode, step=t) for t, entry in enumerate(pending))
        learner = fit(learner.samples + observed, learner.hyper, learner.jitter_ladder)

    return EpisodeLog(episode, batch, _tuple(state0), tuple(logs)), learner


def _start_cells(khat, model):
    cells = np.flatnonzero(project(khat).membership)
    if len(cells) == 0:
        return cells
    return cells[~np.atleast_1d(model.is_failure(khat.grid.state_points[cells]))]


def run_experiment(config, logger=None, show_progress=False):
    """Run batch_count x episodes_per_batch episodes; fully determined by the seeds."""
    if logger is None:
        logger = NullLogger()
    grid, model, pi, learner_cfg = config.grid, config.model, config.policy, config.learner
    rng = np.random.default_rng(config.seed)
    nominal_rng = policy_rng(pi, config.seed)

    learner = learner_cfg.initial_model()
    khat_initial = constraint_estimate(learner, grid, learner_cfg.threshold)
    logger.info(
        f"Initial K̂ from {len(learner_cfg.seeds)} seed samples: {khat_initial.count()} pairs, "
        f"{project(khat_initial).count()} states"
    )

    episodes = []
    khat_batches = []
    hyperparameters = []
    with tqdm(total=config.total_episodes, desc="Episodes", unit="episode", disable=not show_progress) as pbar:
        for b in range(config.batch_count):
            for e in range(config.episodes_per_batch):
                index = b * config.episodes_per_batch + e
                khat = constraint_estimate(learner, grid, learner_cfg.threshold)
                cells = _start_cells(khat, model)
                if len(cells) == 0:
                    raise UnrecoverableConstraintError(b, e)
                state0 = grid.state_point(cells[rng.integers(len(cells))])
                log, learner = run_episode(
                    state0,
                    khat,
                    model,
                    pi,
                    learner,
                    config.max_steps,
                    nominal_rng,
                    learner_cfg.threshold,
                    fallback=config.fallback,
                    refit=config.refit,
                    episode=index,
                    batch=b,
                )
                episodes.append(log)
                logger.debug(f"Episode {index}: {len(log)} steps, failed={log.failed}")
                pbar.update(1)

            if learner_cfg.search_grid and learner.n_samples >= 2:
                learner = update_hyperparameters(learner, learner_cfg.search_grid, logger)
            hyperparameters.append(learner.hyper)
            khat_batches.append(constraint_estimate(learner, grid, learner_cfg.threshold))
            logger.info(
                f"Batch {b + 1}/{config.batch_count}: {learner.n_samples} samples, "
                f"K̂ {khat_batches[-1].count()} pairs"
            )

    return RunRecord(
        config=experiment_summary(config),
        episodes=tuple(episodes),
        hyperparameters=tuple(hyperparameters),
        khat_initial=khat_initial,
        khat_batches=tuple(khat_batches),
        seeds=learner_cfg.seeds,
    )


def experiment_summary(config):
    return {
        "model": config.model.name,
        "grid": config.grid.to_dict(),
        "policy": config.policy.to_dict(),
        "threshold": config.learner.threshold,
        "initial_hyperparameters": config.learner.hyper.to_dict(),
        "episodes_per_batch": config.episodes_per_batch,
        "batch_count": config.batch_count,
        "max_steps": config.max_steps,
        "seed": config.seed,
        "fallback": config.fallback,
        "refit": config.refit,
    }


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _policy_actions(k, costs, nominal, grid):
    """OPT(k) per state cell as continuous actions, nominal where infeasible."""
    best = opt_table(k, costs)
    actions = np.array(nominal, dtype=float)
    rows = best != INFEASIBLE
    actions[rows] = grid.action_points[best[rows]]
    return actions


def deviation(khat, oracle, pi, cost=squared_distance_cost):
    """(max, mean) over kernel cells of |OPT(K̂) - OPT(Q_V)| as % of the action range."""
    grid = oracle.grid
    kernel = oracle.kernel.membership
    if not kernel.any():
        return 0.0, 0.0
    nominal = nominal_actions(pi, grid)
    costs = cost_matrix(grid, nominal, cost)
    learned = _policy_actions(khat, costs, nominal, grid)
    reference = _policy_actions(oracle.viable, costs, nominal, grid)
    span = grid.action_upper - grid.action_lower
    gap = np.max(np.abs(learned - reference) / span * 100.0, axis=1)[kernel]
    return float(gap.max()), float(gap.mean())


def set_errors(khat, oracle, critical):
    viable_count = oracle.viable.count()
    missing = difference(oracle.viable, khat).count()
    underestimate = 100.0 * missing / viable_count if viable_count else 0.0
    overreach = 100.0 * intersect(khat, critical).count() / max(1, critical.count())
    return underestimate, overreach


def compute_metrics(record, oracle, pi, cost=squared_distance_cost, check_sufficiency=True):
    """Failure, deviation and set-error metrics of a run against the oracle."""
    if record.khat_final.grid != oracle.grid:
        raise GridMismatchError("run and oracle live on different grids")

    steps = record.steps
    failures = [s for s in steps if s.failed]
    critical = critical_set(oracle, pi, cost)
    underestimate, overreach = set_errors(record.khat_final, oracle, critical)

    metrics = {
        "total_samples": record.total_samples,
        "total_episodes": len(record.episodes),
        "failure_count": len(failures),
        "last_failure_episode": failures[-1].episode if failures else -1,
        "nominal_allowed_steps": sum(1 for s in steps if s.nominal_allowed),
        "infeasible_steps": sum(1 for s in steps if not s.feasible),
        "underestimate": underestimate,
        "coverage": 100.0 - underestimate,
        "overreach": overreach,
        "khat_count": record.khat_final.count(),
        "khat_initial_count": record.khat_initial.count(),
        "viable_count": oracle.viable.count(),
        "kernel_count": oracle.kernel.count(),
        "critical_count": critical.count(),
        "deviation_max": None,
        "deviation_mean": None,
        "admissible": None,
    }

    batches = []
    for b, khat in enumerate(record.khat_batches):
        under, over = set_errors(khat, oracle, critical)
        entry = {"batch": b, "khat_count": khat.count(), "underestimate": under, "overreach": over}
        if pi.deterministic:
            entry["deviation_max"], entry["deviation_mean"] = deviation(khat, oracle, pi, cost)
        batches.append(entry)
    metrics["batches"] = batches

    if pi.deterministic:
        metrics["deviation_max"], metrics["deviation_mean"] = deviation(record.khat_final, oracle, pi, cost)
        metrics["admissible"] = bool(is_admissible(record.khat_final, oracle, pi, cost))
        if check_sufficiency and metrics["admissible"] and metrics["deviation_max"] != 0.0:
            raise InvariantViolationError(
                f"admissible K̂ but OPT(K̂) deviates by up to {metrics['deviation_max']}% from OPT(Q_V)"
            )
    return metrics
