"""
Independent reference implementations the tests compare against. They are
written as plain loops over cells so that they share as little as possible
with the vectorised code under test.
"""

import numpy as np
from scipy.integrate import solve_ivp

from constrained_policy import INFEASIBLE, squared_distance_cost
from dynamics import step
from gp_learner import Sample, constraint_estimate, fit, update_hyperparameters
from grid_utils import GridSpec, QSet, SSet, locate
from viability_utils import FAILED, TransitionTable, ViabilityResult


def line_grid(n_states, n_actions, lower=0.0, upper=1.0, a_lower=0.0, a_upper=1.0):
    return GridSpec(((lower, upper, n_states),), ((a_lower, a_upper, n_actions),))


def reference_flow(model, s, a, duration):
    """High-accuracy adaptive integration of the held-action ODE."""
    a = np.atleast_1d(np.asarray(a, dtype=float))

    def rhs(_, y):
        return model.vector_field(y[None, :], a[None, :])[0]

    sol = solve_ivp(rhs, (0.0, duration), np.atleast_1d(np.asarray(s, dtype=float)), rtol=1e-12, atol=1e-12)
    return sol.y[:, -1]


def random_table(rng, n_states, n_actions, fail_prob=0.15, width=1, failing_prob=0.05):
    grid = line_grid(n_states, n_actions)
    successors = rng.integers(0, n_states, size=(n_states, n_actions, width))
    successors[rng.random((n_states, n_actions, width)) < fail_prob] = FAILED
    failing = rng.random(n_states) < failing_prob
    return TransitionTable(grid, successors, failing)


def survival_states(table, horizon):
    """States from which some action sequence survives `horizon` steps, by recursion over horizons."""
    n_states, n_actions, _ = table.successors.shape
    alive = [not table.failing_states[i] for i in range(n_states)]
    for _ in range(horizon):
        nxt = []
        for i in range(n_states):
            ok = False
            if alive[i]:
                for j in range(n_actions):
                    cells = table.successors[i, j]
                    if all(c != FAILED and alive[c] for c in cells):
                        ok = True
                        break
            nxt.append(ok)
        alive = nxt
    return np.array(alive, dtype=bool)


def survival_oracle(table):
    """(kernel, viable) membership from exhaustive finite-horizon survival."""
    n_states, n_actions, _ = table.successors.shape
    kernel = survival_states(table, n_states + 1)
    viable = np.zeros((n_states, n_actions), dtype=bool)
    for i in range(n_states):
        if not kernel[i]:
            continue
        for j in range(n_actions):
            viable[i, j] = all(c != FAILED and kernel[c] for c in table.successors[i, j])
    return kernel, viable


def result_from_table(table):
    kernel, viable = survival_oracle(table)
    return ViabilityResult(SSet(table.grid, kernel), QSet(table.grid, viable), 1, (), table)


def reference_opt(membership_row, action_points, a_nom):
    """argmin over the row by explicit enumeration; ties to the smallest index."""
    best, best_cost = INFEASIBLE, np.inf
    for j in np.flatnonzero(membership_row):
        c = float(squared_distance_cost(action_points[j], a_nom))
        if c < best_cost:
            best, best_cost = int(j), c
    return best


def reference_critical(result, nominal):
    """Definitional enumeration of the critical set for a deterministic nominal table."""
    grid = result.grid
    viable = result.viable.membership
    critical = np.zeros_like(viable)
    for i in range(grid.n_states):
        if not result.kernel.membership[i]:
            continue
        costs = [float(squared_distance_cost(grid.action_points[j], nominal[i])) for j in range(grid.n_actions)]
        best = min(costs[j] for j in range(grid.n_actions) if viable[i, j])
        for j in range(grid.n_actions):
            if not viable[i, j] and costs[j] <= best:
                critical[i, j] = True
    return critical


def reference_algorithm(experiment):
    """
    Straight-line greedy on-policy exploration: full K̂ rebuilt after every
    sample, OPT by enumeration. Returns a list of per-step tuples
    (episode, step, state, action, feasible, failed) and the final model.
    """
    grid, model, pi, cfg = experiment.grid, experiment.model, experiment.policy, experiment.learner
    rng = np.random.default_rng(experiment.seed)
    nominal_rng = pi.make_rng() if hasattr(pi, "make_rng") else np.random.default_rng(experiment.seed + 1)
    samples = list(cfg.seeds)
    gp = fit(samples, cfg.hyper, cfg.jitter_ladder)
    log = []
    for b in range(experiment.batch_count):
        for e in range(experiment.episodes_per_batch):
            episode = b * experiment.episodes_per_batch + e
            khat = constraint_estimate(gp, grid, cfg.threshold)
            cells = np.flatnonzero(khat.membership.any(axis=1))
            cells = cells[~model.is_failure(grid.state_points[cells])]
            s = np.array(grid.state_points[cells[rng.integers(len(cells))]])
            for t in range(experiment.max_steps):
                a_nom = np.atleast_1d(pi.sample(s, nominal_rng))
                j = reference_opt(khat.membership[locate(grid, s)], grid.action_points, a_nom)
                if j != INFEASIBLE:
                    a, feasible = np.array(grid.action_points[j]), True
                elif experiment.fallback == "uniform":
                    a, feasible = np.atleast_1d(nominal_rng.uniform(grid.action_lower, grid.action_upper)), False
                else:
                    a, feasible = a_nom, False
                outcome = step(model, s, a)
                log.append((episode, t, tuple(s), tuple(a), feasible, outcome.failed))
                samples.append(Sample(s, a, 0.0 if outcome.failed else 1.0, episode, t))
                gp = fit(samples, gp.hyper, cfg.jitter_ladder)
                if outcome.failed:
                    break
                s = np.array(outcome.state)
                khat = constraint_estimate(gp, grid, cfg.threshold)
        if cfg.search_grid:
            gp = update_hyperparameters(gp, cfg.search_grid)
    return log, gp
