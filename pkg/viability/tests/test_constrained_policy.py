import numpy as np
import pytest

from constrained_policy import (
    INFEASIBLE,
    AffinePolicy,
    EpsilonGreedyPolicy,
    TablePolicy,
    UniformRandomPolicy,
    critical_set,
    direct_policy_check,
    is_admissible,
    nominal_actions,
    opt,
    opt_graph,
    optimal_policy,
    squared_distance_cost,
)
from dynamics import hovership_model
from errors import GridMismatchError, PreconditionError
from grid_utils import GridSpec, QSet, empty_qset, full_qset, intersect, is_subset, qset_from_cells
from viability_utils import ViabilityResult, compute_viability, viability_from_table
from viability_test_utils import line_grid, random_table, reference_critical, reference_opt


def oracle(table):
    kernel, viable, iterations, trace = viability_from_table(table)
    return ViabilityResult(kernel, viable, iterations, trace, table)


def random_nominal(rng, grid):
    # half on grid actions so that cost ties occur, half anywhere in the box
    on_grid = grid.action_points[rng.integers(0, grid.n_actions, grid.n_states), 0]
    anywhere = rng.uniform(0.0, 1.0, grid.n_states)
    return np.where(rng.random(grid.n_states) < 0.5, on_grid, anywhere)


@pytest.fixture(scope="module")
def hovership_oracle():
    model = hovership_model()
    grid = GridSpec.for_model(model, 41, 33)
    return model, grid, compute_viability(model, grid)


def test_opt_picks_nearest_action_in_slice():
    grid = line_grid(2, 5)
    k = qset_from_cells(grid, [(0, 0), (0, 3), (0, 4)])
    assert opt(k, 0, [0.5]) == 3
    assert opt(k, 0, [0.75]) == 3
    assert opt(k, 1, [0.5]) == INFEASIBLE


def test_opt_breaks_ties_toward_smallest_action():
    grid = line_grid(2, 5)
    k = qset_from_cells(grid, [(0, 1), (0, 3)])
    assert opt(k, 0, [0.5]) == 1


def test_opt_matches_enumeration():
    rng = np.random.default_rng(9)
    grid = line_grid(6, 11)
    for _ in range(200):
        k = QSet(grid, rng.random((6, 11)) < 0.3)
        a_nom = rng.uniform(0.0, 1.0, 1)
        for i in range(6):
            assert opt(k, i, a_nom) == reference_opt(k.membership[i], grid.action_points, a_nom)


def test_critical_set_matches_definition():
    rng = np.random.default_rng(21)
    for _ in range(100):
        table = random_table(rng, int(rng.integers(3, 12)), int(rng.integers(3, 12)), fail_prob=0.3)
        result = oracle(table)
        if result.kernel.is_empty():
            continue
        nominal = random_nominal(rng, table.grid)
        pi = TablePolicy(table.grid, nominal)
        critical = critical_set(result, pi)
        assert critical.membership.tolist() == reference_critical(result, nominal[:, None]).tolist()
        assert intersect(critical, result.viable).is_empty()


def test_admissibility_criterion_equals_policy_equality():
    rng = np.random.default_rng(1234)
    agree = admissible = inadmissible = 0
    while agree < 1000:
        n_states, n_actions = int(rng.integers(2, 16)), int(rng.integers(2, 16))
        table = random_table(rng, n_states, n_actions, fail_prob=rng.uniform(0.1, 0.5))
        result = oracle(table)
        if result.kernel.is_empty():
            continue
        pi = TablePolicy(table.grid, random_nominal(rng, table.grid))
        graph = opt_graph(result, pi).membership
        k = QSet(table.grid, graph | (rng.random(graph.shape) < rng.uniform(0.0, 0.4)))

        theorem = is_admissible(k, result, pi, mode="theorem")
        direct = is_admissible(k, result, pi, mode="direct")
        assert theorem.admissible == direct.admissible
        assert len(theorem.missing_opt_cells) == 0
        agree += 1
        admissible += theorem.admissible
        inadmissible += not theorem.admissible
    assert admissible > 0 and inadmissible > 0


def test_viable_set_is_admissible_and_full_set_depends_on_critical(hovership_oracle):
    model, grid, result = hovership_oracle
    pi = AffinePolicy(((-0.3,),), (0.7,), (0.0,), (0.8,))
    assert is_admissible(result.viable, result, pi)
    assert is_admissible(result.viable, result, pi, mode="direct")
    full = is_admissible(full_qset(grid), result, pi)
    assert full.admissible == critical_set(result, pi).is_empty()


def test_opt_graph_lies_in_viable_set(hovership_oracle):
    _, grid, result = hovership_oracle
    pi = AffinePolicy(((-0.3,),), (0.7,), (0.0,), (0.8,))
    graph = opt_graph(result, pi)
    assert is_subset(graph, result.viable)
    single = opt_graph(result, pi, set_valued=False)
    assert is_subset(single, graph)
    best = optimal_policy(result.viable, pi)
    assert np.all((best == INFEASIBLE) == ~result.kernel.membership)


def test_missing_graph_cell_is_inadmissible(hovership_oracle):
    _, grid, result = hovership_oracle
    pi = AffinePolicy(((-0.3,),), (0.7,), (0.0,), (0.8,))
    graph = opt_graph(result, pi, set_valued=False)
    i, j = graph.cells()[0]
    k = QSet(grid, result.viable.membership & ~qset_from_cells(grid, [(i, j)]).membership)
    verdict = is_admissible(k, result, pi)
    assert not verdict
    assert [i, j] in verdict.missing_opt_cells.tolist()
    assert i in direct_policy_check(k, result, pi)


def test_stochastic_critical_set_is_every_unviable_kernel_pair():
    rng = np.random.default_rng(4)
    table = random_table(rng, 8, 6, fail_prob=0.3)
    result = oracle(table)
    pi = UniformRandomPolicy(0, (0.0,), (1.0,))
    expected = result.kernel.membership[:, None] & ~result.viable.membership
    assert critical_set(result, pi).membership.tolist() == expected.tolist()
    with pytest.raises(PreconditionError):
        nominal_actions(pi, table.grid)


def test_affine_policy_clamps_to_action_box():
    pi = AffinePolicy(((-0.3,),), (0.7,), (0.0,), (0.8,))
    assert pi([0.0])[0] == pytest.approx(0.7)
    assert pi([3.0])[0] == 0.0
    assert pi.actions_for([[1.0], [2.0]])[:, 0] == pytest.approx([0.4, 0.1])


def test_epsilon_greedy_extremes():
    base = AffinePolicy(((-0.3,),), (0.7,), (0.0,), (0.8,))
    greedy = EpsilonGreedyPolicy(base, 0.0, seed=1)
    rng = greedy.make_rng()
    assert all(greedy.sample([1.0], rng)[0] == pytest.approx(0.4) for _ in range(20))
    explorer = EpsilonGreedyPolicy(base, 1.0, seed=1)
    rng = explorer.make_rng()
    draws = [explorer.sample([1.0], rng)[0] for _ in range(50)]
    assert all(0.0 <= d <= 0.8 for d in draws)
    assert len(set(draws)) == 50
    with pytest.raises(PreconditionError):
        EpsilonGreedyPolicy(base, 1.5, seed=1)


def test_admissibility_rejects_grid_mismatch():
    table = random_table(np.random.default_rng(0), 5, 3)
    result = oracle(table)
    pi = TablePolicy(table.grid, np.zeros(5))
    with pytest.raises(GridMismatchError):
        is_admissible(empty_qset(line_grid(6, 3)), result, pi)
    with pytest.raises(PreconditionError):
        is_admissible(result.viable, result, pi, mode="unknown")


def test_shrinking_the_constraint_never_lowers_the_cost():
    rng = np.random.default_rng(31)
    checked = 0
    for _ in range(150):
        table = random_table(rng, int(rng.integers(3, 12)), int(rng.integers(3, 12)), fail_prob=0.3)
        result = oracle(table)
        if result.kernel.is_empty():
            continue
        grid = table.grid
        k = QSet(grid, result.viable.membership & (rng.random(result.viable.membership.shape) < 0.5))
        nominal = random_nominal(rng, grid)
        for i in np.flatnonzero(k.membership.any(axis=1)):
            a_nom = nominal[i : i + 1]
            constrained = squared_distance_cost(grid.action_point(opt(k, i, a_nom)), a_nom)
            best = squared_distance_cost(grid.action_point(opt(result.viable, i, a_nom)), a_nom)
            assert constrained >= best
            checked += 1
    assert checked > 0


@pytest.mark.parametrize("scale", [0.25, 4.0, 1024.0])
def test_scaling_the_cost_keeps_the_argmin(scale):
    rng = np.random.default_rng(32)
    grid = line_grid(6, 11)

    def scaled(actions, nominal):
        return scale * squared_distance_cost(actions, nominal)

    for _ in range(200):
        k = QSet(grid, rng.random((6, 11)) < 0.4)
        a_nom = grid.action_points[rng.integers(0, 11)] if rng.random() < 0.5 else rng.uniform(0.0, 1.0, 1)
        for i in range(6):
            assert opt(k, i, a_nom, cost=scaled) == opt(k, i, a_nom)
