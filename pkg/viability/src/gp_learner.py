"""
Gaussian-process safety regressor behind the learned constraint K̂.

Inputs are concatenated (state, action) vectors, targets are survival
labels (1 survived, 0 failed). K̂ is the superlevel set of the posterior
mean at a threshold. Models are immutable: fit, observe and
update_hyperparameters all return new values.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist

try:
    from .errors import IllConditionedError, PreconditionError
    from .grid_utils import QSet
    from .logger import NullLogger
except ImportError:
    from errors import IllConditionedError, PreconditionError
    from grid_utils import QSet
    from logger import NullLogger

DEFAULT_JITTER_LADDER = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)

# rows of the grid evaluated per block when building K̂
_ESTIMATE_BLOCK = 8192


@dataclass(frozen=True)
class Sample:
    state: Tuple[float, ...]
    action: Tuple[float, ...]
    label: float
    episode: int = -1
    step: int = -1

    def __post_init__(self):
        object.__setattr__(self, "state", tuple(float(x) for x in np.atleast_1d(self.state)))
        object.__setattr__(self, "action", tuple(float(x) for x in np.atleast_1d(self.action)))
        object.__setattr__(self, "label", float(self.label))
        if self.label not in (0.0, 1.0):
            raise PreconditionError(f"sample labels are 0 or 1, got {self.label}")

    @property
    def inputs(self):
        return self.state + self.action


@dataclass(frozen=True)
class Hyperparameters:
    lengthscales: Tuple[float, ...]
    signal_variance: float = 1.0
    noise_variance: float = 1e-4
    prior_mean: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "lengthscales", tuple(float(x) for x in self.lengthscales))
        if not self.lengthscales or min(self.lengthscales) <= 0:
            raise PreconditionError(f"lengthscales must be positive, got {self.lengthscales}")
        if self.signal_variance <= 0 or self.noise_variance <= 0:
            raise PreconditionError("signal and noise variances must be positive")

    def to_dict(self):
        return {
            "lengthscales": list(self.lengthscales),
            "signal_variance": self.signal_variance,
            "noise_variance": self.noise_variance,
            "prior_mean": self.prior_mean,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            lengthscales=tuple(data["lengthscales"]),
            signal_variance=float(data["signal_variance"]),
            noise_variance=float(data["noise_variance"]),
            prior_mean=float(data.get("prior_mean", 0.0)),
        )


@dataclass(frozen=True)
class GpModel:
    samples: Tuple[Sample, ...]
    hyper: Hyperparameters
    jitter: float = 0.0
    jitter_ladder: Tuple[float, ...] = DEFAULT_JITTER_LADDER
    # cached factorisation of K + (noise + jitter) I
    _inputs: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    _chol: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    _alpha: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def n_samples(self):
        return len(self.samples)


def se_kernel(x1, x2, hyper):
    """signal_variance * exp(-1/2 sum_d ((x_d - x'_d) / l_d)^2)"""
    scale = np.asarray(hyper.lengthscales)
    sqdist = cdist(np.atleast_2d(x1) / scale, np.atleast_2d(x2) / scale, metric="sqeuclidean")
    return hyper.signal_variance * np.exp(-0.5 * sqdist)


def _sample_arrays(samples):
    inputs = np.array([s.inputs for s in samples], dtype=float)
    labels = np.array([s.label for s in samples], dtype=float)
    return inputs, labels


def _factorize(inputs, hyper, jitter_ladder):
    """Cholesky of the noisy kernel matrix, climbing the jitter ladder on failure."""
    gram = se_kernel(inputs, inputs, hyper)
    for jitter in jitter_ladder:
        matrix = gram + (hyper.noise_variance + jitter) * np.eye(len(inputs))
        try:
            return cholesky(matrix, lower=True), jitter
        except LinAlgError:
            continue
    raise IllConditionedError(
        f"kernel matrix of {len(inputs)} samples is not positive definite up to jitter {jitter_ladder[-1]}"
    )


def fit(samples, hyper, jitter_ladder=DEFAULT_JITTER_LADDER):
    """Exact GP regression on the samples; zero samples give the prior."""
    samples = tuple(samples)
    if len(samples) == 0:
        return GpModel(samples, hyper, 0.0, tuple(jitter_ladder))
    inputs, labels = _sample_arrays(samples)
    if inputs.shape[1] != len(hyper.lengthscales):
        raise PreconditionError(
            f"{len(hyper.lengthscales)} lengthscales for {inputs.shape[1]}-dimensional inputs"
        )
    chol, jitter = _factorize(inputs, hyper, jitter_ladder)
    alpha = cho_solve((chol, True), labels - hyper.prior_mean)
    for arr in (inputs, chol, alpha):
        arr.setflags(write=False)
    return GpModel(samples, hyper, jitter, tuple(jitter_ladder), inputs, chol, alpha)


def _query_inputs(states, actions):
    states = np.atleast_2d(np.asarray(states, dtype=float))
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    return np.hstack([states, actions])


def posterior_mean_many(model, queries):
    queries = np.atleast_2d(queries)
    if model.n_samples == 0:
        return np.full(len(queries), model.hyper.prior_mean)
    cross = se_kernel(queries, model._inputs, model.hyper)
    # row-wise sum keeps each value independent of how many rows are queried
    return model.hyper.prior_mean + np.sum(cross * model._alpha, axis=1)


def posterior_many(model, queries):
    """(means, variances) of the latent function at each query row."""
    queries = np.atleast_2d(queries)
    if model.n_samples == 0:
        n = len(queries)
        return np.full(n, model.hyper.prior_mean), np.full(n, model.hyper.signal_variance)
    cross = se_kernel(queries, model._inputs, model.hyper)
    means = model.hyper.prior_mean + np.sum(cross * model._alpha, axis=1)
    v = solve_triangular(model._chol, cross.T, lower=True)
    variances = model.hyper.signal_variance - np.sum(v * v, axis=0)
    return means, np.maximum(variances, 0.0)


def posterior(model, s, a):
    means, variances = posterior_many(model, _query_inputs(s, a))
    return float(means[0]), float(variances[0])


def constraint_estimate(model, grid, threshold, state_cells=None):
    """
    K̂ = {(i, j): posterior mean at the grid point >= threshold}. With
    `state_cells`, only those rows are evaluated and every other row is empty;
    the evaluated rows equal the corresponding rows of the full estimate.
    """
    rows = np.arange(grid.n_states) if state_cells is None else np.atleast_1d(state_cells)
    membership = np.zeros((grid.n_states, grid.n_actions), dtype=bool)
    if len(rows) == 0:
        return QSet(grid, membership)
    states = np.repeat(grid.state_points[rows], grid.n_actions, axis=0)
    actions = np.tile(grid.action_points, (len(rows), 1))
    queries = np.hstack([states, actions])
    means = np.empty(len(queries))
    for start in range(0, len(queries), _ESTIMATE_BLOCK):
        block = queries[start : start + _ESTIMATE_BLOCK]
        means[start : start + len(block)] = posterior_mean_many(model, block)
    membership[rows] = (means >= threshold).reshape(len(rows), grid.n_actions)
    return QSet(grid, membership)


def log_marginal_likelihood(samples, hyper, jitter_ladder=DEFAULT_JITTER_LADDER):
    inputs, labels = _sample_arrays(samples)
    chol, _ = _factorize(inputs, hyper, jitter_ladder)
    centred = labels - hyper.prior_mean
    alpha = cho_solve((chol, True), centred)
    return float(
        -0.5 * centred @ alpha - np.log(np.diag(chol)).sum() - 0.5 * len(labels) * np.log(2.0 * np.pi)
    )


def update_hyperparameters(model, search_grid, logger=None):
    """
    Refit with the candidate of highest exact log marginal likelihood. Ties
    keep the first-listed candidate; ill-conditioned candidates are skipped,
    and if none survives the previous hyperparameters are kept.
    """
    if logger is None:
        logger = NullLogger()
    if model.n_samples < 2:
        raise PreconditionError("hyperparameter search needs at least 2 samples")
    best, best_score = None, -np.inf
    for candidate in search_grid:
        try:
            score = log_marginal_likelihood(model.samples, candidate, model.jitter_ladder)
        except IllConditionedError:
            logger.debug(f"Skipping ill-conditioned candidate {candidate}")
            continue
        if score > best_score:
            best, best_score = candidate, score
    if best is None:
        logger.warning("All hyperparameter candidates are ill-conditioned; keeping the current ones")
        return model
    logger.info(f"Selected hyperparameters {best.to_dict()} (log marginal likelihood {best_score:.4f})")
    return fit(model.samples, best, model.jitter_ladder)


def observe(model, s, a, outcome, episode=-1, step=-1):
    """Append the transition with label 0 if it failed and 1 otherwise, then refit."""
    sample = Sample(s, a, 0.0 if outcome.failed else 1.0, episode, step)
    return fit(model.samples + (sample,), model.hyper, model.jitter_ladder)


def seed_samples(pi, operating_point, halfwidth=0.1, count=5, state_box=None):
    """
    Label-1 seeds on the graph of a deterministic policy, evenly spread over
    operating_point +/- halfwidth along every state axis (clipped to the box).
    """
    center = np.atleast_1d(np.asarray(operating_point, dtype=float))
    offsets = np.linspace(-halfwidth, halfwidth, count)
    states = center[None, :] + offsets[:, None]
    if state_box is not None:
        states = np.clip(states, state_box.lower, state_box.upper)
    actions = pi.actions_for(states)
    return tuple(Sample(s, a, 1.0) for s, a in zip(states, actions))


def hyperparameter_grid(lengthscale_options, signal_variances, noise_variances, prior_mean=0.0):
    """Cartesian product of per-dimension lengthscale options and variances."""
    candidates = []
    for lengthscales in np.array(np.meshgrid(*lengthscale_options, indexing="ij")).reshape(
        len(lengthscale_options), -1
    ).T:
        for signal in signal_variances:
            for noise in noise_variances:
                candidates.append(Hyperparameters(tuple(lengthscales), signal, noise, prior_mean))
    return tuple(candidates)


@dataclass(frozen=True)
class LearnerConfig:
    hyper: Hyperparameters
    seeds: Tuple[Sample, ...]
    threshold: float = 0.5
    search_grid: Tuple[Hyperparameters, ...] = ()
    jitter_ladder: Tuple[float, ...] = DEFAULT_JITTER_LADDER

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise PreconditionError(f"threshold must lie strictly between 0 and 1, got {self.threshold}")
        if len(self.seeds) == 0:
            raise PreconditionError("the seed region needs at least one sample")
        object.__setattr__(self, "seeds", tuple(self.seeds))
        object.__setattr__(self, "search_grid", tuple(self.search_grid))
        object.__setattr__(self, "jitter_ladder", tuple(self.jitter_ladder))

    def initial_model(self):
        return fit(self.seeds, self.hyper, self.jitter_ladder)
