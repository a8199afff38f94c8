"""Denoising MDP formalization and exact tabular solvers.

Shaping a tabular MDP with a state potential d(.) adds
lambda * (gamma * d(s') - d(s)) to every transition reward; the
certifier solves both MDPs exactly and compares optimal actions.
"""
import itertools
import logging
import time
from dataclasses import dataclass, field

import numpy as np


LOGGER = logging.getLogger(__name__)
ROW_TOLERANCE = 1e-12
TIE_EPSILON = 1e-9
MAX_ITERATIONS = 100000


class ConvergenceError(RuntimeError):
    """Value iteration did not reach the requested residual."""

    def __init__(self, residual, iterations):
        super().__init__('value iteration did not converge: residual {:.3e} after {} iterations'.format(
            residual, iterations
        ))
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class DenoisingMDPSpec:
    """Denoising chain shape: states (x_t, c, t), actions x_{t-1}."""
    horizon: int = 10
    state_dim: int = 2
    discount_gamma: float = 1.0
    prompt_dim: int = 4

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError('horizon must be >= 1')
        if self.state_dim < 1:
            raise ValueError('state_dim must be >= 1')
        if self.prompt_dim < 1:
            raise ValueError('prompt_dim must be >= 1')
        if not 0 < self.discount_gamma <= 1:
            raise ValueError('discount_gamma must be in (0, 1]')

    def to_dict(self):
        """Serialize."""
        return dict(horizon=self.horizon, state_dim=self.state_dim,
                    discount_gamma=self.discount_gamma, prompt_dim=self.prompt_dim)

    @classmethod
    def from_dict(cls, data):
        """Deserialize."""
        return cls(**data)


@dataclass
class TabularMDP:
    """Finite MDP (S, A, P, R, gamma)."""
    transition: np.ndarray
    reward: np.ndarray
    discount_gamma: float
    terminal_mask: np.ndarray = None

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.reward = np.asarray(self.reward, dtype=float)
        if self.terminal_mask is None:
            self.terminal_mask = np.zeros(self.transition.shape[0], dtype=bool)
        self.terminal_mask = np.asarray(self.terminal_mask, dtype=bool)
        self.validate()

    @property
    def num_states(self):
        """Number of states."""
        return self.transition.shape[0]

    @property
    def num_actions(self):
        """Number of actions."""
        return self.transition.shape[1]

    def validate(self):
        """Check shapes, stochastic rows and finiteness."""
        if self.transition.ndim != 3 or self.transition.shape[0] != self.transition.shape[2]:
            raise ValueError('transition must have shape (S, A, S)')
        if self.reward.shape != self.transition.shape:
            raise ValueError('reward shape {} does not match transition shape {}'.format(
                self.reward.shape, self.transition.shape))
        if self.terminal_mask.shape != (self.num_states,):
            raise ValueError('terminal_mask must have one entry per state')
        if np.any(self.transition < 0):
            raise ValueError('transition probabilities must be non-negative')
        if np.max(np.abs(self.transition.sum(axis=2) - 1.0)) > ROW_TOLERANCE:
            raise ValueError('transition rows must sum to 1')
        if not np.all(np.isfinite(self.reward)):
            raise ValueError('rewards must be finite')
        if not 0 < self.discount_gamma <= 1:
            raise ValueError('discount_gamma must be in (0, 1]')

    def to_dict(self):
        """Serialize."""
        return dict(
            num_states=self.num_states,
            num_actions=self.num_actions,
            transition=self.transition.tolist(),
            reward=self.reward.tolist(),
            discount_gamma=self.discount_gamma,
            terminal_mask=self.terminal_mask.tolist()
        )

    @classmethod
    def from_dict(cls, data):
        """Deserialize."""
        mdp = cls(
            transition=np.array(data['transition'], dtype=float),
            reward=np.array(data['reward'], dtype=float),
            discount_gamma=float(data['discount_gamma']),
            terminal_mask=data.get('terminal_mask')
        )
        if mdp.num_states != data['num_states'] or mdp.num_actions != data['num_actions']:
            raise ValueError('declared dimensions do not match tensors')
        return mdp


@dataclass(frozen=True)
class PotentialFunction:
    """State potential d(s).

    Terminal states get no special case: shaping uses
    gamma * d(s') - d(s) uniformly.
    """
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError('potential must be a vector')
        if not np.all(np.isfinite(values)):
            raise ValueError('potential values must be finite')
        object.__setattr__(self, 'values', values)


@dataclass
class ValueIterationResult:
    """Optimal values, Q-values and optimal action sets."""
    values: np.ndarray
    q_values: np.ndarray
    action_sets: list
    residuals: list
    iterations: int

    def __iter__(self):
        return iter((self.values, self.action_sets))


@dataclass
class InvarianceReport:
    """Shaping invariance certificate."""
    action_sets: list
    shaped_action_sets: list
    equal: bool
    q_residual: float
    shaping_lambda: float
    differing_states: list = field(default_factory=list)

    def to_dict(self):
        """Serialize."""
        return dict(
            action_sets=[sorted(s) for s in self.action_sets],
            shaped_action_sets=[sorted(s) for s in self.shaped_action_sets],
            equal=self.equal,
            q_residual=self.q_residual,
            shaping_lambda=self.shaping_lambda,
            differing_states=self.differing_states
        )


def q_from_values(mdp, values):
    """One Bellman backup: Q(s,a) = sum_s' P (R + gamma V(s'))."""
    return np.einsum('ijk,ijk->ij', mdp.transition, mdp.reward) + \
        mdp.discount_gamma * mdp.transition @ values


def optimal_action_sets(q_values, tie_epsilon=TIE_EPSILON):
    """Actions within tie_epsilon of the per-state maximum."""
    best = q_values.max(axis=1, keepdims=True)
    return [frozenset(np.flatnonzero(row).tolist()) for row in q_values >= best - tie_epsilon]


def bellman_residual(mdp, values):
    """Sup-norm Bellman optimality residual of a value vector."""
    return float(np.max(np.abs(q_from_values(mdp, values).max(axis=1) - values)))


def value_iteration(mdp, tol, max_iterations=MAX_ITERATIONS, tie_epsilon=TIE_EPSILON):
    """Solve the Bellman optimality equation to a sup-norm residual <= tol.

    Once iteration converges the greedy policy is evaluated exactly; its
    values replace the iterate when their Bellman residual is smaller.
    """
    if tol <= 0:
        raise ValueError('tol must be positive')
    if mdp.discount_gamma >= 1:
        raise ValueError('value iteration requires discount_gamma < 1')
    values = np.zeros(mdp.num_states)
    residuals = []
    residual = np.inf
    for iteration in range(1, max_iterations + 1):
        new_values = q_from_values(mdp, values).max(axis=1)
        residual = float(np.max(np.abs(new_values - values)))
        residuals.append(residual)
        values = new_values
        if residual <= tol:
            greedy = q_from_values(mdp, values).argmax(axis=1)
            polished = policy_evaluation(mdp, greedy)
            polished_residual = bellman_residual(mdp, polished)
            if polished_residual <= bellman_residual(mdp, values):
                values = polished
            q_values = q_from_values(mdp, values)
            return ValueIterationResult(
                values=values,
                q_values=q_values,
                action_sets=optimal_action_sets(q_values, tie_epsilon),
                residuals=residuals,
                iterations=iteration
            )
    raise ConvergenceError(residual, max_iterations)


def policy_evaluation(mdp, policy):
    """Exact values of a deterministic policy by linear solve."""
    if mdp.discount_gamma >= 1:
        raise ValueError('policy evaluation requires discount_gamma < 1')
    policy = np.asarray(policy, dtype=int)
    states = np.arange(mdp.num_states)
    transition = mdp.transition[states, policy]
    reward = np.einsum('ij,ij->i', transition, mdp.reward[states, policy])
    return np.linalg.solve(np.eye(mdp.num_states) - mdp.discount_gamma * transition, reward)


def enumerate_optimal_values(mdp):
    """Optimal values by evaluating every deterministic policy."""
    best = np.full(mdp.num_states, -np.inf)
    for policy in itertools.product(range(mdp.num_actions), repeat=mdp.num_states):
        best = np.maximum(best, policy_evaluation(mdp, policy))
    return best


def shape_mdp(mdp, potential, shaping_lambda):
    """Add lambda * (gamma * d(s') - d(s)) to every transition reward."""
    values = potential.values
    if values.shape != (mdp.num_states,):
        raise ValueError('potential has {} entries, mdp has {} states'.format(
            values.shape[0], mdp.num_states))
    bonus = mdp.discount_gamma * values[None, None, :] - values[:, None, None]
    return TabularMDP(
        transition=mdp.transition,
        reward=mdp.reward + shaping_lambda * bonus,
        discount_gamma=mdp.discount_gamma,
        terminal_mask=mdp.terminal_mask
    )


def certify_invariance(mdp, potential, shaping_lambda, tol, tie_epsilon=TIE_EPSILON):
    """Solve M and the shaped MDP and compare optimal actions and Q-values."""
    start = time.time()
    shaped = shape_mdp(mdp, potential, shaping_lambda)
    original = value_iteration(mdp, tol, tie_epsilon=tie_epsilon)
    transformed = value_iteration(shaped, tol, tie_epsilon=tie_epsilon)
    differing = [s for s, (a, b) in enumerate(zip(original.action_sets, transformed.action_sets)) if a != b]
    expected = original.q_values - shaping_lambda * potential.values[:, None]
    residual = float(np.max(np.abs(transformed.q_values - expected)))
    LOGGER.debug("certified %d-state mdp (lambda=%.3f) in %.3f seconds, residual %.2e",
                 mdp.num_states, shaping_lambda, time.time() - start, residual)
    return InvarianceReport(
        action_sets=original.action_sets,
        shaped_action_sets=transformed.action_sets,
        equal=not differing,
        q_residual=residual,
        shaping_lambda=shaping_lambda,
        differing_states=differing
    )


def random_mdp(num_states, num_actions, discount_gamma, rng, num_terminal=0):
    """Random MDP: flat-Dirichlet rows, rewards uniform in [-1, 1].

    The last num_terminal states are absorbing with zero reward.
    """
    transition = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    reward = rng.uniform(-1.0, 1.0, size=(num_states, num_actions, num_states))
    terminal_mask = np.zeros(num_states, dtype=bool)
    for state in range(num_states - num_terminal, num_states):
        terminal_mask[state] = True
        transition[state] = 0.0
        transition[state, :, state] = 1.0
        reward[state] = 0.0
    # rows must sum to 1 within ROW_TOLERANCE
    transition /= transition.sum(axis=2, keepdims=True)
    return TabularMDP(transition, reward, discount_gamma, terminal_mask)
