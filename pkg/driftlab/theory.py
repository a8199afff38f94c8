"""Numerical checks of the KL-regularized objective on discrete supports.

A discrete bandit stands in for the x_0 space of a single prompt:
J(pi) = E_pi[r] - beta * KL(pi || pi_ref), maximized by
pi*(x) = pi_ref(x) exp(r(x) / beta) / Z.
"""
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp, softmax

from driftlab.mdp import DenoisingMDPSpec, PotentialFunction, certify_invariance, random_mdp
from driftlab.mechanisms import telescoping_check
from driftlab.policy import GaussianChainPolicy, PromptEmbedding, log_prob_grad, sample_trajectory
from driftlab.util import derive_seed, finite_difference, make_rng, relative_error


LOGGER = logging.getLogger(__name__)
PROB_TOLERANCE = 1e-9
ASCENT_TOL = 1e-6
ASCENT_MAX_ITERATIONS = 10000
MONOTONE_SLACK = 1e-12
DEFAULT_BETAS = tuple(np.logspace(0, -3, 7))


class AscentError(RuntimeError):
    """Gradient ascent did not reach the closed form."""

    def __init__(self, message, distance, iterations):
        super().__init__(message)
        self.distance = distance
        self.iterations = iterations


@dataclass(frozen=True)
class DiscreteBandit:
    """Reference distribution, rewards and KL weight over m outcomes."""
    ref_probs: np.ndarray
    rewards: np.ndarray
    beta: float

    def __post_init__(self):
        ref_probs = np.asarray(self.ref_probs, dtype=float)
        rewards = np.asarray(self.rewards, dtype=float)
        if ref_probs.ndim != 1 or ref_probs.shape != rewards.shape:
            raise ValueError('ref_probs and rewards must be vectors of equal length')
        if np.any(ref_probs <= 0):
            raise ValueError('ref_probs must be strictly positive')
        if abs(ref_probs.sum() - 1.0) > PROB_TOLERANCE:
            raise ValueError('ref_probs must sum to 1')
        if not np.all(np.isfinite(rewards)):
            raise ValueError('rewards must be finite')
        if self.beta < 0:
            raise ValueError('beta must be non-negative')
        object.__setattr__(self, 'ref_probs', ref_probs)
        object.__setattr__(self, 'rewards', rewards)

    @property
    def size(self):
        """m."""
        return len(self.rewards)


@dataclass
class AscentReport:
    """Outcome of the softmax ascent."""
    probs: np.ndarray
    closed_form: np.ndarray
    distance: float
    iterations: int
    objective_gap: float

    def to_dict(self):
        """Serialize."""
        return dict(distance=self.distance, iterations=self.iterations, objective_gap=self.objective_gap)


@dataclass
class DiracSweep:
    """Mass at the reward maximizer along a decreasing beta sequence."""
    betas: list
    masses: list
    ratios: list
    argmax: int
    monotone: bool = field(default=True)


def random_bandit(num_outcomes, beta, rng, uniform_ref=False):
    """Flat-Dirichlet (or uniform) reference, rewards uniform in [-1, 1]."""
    if uniform_ref:
        ref_probs = np.full(num_outcomes, 1.0 / num_outcomes)
    else:
        ref_probs = rng.dirichlet(np.ones(num_outcomes))
        ref_probs /= ref_probs.sum()
    return DiscreteBandit(ref_probs, rng.uniform(-1.0, 1.0, num_outcomes), beta)


def total_variation(left, right):
    """Total variation distance."""
    return float(0.5 * np.sum(np.abs(np.asarray(left) - np.asarray(right))))


def optimal_policy_closed_form(bandit):
    """pi* and log Z, stabilized by log-sum-exp."""
    if bandit.beta <= 0:
        raise ValueError('closed form requires beta > 0')
    logits = np.log(bandit.ref_probs) + bandit.rewards / bandit.beta
    log_partition = float(logsumexp(logits))
    return np.exp(logits - log_partition), log_partition


def objective(bandit, probs):
    """J(pi) = E_pi[r] - beta KL(pi || pi_ref)."""
    probs = np.asarray(probs, dtype=float)
    support = probs > 0
    kl = np.sum(probs[support] * np.log(probs[support] / bandit.ref_probs[support]))
    return float(np.dot(probs, bandit.rewards) - bandit.beta * kl)


def _check_positive(probs):
    probs = np.asarray(probs, dtype=float)
    if np.any(probs <= 0):
        raise ValueError('policy probabilities must be strictly positive')
    return probs


def gradient_decomposition(bandit, policy_probs):
    """Softmax-logit gradient of J split into reward pull and diversity push-back.

    With logits theta = log pi, E_pi[grad log pi * f] = pi * (f - E_pi[f]).
    The score term of the KL's own dependence vanishes in expectation, so
    total is the full gradient.
    """
    probs = _check_positive(policy_probs)

    def expect_score(values):
        return probs * (values - np.dot(probs, values))

    reward_pull = expect_score(bandit.rewards)
    diversity_pushback = bandit.beta * expect_score(np.log(probs / bandit.ref_probs))
    return reward_pull, diversity_pushback, reward_pull - diversity_pushback


def objective_grad(bandit, logits):
    """Gradient of J(softmax(logits))."""
    return gradient_decomposition(bandit, softmax(logits))[2]


def verify_optimum_by_ascent(bandit, tol=ASCENT_TOL, max_iterations=ASCENT_MAX_ITERATIONS):
    """Maximize J over softmax logits from pi_ref and compare to the closed form."""
    if tol <= 0:
        raise ValueError('tol must be positive')
    closed_form, _ = optimal_policy_closed_form(bandit)
    start = np.log(bandit.ref_probs)
    result = minimize(
        lambda logits: -objective(bandit, softmax(logits)),
        start,
        jac=lambda logits: -objective_grad(bandit, logits),
        method='BFGS',
        options=dict(gtol=1e-12, maxiter=max_iterations)
    )
    probs = softmax(result.x)
    distance = total_variation(probs, closed_form)
    if distance > tol:
        raise AscentError('ascent stopped {:.3e} from the closed form ({})'.format(
            distance, result.message), distance, int(result.nit))
    return AscentReport(
        probs=probs,
        closed_form=closed_form,
        distance=distance,
        iterations=int(result.nit),
        objective_gap=objective(bandit, closed_form) - objective(bandit, probs)
    )


def fixed_point_residual(bandit):
    """Sup-norm gradient of J at the closed-form optimum."""
    closed_form, _ = optimal_policy_closed_form(bandit)
    return float(np.max(np.abs(gradient_decomposition(bandit, closed_form)[2])))


def dirac_limit_sweep(bandit, betas=DEFAULT_BETAS):
    """pi*_beta(x*) along a decreasing beta sequence, with the runner-up ratio."""
    betas = [float(b) for b in betas]
    if not betas or any(b <= 0 for b in betas):
        raise ValueError('betas must be positive')
    if any(b <= a for a, b in zip(betas[1:], betas)):
        raise ValueError('betas must be strictly decreasing')
    best = np.max(bandit.rewards)
    maximizers = np.flatnonzero(bandit.rewards == best)
    if len(maximizers) > 1:
        raise ValueError('reward maximizer is not unique ({} tied outcomes); '
                         'tied maxima are rejected, not resolved'.format(len(maximizers)))
    argmax = int(maximizers[0])
    masses, ratios = [], []
    for beta in betas:
        probs, _ = optimal_policy_closed_form(replace(bandit, beta=beta))
        masses.append(float(probs[argmax]))
        others = np.delete(probs, argmax)
        ratios.append(float(others.max() / probs[argmax]) if others.size else 0.0)
    monotone = all(b >= a - MONOTONE_SLACK for a, b in zip(masses, masses[1:]))
    return DiracSweep(betas, masses, ratios, argmax, monotone)


def _check(passed, residual, cases, start, **extra):
    return dict(extra, passed=bool(passed), residual=float(residual), cases=cases,
                seconds=round(time.time() - start, 3))


def check_shaping_invariance(rng, cases=200, tol=1e-10):
    """Optimal action sets of random MDPs survive potential shaping."""
    start = time.time()
    equal = 0
    residual = 0.0
    lambdas = (-2.0, 0.0, 0.5, 2.0)
    for case in range(cases):
        mdp = random_mdp(int(rng.integers(1, 21)), int(rng.integers(1, 6)),
                         float(rng.choice((0.5, 0.9, 0.99))), rng)
        potential = PotentialFunction(rng.uniform(-1.0, 1.0, mdp.num_states))
        report = certify_invariance(mdp, potential, lambdas[case % len(lambdas)], tol)
        equal += report.equal
        residual = max(residual, report.q_residual)
    return _check(equal == cases and residual <= 1e-8, residual, cases, start, equal=equal)


def check_telescoping(rng, cases=1000):
    """Stepwise shaping sums collapse to gamma^T d(x_0) - d(x_T)."""
    start = time.time()
    residual = 0.0
    for _ in range(cases):
        potentials = rng.uniform(-1.0, 1.0, int(rng.integers(1, 51)) + 1)
        stepwise, closed_form = telescoping_check(potentials, float(rng.uniform(1e-3, 1.0)))
        residual = max(residual, abs(stepwise - closed_form))
    return _check(residual <= 1e-12, residual, cases, start)


def check_closed_form(rng, cases=50):
    """Softmax ascent lands on pi* within total variation 1e-6."""
    start = time.time()
    residual = 0.0
    failures = 0
    for _ in range(cases):
        bandit = random_bandit(int(rng.integers(2, 11)), float(rng.uniform(0.25, 2.0)), rng)
        try:
            residual = max(residual, verify_optimum_by_ascent(bandit).distance)
        except AscentError as error:
            LOGGER.warning("ascent failed: %s", error)
            residual = max(residual, error.distance)
            failures += 1
    return _check(failures == 0, residual, cases, start, failures=failures)


def check_dirac_limit(rng, cases=100):
    """Mass at the maximizer grows monotonically and exceeds 0.999 at beta = 1e-3."""
    start = time.time()
    worst = 1.0
    monotone = True
    for _ in range(cases):
        size = int(rng.integers(2, 11))
        rewards = rng.uniform(-1.0, 1.0, size)
        top = int(np.argmax(rewards))
        runner_up = np.max(np.delete(rewards, top))
        rewards[top] = max(rewards[top], runner_up + 0.1)
        bandit = DiscreteBandit(np.full(size, 1.0 / size), rewards, 1.0)
        sweep = dirac_limit_sweep(bandit)
        monotone = monotone and sweep.monotone
        worst = min(worst, sweep.masses[-1])
    return _check(monotone and worst > 0.999, 1.0 - worst, cases, start, monotone=monotone)


def check_discrete_gradients(rng, cases=100):
    """Push-back decomposition matches central differences of J."""
    start = time.time()
    residual = 0.0
    for _ in range(cases):
        bandit = random_bandit(int(rng.integers(2, 11)), float(rng.uniform(0.0, 2.0)), rng)
        logits = rng.standard_normal(bandit.size)
        expected = finite_difference(lambda z, b=bandit: objective(b, softmax(z)), logits)
        residual = max(residual, relative_error(objective_grad(bandit, logits), expected))
    return _check(residual <= 1e-6, residual, cases, start)


def check_policy_gradients(rng, cases=100):
    """Chain log-probability gradients match central differences."""
    start = time.time()
    residual = 0.0
    for case in range(cases):
        spec = DenoisingMDPSpec(horizon=int(rng.integers(1, 4)), state_dim=2, prompt_dim=2)
        policy = GaussianChainPolicy(spec, num_fourier_features=3, feature_seed=case)
        policy = policy.with_params(0.3 * rng.standard_normal(policy.params.shape))
        prompt = PromptEmbedding(rng.standard_normal(spec.prompt_dim), 0)
        traj = sample_trajectory(policy, prompt, derive_seed(case))
        expected = finite_difference(lambda p, pol=policy, t=traj: np.sum(pol.with_params(p).log_probs(t)),
                                     policy.params)
        residual = max(residual, relative_error(log_prob_grad(policy, traj), expected))
    return _check(residual <= 1e-4, residual, cases, start)


def run_verification_suite(seed=0):
    """Run every theory check; returns a JSON-ready pass/fail report."""
    start = time.time()
    checks = {}
    for index, (name, check) in enumerate((
            ('shaping_invariance', check_shaping_invariance),
            ('telescoping', check_telescoping),
            ('closed_form', check_closed_form),
            ('dirac_limit', check_dirac_limit),
            ('discrete_gradients', check_discrete_gradients),
            ('policy_gradients', check_policy_gradients)
    )):
        checks[name] = check(make_rng(derive_seed(seed, index)))
        LOGGER.info("[verify] %s: %s (residual %.2e)", name,
                    'pass' if checks[name]['passed'] else 'FAIL', checks[name]['residual'])
    passed = all(c['passed'] for c in checks.values())
    LOGGER.info("verification suite finished in %.2f seconds", time.time() - start)
    return dict(seed=seed, passed=passed, checks=checks)
