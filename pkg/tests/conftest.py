"""Shared independent oracles for the test suite.

Every oracle here is a deliberately literal implementation (nested loops,
exhaustive enumeration, library quadrature) kept separate from the code
paths it checks.
"""

import itertools
import math

import numpy as np
import pytest


def hamiltonian_oracle(x, coupling):
    """Term-by-term -x'Jx with explicit double loop."""
    d = len(x)
    acc = 0.0
    for i in range(d):
        for j in range(d):
            acc += float(x[i]) * coupling[i][j] * float(x[j])
    return -acc


def boltzmann_pmf_oracle(coupling):
    """Literal nested-loop pmf over {0,1}^d (matches bit-i state indexing)."""
    d = len(coupling)
    weights = []
    for state in itertools.product([0, 1], repeat=d):
        x = state  # index s has x_i = (s >> i) & 1: product varies last axis
        energy = 0.0
        for i in range(d):
            for j in range(d):
                energy += x[i] * coupling[i][j] * x[j]
        weights.append(math.exp(energy))
    # itertools.product counts the *first* coordinate slowest; re-order so
    # entry s corresponds to x_i = (s >> i) & 1
    pmf = np.zeros(2**d)
    for idx, state in enumerate(itertools.product([0, 1], repeat=d)):
        s = sum(b << i for i, b in enumerate(state))
        pmf[s] = weights[idx]
    z = pmf.sum()
    return pmf / z, z


def moments_oracle(pmf, states):
    """Direct summation E[X_i X_j] over explicit states."""
    d = states.shape[1]
    m = np.zeros((d, d))
    for p, x in zip(pmf, states):
        for i in range(d):
            for j in range(d):
                m[i, j] += p * x[i] * x[j]
    return m


def total_variation(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def random_symmetric(rng, d, scale=1.0):
    a = rng.uniform(-scale, scale, size=(d, d))
    return 0.5 * (a + a.T)


def dg_exact_pmf_oracle(model, abseps=1e-9):
    """All 2^d orthant probabilities of the latent Gaussian via the
    library multivariate-normal integrator (test-side oracle only)."""
    from scipy.stats import multivariate_normal

    d = model.dimension
    pmf = np.zeros(2**d)
    for s in range(2**d):
        x = [(s >> i) & 1 for i in range(d)]
        lower = np.array([0.0 if b else -np.inf for b in x])
        upper = np.array([np.inf if b else 0.0 for b in x])
        pmf[s] = multivariate_normal.cdf(
            upper, mean=model.thresholds, cov=model.latent_corr,
            allow_singular=True, lower_limit=lower,
            abseps=abseps, releps=0.0,
        )
    return pmf / pmf.sum()


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
