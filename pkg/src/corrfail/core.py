"""Domain types and the exact enumeration oracle for small systems.

State convention, fixed repo-wide: a system of ``d`` components is
described by a binary vector in {0,1}^d where 1 means the component has
failed and 0 means it works.  The pairwise model is

    p(x) = exp(x' J x) / Z(J)

with a symmetric coupling matrix J whose diagonal carries the first-order
terms (x_i^2 = x_i for binary states).  Enumeration routines index the
2^d states by their integer encoding: state ``s`` has ``x_i = (s >> i) & 1``.

Everything here is deterministic and side-effect free; the enumeration
oracle grounds every stochastic estimator in the package.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, EnumerationCapError, FeasibilityError

# Exact enumeration is capped by the 2^d probability vector (8 MB of pmf at
# d=20, state blocks materialized in chunks); override per call if you can
# afford more.
ENUMERATION_CAP = 20

# Marginals are clipped to this range before logit / probit transforms.
MEAN_CLIP = 1e-9

_ENUM_BLOCK = 1 << 16


def _as_square(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be a square matrix, got shape {a.shape}")
    return a


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def frechet_band(mu_i, mu_j):
    """Attainable range [lo, hi] of E[X_i X_j] for Bernoulli marginals."""
    return max(0.0, mu_i + mu_j - 1.0), min(mu_i, mu_j)


@dataclass(frozen=True)
class FeasibilityViolation:
    """One pair whose implied cross-moment leaves the Frechet-Hoeffding band."""

    i: int
    j: int
    implied_moment: float
    lower: float
    upper: float

    def __str__(self):
        return (
            f"pair ({self.i}, {self.j}): implied E[XiXj] = {self.implied_moment:.6g} "
            f"outside [{self.lower:.6g}, {self.upper:.6g}]"
        )


def implied_second_moments(means, correlations):
    """Cross-moment matrix E[X X'] implied by means and Pearson correlations.

    E[X_i X_j] = rho_ij * sqrt(mu_i(1-mu_i) mu_j(1-mu_j)) + mu_i mu_j, with
    the diagonal equal to the means.  No feasibility checking is done here.
    """
    means = np.asarray(means, dtype=np.float64)
    correlations = np.asarray(correlations, dtype=np.float64)
    sig = np.sqrt(means * (1.0 - means))
    m = correlations * np.outer(sig, sig) + np.outer(means, means)
    np.fill_diagonal(m, means)
    return m


def feasibility_report(means, correlations, atol=1e-12):
    """List of Frechet-Hoeffding violations for a (means, correlations) pair.

    Empty list means every pair's implied second moment is attainable by
    some joint Bernoulli distribution.  ``atol`` absorbs float rounding at
    the band edges.
    """
    means = np.asarray(means, dtype=np.float64)
    correlations = _as_square(correlations, "correlations")
    if means.ndim != 1 or means.size != correlations.shape[0]:
        raise DimensionError(
            f"means length {means.size} does not match correlation dimension "
            f"{correlations.shape[0]}"
        )
    m = implied_second_moments(means, correlations)
    violations = []
    d = means.size
    for i in range(d):
        for j in range(i + 1, d):
            lo, hi = frechet_band(means[i], means[j])
            if m[i, j] < lo - atol or m[i, j] > hi + atol:
                violations.append(FeasibilityViolation(i, j, m[i, j], lo, hi))
    return violations


@dataclass(frozen=True)
class MomentConstraints:
    """Per-component failure probabilities plus pairwise Pearson correlations.

    This is the "current state of knowledge" consumed by every fitter.
    Construction validates shapes, ranges, symmetry (the correlation matrix
    is symmetrized exactly after an allclose check) and Frechet-Hoeffding
    feasibility of every pair; degenerate 0/1 means are accepted with a
    warning since downstream transforms clip them.
    """

    means: np.ndarray
    correlations: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64).reshape(-1)
        corr = _as_square(self.correlations, "correlations")
        d = means.size
        if d < 1:
            raise DimensionError("need at least one component")
        if corr.shape[0] != d:
            raise DimensionError(
                f"correlation matrix is {corr.shape[0]}x{corr.shape[0]} "
                f"but there are {d} means"
            )
        if np.any(means < 0.0) or np.any(means > 1.0):
            raise ValueError("failure probabilities must lie in [0, 1]")
        if np.any(means <= 0.0) or np.any(means >= 1.0):
            warnings.warn(
                "degenerate failure probability (0 or 1); transforms will clip",
                stacklevel=2,
            )
        if not np.allclose(corr, corr.T, atol=1e-12, rtol=0.0):
            raise ValueError("correlation matrix must be symmetric")
        corr = 0.5 * (corr + corr.T)
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12, rtol=0.0):
            raise ValueError("correlation matrix must have unit diagonal")
        np.fill_diagonal(corr, 1.0)
        if np.any(corr < -1.0 - 1e-12) or np.any(corr > 1.0 + 1e-12):
            raise ValueError("correlations must lie in [-1, 1]")
        violations = feasibility_report(means, corr)
        if violations:
            raise FeasibilityError(
                "infeasible moment constraints:\n"
                + "\n".join(str(v) for v in violations),
                violations,
            )
        object.__setattr__(self, "means", _frozen(means))
        object.__setattr__(self, "correlations", _frozen(corr))

    @property
    def dimension(self):
        return self.means.size

    def prefix(self, size):
        """Constraints of the nested subsystem made of components 0..size-1."""
        if not 1 <= size <= self.dimension:
            raise DimensionError(f"prefix size {size} outside 1..{self.dimension}")
        return MomentConstraints(self.means[:size], self.correlations[:size, :size])


@dataclass(frozen=True)
class IsingModel:
    """Pairwise maximum-entropy model p(x) = exp(x' J x) / Z(J).

    The coupling matrix is stored fully symmetric; asymmetric input is
    symmetrized on construction with a warning (the quadratic form only
    sees (A + A')/2, so this keeps the free-parameter count at
    (d^2 + d)/2 without changing the distribution).
    """

    coupling: np.ndarray

    def __post_init__(self):
        j = _as_square(self.coupling, "coupling")
        if not np.isfinite(j).all():
            raise ValueError("coupling matrix must be finite")
        if not np.array_equal(j, j.T):
            warnings.warn("asymmetric coupling symmetrized to (A + A')/2", stacklevel=2)
            j = 0.5 * (j + j.T)
        object.__setattr__(self, "coupling", _frozen(j))

    @property
    def dimension(self):
        return self.coupling.shape[0]

    @property
    def free_parameter_count(self):
        d = self.dimension
        return (d * d + d) // 2


@dataclass(frozen=True)
class SecondMomentMatrix:
    """Matrix of cross-moments E[X_i X_j]; the diagonal holds the means.

    Validated to be symmetric with diagonal in [0, 1] and off-diagonal
    entries inside the Frechet-Hoeffding band implied by the diagonal
    (with a small tolerance so empirical moment matrices, which satisfy
    the band exactly in real arithmetic, never fail on float rounding).
    """

    moments: np.ndarray
    _band_atol: float = field(default=1e-9, repr=False)

    def __post_init__(self):
        m = _as_square(self.moments, "moments")
        if not np.allclose(m, m.T, atol=1e-12, rtol=0.0):
            raise ValueError("second-moment matrix must be symmetric")
        m = 0.5 * (m + m.T)
        mu = np.diag(m)
        if np.any(mu < -1e-12) or np.any(mu > 1.0 + 1e-12):
            raise ValueError("diagonal moments must lie in [0, 1]")
        d = m.shape[0]
        atol = self._band_atol
        for i in range(d):
            for j in range(i + 1, d):
                lo, hi = frechet_band(mu[i], mu[j])
                if m[i, j] < lo - atol or m[i, j] > hi + atol:
                    raise FeasibilityError(
                        f"second moment ({i},{j}) = {m[i, j]:.6g} outside "
                        f"Frechet-Hoeffding band [{lo:.6g}, {hi:.6g}]",
                        [FeasibilityViolation(i, j, m[i, j], lo, hi)],
                    )
        object.__setattr__(self, "moments", _frozen(m))

    @property
    def dimension(self):
        return self.moments.shape[0]

    @property
    def means(self):
        return np.diag(self.moments)


def as_states(x, dimension=None):
    """Validate and convert state input to a uint8 array of 0/1 values.

    Accepts a single state vector or a (n, d) batch; rejects anything that
    is not exactly 0 or 1.
    """
    arr = np.asarray(x)
    if arr.ndim not in (1, 2):
        raise DimensionError(f"states must be 1-D or 2-D, got ndim={arr.ndim}")
    vals = np.unique(arr)
    if not np.isin(vals, (0, 1)).all():
        raise ValueError("state entries must be exactly 0 or 1")
    if dimension is not None and arr.shape[-1] != dimension:
        raise DimensionError(
            f"state length {arr.shape[-1]} does not match dimension {dimension}"
        )
    return arr.astype(np.uint8)


def hamiltonian(x, model):
    """Energy H(x) = -x' J x of a state under the model.

    The Boltzmann weight of the state is exp(-H(x)).
    """
    x = as_states(x, model.dimension)
    if x.ndim != 1:
        raise DimensionError("hamiltonian expects a single state vector")
    xf = x.astype(np.float64)
    return float(-(xf @ model.coupling @ xf))


def _check_cap(d, cap):
    cap = ENUMERATION_CAP if cap is None else int(cap)
    if d > cap:
        raise EnumerationCapError(
            f"dimension {d} exceeds enumeration cap {cap} (2^d states); "
            "raise the cap explicitly if you can afford the memory"
        )


def enumerate_states(d, start=0, stop=None):
    """All (or a contiguous block of) states of a d-component system.

    Row ``s`` encodes the state with ``x_i = (s >> i) & 1``.
    """
    stop = (1 << d) if stop is None else stop
    idx = np.arange(start, stop, dtype=np.uint64)
    return ((idx[:, None] >> np.arange(d, dtype=np.uint64)) & 1).astype(np.uint8)


def _state_energies(model):
    """Energies x' J x for every state, computed in blocks."""
    d = model.dimension
    n = 1 << d
    j = model.coupling
    energies = np.empty(n, dtype=np.float64)
    for lo in range(0, n, _ENUM_BLOCK):
        hi = min(lo + _ENUM_BLOCK, n)
        s = enumerate_states(d, lo, hi).astype(np.float64)
        energies[lo:hi] = np.einsum("ij,jk,ik->i", s, j, s)
    return energies


def enumerate_pmf(model, cap=None):
    """Exact pmf over all 2^d states and the partition value Z.

    Returns (pmf, z).  The pmf is normalized in log space, so it is exact
    to rounding even when individual Boltzmann weights overflow; in such
    cases ``z`` may be ``inf`` while the pmf stays finite (use
    :func:`log_partition_exact` when you need the log of Z).
    """
    _check_cap(model.dimension, cap)
    e = _state_energies(model)
    m = e.max()
    w = np.exp(e - m)
    total = w.sum()
    pmf = w / total
    z = float(np.exp(m + np.log(total)))
    return pmf, z


def log_partition_exact(model, cap=None):
    """ln Z(J) = ln sum_x exp(x' J x) by exact enumeration."""
    _check_cap(model.dimension, cap)
    e = _state_energies(model)
    m = e.max()
    return float(m + np.log(np.exp(e - m).sum()))


def moments_from_pmf(pmf, states):
    """Second-moment matrix E[X X'] of a pmf over explicitly listed states."""
    pmf = np.asarray(pmf, dtype=np.float64)
    states = np.asarray(states)
    if pmf.ndim != 1 or states.ndim != 2 or states.shape[0] != pmf.size:
        raise DimensionError(
            f"pmf length {pmf.size} does not match {states.shape[0]} states"
        )
    if abs(pmf.sum() - 1.0) > 1e-9:
        raise ValueError(f"pmf sums to {pmf.sum():.12g}, expected 1")
    d = states.shape[1]
    m = np.zeros((d, d), dtype=np.float64)
    for lo in range(0, pmf.size, _ENUM_BLOCK):
        hi = min(lo + _ENUM_BLOCK, pmf.size)
        s = states[lo:hi].astype(np.float64)
        m += (s * pmf[lo:hi, None]).T @ s
    m = 0.5 * (m + m.T)
    return SecondMomentMatrix(m)


def exact_moments(model, cap=None):
    """E[X X'] under the model, by exact enumeration (blocked for memory)."""
    _check_cap(model.dimension, cap)
    d = model.dimension
    n = 1 << d
    e = _state_energies(model)
    m = e.max()
    w = np.exp(e - m)
    w /= w.sum()
    mom = np.zeros((d, d), dtype=np.float64)
    for lo in range(0, n, _ENUM_BLOCK):
        hi = min(lo + _ENUM_BLOCK, n)
        s = enumerate_states(d, lo, hi).astype(np.float64)
        mom += (s * w[lo:hi, None]).T @ s
    mom = 0.5 * (mom + mom.T)
    return SecondMomentMatrix(mom)


def constraints_to_second_moments(c):
    """Convert Pearson-form constraints to the cross-moment form.

    E[X_i X_j] = rho_ij sqrt(mu_i(1-mu_i) mu_j(1-mu_j)) + mu_i mu_j with the
    means on the diagonal.  Raises FeasibilityError naming the offending
    pair and band if the input violates the Frechet-Hoeffding bounds.
    """
    violations = feasibility_report(c.means, c.correlations)
    if violations:
        raise FeasibilityError(
            "constraints imply unattainable second moments:\n"
            + "\n".join(str(v) for v in violations),
            violations,
        )
    return SecondMomentMatrix(implied_second_moments(c.means, c.correlations))


def second_moments_to_constraints(m):
    """Inverse of :func:`constraints_to_second_moments`.

    Pairs involving a degenerate marginal (variance 0) get correlation 0.
    """
    mom = m.moments
    mu = np.diag(mom).copy()
    sig = np.sqrt(mu * (1.0 - mu))
    denom = np.outer(sig, sig)
    cov = mom - np.outer(mu, mu)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.where(denom > 0.0, cov / np.where(denom > 0.0, denom, 1.0), 0.0)
    np.fill_diagonal(corr, 1.0)
    corr = np.clip(corr, -1.0, 1.0)
    return MomentConstraints(mu, corr)


def clip_means(mu):
    """Clip probabilities into [MEAN_CLIP, 1 - MEAN_CLIP] before transforms."""
    mu = np.asarray(mu, dtype=np.float64)
    return np.clip(mu, MEAN_CLIP, 1.0 - MEAN_CLIP)
