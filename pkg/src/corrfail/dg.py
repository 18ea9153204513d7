"""Dichotomized Gaussian surrogate: fit, sampling, and pmf estimation.

The surrogate thresholds a latent Gaussian vector at zero,

    X = 1{Z >= 0},  Z ~ N(gamma, Lambda),  Lambda_ii = 1,

which reproduces any feasible set of Bernoulli means and pairwise
covariances: the thresholds are gamma_i = PhiInv(mu_i) and each latent
correlation solves

    Psi(gamma_i, gamma_j; lambda) = Phi2(gamma_i, gamma_j; lambda)
                                    - Phi(gamma_i) Phi(gamma_j) = Sigma_ij,

a monotone one-dimensional root found by bisection.  Pairwise roots do
not guarantee a jointly valid matrix, so the assembled latent correlation
is repaired by eigenvalue clipping (with the distortion logged) before a
Cholesky factor is taken for sampling.

The bivariate normal CDF kernel follows Drezner & Wesolowsky (1989) as
refined by Genz: fixed-order Gauss-Legendre quadrature on the arcsine-
transformed correlation integral for |rho| <= 0.925 and the asymptotic
split for larger |rho|; absolute accuracy is well below the 5e-11 target
everywhere (checked against slow high-precision quadrature oracles in the
test suite).
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from . import core
from ._rng import spawn_rng
from .core import frechet_band
from .errors import DimensionError, FeasibilityError, NumericalError
from .fileio import dump_json, load_json, load_matrix_csv, load_vector_csv, \
    save_matrix_csv, save_vector_csv

_TWO_PI = 2.0 * np.pi

# 20-point Gauss-Legendre rule on (-1, 1), stored as half nodes/weights.
_GL_X = np.array([
    0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
    0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
    0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
    0.07652652113349733,
])
_GL_W = np.array([
    0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
    0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
    0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
    0.1527533871307259,
])
_NODES = np.concatenate([1.0 - _GL_X, 1.0 + _GL_X])
_WEIGHTS = np.concatenate([_GL_W, _GL_W])

# Rows of latent draws per block when sampling (bounds peak memory while
# keeping the stream layout a pure function of the model dimension).
_SAMPLE_BLOCK_VALUES = 1 << 21


def _bvnu_moderate(h, k, r):
    """Upper-orthant probability for |r| <= 0.925 (vectorized)."""
    hk = h * k
    hs = 0.5 * (h * h + k * k)
    asr = 0.5 * np.arcsin(r)
    sn = np.sin(asr[..., None] * _NODES)
    integrand = np.exp((sn * hk[..., None] - hs[..., None]) / (1.0 - sn * sn))
    return integrand @ _WEIGHTS * asr / _TWO_PI + ndtr(-h) * ndtr(-k)


def _bvnu_tail(h, k, r):
    """Upper-orthant probability for 0.925 < |r| < 1 (vectorized).

    Splits off the analytically integrable part of the boundary layer at
    the comonotone limit and quadratures the smooth remainder.
    """
    neg = r < 0.0
    hk = h * k
    k = np.where(neg, -k, k)
    hk = np.where(neg, -hk, hk)

    a2 = (1.0 - r) * (1.0 + r)
    a = np.sqrt(a2)
    bs = (h - k) ** 2
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 80.0
    asr = -0.5 * (bs / a2 + hk)
    bvn = np.where(
        asr > -100.0,
        a * np.exp(asr) * (1.0 - c * (bs - a2) * (1.0 - d * bs) / 3.0
                           + c * d * a2 * a2),
        0.0,
    )
    b = np.sqrt(bs)
    sp = np.sqrt(_TWO_PI) * ndtr(-b / a)
    bvn = bvn - np.where(
        hk > -100.0,
        np.exp(-0.5 * hk) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0),
        0.0,
    )
    xs = (0.5 * a[..., None] * _NODES) ** 2
    asr = -0.5 * (bs[..., None] / xs + hk[..., None])
    rs = np.sqrt(1.0 - xs)
    ep = np.exp(-0.5 * hk[..., None] * xs / (1.0 + rs) ** 2) / rs
    sp = 1.0 + c[..., None] * xs * (1.0 + 5.0 * d[..., None] * xs)
    terms = np.where(asr > -100.0, np.exp(asr) * (ep - sp), 0.0)
    bvn = bvn + 0.5 * a * (terms @ _WEIGHTS)
    bvn = -bvn / _TWO_PI

    pos = bvn + ndtr(-np.maximum(h, k))
    upper_neg = np.maximum(0.0, ndtr(k) - ndtr(h))
    return np.where(neg, -bvn + upper_neg, pos)


def _bvnu(h, k, r):
    """P(X > h, Y > k) for a standard bivariate normal with correlation r."""
    out = np.empty(h.shape)

    inf_pos = np.isposinf(h) | np.isposinf(k)
    h_ninf = np.isneginf(h)
    k_ninf = np.isneginf(k)
    comono = np.abs(r) == 1.0
    finite = ~(inf_pos | h_ninf | k_ninf)

    out[inf_pos] = 0.0
    np.copyto(out, ndtr(-k), where=h_ninf & ~inf_pos)
    np.copyto(out, ndtr(-h), where=k_ninf & ~inf_pos & ~h_ninf)
    np.copyto(out, 1.0, where=h_ninf & k_ninf)

    m = finite & comono
    if m.any():
        up = ndtr(-np.maximum(h[m], k[m]))
        lo = np.maximum(0.0, 1.0 - ndtr(h[m]) - ndtr(k[m]))
        out[m] = np.where(r[m] > 0.0, up, lo)

    m = finite & ~comono & (np.abs(r) <= 0.925)
    if m.any():
        out[m] = _bvnu_moderate(h[m], k[m], r[m])
    m = finite & ~comono & (np.abs(r) > 0.925)
    if m.any():
        out[m] = _bvnu_tail(h[m], k[m], r[m])
    return np.clip(out, 0.0, 1.0)


def bvn_cdf(h, k, rho):
    """Standard bivariate normal CDF P(X <= h, Y <= k) with correlation rho.

    Fully vectorized over broadcastable inputs; infinite limits and
    rho = +-1 are handled analytically.
    """
    h, k, rho = np.broadcast_arrays(
        np.asarray(h, dtype=np.float64),
        np.asarray(k, dtype=np.float64),
        np.asarray(rho, dtype=np.float64),
    )
    if np.any(np.abs(rho) > 1.0):
        raise ValueError("correlation must lie in [-1, 1]")
    scalar = h.ndim == 0
    res = _bvnu(-np.atleast_1d(h), -np.atleast_1d(k), np.atleast_1d(rho))
    return float(res[0]) if scalar else res.reshape(h.shape)


def latent_cross_cov(h, k, lam):
    """Psi(h, k; lambda): covariance of the thresholded pair as a function
    of the latent correlation; monotone increasing in lambda."""
    return bvn_cdf(h, k, lam) - ndtr(h) * ndtr(k)


@dataclass(frozen=True)
class RepairLog:
    """Record of the eigenvalue clipping applied to a latent correlation."""

    applied: bool = False
    min_eig_before: float = 0.0
    max_abs_change: float = 0.0
    cholesky_jitter: float = 0.0

    def to_dict(self):
        return {
            "applied": bool(self.applied),
            "min_eig_before": float(self.min_eig_before),
            "max_abs_change": float(self.max_abs_change),
            "cholesky_jitter": float(self.cholesky_jitter),
        }


@dataclass(frozen=True)
class DGModel:
    """Fitted dichotomized Gaussian: thresholds, latent correlation, factor."""

    thresholds: np.ndarray
    latent_corr: np.ndarray
    factor: np.ndarray
    repair_log: RepairLog

    @property
    def dimension(self):
        return self.thresholds.size

    @property
    def means(self):
        return ndtr(self.thresholds)


def repair_psd(matrix):
    """Clip negative eigenvalues and rescale back to unit diagonal.

    Returns (repaired matrix, RepairLog).  Already-PSD input is returned
    unchanged with an empty log.  Single pass: clip at zero, reconstruct,
    then symmetric diagonal rescale; the log records how much the entries
    moved so callers can judge the distortion.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError("repair_psd expects a square matrix")
    if not np.allclose(a, a.T, atol=1e-12, rtol=0.0):
        raise ValueError("repair_psd expects a symmetric matrix")
    if not np.allclose(np.diag(a), 1.0, atol=1e-12, rtol=0.0):
        raise ValueError("repair_psd expects a unit diagonal")
    eigvals = np.linalg.eigvalsh(a)
    min_eig = float(eigvals[0])
    if min_eig >= 0.0:
        return a.copy(), RepairLog(applied=False, min_eig_before=min_eig)
    w, v = np.linalg.eigh(a)
    b = (v * np.maximum(w, 0.0)) @ v.T
    scale = np.sqrt(np.diag(b))
    if np.any(scale <= 0.0):
        raise NumericalError("PSD repair produced a zero-variance component")
    repaired = b / np.outer(scale, scale)
    repaired = 0.5 * (repaired + repaired.T)
    np.fill_diagonal(repaired, 1.0)
    log = RepairLog(
        applied=True,
        min_eig_before=min_eig,
        max_abs_change=float(np.abs(repaired - a).max()),
    )
    return repaired, log


def _lower_factor(matrix):
    """Cholesky factor, escalating a diagonal jitter if the matrix is
    numerically semidefinite."""
    d = matrix.shape[0]
    for jitter in (0.0, 1e-12, 1e-10, 1e-8):
        try:
            return np.linalg.cholesky(matrix + jitter * np.eye(d)), jitter
        except np.linalg.LinAlgError:
            continue
    raise NumericalError("Cholesky factorization failed after PSD repair")


def fit_dg(constraints, psi_tol=1e-10, max_bisect=120):
    """Fit the surrogate to moment constraints.

    Thresholds come from the probit of the (clipped) means; each latent
    correlation is bisected on [-1, 1] until the thresholded covariance
    matches the target within ``psi_tol`` (bisection is safe because Psi
    is monotone in the latent correlation, and needs no derivative of the
    bivariate CDF).  Targets at the Frechet-Hoeffding endpoints map to
    latent correlations of exactly +-1.
    """
    mu = core.clip_means(constraints.means)
    d = mu.size
    gamma = ndtri(mu)
    if d == 1:
        lam = np.ones((1, 1))
        return DGModel(_ro(gamma), _ro(lam), _ro(np.ones((1, 1))), RepairLog())

    sig = np.sqrt(mu * (1.0 - mu))
    target = constraints.correlations * np.outer(sig, sig)

    rows, cols = np.triu_indices(d, 1)
    gh, gk = gamma[rows], gamma[cols]
    mh, mk = mu[rows], mu[cols]
    tgt = target[rows, cols]
    psi_hi = np.minimum(mh, mk) - mh * mk
    psi_lo = np.maximum(0.0, mh + mk - 1.0) - mh * mk

    bad = (tgt > psi_hi + 1e-12) | (tgt < psi_lo - 1e-12)
    if bad.any():
        violations = [
            core.FeasibilityViolation(
                int(rows[p]), int(cols[p]),
                float(tgt[p] + mh[p] * mk[p]),
                *frechet_band(float(mh[p]), float(mk[p])),
            )
            for p in np.flatnonzero(bad)
        ]
        raise FeasibilityError(
            "target covariances outside the attainable latent range:\n"
            + "\n".join(str(v) for v in violations),
            violations,
        )

    # lambda = 0 is exact for a zero target; band endpoints map to +-1
    lam_flat = np.zeros(tgt.size)
    zero = tgt == 0.0
    at_hi = (tgt >= psi_hi - psi_tol) & ~zero
    at_lo = (tgt <= psi_lo + psi_tol) & ~zero & ~at_hi
    lam_flat[at_hi] = 1.0
    lam_flat[at_lo] = -1.0
    solve = ~(zero | at_hi | at_lo)

    if solve.any():
        lo = np.full(solve.sum(), -1.0)
        hi = np.ones_like(lo)
        th, tk, tt = gh[solve], gk[solve], tgt[solve]
        mid = 0.5 * (lo + hi)
        for _ in range(max_bisect):
            mid = 0.5 * (lo + hi)
            val = latent_cross_cov(th, tk, mid)
            low = val < tt
            lo = np.where(low, mid, lo)
            hi = np.where(low, hi, mid)
            if np.max(np.abs(val - tt)) <= psi_tol:
                break
        resid = np.abs(latent_cross_cov(th, tk, mid) - tt)
        if resid.max() > psi_tol:
            raise NumericalError(
                f"latent correlation bisection stalled at residual "
                f"{resid.max():.3e} (> {psi_tol:.1e})"
            )
        lam_flat[solve] = mid

    lam = np.eye(d)
    lam[rows, cols] = lam_flat
    lam[cols, rows] = lam_flat

    repaired, log = repair_psd(lam)
    factor, jitter = _lower_factor(repaired)
    if jitter:
        log = RepairLog(log.applied, log.min_eig_before,
                        log.max_abs_change, jitter)
    return DGModel(_ro(gamma), _ro(repaired), _ro(factor), log)


def _ro(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _sample_block_rows(d):
    return max(1024, _SAMPLE_BLOCK_VALUES // d)


def sample_dg(model, n, seed):
    """n independent draws from the surrogate as an (n, d) uint8 array.

    Latent vectors are generated in fixed-size blocks from a single
    derived stream, so outputs are deterministic in (model, n, seed).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    d = model.dimension
    rng = spawn_rng(seed, "dg-sample")
    out = np.empty((n, d), dtype=np.uint8)
    block = _sample_block_rows(d)
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        eps = rng.standard_normal((hi - lo, d))
        z = model.thresholds + eps @ model.factor.T
        out[lo:hi] = z >= 0.0
    return out


@dataclass(frozen=True)
class PmfEstimate:
    """Monte Carlo estimate of one state's probability mass."""

    value: float
    std_error: float
    n: int
    resolution_floor: bool  # fewer than ~10 hits: treat the value as a bound


def dg_pmf_mc(model, x, n, seed):
    """Direct Monte Carlo estimate of q(x) = P(X = x) under the surrogate.

    Unbiased indicator average over n latent draws, with the binomial
    standard error.  Probabilities below ~10/n are flagged with a
    resolution-floor warning instead of switching to rare-event machinery.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x = core.as_states(x, model.dimension)
    if x.ndim != 1:
        raise DimensionError("dg_pmf_mc expects a single state vector")
    want = x.astype(bool)
    rng = spawn_rng(seed, "dg-pmf")
    d = model.dimension
    hits = 0
    block = _sample_block_rows(d)
    for lo in range(0, n, block):
        rows = min(block, n - lo)
        eps = rng.standard_normal((rows, d))
        z = model.thresholds + eps @ model.factor.T
        hits += int(((z >= 0.0) == want).all(axis=1).sum())
    p = hits / n
    se = float(np.sqrt(p * (1.0 - p) / n))
    return PmfEstimate(p, se, n, resolution_floor=(hits < 10))


def save_model(model, out_dir, provenance=None):
    """Write thresholds, latent correlation and descriptor to a directory."""
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_vector_csv(model.thresholds, out_dir / "gamma.csv")
    save_matrix_csv(model.latent_corr, out_dir / "lambda.csv")
    dump_json(
        {
            "kind": "dg",
            "dimension": int(model.dimension),
            "repair_log": model.repair_log.to_dict(),
            "provenance": provenance or {},
        },
        out_dir / "model.json",
    )


def load_model(in_dir):
    from pathlib import Path

    in_dir = Path(in_dir)
    desc = load_json(in_dir / "model.json")
    gamma = load_vector_csv(in_dir / "gamma.csv")
    lam = load_matrix_csv(in_dir / "lambda.csv")
    logd = desc.get("repair_log", {})
    factor, jitter = _lower_factor(lam)
    log = RepairLog(
        applied=bool(logd.get("applied", False)),
        min_eig_before=float(logd.get("min_eig_before", 0.0)),
        max_abs_change=float(logd.get("max_abs_change", 0.0)),
        cholesky_jitter=jitter,
    )
    return DGModel(_ro(gamma), _ro(lam), _ro(factor), log)
