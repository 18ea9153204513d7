"""Gibbs sampling from the pairwise model and coupling identification.

Two fitting routes are provided:

* :func:`fit_ml` — maximum-likelihood moment matching.  Each step moves the
  coupling along the moment residual, ``J <- J + eta * (M_target - M_model)``,
  which increases the likelihood because the log-likelihood gradient with
  respect to J is exactly ``N (M_target - M_model)``.  The model moments are
  computed by exact enumeration when the dimension allows it (removing all
  Monte Carlo noise from the optimizer) and by Gibbs sampling otherwise.
* :func:`fit_cd` — contrastive divergence from raw samples: chains restart
  at the data every iteration and advance ``cd_steps`` full sweeps; the
  resulting n-step moments stand in for the equilibrium moments.  Cheaper
  and biased; the bias caveat is attached to the report.
"""

import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit, logit

from . import core
from ._gibbs import advance_batch, run_chain
from ._rng import spawn_rng, spawn_seed
from .core import IsingModel, SecondMomentMatrix, as_states
from .errors import (
    DegenerateMarginalError,
    DimensionError,
    NumericalError,
)

SCAN_MODES = ("sequential", "random-site")

CD_BIAS_CAVEAT = (
    "contrastive divergence matches n-step chain moments rather than "
    "equilibrium moments; the fitted coupling is biased toward the data"
)


@dataclass(frozen=True)
class GibbsConfig:
    """Settings for one Gibbs sampling run.

    ``burn_in`` initial full sweeps are discarded, then one state is
    retained every ``thinning`` sweeps until ``n_samples`` states are
    collected.  With ``n_chains > 1`` the sample budget is split across
    independent chains (each with its own burn-in and a sub-seed derived
    from (seed, chain index)); outputs are concatenated in chain order, so
    results do not depend on scheduling.
    """

    n_samples: int
    burn_in: int = 0
    thinning: int = 1
    scan: str = "sequential"
    seed: int = 0
    n_chains: int = 1

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.scan not in SCAN_MODES:
            raise ValueError(f"scan must be one of {SCAN_MODES}")
        if not 1 <= self.n_chains <= self.n_samples:
            raise ValueError("n_chains must be in 1..n_samples")


@dataclass(frozen=True)
class TrainConfig:
    """Settings for a fitting run.

    All randomness inside a fit (coupling initialization, per-iteration
    sampler streams) derives from ``seed``; the seed stored inside
    ``samples_per_iter`` is ignored during fitting so that one knob
    controls reproducibility end to end.
    """

    learning_rate: float = 0.2
    max_iters: int = 2000
    moment_tolerance: float = 5e-3
    cd_steps: int = 1
    samples_per_iter: GibbsConfig | None = None
    expectation: str = "auto"  # auto | exact | gibbs
    init: str = "zeros"  # zeros | random
    lr_decay: str = "constant"  # constant | rsqrt
    enumeration_cap: int = core.ENUMERATION_CAP
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.moment_tolerance <= 0.0:
            raise ValueError("moment_tolerance must be positive")
        if self.cd_steps < 1:
            raise ValueError("cd_steps must be >= 1")
        if self.expectation not in ("auto", "exact", "gibbs"):
            raise ValueError("expectation must be auto, exact or gibbs")
        if self.init not in ("zeros", "random"):
            raise ValueError("init must be zeros or random")
        if self.lr_decay not in ("constant", "rsqrt"):
            raise ValueError("lr_decay must be constant or rsqrt")


@dataclass
class FitReport:
    """Outcome of a fit: final model, residual trace and diagnostics."""

    final_model: IsingModel
    residual_trace: np.ndarray
    iterations_used: int
    converged: bool
    method: str
    mode: str
    warnings: list = field(default_factory=list)
    config: TrainConfig | None = None

    def to_dict(self):
        cfg = asdict(self.config) if self.config is not None else None
        return {
            "method": self.method,
            "mode": self.mode,
            "converged": bool(self.converged),
            "iterations_used": int(self.iterations_used),
            "final_residual": float(self.residual_trace[-1]),
            "residual_trace": [float(r) for r in self.residual_trace],
            "warnings": list(self.warnings),
            "config": cfg,
        }


def gibbs_conditional(i, x, model):
    """Exact conditional p(X_i = 1 | x_{-i}) under the model.

    Equals logistic(J_ii + 2 sum_{j != i} J_ij x_j) for symmetric J, the
    energy difference between the two values of site i.
    """
    d = model.dimension
    if not 0 <= i < d:
        raise IndexError(f"site index {i} out of range for dimension {d}")
    x = as_states(x, d)
    if x.ndim != 1:
        raise DimensionError("gibbs_conditional expects a single state")
    j = model.coupling
    xf = x.astype(np.float64)
    local = j[i, i] + 2.0 * (j[i] @ xf - j[i, i] * xf[i])
    return float(expit(local))


def _logit_uniforms(rng, n):
    """logit(U) stream: u < logistic(f) is equivalent to logit(u) < f.

    Kept in float32: the threshold comparison tolerates ~1e-7 rounding
    (far below Monte Carlo noise) and the stream is the kernels' main
    memory traffic.  Plain log(1-u) is exact enough here (1-u is
    error-free for u >= 0.5) and, unlike log1p, takes numpy's SIMD path.
    """
    u = rng.random(n, dtype=np.float32)
    # u == 0 maps to -inf, which correctly always accepts (p > 0 for any
    # finite field); silence the harmless divide warning
    with np.errstate(divide="ignore"):
        return np.log(u) - np.log(np.float32(1.0) - u)


def gibbs_sample(model, cfg):
    """Draw states from the model by single-site Gibbs sampling.

    Returns an (n_samples, d) uint8 array.  Deterministic given
    (model, cfg): the uniform streams are pre-generated from sub-seeds
    derived from (cfg.seed, chain index).
    """
    d = model.dimension
    coupling = np.ascontiguousarray(model.coupling)
    counts = _chain_split(cfg.n_samples, cfg.n_chains)
    random_scan = cfg.scan == "random-site"
    chunks = []
    for k, n_k in enumerate(counts):
        if n_k == 0:
            continue
        rng = spawn_rng(cfg.seed, "gibbs-chain", k)
        state = rng.integers(0, 2, size=d).astype(np.int64)
        n_updates = (cfg.burn_in + n_k * cfg.thinning) * d
        thresh = _logit_uniforms(rng, n_updates)
        site_u = rng.random(n_updates) if random_scan else np.empty(0)
        out = np.empty((n_k, d), dtype=np.uint8)
        run_chain(coupling, state, thresh, site_u, random_scan,
                  cfg.burn_in, n_k, cfg.thinning, out)
        chunks.append(out)
    return chunks[0] if len(chunks) == 1 else np.concatenate(chunks, axis=0)


def _chain_split(n, chains):
    base, rem = divmod(n, chains)
    return [base + 1 if k < rem else base for k in range(chains)]


def estimate_moments(samples):
    """Empirical second-moment matrix (1/N) sum x x' of a sample set."""
    samples = as_states(samples)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise DimensionError("need a non-empty (n, d) sample array")
    return SecondMomentMatrix(_raw_moments(samples))


def _raw_moments(samples):
    n = samples.shape[0]
    if n <= (1 << 24):
        # 0/1 counts below 2^24 are exact in float32; the sgemm is ~2x faster
        x = samples.astype(np.float32)
        m = (x.T @ x).astype(np.float64) / n
    else:
        x = samples.astype(np.float64)
        m = (x.T @ x) / n
    return 0.5 * (m + m.T)


def _target_matrix(target):
    m = target.moments if isinstance(target, SecondMomentMatrix) else None
    if m is None:
        m = SecondMomentMatrix(np.asarray(target, dtype=np.float64)).moments
    mu = np.diag(m)
    if np.any(mu <= 0.0) or np.any(mu >= 1.0):
        raise DegenerateMarginalError(
            "target has a marginal of exactly 0 or 1; the matching diagonal "
            "coupling diverges (clip the means or drop the component)"
        )
    return m


def _initial_coupling(cfg, d, initial):
    if initial is not None:
        initial = np.asarray(initial, dtype=np.float64)
        if initial.shape != (d, d):
            raise DimensionError(
                f"initial coupling shape {initial.shape} != ({d}, {d})"
            )
        return 0.5 * (initial + initial.T)
    if cfg.init == "random":
        r = 0.1 * spawn_rng(cfg.seed, "fit-init").standard_normal((d, d))
        return 0.5 * (r + r.T)
    return np.zeros((d, d))


def _resolve_mode(cfg, d):
    if cfg.expectation != "auto":
        return cfg.expectation
    return "exact" if d <= cfg.enumeration_cap else "gibbs"


class _ExactMoments:
    """Per-iteration E[X X'] by enumeration, with cached state blocks."""

    def __init__(self, d):
        self.d = d
        # 2^16 x 16 float64 is ~8 MB; beyond that fall back to blocked eval
        self.states = (
            core.enumerate_states(d).astype(np.float64) if d <= 16 else None
        )

    def __call__(self, coupling):
        if self.states is None:
            return core.exact_moments(IsingModel(coupling), cap=self.d).moments
        s = self.states
        e = np.einsum("ij,jk,ik->i", s, coupling, s)
        w = np.exp(e - e.max())
        w /= w.sum()
        m = (s * w[:, None]).T @ s
        return 0.5 * (m + m.T)


def fit_ml(target, cfg, initial_coupling=None):
    """Fit the coupling to a target second-moment matrix.

    The model expectation is exact (enumeration) when the dimension is
    within ``cfg.enumeration_cap`` unless ``cfg.expectation`` forces Gibbs
    estimation; Gibbs mode requires ``cfg.samples_per_iter``.  Converged
    means the max-abs moment residual fell to ``cfg.moment_tolerance``
    before ``cfg.max_iters``.  ``initial_coupling`` warm-starts the
    iteration (overriding ``cfg.init``), e.g. to continue a run with a
    smaller step size.
    """
    m_target = _target_matrix(target)
    d = m_target.shape[0]
    mode = _resolve_mode(cfg, d)
    if mode == "gibbs" and cfg.samples_per_iter is None:
        raise ValueError("gibbs expectation mode requires cfg.samples_per_iter")
    exact = _ExactMoments(d) if mode == "exact" else None

    coupling = _initial_coupling(cfg, d, initial_coupling)
    trace = []
    converged = False
    for tau in range(cfg.max_iters):
        if mode == "exact":
            m_model = exact(coupling)
        else:
            gcfg = replace(cfg.samples_per_iter,
                           seed=spawn_seed(cfg.seed, "fit-iter", tau))
            samples = gibbs_sample(IsingModel(coupling), gcfg)
            m_model = _raw_moments(samples)
        residual = m_target - m_model
        r = float(np.abs(residual).max())
        trace.append(r)
        if not math.isfinite(r):
            raise NumericalError(
                f"non-finite moment residual at iteration {tau}", iteration=tau
            )
        if r <= cfg.moment_tolerance:
            converged = True
            break
        coupling = coupling + _step(cfg, tau) * residual
        if not np.isfinite(coupling).all():
            raise NumericalError(
                f"coupling overflowed at iteration {tau}", iteration=tau
            )
    return FitReport(
        final_model=IsingModel(coupling),
        residual_trace=np.asarray(trace),
        iterations_used=len(trace),
        converged=converged,
        method="ml",
        mode=mode,
        config=cfg,
    )


def _step(cfg, tau):
    if cfg.lr_decay == "rsqrt":
        return cfg.learning_rate / math.sqrt(tau + 1.0)
    return cfg.learning_rate


def fit_cd(data, cfg, initial_coupling=None):
    """Contrastive-divergence fit from raw samples.

    Every iteration restarts the chains at the data, advances them
    ``cfg.cd_steps`` full sweeps and matches the resulting moments against
    the data moments.  Columns that are constant in the data trip the
    degenerate-marginal guard (the matching coupling diverges).
    ``initial_coupling`` warm-starts the iteration.
    """
    data = as_states(data)
    if data.ndim != 2 or data.shape[0] == 0:
        raise DimensionError("need a non-empty (n, d) sample array")
    m_data = _raw_moments(data)
    mu = np.diag(m_data)
    if np.any(mu <= 0.0) or np.any(mu >= 1.0):
        raise DegenerateMarginalError(
            "data contains a constant column; its diagonal coupling diverges"
        )
    n, d = data.shape
    data64 = data.astype(np.int64)
    chains = np.empty_like(data64)

    coupling = _initial_coupling(cfg, d, initial_coupling)
    trace = []
    converged = False
    for tau in range(cfg.max_iters):
        rng = spawn_rng(cfg.seed, "cd-iter", tau)
        chains[:] = data64
        thresh = _logit_uniforms(rng, n * cfg.cd_steps * d)
        advance_batch(np.ascontiguousarray(coupling), chains, thresh, cfg.cd_steps)
        m_model = _raw_moments(chains.astype(np.uint8))
        residual = m_data - m_model
        r = float(np.abs(residual).max())
        trace.append(r)
        if r <= cfg.moment_tolerance:
            converged = True
            break
        coupling = coupling + _step(cfg, tau) * residual
        if not np.isfinite(coupling).all():
            raise NumericalError(
                f"coupling overflowed at iteration {tau}", iteration=tau
            )
    return FitReport(
        final_model=IsingModel(coupling),
        residual_trace=np.asarray(trace),
        iterations_used=len(trace),
        converged=converged,
        method="cd",
        mode=f"cd-{cfg.cd_steps}",
        warnings=[CD_BIAS_CAVEAT],
        config=cfg,
    )


def independent_coupling(means):
    """Closed-form diagonal coupling reproducing independent marginals."""
    mu = core.clip_means(means)
    return IsingModel(np.diag(logit(mu)))


def save_model(model, out_dir, provenance=None):
    """Write the coupling matrix and descriptor to a directory."""
    from pathlib import Path

    from .fileio import dump_json, save_matrix_csv

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_matrix_csv(model.coupling, out_dir / "coupling.csv")
    dump_json(
        {
            "kind": "ising",
            "dimension": int(model.dimension),
            "provenance": provenance or {},
        },
        out_dir / "model.json",
    )


def load_model(in_dir):
    from pathlib import Path

    from .fileio import load_json, load_matrix_csv

    in_dir = Path(in_dir)
    desc = load_json(in_dir / "model.json")
    coupling = load_matrix_csv(in_dir / "coupling.csv")
    if desc.get("dimension") != coupling.shape[0]:
        raise DimensionError(
            f"{in_dir}: descriptor dimension {desc.get('dimension')} does not "
            f"match coupling shape {coupling.shape}"
        )
    return IsingModel(coupling)


def synthesize_data(constraints, n, seed):
    """Samples whose moments converge to the given constraints.

    Bridges moment-style knowledge to fitters that need raw data: a
    dichotomized Gaussian surrogate is fitted to the constraints and
    sampled independently.
    """
    from .dg import fit_dg, sample_dg

    if n < 1:
        raise ValueError("n must be >= 1")
    model = fit_dg(constraints)
    if model.repair_log.applied:
        warnings.warn(
            "latent correlation needed PSD repair; synthesized moments may "
            "deviate slightly from the requested constraints",
            stacklevel=2,
        )
    return sample_dg(model, n, seed)
