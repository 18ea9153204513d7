"""Numba kernels for single-site Gibbs updates.

All randomness is consumed from pre-generated arrays, so the kernels are
pure functions of their inputs and the sample streams are bit-reproducible
across runs and numba versions.

A site update sets x_i = 1 with heat-bath probability

    p(x_i = 1 | rest) = logistic(f_i),  f_i = J_ii + 2 sum_{j != i} J_ij x_j

for symmetric J.  Instead of evaluating the logistic inside the serial
update loop, the acceptance uniforms are logit-transformed in bulk by the
caller: u < logistic(f) is equivalent to logit(u) < f, so the kernel only
compares the pre-transformed threshold against the local field.  Local
fields g = J x are maintained incrementally: a flip of site i costs O(d),
a non-flip costs O(1).  Flip updates read row i of the coupling, which
equals column i because callers always pass a symmetric matrix.
"""

import numba as nb
import numpy as np


@nb.njit(cache=True, fastmath=True)
def _init_fields(coupling, state):
    d = coupling.shape[0]
    g = np.zeros(d)
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += coupling[i, j] * state[j]
        g[i] = acc
    return g


@nb.njit(cache=True, fastmath=True)
def run_chain(coupling, state, thresh, site_u, random_scan,
              burn_in, n_keep, thinning, out):
    """Advance one chain, retaining every `thinning`-th post-burn-in sweep.

    state : int64[d], modified in place (final chain state on return)
    thresh : float64[(burn_in + n_keep * thinning) * d] logit-transformed
        acceptance uniforms
    site_u : float64[same length] site-choice uniforms (random scan only;
        may be empty when random_scan is False)
    out : uint8[n_keep, d] retained states
    """
    d = coupling.shape[0]
    g = _init_fields(coupling, state)
    total = burn_in + n_keep * thinning
    t = 0
    kept = 0
    for sweep in range(total):
        for c in range(d):
            if random_scan:
                i = int(site_u[t] * d)
                if i >= d:
                    i = d - 1
            else:
                i = c
            xi = state[i]
            f = coupling[i, i] + 2.0 * (g[i] - coupling[i, i] * xi)
            nxt = 1 if thresh[t] < f else 0
            t += 1
            if nxt != xi:
                delta = float(nxt - xi)
                state[i] = nxt
                for j in range(d):
                    g[j] += delta * coupling[i, j]
        if sweep >= burn_in and (sweep - burn_in + 1) % thinning == 0:
            for j in range(d):
                out[kept, j] = state[j]
            kept += 1


@nb.njit(cache=True, fastmath=True)
def advance_batch(coupling, states, thresh, n_sweeps):
    """Advance many chains in lockstep by n_sweeps sequential-scan sweeps.

    states : int64[n, d], modified in place.
    thresh : float64[n * n_sweeps * d] logit-transformed uniforms,
        consumed chain-major.
    """
    n, d = states.shape
    for k in range(n):
        g = _init_fields(coupling, states[k])
        t = k * n_sweeps * d
        for _ in range(n_sweeps):
            for i in range(d):
                xi = states[k, i]
                f = coupling[i, i] + 2.0 * (g[i] - coupling[i, i] * xi)
                nxt = 1 if thresh[t] < f else 0
                t += 1
                if nxt != xi:
                    delta = float(nxt - xi)
                    states[k, i] = nxt
                    for j in range(d):
                        g[j] += delta * coupling[i, j]
