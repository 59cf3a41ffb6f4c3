"""Pure-numpy twin of the compiled kernels in ``ergolab._core``.

Vectorized over paths, looping over time steps in Python.  Per-path
arithmetic is ordered exactly as in the compiled loops, so within each
backend results are bit-reproducible and across backends they agree to the
floating-point evaluation of one fixed formula.  This module additionally
accepts callables for custom drifts and observables, which the compiled
backend does not.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

from . import rng

BLOWUP_CAP = 1e9

HEISENBERG, GRUSHIN, OU_IDENTITY, LIONS_MUSIELA = 0, 1, 2, 3
DRIFT_OU, DRIFT_POWER, DRIFT_ZERO = 0, 1, 2
OBS_CONST, OBS_GAUSS = 0, 1


def _step_noise(seed, streams, k, bps, m):
    """(M, m) normals for step k (k >= 1), blocks (k-1)*bps .. k*bps-1."""
    M = streams.shape[0]
    z = np.empty((M, m))
    base = (k - 1) * bps
    for j in range(bps):
        u0, u1 = rng.uniforms(seed, streams, np.uint64(base + j))
        z[:, 2 * j] = ndtri(u0)
        if 2 * j + 1 < m:
            z[:, 2 * j + 1] = ndtri(u1)
    return z


def _drift(drift_id, gamma, alpha, cvec, X, drift_fn=None):
    if drift_fn is not None:
        return np.asarray(drift_fn(X), dtype=np.float64)
    if drift_id == DRIFT_OU:
        return -gamma * X
    if drift_id == DRIFT_POWER:
        if alpha == 2.0:
            return -cvec * X
        he = (alpha - 2.0) * 0.5
        return -cvec * X * np.power(X * X + 1.0, he)
    return np.zeros_like(X)


def _noise_mult(model_id, dim, m, rho, X, Z):
    G = np.empty_like(X)
    if model_id == HEISENBERG:
        G[:, 0] = Z[:, 0]
        G[:, 1] = Z[:, 1]
        g2 = 2.0 * X[:, 1] * Z[:, 0] - 2.0 * X[:, 0] * Z[:, 1]
        if m == 3:
            g2 = g2 + rho * Z[:, 2]
        G[:, 2] = g2
    elif model_id == GRUSHIN:
        G[:, 0] = Z[:, 0]
        g1 = X[:, 0] * Z[:, 1]
        if m == 3:
            g1 = g1 + rho * Z[:, 2]
        G[:, 1] = g1
    elif model_id == OU_IDENTITY:
        G[:] = Z[:, :dim]
        if m == 2 * dim:
            G = G + rho * Z[:, dim:]
    else:
        G[:, 0] = Z[:, 0]
        g1 = (X[:, 0] / np.sqrt(1.0 + X[:, 0] * X[:, 0])) * Z[:, 1]
        if m == 3:
            g1 = g1 + rho * Z[:, 2]
        G[:, 1] = g1
    return G


def _obs_eval(obs_id, c, inv_two_s2, center, X, obs_fn=None):
    if obs_fn is not None:
        return np.asarray(obs_fn(X), dtype=np.float64)
    if obs_id == OBS_CONST:
        return np.full(X.shape[0], c)
    q = None
    for i in range(X.shape[1]):
        d = X[:, i] - center[i]
        q = d * d if q is None else q + d * d
    return c * np.exp(-q * inv_two_s2)


def em_step_single(model_id, dim, m, rho, drift_id, gamma, alpha, cvec,
                   x, dt, xi, drift_fn=None):
    """One Euler-Maruyama step for a single state; the engine's em_step."""
    X = np.asarray(x, dtype=np.float64).reshape(1, dim)
    Z = np.asarray(xi, dtype=np.float64).reshape(1, m)
    B = _drift(drift_id, gamma, alpha, np.asarray(cvec), X, drift_fn)
    G = _noise_mult(model_id, dim, m, rho, X, Z)
    xn = X + B * dt + np.sqrt(2.0 * dt) * G
    return xn[0]


def run_paths(model_id, dim, m, rho, drift_id, gamma, alpha, cvec,
              x0, seed, stream0, nsteps, dt, record_every, rec_arr,
              endv, blow_step, drift_fn=None):
    M = x0.shape[0]
    streams = np.uint64(stream0) + np.arange(M, dtype=np.uint64)
    bps = (m + 1) // 2
    sqrt2dt = np.sqrt(2.0 * dt)
    cvec = np.asarray(cvec, dtype=np.float64)
    X = np.array(x0, dtype=np.float64)
    alive = np.ones(M, dtype=bool)
    blow_step[:] = -1
    if rec_arr is not None:
        rec_arr[:, 0, :] = X
    for k in range(1, nsteps + 1):
        Z = _step_noise(seed, streams, k, bps, m)
        B = _drift(drift_id, gamma, alpha, cvec, X, drift_fn)
        G = _noise_mult(model_id, dim, m, rho, X, Z)
        XN = X + B * dt + sqrt2dt * G
        ok = (np.abs(XN) <= BLOWUP_CAP).all(axis=1)
        newly_dead = alive & ~ok
        if newly_dead.any():
            blow_step[newly_dead] = k
            alive &= ok
        upd = alive
        X[upd] = XN[upd]
        if rec_arr is not None and k % record_every == 0:
            rec_arr[:, k // record_every, :] = X
    endv[:] = X


def run_discounted(model_id, dim, m, rho, drift_id, gamma, alpha, cvec,
                   obs_id, obs_c, obs_s, obs_center, x0, M, seed, stream0,
                   dt, decay, ksteps, sums, blow_step,
                   drift_fn=None, obs_fn=None):
    D = len(decay)
    Kmax = int(ksteps[-1])
    streams = np.uint64(stream0) + np.arange(M, dtype=np.uint64)
    bps = (m + 1) // 2
    sqrt2dt = np.sqrt(2.0 * dt)
    cvec = np.asarray(cvec, dtype=np.float64)
    inv_two_s2 = 1.0 / (2.0 * obs_s * obs_s) if obs_id == OBS_GAUSS else 0.0
    decay = [float(decay[d]) for d in range(D)]
    X = np.tile(np.asarray(x0, dtype=np.float64), (M, 1))
    alive = np.ones(M, dtype=bool)
    blow_step[:] = -1
    f0 = _obs_eval(obs_id, obs_c, inv_two_s2, obs_center, X, obs_fn)
    acc = [0.5 * f0 if ksteps[d] >= 1 else np.zeros(M) for d in range(D)]
    disc = [1.0] * D
    for k in range(1, Kmax + 1):
        Z = _step_noise(seed, streams, k, bps, m)
        B = _drift(drift_id, gamma, alpha, cvec, X, drift_fn)
        G = _noise_mult(model_id, dim, m, rho, X, Z)
        XN = X + B * dt + sqrt2dt * G
        ok = (np.abs(XN) <= BLOWUP_CAP).all(axis=1)
        newly_dead = alive & ~ok
        if newly_dead.any():
            blow_step[newly_dead] = k
            alive &= ok
        X[alive] = XN[alive]
        fk = _obs_eval(obs_id, obs_c, inv_two_s2, obs_center, X, obs_fn)
        for d in range(D):
            if k <= ksteps[d]:
                disc[d] = disc[d] * decay[d]
                contrib = fk * disc[d]
                if k == ksteps[d]:
                    contrib = 0.5 * contrib
                # frozen (blown) paths stop accumulating: truncated integral
                acc[d][alive] = acc[d][alive] + contrib[alive]
    for d in range(D):
        sums[:, d] = acc[d] * dt


def run_coupled_ou(gamma, a, cstd, x0, M, seed, stream0, dt, nsteps,
                   em_end, ex_end):
    dim = len(x0)
    streams = np.uint64(stream0) + np.arange(M, dtype=np.uint64)
    bps = (dim + 1) // 2
    sqrt2dt = np.sqrt(2.0 * dt)
    XE = np.tile(np.asarray(x0, dtype=np.float64), (M, 1))
    XX = XE.copy()
    for k in range(1, nsteps + 1):
        Z = _step_noise(seed, streams, k, bps, dim)
        XE = XE + (-gamma * XE) * dt + sqrt2dt * Z
        XX = a * XX + cstd * Z
    em_end[:] = XE
    ex_end[:] = XX


def philox_raw(seed, stream, block0, n):
    blocks = np.uint64(block0) + np.arange(n, dtype=np.uint64)
    streams = np.full(n, stream, dtype=np.uint64)
    y0, y1, y2, y3 = rng.philox4x32(
        blocks & np.uint64(0xFFFFFFFF), blocks >> np.uint64(32),
        streams & np.uint64(0xFFFFFFFF), streams >> np.uint64(32),
        np.uint64(seed) & np.uint64(0xFFFFFFFF), np.uint64(seed) >> np.uint64(32))
    return np.stack([y0, y1, y2, y3], axis=1).astype(np.uint32)


def normals(seed, stream, block0, n):
    blocks = np.uint64(block0) + np.arange(n, dtype=np.uint64)
    streams = np.full(n, stream, dtype=np.uint64)
    z0, z1 = rng.normal_pair(seed, streams, blocks)
    return np.stack([z0, z1], axis=1)
