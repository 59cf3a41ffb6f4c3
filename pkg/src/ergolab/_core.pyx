# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Euler-Maruyama kernels with counter-based (Philox4x32-10) noise.

Hot loops only; model/measure/estimator logic lives in the Python modules.
The numpy twin of this module is ergolab._pykernel: both evaluate the same
fixed arithmetic (identical normal pipeline, identically ordered state
updates), so a trajectory is a pure function of (model, seed, stream, step)
on either backend.
"""

from libc.math cimport exp, fabs, pow, sqrt
from libc.stdlib cimport free, malloc

from scipy.special.cython_special cimport ndtri

import numpy as np

cdef double UNIT53 = 1.0 / 9007199254740992.0   # 2**-53
cdef double BLOWUP_CAP = 1e9

cdef unsigned int PM0 = 0xD2511F53u
cdef unsigned int PM1 = 0xCD9E8D57u
cdef unsigned int PW0 = 0x9E3779B9u
cdef unsigned int PW1 = 0xBB67AE85u

# model ids
cdef int HEISENBERG = 0
cdef int GRUSHIN = 1
cdef int OU_IDENTITY = 2
cdef int LIONS_MUSIELA = 3
# drift ids
cdef int DRIFT_OU = 0
cdef int DRIFT_POWER = 1
cdef int DRIFT_ZERO = 2
# observable ids
cdef int OBS_CONST = 0
cdef int OBS_GAUSS = 1


cdef inline void _philox(unsigned int c0, unsigned int c1, unsigned int c2,
                         unsigned int c3, unsigned int k0, unsigned int k1,
                         unsigned int* out) noexcept nogil:
    cdef int r
    cdef unsigned long long p0, p1
    cdef unsigned int hi0, lo0, hi1, lo1, t0, t2
    for r in range(10):
        p0 = (<unsigned long long>PM0) * c0
        p1 = (<unsigned long long>PM1) * c2
        hi0 = <unsigned int>(p0 >> 32)
        lo0 = <unsigned int>p0
        hi1 = <unsigned int>(p1 >> 32)
        lo1 = <unsigned int>p1
        t0 = hi1 ^ c1 ^ k0
        t2 = hi0 ^ c3 ^ k1
        c0 = t0
        c1 = lo1
        c2 = t2
        c3 = lo0
        k0 = k0 + PW0
        k1 = k1 + PW1
    out[0] = c0
    out[1] = c1
    out[2] = c2
    out[3] = c3


cdef inline void _block_normals(unsigned long long seed, unsigned long long stream,
                                unsigned long long block, double* z,
                                bint both) noexcept nogil:
    cdef unsigned int y[4]
    cdef unsigned long long v0, v1
    _philox(<unsigned int>block, <unsigned int>(block >> 32),
            <unsigned int>stream, <unsigned int>(stream >> 32),
            <unsigned int>seed, <unsigned int>(seed >> 32), y)
    v0 = ((<unsigned long long>y[0]) << 32) | y[1]
    z[0] = ndtri(((v0 >> 11) + 0.5) * UNIT53)
    if both:
        v1 = ((<unsigned long long>y[2]) << 32) | y[3]
        z[1] = ndtri(((v1 >> 11) + 0.5) * UNIT53)


cdef inline void _step_normals(unsigned long long seed, unsigned long long stream,
                               long long k, long long bps, int m,
                               double* z) noexcept nogil:
    # noise for step k (k >= 1) occupies blocks (k-1)*bps .. k*bps - 1
    cdef long long base = (k - 1) * bps
    cdef long long j
    for j in range(bps):
        _block_normals(seed, stream, <unsigned long long>(base + j),
                       z + 2 * j, 2 * j + 1 < m)


cdef inline void _drift(int drift_id, int dim, double gamma, double alpha,
                        const double* cvec, const double* x,
                        double* b) noexcept nogil:
    cdef int i
    cdef double he
    if drift_id == DRIFT_OU:
        for i in range(dim):
            b[i] = -gamma * x[i]
    elif drift_id == DRIFT_POWER:
        if alpha == 2.0:
            for i in range(dim):
                b[i] = -cvec[i] * x[i]
        else:
            he = (alpha - 2.0) * 0.5
            for i in range(dim):
                b[i] = -cvec[i] * x[i] * pow(x[i] * x[i] + 1.0, he)
    else:
        for i in range(dim):
            b[i] = 0.0


cdef inline void _noise_mult(int model_id, int dim, int m, double rho,
                             const double* x, const double* z,
                             double* g) noexcept nogil:
    # g = sigma(x) @ z for the catalogue models
    cdef int i
    if model_id == HEISENBERG:
        g[0] = z[0]
        g[1] = z[1]
        g[2] = 2.0 * x[1] * z[0] - 2.0 * x[0] * z[1]
        if m == 3:
            g[2] = g[2] + rho * z[2]
    elif model_id == GRUSHIN:
        g[0] = z[0]
        g[1] = x[0] * z[1]
        if m == 3:
            g[1] = g[1] + rho * z[2]
    elif model_id == OU_IDENTITY:
        for i in range(dim):
            g[i] = z[i]
        if m == 2 * dim:
            for i in range(dim):
                g[i] = g[i] + rho * z[dim + i]
    else:
        g[0] = z[0]
        g[1] = (x[0] / sqrt(1.0 + x[0] * x[0])) * z[1]
        if m == 3:
            g[1] = g[1] + rho * z[2]


cdef inline bint _step(int model_id, int dim, int m, double rho, int drift_id,
                       double gamma, double alpha, const double* cvec,
                       double dt, double sqrt2dt, const double* z,
                       double* x, double* b, double* g,
                       double* xn) noexcept nogil:
    # returns False on blow-up (x left untouched)
    cdef int i
    cdef double v
    _drift(drift_id, dim, gamma, alpha, cvec, x, b)
    _noise_mult(model_id, dim, m, rho, x, z, g)
    for i in range(dim):
        v = x[i] + b[i] * dt + sqrt2dt * g[i]
        if not (fabs(v) <= BLOWUP_CAP):
            return False
        xn[i] = v
    for i in range(dim):
        x[i] = xn[i]
    return True


cdef inline double _obs(int obs_id, double c, double inv_two_s2,
                        const double* center, const double* x,
                        int dim) noexcept nogil:
    cdef int i
    cdef double q, d
    if obs_id == OBS_CONST:
        return c
    q = 0.0
    for i in range(dim):
        d = x[i] - center[i]
        q = q + d * d
    return c * exp(-q * inv_two_s2)


def run_paths(int model_id, int dim, int m, double rho, int drift_id,
              double gamma, double alpha, double[::1] cvec,
              double[:, ::1] x0, unsigned long long seed,
              unsigned long long stream0, long long nsteps, double dt,
              long long record_every, rec_arr, double[:, ::1] endv,
              long long[::1] blow_step):
    """Simulate len(x0) paths; path i uses stream stream0 + i.

    rec_arr: (M, R, dim) float64 array or None; rows k % record_every == 0
    are recorded (index k // record_every), with row 0 = x0.  After a
    blow-up at step k the path freezes at its last finite state.
    """
    cdef long long M = x0.shape[0]
    cdef long long bps = (m + 1) // 2
    cdef bint has_rec = rec_arr is not None
    cdef double[:, :, ::1] rec
    if has_rec:
        rec = rec_arr
    cdef double sqrt2dt = sqrt(2.0 * dt)
    cdef long long i, k
    cdef int d
    cdef unsigned long long stream
    cdef long long blow
    cdef double* x
    cdef double* b
    cdef double* g
    cdef double* xn
    cdef double* z
    with nogil:
        x = <double*>malloc(4 * dim * sizeof(double))
        b = x + dim
        g = b + dim
        xn = g + dim
        z = <double*>malloc(2 * bps * sizeof(double))
        for i in range(M):
            stream = stream0 + <unsigned long long>i
            blow = -1
            for d in range(dim):
                x[d] = x0[i, d]
            if has_rec:
                for d in range(dim):
                    rec[i, 0, d] = x[d]
            for k in range(1, nsteps + 1):
                _step_normals(seed, stream, k, bps, m, z)
                if not _step(model_id, dim, m, rho, drift_id, gamma, alpha,
                             &cvec[0], dt, sqrt2dt, z, x, b, g, xn):
                    blow = k
                    break
                if has_rec and k % record_every == 0:
                    for d in range(dim):
                        rec[i, k // record_every, d] = x[d]
            for d in range(dim):
                endv[i, d] = x[d]
            blow_step[i] = blow
        free(x)
        free(z)
    # fill frozen records after a blow-up (rare; done in numpy for clarity)
    if has_rec:
        blown = np.asarray(blow_step)
        if (blown >= 0).any():
            rec_np = rec_arr
            for i in np.nonzero(blown >= 0)[0]:
                first_missing = (blown[i] - 1) // record_every + 1
                rec_np[i, first_missing:, :] = np.asarray(endv)[i]
    return None


def run_discounted(int model_id, int dim, int m, double rho, int drift_id,
                   double gamma, double alpha, double[::1] cvec,
                   int obs_id, double obs_c, double obs_s,
                   double[::1] obs_center, double[::1] x0,
                   long long M, unsigned long long seed,
                   unsigned long long stream0, double dt,
                   double[::1] decay, long long[::1] ksteps,
                   double[:, ::1] sums, long long[::1] blow_step):
    """Per-path trapezoid integrals of f(X_t) e^(-delta t) dt.

    decay[d] = exp(-delta_d * dt), precomputed by the caller so that both
    backends consume identical constants (decay = 1 gives the plain running
    integral).  ksteps must be ascending; sums[i, d] covers steps
    0..ksteps[d].  All paths start at x0.
    """
    cdef long long D = decay.shape[0]
    cdef long long Kmax = ksteps[D - 1]
    cdef long long bps = (m + 1) // 2
    cdef double sqrt2dt = sqrt(2.0 * dt)
    cdef double inv_two_s2 = 0.0
    if obs_id == OBS_GAUSS:
        inv_two_s2 = 1.0 / (2.0 * obs_s * obs_s)
    cdef long long i, k, d
    cdef int c
    cdef unsigned long long stream
    cdef long long blow
    cdef double f0, fk
    cdef double* x
    cdef double* b
    cdef double* g
    cdef double* xn
    cdef double* z
    cdef double* acc
    cdef double* disc
    with nogil:
        x = <double*>malloc(4 * dim * sizeof(double))
        b = x + dim
        g = b + dim
        xn = g + dim
        z = <double*>malloc(2 * bps * sizeof(double))
        acc = <double*>malloc(2 * D * sizeof(double))
        disc = acc + D
        for i in range(M):
            stream = stream0 + <unsigned long long>i
            blow = -1
            for c in range(dim):
                x[c] = x0[c]
            f0 = _obs(obs_id, obs_c, inv_two_s2, &obs_center[0], x, dim)
            for d in range(D):
                acc[d] = 0.5 * f0 if ksteps[d] >= 1 else 0.0
                disc[d] = 1.0
            for k in range(1, Kmax + 1):
                _step_normals(seed, stream, k, bps, m, z)
                if not _step(model_id, dim, m, rho, drift_id, gamma, alpha,
                             &cvec[0], dt, sqrt2dt, z, x, b, g, xn):
                    blow = k
                    break
                fk = _obs(obs_id, obs_c, inv_two_s2, &obs_center[0], x, dim)
                for d in range(D):
                    if k <= ksteps[d]:
                        disc[d] = disc[d] * decay[d]
                        if k == ksteps[d]:
                            acc[d] = acc[d] + 0.5 * (fk * disc[d])
                        else:
                            acc[d] = acc[d] + fk * disc[d]
            for d in range(D):
                sums[i, d] = acc[d] * dt
            blow_step[i] = blow
        free(x)
        free(z)
        free(acc)
    return None


def run_coupled_ou(double gamma, double a, double cstd, double[::1] x0,
                   long long M, unsigned long long seed,
                   unsigned long long stream0, double dt, long long nsteps,
                   double[:, ::1] em_end, double[:, ::1] ex_end):
    """Euler-Maruyama and exact OU transition driven by the same normals.

    a = exp(-gamma dt) and cstd = sqrt((1 - e^(-2 gamma dt)) / gamma) are
    precomputed by the caller (shared constants across backends)."""
    cdef int dim = x0.shape[0]
    cdef long long bps = (dim + 1) // 2
    cdef double sqrt2dt = sqrt(2.0 * dt)
    cdef long long i, k
    cdef int d
    cdef unsigned long long stream
    cdef double* xe
    cdef double* xx
    cdef double* z
    with nogil:
        xe = <double*>malloc(2 * dim * sizeof(double))
        xx = xe + dim
        z = <double*>malloc(2 * bps * sizeof(double))
        for i in range(M):
            stream = stream0 + <unsigned long long>i
            for d in range(dim):
                xe[d] = x0[d]
                xx[d] = x0[d]
            for k in range(1, nsteps + 1):
                _step_normals(seed, stream, k, bps, dim, z)
                for d in range(dim):
                    xe[d] = xe[d] + (-gamma * xe[d]) * dt + sqrt2dt * z[d]
                    xx[d] = a * xx[d] + cstd * z[d]
            for d in range(dim):
                em_end[i, d] = xe[d]
                ex_end[i, d] = xx[d]
        free(xe)
        free(z)
    return None


def philox_raw(unsigned long long seed, unsigned long long stream,
               unsigned long long block0, long long n):
    """(n, 4) uint32 Philox outputs for blocks block0..block0+n-1 (test hook)."""
    out = np.empty((n, 4), dtype=np.uint32)
    cdef unsigned int[:, ::1] o = out
    cdef unsigned int y[4]
    cdef long long i
    cdef int j
    for i in range(n):
        _philox(<unsigned int>(block0 + i),
                <unsigned int>((block0 + i) >> 32),
                <unsigned int>stream, <unsigned int>(stream >> 32),
                <unsigned int>seed, <unsigned int>(seed >> 32), y)
        for j in range(4):
            o[i, j] = y[j]
    return out


def normals(unsigned long long seed, unsigned long long stream,
            unsigned long long block0, long long n):
    """(n, 2) standard normals for blocks block0..block0+n-1 (test hook)."""
    out = np.empty((n, 2), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double z[2]
    cdef long long i
    for i in range(n):
        _block_normals(seed, stream, block0 + i, z, True)
        o[i, 0] = z[0]
        o[i, 1] = z[1]
    return out
