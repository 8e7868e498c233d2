# cython: language_level=3
"""Compiled block coordinate descent kernels for the weighted group lasso.

Same sweep logic as the pure-python fallback in _bcd_py: majorized proximal
block updates over uniform d-sized blocks, full sweeps alternating with
active-set sweeps, convergence declared after a full sweep moves every block
by at most tol. Block gathers and residual updates go through BLAS; the
row-major N x (p d) design doubles as a column-major (p d) x N matrix, so a
block's columns are addressed with lda = p*d and no copies.

The covariance-mode kernel maintains q = U'(y - U g) via a lazily-filled
Gram matrix so that blocks that do not move cost O(d) each.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt
from scipy.linalg.cython_blas cimport dgemm, dgemv

cnp.import_array()


cdef inline void _gather(const double[:, ::1] U, const double[::1] r,
                         Py_ssize_t base, int d, double* out) noexcept:
    # out = U_k' r
    cdef int m = <int> U.shape[1]
    cdef int n = <int> U.shape[0]
    cdef double one = 1.0, zero = 0.0
    cdef int inc = 1
    dgemv("N", &d, &n, &one, <double*> &U[0, base], &m,
          <double*> &r[0], &inc, &zero, out, &inc)


cdef inline void _scatter(const double[:, ::1] U, double[::1] r,
                          Py_ssize_t base, int d, double* delta) noexcept:
    # r -= U_k delta
    cdef int m = <int> U.shape[1]
    cdef int n = <int> U.shape[0]
    cdef double neg = -1.0, one = 1.0
    cdef int inc = 1
    dgemv("T", &d, &n, &neg, <double*> &U[0, base], &m,
          <double*> delta, &inc, &one, &r[0], &inc)


cdef double _shrink(double[::1] gamma, Py_ssize_t base, int d, double w, double L,
                    double* v, double* delta) noexcept:
    # v holds gamma_k + (U_k'r)/L on entry; applies the group soft threshold,
    # writes the block change into delta, returns its norm (0 if no move)
    cdef Py_ssize_t j
    cdef double nv2 = 0.0, nv, thr, s, ch2 = 0.0, dj
    cdef bint old_zero = True
    for j in range(d):
        if gamma[base + j] != 0.0:
            old_zero = False
        nv2 += v[j] * v[j]
    nv = sqrt(nv2)
    thr = w / L
    if nv <= thr:
        if old_zero:
            return 0.0
        for j in range(d):
            delta[j] = -gamma[base + j]
            ch2 += delta[j] * delta[j]
            gamma[base + j] = 0.0
    else:
        s = 1.0 - thr / nv
        for j in range(d):
            dj = s * v[j] - gamma[base + j]
            delta[j] = dj
            ch2 += dj * dj
            gamma[base + j] = s * v[j]
    if ch2 == 0.0:
        return 0.0
    return sqrt(ch2)


cdef double _sweep(const double[:, ::1] U, double[::1] r, double[::1] gamma,
                   const double[::1] weights, const double[::1] L, int d,
                   Py_ssize_t[::1] blocks, Py_ssize_t n_blocks,
                   double* v, double* delta) noexcept:
    cdef double max_change = 0.0, ch, Lk
    cdef Py_ssize_t b, k, base, j
    for b in range(n_blocks):
        k = blocks[b]
        base = k * d
        Lk = L[k]
        _gather(U, r, base, d, v)
        for j in range(d):
            v[j] = gamma[base + j] + v[j] / Lk
        ch = _shrink(gamma, base, d, weights[k], Lk, v, delta)
        if ch > 0.0:
            _scatter(U, r, base, d, delta)
            if ch > max_change:
                max_change = ch
    return max_change


cdef Py_ssize_t _active_blocks(const double[::1] gamma, Py_ssize_t p, int d,
                               Py_ssize_t[::1] out) noexcept:
    cdef Py_ssize_t k, j, n_active = 0
    for k in range(p):
        for j in range(d):
            if gamma[k * d + j] != 0.0:
                out[n_active] = k
                n_active += 1
                break
    return n_active


def bcd_solve(const double[:, ::1] U, const double[::1] y, const double[::1] weights,
              const double[::1] gamma0, int d, const double[::1] L,
              double tol, int max_iter):
    """Returns (gamma, residual, sweeps, converged)."""
    cdef Py_ssize_t N = U.shape[0]
    cdef Py_ssize_t p = weights.shape[0]
    cdef Py_ssize_t n_active
    cdef int sweeps = 0
    cdef bint converged = False
    cdef double change

    gamma_arr = np.array(gamma0, dtype=np.float64, copy=True)
    resid_arr = np.asarray(y, dtype=np.float64) - np.asarray(U) @ gamma_arr
    cdef double[::1] gamma = gamma_arr
    cdef double[::1] r = resid_arr

    all_arr = np.arange(p, dtype=np.intp)
    act_arr = np.empty(p, dtype=np.intp)
    cdef Py_ssize_t[::1] all_blocks = all_arr
    cdef Py_ssize_t[::1] active = act_arr

    work = np.empty(2 * d, dtype=np.float64)
    cdef double[::1] wk = work
    cdef double* v = &wk[0]
    cdef double* delta = &wk[d]

    while sweeps < max_iter:
        change = _sweep(U, r, gamma, weights, L, d, all_blocks, p, v, delta)
        sweeps += 1
        if change <= tol:
            converged = True
            break
        n_active = _active_blocks(gamma, p, d, active)
        while sweeps < max_iter:
            change = _sweep(U, r, gamma, weights, L, d, active, n_active, v, delta)
            sweeps += 1
            if change <= tol:
                break
    return gamma_arr, resid_arr, sweeps, converged


cdef void _fill_gram_rows(const double[:, ::1] U, double[:, ::1] G,
                          Py_ssize_t base, int d) noexcept:
    # rows base..base+d-1 of row-major G receive U_k' U; in column-major terms
    # these are d contiguous columns of G', computed as one GEMM
    cdef int m = <int> U.shape[1]
    cdef int n = <int> U.shape[0]
    cdef double one = 1.0, zero = 0.0
    dgemm("N", "T", &m, &d, &n, &one, <double*> &U[0, 0], &m,
          <double*> &U[0, base], &m, &zero, &G[base, 0], &m)


cdef double _sweep_cov(const double[:, ::1] U, double[:, ::1] G, cnp.uint8_t[::1] filled,
                       double[::1] r, double[::1] q, double[::1] gamma,
                       const double[::1] weights, const double[::1] L, int d,
                       Py_ssize_t[::1] blocks, Py_ssize_t n_blocks,
                       double* v, double* delta) noexcept:
    cdef double max_change = 0.0, ch, Lk
    cdef double neg = -1.0, one = 1.0
    cdef int inc = 1, m = <int> U.shape[1]
    cdef Py_ssize_t b, k, base, j
    for b in range(n_blocks):
        k = blocks[b]
        base = k * d
        Lk = L[k]
        for j in range(d):
            v[j] = gamma[base + j] + q[base + j] / Lk
        ch = _shrink(gamma, base, d, weights[k], Lk, v, delta)
        if ch > 0.0:
            if not filled[k]:
                _fill_gram_rows(U, G, base, d)
                filled[k] = 1
            # q -= (U'U_k) delta, using the d filled rows of G
            dgemv("N", &m, &d, &neg, &G[base, 0], &m, delta, &inc, &one, &q[0], &inc)
            _scatter(U, r, base, d, delta)
            if ch > max_change:
                max_change = ch
    return max_change


def bcd_solve_cov(const double[:, ::1] U, const double[::1] y, const double[::1] weights,
                  const double[::1] gamma0, int d, const double[::1] L,
                  double tol, int max_iter,
                  double[:, ::1] G, cnp.uint8_t[::1] filled,
                  double[::1] r, double[::1] q):
    """Covariance-mode variant: r and q must equal y - U gamma0 and
    U'(y - U gamma0) on entry and are updated in place."""
    cdef Py_ssize_t p = weights.shape[0]
    cdef Py_ssize_t n_active
    cdef int sweeps = 0
    cdef bint converged = False
    cdef double change

    gamma_arr = np.array(gamma0, dtype=np.float64, copy=True)
    cdef double[::1] gamma = gamma_arr

    all_arr = np.arange(p, dtype=np.intp)
    act_arr = np.empty(p, dtype=np.intp)
    cdef Py_ssize_t[::1] all_blocks = all_arr
    cdef Py_ssize_t[::1] active = act_arr

    work = np.empty(2 * d, dtype=np.float64)
    cdef double[::1] wk = work
    cdef double* v = &wk[0]
    cdef double* delta = &wk[d]

    while sweeps < max_iter:
        change = _sweep_cov(U, G, filled, r, q, gamma, weights, L, d,
                            all_blocks, p, v, delta)
        sweeps += 1
        if change <= tol:
            converged = True
            break
        n_active = _active_blocks(gamma, p, d, active)
        while sweeps < max_iter:
            change = _sweep_cov(U, G, filled, r, q, gamma, weights, L, d,
                                active, n_active, v, delta)
            sweeps += 1
            if change <= tol:
                break
    return gamma_arr, sweeps, converged
