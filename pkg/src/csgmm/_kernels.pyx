# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled online estimation kernel; see csgmm._kernels_py for the reference
semantics and the multiply-add counting contract."""

import numpy as np

from libc.math cimport exp, log

BACKEND = "compiled"


def estimate_batch(Y, ad, dt, m_inner, log_prior, supports, double sigma2,
                   Py_ssize_t grid_size):
    Y = np.ascontiguousarray(Y, dtype=np.complex128)
    cdef double complex[:, ::1] y_v = Y
    cdef double complex[:, :, ::1] ad_v = np.ascontiguousarray(ad, dtype=np.complex128)
    cdef double complex[:, :, ::1] dt_v = np.ascontiguousarray(dt, dtype=np.complex128)
    cdef double complex[:, :, ::1] m_v = np.ascontiguousarray(m_inner, dtype=np.complex128)
    cdef double[::1] prior_v = np.ascontiguousarray(log_prior, dtype=np.float64)
    cdef long long[:, ::1] supp_v = np.ascontiguousarray(supports, dtype=np.int64)

    cdef Py_ssize_t n_samples = y_v.shape[0]
    cdef Py_ssize_t n_obs = y_v.shape[1]
    cdef Py_ssize_t K = ad_v.shape[0]
    cdef Py_ssize_t P = ad_v.shape[2]
    cdef Py_ssize_t n_ant = dt_v.shape[1]

    s_hat = np.zeros((n_samples, grid_size), dtype=np.complex128)
    h_hat = np.zeros((n_samples, n_ant), dtype=np.complex128)
    resp = np.empty((n_samples, K), dtype=np.float64)
    cdef double complex[:, ::1] s_v = s_hat
    cdef double complex[:, ::1] h_v = h_hat
    cdef double[:, ::1] r_v = resp

    mu = np.empty((K, P), dtype=np.complex128)
    bvec = np.empty(P, dtype=np.complex128)
    tvec = np.empty(P, dtype=np.complex128)
    logw = np.empty(K, dtype=np.float64)
    cdef double complex[:, ::1] mu_v = mu
    cdef double complex[::1] b_v = bvec
    cdef double complex[::1] t_v = tvec
    cdef double[::1] lw_v = logw

    cdef Py_ssize_t b, k, p, q, m, n
    cdef double complex acc, yv, av
    cdef double ynorm2, bht, quad, shift, wsum, rk
    cdef long long ops = 0

    for b in range(n_samples):
        ynorm2 = 0.0
        for m in range(n_obs):
            yv = y_v[b, m]
            ynorm2 += yv.real * yv.real + yv.imag * yv.imag
        ops += n_obs

        for k in range(K):
            for p in range(P):
                acc = 0
                for m in range(n_obs):
                    av = ad_v[k, m, p]
                    acc += av.conjugate() * y_v[b, m]
                b_v[p] = acc
            ops += n_obs * P

            for p in range(P):
                acc = 0
                for q in range(P):
                    acc += m_v[k, p, q] * b_v[q]
                t_v[p] = acc
            ops += P * P

            bht = 0.0
            for p in range(P):
                mu_v[k, p] = t_v[p] / sigma2
                bht += b_v[p].real * t_v[p].real + b_v[p].imag * t_v[p].imag
            ops += 2 * P

            quad = (ynorm2 - bht / sigma2) / sigma2
            lw_v[k] = prior_v[k] - quad
            ops += 1

        shift = lw_v[0]
        for k in range(1, K):
            if lw_v[k] > shift:
                shift = lw_v[k]
        wsum = 0.0
        for k in range(K):
            r_v[b, k] = exp(lw_v[k] - shift)
            wsum += r_v[b, k]
        for k in range(K):
            r_v[b, k] /= wsum
        ops += 2 * K

        for k in range(K):
            rk = r_v[b, k]
            for p in range(P):
                s_v[b, supp_v[k, p]] += rk * mu_v[k, p]
            ops += P
            for n in range(n_ant):
                acc = 0
                for p in range(P):
                    acc += dt_v[k, n, p] * mu_v[k, p]
                h_v[b, n] += rk * acc
            ops += n_ant * P + n_ant

    return s_hat, h_hat, resp, int(ops)
