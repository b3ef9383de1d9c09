"""Vectorized numpy implementation of the online estimation kernel.

Reference semantics for the compiled extension (csgmm._kernels); both
backends must agree to floating-point reassociation accuracy and report
identical multiply-add tallies. One complex multiply-add is the counting
unit; each stage adds the number of such operations it executes.
"""

import numpy as np

BACKEND = "python"


def estimate_batch(Y, ad, dt, m_inner, log_prior, supports, sigma2, grid_size):
    """Posterior-mixture estimate for a batch of observations.

    Y: (B, M) observations; ad: (K, M, P) measured sub-dictionaries;
    dt: (K, N, P) sub-dictionaries; m_inner: (K, P, P) cached inner inverses;
    log_prior: (K,) log weight minus observation-covariance log-determinant;
    supports: (K, P) grid columns per component.

    Returns (s_hat (B, grid_size), h_hat (B, N), responsibilities (B, K), ops).
    """
    Y = np.ascontiguousarray(Y, dtype=np.complex128)
    n_samples, n_obs = Y.shape
    K, _, P = ad.shape
    n_ant = dt.shape[1]
    ops = 0

    ynorm2 = np.sum(np.abs(Y) ** 2, axis=1)
    ops += n_samples * n_obs

    bvec = np.einsum("kmp,bm->bkp", ad.conj(), Y, optimize=True)
    ops += n_samples * K * n_obs * P
    tvec = np.einsum("kpq,bkq->bkp", m_inner, bvec, optimize=True)
    ops += n_samples * K * P * P
    mu = tvec / sigma2
    ops += n_samples * K * P
    # quadratic form of the observation precision: (||y||^2 - b^H t / s2) / s2
    bht = np.sum((bvec.conj() * tvec).real, axis=2)
    quad = (ynorm2[:, None] - bht / sigma2) / sigma2
    ops += n_samples * K * (P + 1)

    logw = log_prior[None, :] - quad
    shift = logw.max(axis=1, keepdims=True)
    w = np.exp(logw - shift)
    resp = w / w.sum(axis=1, keepdims=True)
    ops += n_samples * 2 * K

    s_hat = np.zeros((n_samples, grid_size), dtype=np.complex128)
    for k in range(K):
        s_hat[:, supports[k]] += resp[:, k, None] * mu[:, k, :]
    ops += n_samples * K * P

    h_hat = np.einsum("knp,bkp,bk->bn", dt, mu, resp, optimize=True)
    ops += n_samples * K * (n_ant * P + n_ant)

    return s_hat, h_hat, resp, ops
