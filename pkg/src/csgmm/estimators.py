"""Online joint channel and direction estimation from a trained mixture, plus
the reference baselines (LS, sample LMMSE, genie LMMSE, per-sample SBL, grid
matched filter).

The online path never solves an N x N system: per component only the cached
P x P inner inverse from the matrix inversion lemma is applied, giving
O(N*K*P) complex multiply-adds per observation. Pruned models and caches are
immutable after construction, so estimation calls are pure and reentrant.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import backend
from .channel_sim import Dataset, save_dataset

_LOG_PI = np.log(np.pi)


@dataclass(frozen=True)
class PrunedModel:
    """Per-component top-P support restriction of a trained mixture."""

    support_size: int
    supports: np.ndarray  # (K, P) int64, strictly increasing per row
    gammas: np.ndarray  # (K, P) the retained variances, in support order
    sub_dictionaries: np.ndarray  # (K, N, P)
    weights: np.ndarray  # (K,)
    grid: object
    noise_variance: float = 0.0

    @property
    def n_components(self):
        return self.weights.shape[0]

    @property
    def n_antennas(self):
        return self.sub_dictionaries.shape[1]


def prune(model, dictionary, support_size):
    """Keep the top-``support_size`` variances per component (ties to the lower
    index) and the matching dictionary columns."""
    K, S = model.gammas.shape
    if not 1 <= support_size <= S:
        raise ValueError("support size must lie in [1, grid size]")
    if dictionary.grid.size != S:
        raise ValueError("dictionary does not match the model grid")
    supports = np.empty((K, support_size), dtype=np.int64)
    for k in range(K):
        top = np.argsort(-model.gammas[k], kind="stable")[:support_size]
        supports[k] = np.sort(top)
    gammas = np.take_along_axis(model.gammas, supports, axis=1)
    subs = np.ascontiguousarray(
        np.stack([dictionary.matrix[:, supports[k]] for k in range(K)])
    )
    return PrunedModel(
        support_size=support_size,
        supports=supports,
        gammas=gammas,
        sub_dictionaries=subs,
        weights=model.weights.copy(),
        grid=dictionary.grid,
        noise_variance=model.noise_variance,
    )


@dataclass(frozen=True)
class EstimatorCache:
    """Precomputed per-(component, noise variance) factors for the online path.

    For each component: the measured sub-dictionary A @ D_k, the inner inverse
    (diag(1/gamma_k) + (A D_k)^H (A D_k) / sigma2)^{-1}, and
    log weight_k - logdet(observation covariance); keyed by the exact noise
    variances declared at build time.
    """

    measured_subs: np.ndarray  # (K, M, P)
    per_sigma2: dict = field(default_factory=dict)  # sigma2 -> (m_inner, log_prior)

    def factors(self, noise_variance):
        try:
            return self.per_sigma2[noise_variance]
        except KeyError:
            raise KeyError(
                f"noise variance {noise_variance!r} not in the cache; "
                f"declared values: {sorted(self.per_sigma2)}"
            ) from None

    @property
    def noise_variances(self):
        return tuple(sorted(self.per_sigma2))


def build_cache(pruned, A, sigma2_list):
    """Precompute all inversion-lemma factors; estimation afterwards performs
    no matrix inversion."""
    K, P = pruned.gammas.shape
    if A is None:
        measured = pruned.sub_dictionaries
    else:
        A = np.asarray(A, dtype=np.complex128)
        measured = np.ascontiguousarray(
            np.einsum("mn,knp->kmp", A, pruned.sub_dictionaries)
        )
    n_obs = measured.shape[1]
    log_w = np.log(pruned.weights)
    sum_log_gamma = np.log(pruned.gammas).sum(axis=1)
    per_sigma2 = {}
    for sigma2 in sigma2_list:
        sigma2 = float(sigma2)
        if sigma2 <= 0:
            raise ValueError("cached noise variances must be positive")
        m_inner = np.empty((K, P, P), dtype=np.complex128)
        log_prior = np.empty(K)
        for k in range(K):
            prec = measured[k].conj().T @ measured[k] / sigma2
            prec[np.diag_indices_from(prec)] += 1.0 / pruned.gammas[k]
            try:
                L = np.linalg.cholesky(prec)
            except np.linalg.LinAlgError as exc:
                raise RuntimeError(
                    "inner matrix not positive definite; this cannot happen for "
                    "positive gammas and noise variance"
                ) from exc
            logdet_prec = 2.0 * np.log(np.real(np.diag(L))).sum()
            inv_l = scipy.linalg.solve_triangular(
                L, np.eye(P, dtype=np.complex128), lower=True, check_finite=False
            )
            m_k = inv_l.conj().T @ inv_l
            m_inner[k] = (m_k + m_k.conj().T) / 2.0
            # determinant lemma: logdet(C_k) over the observation space
            logdet_cov = n_obs * np.log(sigma2) + sum_log_gamma[k] + logdet_prec
            log_prior[k] = log_w[k] - logdet_cov
        per_sigma2[sigma2] = (m_inner, log_prior)
    return EstimatorCache(measured_subs=measured, per_sigma2=per_sigma2)


@dataclass
class EstimationResult:
    """Joint estimate from one observation."""

    s_hat: np.ndarray  # (S,) posterior mean of the sparse coefficients
    h_hat: np.ndarray  # (N,) channel estimate, equals D @ s_hat
    responsibilities: np.ndarray  # (K,)
    doa_estimates: list | None = None  # [(angle_rad, peak_value), ...]


def estimate_batch(Y, pruned, cache, noise_variance, backend_name=None):
    """Estimate a batch of observations.

    Returns (s_hat (B, S), h_hat (B, N), responsibilities (B, K), ops) where
    ops is the tallied number of complex multiply-adds of the online path.
    """
    kern = backend if backend_name is None else backend.get_backend(backend_name)
    m_inner, log_prior = cache.factors(float(noise_variance))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.complex128))
    return kern.estimate_batch(
        Y,
        cache.measured_subs,
        pruned.sub_dictionaries,
        m_inner,
        log_prior,
        pruned.supports,
        float(noise_variance),
        pruned.grid.size,
    )


def estimate(y, pruned, cache, noise_variance):
    """Joint channel and coefficient estimate for a single observation."""
    s_hat, h_hat, resp, _ = estimate_batch(y, pruned, cache, noise_variance)
    return EstimationResult(
        s_hat=s_hat[0], h_hat=h_hat[0], responsibilities=resp[0]
    )


def _peak_angles(power, grid, n_peaks):
    """Peaks of a power profile over the sine-sorted grid ordering."""
    order = grid.sorted_order()
    vals = power[order]
    if n_peaks == 1:
        idx = int(np.argmax(vals))
        return [(float(np.arcsin(grid.sines[order[idx]])), float(vals[idx]))]
    peaks = []
    for i in range(vals.size):
        left_ok = i == 0 or vals[i] > vals[i - 1]
        right_ok = i == vals.size - 1 or vals[i] > vals[i + 1]
        if left_ok and right_ok:
            peaks.append((float(np.arcsin(grid.sines[order[i]])), float(vals[i])))
    peaks.sort(key=lambda pv: -pv[1])
    return peaks[:n_peaks]


def estimate_doa(result, grid, n_peaks=1):
    """Angles of the strongest peaks of |s_hat|^2; single-source usage takes
    the global argmax. Stores (angle, value) pairs on the result."""
    if n_peaks < 1:
        raise ValueError("n_peaks must be >= 1")
    peaks = _peak_angles(np.abs(result.s_hat) ** 2, grid, n_peaks)
    result.doa_estimates = peaks
    return [angle for angle, _ in peaks]


def doa_batch(s_hats, grid):
    """Global-argmax direction per row of a batch of coefficient estimates."""
    order = grid.sorted_order()
    power = np.abs(s_hats[:, order]) ** 2
    idx = np.argmax(power, axis=1)
    return np.arcsin(grid.sines[order[idx]])


# ---------------------------------------------------------------------------
# Baselines


def baseline_ls(y):
    """Least-squares estimate for y = h + n: the observation itself."""
    return np.array(y, copy=True)


class SampleLmmseEstimator:
    """LMMSE filter from the sample covariance of noisy training observations.

    The channel covariance estimate subtracts the noise covariance and
    projects negative eigenvalues to zero.
    """

    def __init__(self, train_observations, noise_variance):
        Y = np.asarray(train_observations, dtype=np.complex128)
        n = Y.shape[1]
        s_y = Y.T @ Y.conj() / Y.shape[0]
        s_y = (s_y + s_y.conj().T) / 2.0
        evals, evecs = np.linalg.eigh(s_y - noise_variance * np.eye(n))
        self.channel_cov = (evecs * np.clip(evals, 0.0, None)) @ evecs.conj().T
        self.obs_cov = s_y
        try:
            self.filter = np.linalg.solve(s_y.conj().T, self.channel_cov.conj().T).conj().T
        except np.linalg.LinAlgError:
            self.filter = self.channel_cov @ scipy.linalg.pinvh(s_y)

    def __call__(self, y):
        y = np.asarray(y, dtype=np.complex128)
        if y.ndim == 1:
            return self.filter @ y
        return y @ self.filter.T


def baseline_sample_lmmse(train_observations, noise_variance):
    return SampleLmmseEstimator(train_observations, noise_variance)


def baseline_genie_lmmse(true_cov, noise_variance, y):
    """LMMSE with the true per-sample covariance: C (C + sigma2 I)^{-1} y."""
    n = true_cov.shape[0]
    return true_cov @ np.linalg.solve(true_cov + noise_variance * np.eye(n), y)


def sbl_batch(Y, dictionary, noise_variance, max_iter=200, tol=1e-6,
              gamma_floor=1e-12):
    """Per-sample sparse Bayesian learning (EM with known noise variance).

    Fixed point of gamma_i = |mu_i|^2 + Sigma_ii with the posterior
    Sigma = (diag(1/gamma) + D^H D / sigma2)^{-1}, mu = Sigma D^H y / sigma2,
    evaluated through the N x N form for speed. Returns (mu (B, S), gamma).
    """
    D = dictionary.matrix if hasattr(dictionary, "matrix") else np.asarray(dictionary)
    Y = np.atleast_2d(np.asarray(Y, dtype=np.complex128))
    n_samples, n = Y.shape
    S = D.shape[1]
    gamma = np.maximum(np.abs(Y @ D.conj()) ** 2 / n**2, gamma_floor)
    mu = np.zeros((n_samples, S), dtype=np.complex128)
    active = np.arange(n_samples)
    eye = noise_variance * np.eye(n)
    for _ in range(max_iter):
        Ya = Y[active]
        ga = gamma[active]
        cov = np.einsum("nr,br,mr->bnm", D, ga, D.conj(), optimize=True) + eye
        w_y = np.linalg.solve(cov, Ya[:, :, None])[:, :, 0]
        mu_a = ga * (w_y @ D.conj())
        w_d = np.linalg.solve(cov, np.broadcast_to(D, (active.size, n, S)))
        diag_quad = np.real(np.einsum("nr,bnr->br", D.conj(), w_d))
        sigma_diag = ga - ga**2 * diag_quad
        new_gamma = np.maximum(np.abs(mu_a) ** 2 + sigma_diag, gamma_floor)
        mu[active] = mu_a
        change = np.abs(new_gamma - ga).sum(axis=1) / np.abs(ga).sum(axis=1)
        gamma[active] = new_gamma
        active = active[change >= tol]
        if active.size == 0:
            break
    return mu, gamma


def baseline_sbl(y, dictionary, noise_variance, max_iter=200, tol=1e-6):
    """Single-observation SBL; returns (coefficient posterior mean, doa)."""
    mu, _ = sbl_batch(y, dictionary, noise_variance, max_iter=max_iter, tol=tol)
    grid = dictionary.grid
    doa = doa_batch(mu, grid)
    return mu[0], float(doa[0])


def baseline_dml(y, dictionary_or_grid):
    """Single-snapshot grid matched filter: argmax |a(delta)^H y|^2 over the
    grid (steering norms are constant on a ULA grid); ties take the lowest
    grid index."""
    if hasattr(dictionary_or_grid, "matrix"):
        D = dictionary_or_grid.matrix
        grid = dictionary_or_grid.grid
    else:
        grid = dictionary_or_grid
        from .dictionary import _steering_from_sines

        D = _steering_from_sines(grid.sines, np.asarray(y).shape[-1])
    y = np.asarray(y, dtype=np.complex128)
    corr = np.abs(y @ D.conj()) ** 2 if y.ndim > 1 else np.abs(D.conj().T @ y) ** 2
    idx = np.argmax(corr, axis=-1)
    return np.arcsin(grid.sines[idx])


# ---------------------------------------------------------------------------
# Batch estimation I/O


def responsibility_entropy(resp):
    """Shannon entropy (nats) per row of a responsibility matrix."""
    resp = np.atleast_2d(resp)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(resp > 0, resp * np.log(resp), 0.0)
    return -terms.sum(axis=1)


def save_results_csv(path, doa_rad, entropy, h_hat=None):
    """Write per-sample estimation results; channel columns are optional."""
    n_ant = 0 if h_hat is None else h_hat.shape[1]
    header = ["sample_index", "doa_estimate_rad", "responsibility_entropy"]
    for i in range(n_ant):
        header += [f"h_hat_re_{i}", f"h_hat_im_{i}"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(doa_rad)):
            row = [i, f"{doa_rad[i]:.12g}", f"{entropy[i]:.12g}"]
            if h_hat is not None:
                for v in h_hat[i]:
                    row += [f"{v.real:.12g}", f"{v.imag:.12g}"]
            writer.writerow(row)


def save_channel_estimates(path, h_hat, noise_variance, seed):
    """Binary mirror of the channel estimates in the dataset file layout."""
    save_dataset(
        Dataset(observations=h_hat, noise_variance=noise_variance, seed=seed), path
    )
