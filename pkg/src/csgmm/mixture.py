"""Sparse Gaussian mixture over dictionary coefficients, trained by EM from
noisy observations only.

Statistical model: y = A D s + n with n ~ CN(0, sigma2 I), s | k ~
CN(0, diag(gamma_k)), k ~ weights. Training learns {gamma_k, weights_k}
for a known dictionary D and known noise variance. The learned mixture
implies a channel mixture with covariances D diag(gamma_k) D^H.

All responsibility math runs in the log domain; the observed-data
log-likelihood is recorded every iteration and must be non-decreasing,
which is the primary correctness oracle for the update equations.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .dictionary import GRID_KINDS, AngleGrid

_LOG_PI = np.log(np.pi)
_STARVED_RESP = 1e-12


@dataclass
class TrainConfig:
    n_components: int
    max_iter: int = 500
    rel_tol: float = 1e-6
    gamma_floor: float | None = None  # None: 1e-8 * mean per-entry power
    init: str = "periodogram"  # "periodogram" or "given"
    init_gammas: np.ndarray | None = None
    seed: int = 0
    measurement_matrix: np.ndarray | None = None  # None means identity
    chunk_size: int = 4096

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("need at least one mixture component")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.gamma_floor is not None and self.gamma_floor <= 0:
            raise ValueError("gamma_floor must be positive")
        if self.init not in ("periodogram", "given"):
            raise ValueError(f"unknown init strategy {self.init!r}")
        if self.init == "given" and self.init_gammas is None:
            raise ValueError("init 'given' requires init_gammas")


@dataclass
class CsgmmModel:
    """Learned mixture parameters plus training metadata."""

    gammas: np.ndarray  # (K, S) nonnegative, floored
    weights: np.ndarray  # (K,) simplex
    noise_variance: float
    grid: AngleGrid
    seed: int = 0
    n_iter: int = 0
    ll_history: np.ndarray | None = None
    gamma_floor: float = 0.0

    def __post_init__(self):
        self.gammas = np.ascontiguousarray(self.gammas, dtype=float)
        self.weights = np.ascontiguousarray(self.weights, dtype=float)
        if self.gammas.ndim != 2:
            raise ValueError("gammas must be (n_components, grid size)")
        if self.gammas.shape[1] != self.grid.size:
            raise ValueError("gammas width must match the grid size")
        if self.weights.shape != (self.gammas.shape[0],):
            raise ValueError("one weight per component required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must form a probability simplex")
        if np.any(self.gammas <= 0):
            raise ValueError("gammas must be strictly positive (floored)")
        if self.noise_variance <= 0:
            raise ValueError("trained noise variance must be positive")

    @property
    def n_components(self):
        return self.gammas.shape[0]

    @property
    def monotone(self):
        """True when the recorded log-likelihood never decreased (1e-8 slack)."""
        if self.ll_history is None or len(self.ll_history) < 2:
            return True
        ll = np.asarray(self.ll_history)
        return bool(np.all(np.diff(ll) >= -1e-8 * np.abs(ll[:-1])))

    def save(self, path):
        save_model(self, path)

    @classmethod
    def load(cls, path):
        return load_model(path)


def _as_observations(data):
    obs = getattr(data, "observations", data)
    return np.ascontiguousarray(obs, dtype=np.complex128)


def _effective_dictionary(A, D):
    """A @ D with A=None meaning identity; D may be a Dictionary or a matrix."""
    mat = getattr(D, "matrix", D)
    mat = np.asarray(mat, dtype=np.complex128)
    if A is None:
        return mat
    A = np.asarray(A, dtype=np.complex128)
    if A.shape[1] != mat.shape[0]:
        raise ValueError("measurement matrix width must match dictionary height")
    return A @ mat


def component_observation_covariance(model, k, A, D, noise_variance):
    """Observation covariance of component k: (AD) diag(gamma_k) (AD)^H + sigma2 I.

    Symmetrized so the result equals its conjugate transpose exactly."""
    B = _effective_dictionary(A, D)
    if B.shape[1] != model.gammas.shape[1]:
        raise ValueError("dictionary size does not match the model grid")
    cov = (B * model.gammas[k]) @ B.conj().T
    cov = (cov + cov.conj().T) / 2.0
    cov[np.diag_indices_from(cov)] += noise_variance
    return cov


def _observation_covariances(B, gammas, noise_variance):
    """Stacked observation covariances B diag(gamma_k) B^H + sigma2 I with
    their log-determinants and inverses (batched; covariances are PD by the
    gamma floor)."""
    covs = np.einsum("mr,kr,nr->kmn", B, gammas, B.conj(), optimize=True)
    idx = np.arange(B.shape[0])
    covs[:, idx, idx] += noise_variance
    try:
        chols = np.linalg.cholesky(covs)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(
            "component observation covariance not positive definite; "
            "gamma_floor is misconfigured"
        ) from exc
    logdets = 2.0 * np.log(np.real(chols[:, idx, idx])).sum(axis=1)
    return covs, logdets, np.linalg.inv(covs)


def _component_log_densities(Y, B, gammas, noise_variance):
    """log CN(y_n; 0, B diag(gamma_k) B^H + sigma2 I) for all samples and
    components. Returns (logp (n, K), stacked covariance inverses)."""
    n_obs = B.shape[0]
    _, logdets, inverses = _observation_covariances(B, gammas, noise_variance)
    # rows of whitened[k] are (C_k^{-1} y_n)^T; C Hermitian makes C^{-T} = conj(C^{-1})
    whitened = np.matmul(Y[None, :, :], inverses.conj())
    quad = np.einsum("bm,kbm->bk", Y.conj(), whitened, optimize=True).real
    logp = -n_obs * _LOG_PI - logdets[None, :] - quad
    return logp, inverses


def _posterior_factors(B, gammas, noise_variance):
    """Posterior covariance of s per component:
    Sigma_k = (diag(1/gamma_k) + B^H B / sigma2)^{-1}  (sample-independent)."""
    gram = B.conj().T @ B / noise_variance
    covs = np.empty((gammas.shape[0],) + gram.shape, dtype=np.complex128)
    for k in range(gammas.shape[0]):
        prec = gram.copy()
        prec[np.diag_indices_from(prec)] += 1.0 / gammas[k]
        try:
            L = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError(
                "posterior precision not positive definite; "
                "gamma_floor is misconfigured"
            ) from exc
        inv_l = scipy.linalg.solve_triangular(
            L, np.eye(L.shape[0], dtype=np.complex128), lower=True, check_finite=False
        )
        covs[k] = inv_l.conj().T @ inv_l
    return covs


def e_step(model, data, A, D):
    """Responsibilities, per-(sample, component) posterior means of s, and the
    sample-independent posterior covariances.

    Materializes (n, K, S) means; intended for moderate problem sizes. The
    training loop uses a chunked accumulator with identical math.
    """
    Y = _as_observations(data)
    B = _effective_dictionary(A, D)
    logp, _ = _component_log_densities(Y, B, model.gammas, model.noise_variance)
    logw = logp + np.log(model.weights)[None, :]
    resp = np.exp(logw - logsumexp(logw, axis=1, keepdims=True))
    covs = _posterior_factors(B, model.gammas, model.noise_variance)
    Z = (B.conj().T @ Y.T) / model.noise_variance  # (S, n)
    means = np.einsum("ksr,rn->nks", covs, Z)
    return resp, means, covs


def m_step(resp, post_means, post_covs, prev_gammas=None, gamma_floor=0.0):
    """Update (gammas, weights) from E-step quantities.

    gamma_{k,i} = sum_n r_nk (|mu_nki|^2 + Sigma_k,ii) / sum_n r_nk;
    a component with total responsibility below 1e-12 keeps its previous gammas.
    """
    n_samples, K = resp.shape
    totals = resp.sum(axis=0)
    weights = totals / n_samples
    weights = weights / weights.sum()
    diag_cov = np.real(np.einsum("kss->ks", post_covs))
    gammas = np.empty((K, post_means.shape[2]))
    for k in range(K):
        if totals[k] < _STARVED_RESP:
            if prev_gammas is None:
                raise ValueError("starved component but no previous gammas given")
            gammas[k] = prev_gammas[k]
            continue
        second_moment = resp[:, k] @ np.abs(post_means[:, k, :]) ** 2 / totals[k]
        gammas[k] = second_moment + diag_cov[k]
    return np.maximum(gammas, gamma_floor), weights


def log_likelihood(model, data, A, D):
    """Observed-data log-likelihood sum_n log sum_k w_k CN(y_n; 0, C_k)."""
    Y = _as_observations(data)
    B = _effective_dictionary(A, D)
    logp, _ = _component_log_densities(Y, B, model.gammas, model.noise_variance)
    return float(logsumexp(logp + np.log(model.weights)[None, :], axis=1).sum())


def _periodogram_init(Y, B, n_components, gamma_floor, seed):
    """Pick K seed samples by farthest-point selection on their angular
    periodograms |B^H y|^2 / N^2 and use those periodograms as initial gammas."""
    n_obs = B.shape[0]
    pgrams = np.abs(Y @ B.conj()) ** 2 / n_obs**2  # (n, S)
    rng = np.random.Generator(
        np.random.Philox(key=np.array([seed, 2**64 - 1], dtype=np.uint64))
    )
    chosen = [int(rng.integers(Y.shape[0]))]
    min_dist = np.sum((pgrams - pgrams[chosen[0]]) ** 2, axis=1)
    for _ in range(1, n_components):
        idx = int(np.argmax(min_dist))  # argmax takes the lowest index on ties
        chosen.append(idx)
        min_dist = np.minimum(min_dist, np.sum((pgrams - pgrams[idx]) ** 2, axis=1))
    return np.maximum(pgrams[chosen], gamma_floor)


def _accumulate_em_stats(Y, B, gammas, weights, noise_variance, chunk_size):
    """One fused E pass: log-likelihood, per-component responsibility totals,
    responsibility-weighted |posterior mean|^2 sums, and the posterior
    covariance diagonals.

    Works through the observation-space Cholesky factors (posterior mean
    mu_nk = diag(gamma_k) B^H C_k^{-1} y_n, algebraically equal to the
    coefficient-space form used by e_step) so the per-iteration cost stays
    linear in the grid size. Chunked over samples; all reductions are
    associative sums, so the chunk size only reorders floating-point
    accumulation.
    """
    K, S = gammas.shape
    n_obs = B.shape[0]
    log_weights = np.log(weights)

    _, logdets, inverses = _observation_covariances(B, gammas, noise_variance)
    inv_conj = inverses.conj()
    B_conj = np.ascontiguousarray(B.conj())
    # diag(Sigma_k)_i = gamma_i - gamma_i^2 * b_i^H C_k^{-1} b_i
    t_all = np.matmul(inverses, B[None, :, :])
    quad_b = np.einsum("ms,kms->ks", B_conj, t_all, optimize=True).real
    diag_cov = np.maximum(gammas - gammas**2 * quad_b, 0.0)

    total_ll = 0.0
    resp_totals = np.zeros(K)
    weighted_sq = np.zeros((K, S))
    for start in range(0, Y.shape[0], chunk_size):
        Yc = Y[start : start + chunk_size]
        yc_conj = Yc.conj()
        # rows of whitened[k] are (C_k^{-1} y_n)^T; C Hermitian: C^{-T} = conj(C^{-1})
        whitened = np.matmul(Yc[None, :, :], inv_conj)
        quad = np.einsum("bm,kbm->bk", yc_conj, whitened, optimize=True).real
        logw = -n_obs * _LOG_PI - logdets[None, :] - quad + log_weights[None, :]
        norm = logsumexp(logw, axis=1)
        total_ll += float(norm.sum())
        resp = np.exp(logw - norm[:, None])
        resp_totals += resp.sum(axis=0)
        mu = np.matmul(whitened, B_conj) * gammas[:, None, :]  # (K, chunk, S)
        weighted_sq += np.einsum("bk,kbs->ks", resp, np.abs(mu) ** 2, optimize=True)
    return total_ll, resp_totals, weighted_sq, diag_cov


def train(data, D, config):
    """EM training of the mixture from noisy observations.

    Deterministic under config.seed; the per-iteration log-likelihood history
    is stored on the returned model and must be non-decreasing.
    """
    Y = _as_observations(data)
    if Y.shape[0] == 0:
        raise ValueError("empty training dataset")
    noise_variance = float(getattr(data, "noise_variance", 0.0) or 0.0)
    if noise_variance <= 0.0:
        raise ValueError("training requires a known positive noise variance")
    B = _effective_dictionary(config.measurement_matrix, D)
    if Y.shape[1] != B.shape[0]:
        raise ValueError("observation length does not match the measurement model")

    gamma_floor = config.gamma_floor
    if gamma_floor is None:
        gamma_floor = 1e-8 * float(np.mean(np.abs(Y) ** 2))
    if config.init == "given":
        gammas = np.maximum(
            np.asarray(config.init_gammas, dtype=float).copy(), gamma_floor
        )
        if gammas.shape != (config.n_components, B.shape[1]):
            raise ValueError("init_gammas must be (n_components, grid size)")
    else:
        gammas = _periodogram_init(Y, B, config.n_components, gamma_floor, config.seed)
    weights = np.full(config.n_components, 1.0 / config.n_components)

    ll_history = []
    n_iter = 0
    for _ in range(config.max_iter):
        ll, totals, weighted_sq, diag_cov = _accumulate_em_stats(
            Y, B, gammas, weights, noise_variance, config.chunk_size
        )
        ll_history.append(ll)
        if len(ll_history) > 1:
            prev = ll_history[-2]
            if abs(ll - prev) < config.rel_tol * max(1.0, abs(prev)):
                break
        new_gammas = gammas.copy()
        alive = totals >= _STARVED_RESP
        new_gammas[alive] = weighted_sq[alive] / totals[alive, None] + diag_cov[alive]
        gammas = np.maximum(new_gammas, gamma_floor)
        weights = totals / Y.shape[0]
        weights = weights / weights.sum()
        n_iter += 1
    else:
        # ran out of iterations (or max_iter == 0): log the final parameters' LL
        logp, _ = _component_log_densities(Y, B, gammas, noise_variance)
        ll_history.append(
            float(logsumexp(logp + np.log(weights)[None, :], axis=1).sum())
        )

    grid = D.grid if hasattr(D, "grid") else AngleGrid(sines=np.asarray(D), kind="custom")
    return CsgmmModel(
        gammas=gammas,
        weights=weights,
        noise_variance=noise_variance,
        grid=grid,
        seed=config.seed,
        n_iter=n_iter,
        ll_history=np.asarray(ll_history),
        gamma_floor=gamma_floor,
    )


def implied_channel_covariance(model, k, D):
    """Channel covariance implied by component k: D diag(gamma_k) D^H."""
    mat = getattr(D, "matrix", D)
    return (mat * model.gammas[k]) @ mat.conj().T


_CSGM1_MAGIC = b"CSGM1"
_CSGM1_VERSION = 1


def save_model(model, path):
    """Write the CSGM1 binary file plus a JSON export for inspection."""
    path = Path(path)
    kind_id = GRID_KINDS.index(model.grid.kind)
    K, S = model.gammas.shape
    parts = [
        _CSGM1_MAGIC,
        struct.pack("<IIIB", _CSGM1_VERSION, K, S, kind_id),
        model.grid.sines.astype("<f8").tobytes(),
        struct.pack("<d", model.noise_variance),
        model.gammas.astype("<f8").tobytes(),
        model.weights.astype("<f8").tobytes(),
        struct.pack("<QI", model.seed, model.n_iter),
    ]
    path.write_bytes(b"".join(parts))
    export = {
        "magic": _CSGM1_MAGIC.decode(),
        "version": _CSGM1_VERSION,
        "n_components": K,
        "grid_size": S,
        "grid_kind": model.grid.kind,
        "grid_sines": model.grid.sines.tolist(),
        "noise_variance": model.noise_variance,
        "weights": model.weights.tolist(),
        "seed": model.seed,
        "n_iter": model.n_iter,
        "gamma_floor": model.gamma_floor,
        "ll_history": None
        if model.ll_history is None
        else np.asarray(model.ll_history).tolist(),
    }
    Path(str(path) + ".json").write_text(json.dumps(export, sort_keys=True, indent=2))


def load_model(path):
    buf = Path(path).read_bytes()
    if buf[:5] != _CSGM1_MAGIC:
        raise ValueError(f"{path}: not a CSGM1 model file")
    version, K, S, kind_id = struct.unpack_from("<IIIB", buf, 5)
    if version != _CSGM1_VERSION:
        raise ValueError(f"{path}: unsupported CSGM1 version {version}")
    offset = 5 + struct.calcsize("<IIIB")
    sines = np.frombuffer(buf, dtype="<f8", count=S, offset=offset).copy()
    offset += 8 * S
    (noise_variance,) = struct.unpack_from("<d", buf, offset)
    offset += 8
    gammas = np.frombuffer(buf, dtype="<f8", count=K * S, offset=offset).reshape(K, S).copy()
    offset += 8 * K * S
    weights = np.frombuffer(buf, dtype="<f8", count=K, offset=offset).copy()
    offset += 8 * K
    seed, n_iter = struct.unpack_from("<QI", buf, offset)
    return CsgmmModel(
        gammas=gammas,
        weights=weights / weights.sum(),
        noise_variance=noise_variance,
        grid=AngleGrid(sines=sines, kind=GRID_KINDS[kind_id]),
        seed=seed,
        n_iter=n_iter,
        gamma_floor=float(gammas.min()),
    )
