"""Synthetic spatial channels: mixture angle prior, Laplacian power angular
spectrum, noisy observations, and a seeded binary dataset format (CSD1).

Every random draw flows from a counter-based Philox stream keyed by
(dataset seed, sample index), so generation is order-independent and can be
partitioned across workers without changing a single byte of the result.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

_DEG = np.pi / 180.0

# Default prior: four street canyons within a 120 degree sector, equal weight
# Laplacians at +-45 and +-15 degrees with 5 degree angular std.
DEFAULT_CANYON_CENTERS_DEG = (-45.0, -15.0, 15.0, 45.0)
DEFAULT_CANYON_STD_DEG = 5.0
DEFAULT_SUPPORT_DEG = (-60.0, 60.0)

_REJECTION_CAP = 10_000


@dataclass(frozen=True)
class AnglePrior:
    """Mixture prior over the path angle: (center, std, weight) Laplacian components
    truncated to a common support interval."""

    components: tuple  # ((center_rad, std_rad, weight), ...)
    support: tuple = (-np.pi / 3, np.pi / 3)

    def __post_init__(self):
        comps = tuple((float(c), float(s), float(w)) for c, s, w in self.components)
        object.__setattr__(self, "components", comps)
        lo, hi = self.support
        if not lo < hi:
            raise ValueError("prior support must satisfy lo < hi")
        weights = np.array([w for _, _, w in comps])
        if np.any(weights <= 0):
            raise ValueError("component weights must be strictly positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("component weights must sum to 1")
        for c, s, _ in comps:
            if not lo <= c < hi:
                raise ValueError("component center outside the support interval")
            if s <= 0:
                raise ValueError("component std must be positive")

    @property
    def weights(self):
        return np.array([w for _, _, w in self.components])


def default_angle_prior():
    n = len(DEFAULT_CANYON_CENTERS_DEG)
    comps = tuple(
        (c * _DEG, DEFAULT_CANYON_STD_DEG * _DEG, 1.0 / n)
        for c in DEFAULT_CANYON_CENTERS_DEG
    )
    return AnglePrior(components=comps, support=tuple(d * _DEG for d in DEFAULT_SUPPORT_DEG))


@dataclass(frozen=True)
class ChannelScenario:
    """Array geometry plus the statistics of the angular channel model."""

    n_antennas: int
    angle_prior: AnglePrior = field(default_factory=default_angle_prior)
    pas_std: float = 2.0 * _DEG  # Laplacian spread of the power angular spectrum
    quadrature_nodes: int = 1024

    def __post_init__(self):
        if self.n_antennas < 2:
            raise ValueError("need at least 2 antennas")
        if self.pas_std <= 0:
            raise ValueError("pas_std must be positive")
        if self.quadrature_nodes < 64:
            raise ValueError("quadrature too coarse, need at least 64 nodes")


def sample_rng(seed, sample_index):
    """Per-sample substream: Philox keyed by (seed, sample index)."""
    return np.random.Generator(
        np.random.Philox(key=np.array([seed, sample_index], dtype=np.uint64))
    )


def _sample_angle_component(prior, rng):
    """Draw (angle, component index); the component draw is needed by tests."""
    weights = prior.weights
    k = int(rng.choice(len(weights), p=weights))
    center, std, _ = prior.components[k]
    scale = std / np.sqrt(2.0)  # Laplacian: std = sqrt(2) * scale
    lo, hi = prior.support
    for _ in range(_REJECTION_CAP):
        angle = rng.laplace(loc=center, scale=scale)
        if lo <= angle < hi:
            return angle, k
    raise RuntimeError("angle rejection sampling exhausted its retry cap")


def sample_angle(prior, rng):
    """Draw one path angle from the truncated mixture prior."""
    return _sample_angle_component(prior, rng)[0]


_GL_POINTS, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _quadrature_rule(delta, n_nodes):
    """Composite 8-point Gauss-Legendre nodes/weights on [-pi, pi], split at
    the density kink ``delta`` so every panel sees a smooth integrand. The
    node budget ``n_nodes`` is spent in panels of 8, allocated to the two
    smooth pieces proportionally to their length (at least one panel each)."""
    n_panels = max(2, n_nodes // 8)
    left_frac = (delta + np.pi) / (2.0 * np.pi)
    n_left = min(n_panels - 1, max(1, round(n_panels * left_frac)))
    nodes, weights = [], []
    for lo, hi, count in ((-np.pi, delta, n_left), (delta, np.pi, n_panels - n_left)):
        edges = np.linspace(lo, hi, count + 1)
        half = np.diff(edges) / 2.0
        mid = (edges[:-1] + edges[1:]) / 2.0
        nodes.append((mid[:, None] + half[:, None] * _GL_POINTS[None, :]).ravel())
        weights.append((half[:, None] * _GL_WEIGHTS[None, :]).ravel())
    return np.concatenate(nodes), np.concatenate(weights)


def _pas_first_column(delta, pas_std, n_antennas, n_nodes):
    """First Toeplitz column sum_q w_q exp(-j*pi*m*sin(theta_q)) with the
    Laplacian mass renormalized to integrate to exactly 1 (diagonal 1)."""
    nodes, quad_w = _quadrature_rule(delta, n_nodes)
    scale = pas_std / np.sqrt(2.0)
    w = np.exp(-np.abs(nodes - delta) / scale) * quad_w
    w /= w.sum()
    phases = np.exp(-1j * np.pi * np.outer(np.arange(n_antennas), np.sin(nodes)))
    return phases @ w


def pas_covariance(delta, scenario):
    """Channel covariance for a path at ``delta``: the steering outer product
    averaged over the Laplacian power angular spectrum.

    The density is renormalized on the quadrature so the diagonal is exactly 1
    (trace N); the result is Hermitian Toeplitz PSD.
    """
    if not -np.pi / 2 <= delta < np.pi / 2:
        raise ValueError("path angle must lie in [-pi/2, pi/2)")
    col = _pas_first_column(
        delta, scenario.pas_std, scenario.n_antennas, scenario.quadrature_nodes
    )
    return scipy.linalg.toeplitz(col, col.conj())


def psd_sqrt_factor(cov):
    """Eigen-based PSD square root; negative eigenvalues are clipped at 0."""
    cov = np.asarray(cov)
    if not np.allclose(cov, cov.conj().T, atol=1e-10 * max(1.0, np.abs(cov).max())):
        raise ValueError("covariance must be Hermitian")
    evals, evecs = np.linalg.eigh(cov)
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


def sample_channel(cov, rng):
    """Draw h ~ CN(0, cov) via the clipped eigen square root."""
    factor = psd_sqrt_factor(cov)
    n = cov.shape[0]
    u = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
    return factor @ u


def observe(channel, noise_variance, rng):
    """Noisy observation y = h + n with circular complex Gaussian noise."""
    if noise_variance < 0:
        raise ValueError("noise variance must be nonnegative")
    channel = np.asarray(channel)
    if noise_variance == 0.0:
        return channel.copy()
    n = channel.shape[0]
    noise = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(
        noise_variance / 2.0
    )
    return channel + noise


@dataclass
class Dataset:
    """Batch of noisy observations with optional ground truth."""

    observations: np.ndarray  # (n_samples, n_antennas) complex128
    noise_variance: float
    seed: int
    truth_channels: np.ndarray | None = None
    truth_angles: np.ndarray | None = None

    def __post_init__(self):
        obs = np.ascontiguousarray(self.observations, dtype=np.complex128)
        self.observations = obs
        if obs.ndim != 2:
            raise ValueError("observations must be (n_samples, n_antennas)")
        if self.noise_variance < 0:
            raise ValueError("noise variance must be nonnegative")
        if self.truth_channels is not None:
            self.truth_channels = np.ascontiguousarray(
                self.truth_channels, dtype=np.complex128
            )
            if self.truth_channels.shape != obs.shape:
                raise ValueError("truth channels must match observation shape")
        if self.truth_angles is not None:
            self.truth_angles = np.ascontiguousarray(self.truth_angles, dtype=float)
            if self.truth_angles.shape != (obs.shape[0],):
                raise ValueError("need one truth angle per observation")

    @property
    def n_samples(self):
        return self.observations.shape[0]

    @property
    def n_antennas(self):
        return self.observations.shape[1]

    def content_hash(self):
        """Short sha256 of the observation block (little-endian interleaved f64)."""
        import hashlib

        return hashlib.sha256(_complex_block_bytes(self.observations)).hexdigest()[:16]

    def save(self, path):
        save_dataset(self, path)

    @classmethod
    def load(cls, path):
        return load_dataset(path)


_CSD1_MAGIC = b"CSD1"
_CSD1_VERSION = 1


def _complex_block_bytes(arr):
    inter = np.empty(arr.shape + (2,), dtype="<f8")
    inter[..., 0] = arr.real
    inter[..., 1] = arr.imag
    return inter.tobytes()


def _read_complex_block(buf, offset, n_rows, n_cols):
    count = n_rows * n_cols * 2
    flat = np.frombuffer(buf, dtype="<f8", count=count, offset=offset)
    flat = flat.reshape(n_rows, n_cols, 2)
    return (flat[..., 0] + 1j * flat[..., 1]).astype(np.complex128), offset + count * 8


def save_dataset(dataset, path):
    """Write the CSD1 binary file plus a JSON sidecar mirroring the header."""
    path = Path(path)
    flags = 0
    if dataset.truth_channels is not None:
        flags |= 1
    if dataset.truth_angles is not None:
        flags |= 2
    header = _CSD1_MAGIC + struct.pack(
        "<IIQdQB",
        _CSD1_VERSION,
        dataset.n_antennas,
        dataset.n_samples,
        dataset.noise_variance,
        dataset.seed,
        flags,
    )
    blocks = [header, _complex_block_bytes(dataset.observations)]
    if dataset.truth_channels is not None:
        blocks.append(_complex_block_bytes(dataset.truth_channels))
    if dataset.truth_angles is not None:
        blocks.append(dataset.truth_angles.astype("<f8").tobytes())
    path.write_bytes(b"".join(blocks))
    sidecar = {
        "magic": _CSD1_MAGIC.decode(),
        "version": _CSD1_VERSION,
        "n_antennas": dataset.n_antennas,
        "n_samples": dataset.n_samples,
        "noise_variance": dataset.noise_variance,
        "seed": dataset.seed,
        "truth_channels": dataset.truth_channels is not None,
        "truth_angles": dataset.truth_angles is not None,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True, indent=2))


def load_dataset(path):
    buf = Path(path).read_bytes()
    if buf[:4] != _CSD1_MAGIC:
        raise ValueError(f"{path}: not a CSD1 dataset file")
    version, n_ant, n_samp, sigma2, seed, flags = struct.unpack_from("<IIQdQB", buf, 4)
    if version != _CSD1_VERSION:
        raise ValueError(f"{path}: unsupported CSD1 version {version}")
    offset = 4 + struct.calcsize("<IIQdQB")
    obs, offset = _read_complex_block(buf, offset, n_samp, n_ant)
    truth_channels = truth_angles = None
    if flags & 1:
        truth_channels, offset = _read_complex_block(buf, offset, n_samp, n_ant)
    if flags & 2:
        truth_angles = np.frombuffer(buf, dtype="<f8", count=n_samp, offset=offset).copy()
    return Dataset(
        observations=obs,
        noise_variance=sigma2,
        seed=seed,
        truth_channels=truth_channels,
        truth_angles=truth_angles,
    )


def generate_dataset(scenario, n_samples, noise_variance, seed, keep_truth=True,
                     chunk_size=2048):
    """Draw ``n_samples`` channels (one path angle each) and noisy observations.

    Covariances are trace-normalized to N, so SNR = 1/noise_variance holds in
    expectation. Deterministic under (seed, sample index) substreams.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if noise_variance < 0:
        raise ValueError("noise variance must be nonnegative")
    n = scenario.n_antennas

    angles = np.empty(n_samples)
    u_all = np.empty((n_samples, n), dtype=np.complex128)
    noise_all = np.empty((n_samples, n), dtype=np.complex128)
    for i in range(n_samples):
        rng = sample_rng(seed, i)
        angles[i] = sample_angle(scenario.angle_prior, rng)
        u_all[i] = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
        noise_all[i] = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    noise_all *= np.sqrt(noise_variance / 2.0)

    channels = np.empty((n_samples, n), dtype=np.complex128)
    for start in range(0, n_samples, chunk_size):
        stop = min(start + chunk_size, n_samples)
        block = slice(start, stop)
        covs = np.empty((stop - start, n, n), dtype=np.complex128)
        for j in range(stop - start):
            col = _pas_first_column(
                angles[start + j], scenario.pas_std, n, scenario.quadrature_nodes
            )
            covs[j] = scipy.linalg.toeplitz(col, col.conj())
        evals, evecs = np.linalg.eigh(covs)
        factors = evecs * np.sqrt(np.clip(evals, 0.0, None))[:, None, :]
        channels[block] = np.einsum("bij,bj->bi", factors, u_all[block])

    observations = channels + noise_all if noise_variance > 0 else channels.copy()
    return Dataset(
        observations=observations,
        noise_variance=noise_variance,
        seed=seed,
        truth_channels=channels if keep_truth else None,
        truth_angles=angles if keep_truth else None,
    )
