"""Angular grids and steering-vector dictionaries for half-wavelength ULAs.

Grids are represented by their sine values (exact arithmetic on the sine
avoids arcsin/sin round trips near endfire); angles are derived views.
The circulant/toeplitz grids keep their defining column order so that the
resulting dictionaries coincide column-for-column with the (oversampled)
DFT matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

GRID_KINDS = ("equidistant_sin", "circulant", "toeplitz", "custom")

_DUP_TOL = 1e-12


def steering_vector(angle_rad, n_antennas):
    """Array response of an N-element lambda/2 ULA: entry m = exp(-j*pi*m*sin(angle))."""
    if n_antennas < 1:
        raise ValueError("n_antennas must be >= 1")
    m = np.arange(n_antennas)
    return np.exp(-1j * np.pi * m * np.sin(angle_rad))


def _steering_from_sines(sines, n_antennas):
    m = np.arange(n_antennas)[:, None]
    return np.exp(-1j * np.pi * m * np.asarray(sines)[None, :])


@dataclass(frozen=True)
class AngleGrid:
    """Ordered set of candidate arrival angles, stored via sin(angle).

    ``sines`` keeps the constructor-defined column order (not necessarily
    sorted); ``kind`` records which constructor built it.
    """

    sines: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        sines = np.asarray(self.sines, dtype=float)
        object.__setattr__(self, "sines", sines)
        if self.kind not in GRID_KINDS:
            raise ValueError(f"unknown grid kind {self.kind!r}")
        if sines.ndim != 1 or sines.size == 0:
            raise ValueError("grid needs a 1-D, nonempty sine array")
        if np.any(sines < -1.0) or np.any(sines >= 1.0):
            raise ValueError("grid sines must lie in [-1, 1)")
        if sines.size > 1 and np.min(np.diff(np.sort(sines))) <= _DUP_TOL:
            raise ValueError("grid contains duplicate angles")

    def __len__(self):
        return self.sines.size

    @property
    def size(self):
        return self.sines.size

    @property
    def angles(self):
        """Angles in radians (reporting only; internal math uses the sines)."""
        return np.arcsin(self.sines)

    def sorted_order(self):
        """Indices that sort the grid by increasing sine."""
        return np.argsort(self.sines, kind="stable")

    def to_json(self):
        return json.dumps(
            {"kind": self.kind, "size": int(self.size), "sines": self.sines.tolist()},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        return cls(sines=np.asarray(doc["sines"], dtype=float), kind=doc["kind"])


def grid_equidistant_sin(n_points):
    """Grid with sin(angle) uniformly sampled on [-1, 1), endpoint -1 included."""
    if n_points < 2:
        raise ValueError("need at least 2 grid points")
    sines = -1.0 + 2.0 * np.arange(n_points) / n_points
    return AngleGrid(sines=sines, kind="equidistant_sin")


def grid_circulant(n_antennas):
    """N-point grid whose dictionary equals the N-point DFT matrix column-for-column.

    Column c (0-based) has sin = 2c/N for c < N/2 and sin = 2c/N - 2 for
    c >= N/2; the defining order is kept so the DFT identity is exact.
    """
    n = n_antennas
    if n < 2 or n % 2:
        raise ValueError("circulant grid needs an even antenna count >= 2")
    c = np.arange(n)
    sines = 2.0 * c / n
    sines[n // 2 :] -= 2.0
    return AngleGrid(sines=sines, kind="circulant")


def grid_toeplitz(n_antennas):
    """2N-point grid whose dictionary equals the N x 2N oversampled DFT matrix.

    Column c (0-based) has sin = c/N for c < N and sin = c/N - 2 for c >= N.
    """
    n = n_antennas
    if n < 1:
        raise ValueError("toeplitz grid needs n_antennas >= 1")
    c = np.arange(2 * n)
    sines = c / n
    sines[n:] -= 2.0
    return AngleGrid(sines=sines, kind="toeplitz")


def grid_custom(sines):
    return AngleGrid(sines=np.asarray(sines, dtype=float), kind="custom")


@dataclass(frozen=True)
class Dictionary:
    """N x S steering-vector matrix over an angle grid; immutable after build."""

    matrix: np.ndarray
    grid: AngleGrid
    n_antennas: int = field(default=0)

    def __post_init__(self):
        if self.matrix.shape != (self.n_antennas, self.grid.size):
            raise ValueError("dictionary shape inconsistent with grid / antenna count")

    @property
    def size(self):
        return self.grid.size


def build_dictionary(grid, n_antennas):
    """Stack steering vectors at the grid angles; column order follows the grid."""
    if n_antennas < 1:
        raise ValueError("n_antennas must be >= 1")
    matrix = _steering_from_sines(grid.sines, n_antennas)
    return Dictionary(matrix=matrix, grid=grid, n_antennas=n_antennas)
