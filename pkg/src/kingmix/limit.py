"""The Gaussian limit process ``Z_t = (1/(sqrt 2 t)) int_0^t u dW_u``.

``Z`` is centred Gaussian with ``Cov(Z_s, Z_t) = (s^t)^3 / (6 s t)``.  The
canonical sampler draws exact increments of ``H_t = int_0^t u dW_u``; the
Euler scheme for ``dZ = -Z/t dt + dW/sqrt 2`` is only a cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadGrid, DomainError


@dataclass
class LimitPath:
    """Samples of ``sqrt(scale_c) Z`` on ``grid``; ``values`` has shape
    ``(size, len(grid))`` (or ``(len(grid),)`` for a single path)."""

    grid: np.ndarray
    values: np.ndarray
    scale_c: float

    def with_origin(self):
        """Grid and values with the constant ``Z_0 = 0`` prepended."""
        grid = np.concatenate([[0.0], self.grid])
        zeros = np.zeros(self.values.shape[:-1] + (1,))
        return grid, np.concatenate([zeros, self.values], axis=-1)


def check_grid(grid) -> np.ndarray:
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.ndim != 1 or grid.size == 0:
        raise BadGrid("grid must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(grid)) or grid[0] <= 0:
        raise BadGrid("grid times must be positive and finite")
    if np.any(np.diff(grid) <= 0):
        raise BadGrid("grid must be strictly increasing")
    return grid


def _check_scale(scale_c):
    if not 0.0 <= scale_c <= 1.0:
        raise DomainError(f"scale_c must lie in [0, 1], got {scale_c!r}")


def sample_limit_path(grid, scale_c: float, rng: np.random.Generator, size: int | None = None) -> LimitPath:
    """Exact draw(s) of ``sqrt(scale_c) Z`` on ``grid``."""
    grid = check_grid(grid)
    _check_scale(scale_c)
    cubes = np.concatenate([[0.0], grid**3])
    sd = np.sqrt(np.diff(cubes) / 3.0)
    shape = (len(grid),) if size is None else (size, len(grid))
    h = np.cumsum(rng.standard_normal(shape) * sd, axis=-1)
    z = h / (math.sqrt(2.0) * grid)
    return LimitPath(grid, math.sqrt(scale_c) * z, scale_c)


def limit_covariance(s: float, t: float, scale_c: float = 1.0) -> float:
    if not (s > 0 and t > 0):
        raise DomainError("covariance needs s, t > 0")
    _check_scale(scale_c)
    lo, hi = min(s, t), max(s, t)
    return scale_c * lo * lo / (6.0 * hi)


def limit_covariance_matrix(grid, scale_c: float = 1.0) -> np.ndarray:
    grid = check_grid(grid)
    lo = np.minimum.outer(grid, grid)
    hi = np.maximum.outer(grid, grid)
    return scale_c * lo * lo / (6.0 * hi)


def euler_sde_path(grid, scale_c: float, rng: np.random.Generator, size: int = 1,
                   dt: float = 1e-4, drift: bool = True) -> LimitPath:
    """Euler-Maruyama for ``dZ = -Z/t dt + dW/sqrt 2`` from ``Z_{t_1} ~ N(0, t_1/6)``.

    Paths are advanced together in a vector.  Each grid interval is split
    into ``ceil(length / dt)`` equal steps.  With ``drift=False`` the
    ``-Z/t`` term is dropped.
    """
    grid = check_grid(grid)
    _check_scale(scale_c)
    if grid[0] < 1e-6:
        raise BadGrid("Euler scheme needs the first grid time >= 1e-6")
    if not dt > 0:
        raise DomainError("dt must be positive")
    out = np.empty((size, len(grid)))
    z = rng.standard_normal(size) * math.sqrt(grid[0] / 6.0)
    out[:, 0] = z
    noise_scale = 1.0 / math.sqrt(2.0)
    for i in range(1, len(grid)):
        n = max(1, math.ceil((grid[i] - grid[i - 1]) / dt - 1e-9))
        h = (grid[i] - grid[i - 1]) / n
        t = grid[i - 1]
        sq = math.sqrt(h) * noise_scale
        for j in range(n):
            dw = rng.standard_normal(size) * sq
            if drift:
                z = z - z / t * h + dw
            else:
                z = z + dw
            t = grid[i - 1] + (j + 1) * h
        out[:, i] = z
    return LimitPath(grid, math.sqrt(scale_c) * out, scale_c)
