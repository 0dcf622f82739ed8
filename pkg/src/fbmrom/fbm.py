"""Exact sampling of fractional Brownian motion increments on uniform grids.

Increments are drawn as ``L @ xi`` with ``L`` the lower Cholesky factor of
the increment covariance matrix and ``xi`` i.i.d. standard normals.  The
factor depends only on ``(steps, dt, H)`` and is cached, so it is shared by
every driver and every Monte-Carlo sample on the same grid.

Monte-Carlo sample ``j`` always draws from ``default_rng([seed, stream, j])``,
which makes an ensemble independent of how it is split into chunks or
threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import FactorizationError, ValidationError

__all__ = [
    "UniformGrid",
    "FbmIncrementSample",
    "validate_hurst",
    "fbm_covariance",
    "increment_covariance",
    "increment_covariance_matrix",
    "increment_factor",
    "sample_increments",
    "sample_batch",
]

PIVOT_RTOL = 1e-12


def validate_hurst(H):
    """Return ``H`` as float, rejecting values outside ``[1/2, 1)``."""
    H = float(H)
    if not (0.5 <= H < 1.0):
        raise ValidationError(f"Hurst parameter must lie in [0.5, 1), got {H}")
    return H


@dataclass(frozen=True)
class UniformGrid:
    """Equidistant grid ``t_k = k * dt`` on ``[0, t_end]`` with ``steps`` intervals."""

    t_end: float
    steps: int

    def __post_init__(self):
        if not np.isfinite(self.t_end) or self.t_end <= 0:
            raise ValidationError(f"t_end must be positive, got {self.t_end}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValidationError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "t_end", float(self.t_end))
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self):
        return self.t_end / self.steps

    @property
    def times(self):
        return np.arange(self.steps + 1) * self.dt


@dataclass(frozen=True)
class FbmIncrementSample:
    """``q`` independent rows of fBm increments on ``grid``.

    ``increments[i, k] = W_i(t_{k+1}) - W_i(t_k)``.
    """

    increments: np.ndarray
    grid: UniformGrid
    hurst: float
    seed: int | None = field(default=None)

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2 or inc.shape[1] != self.grid.steps:
            raise ValidationError(
                f"increments must have shape (q, {self.grid.steps}), got {inc.shape}"
            )
        object.__setattr__(self, "increments", inc)

    @property
    def q(self):
        return self.increments.shape[0]

    def paths(self):
        """Cumulative sums, shape ``(q, N + 1)`` with ``W(0) = 0``."""
        out = np.zeros((self.q, self.grid.steps + 1))
        np.cumsum(self.increments, axis=1, out=out[:, 1:])
        return out


def fbm_covariance(s, t, H):
    """``E[W(s) W(t)] = (s^2H + t^2H - |t - s|^2H) / 2``."""
    H = validate_hurst(H)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0) or not (np.all(np.isfinite(s)) and np.all(np.isfinite(t))):
        raise ValidationError("fbm_covariance needs finite nonnegative times")
    h2 = 2.0 * H
    out = 0.5 * (s**h2 + t**h2 - np.abs(t - s) ** h2)
    return float(out) if out.ndim == 0 else out


def increment_covariance(k, l, dt, H):
    """Covariance of the increments over ``[t_k, t_k+1]`` and ``[t_l, t_l+1]``."""
    H = validate_hurst(H)
    if dt <= 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    k = np.asarray(k)
    l = np.asarray(l)
    if np.any(k < 0) or np.any(l < 0):
        raise ValidationError("increment indices must be nonnegative")
    h2 = 2.0 * H
    # stationary increments: only the lag matters
    d = np.abs(k - l).astype(float)
    out = 0.5 * dt**h2 * (np.abs(d + 1) ** h2 + np.abs(d - 1) ** h2 - 2.0 * d**h2)
    return float(out) if out.ndim == 0 else out


def increment_covariance_matrix(steps, dt, H):
    """Toeplitz matrix ``Sigma[k, l] = increment_covariance(k, l, dt, H)``."""
    idx = np.arange(steps)
    return increment_covariance(idx[:, None], idx[None, :], dt, H)


@lru_cache(maxsize=16)
def _cached_factor(steps, dt, H):
    if H == 0.5:
        L = np.sqrt(dt) * np.eye(steps)
    else:
        cov = increment_covariance_matrix(steps, dt, H)
        try:
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(
                f"increment covariance not positive definite (steps={steps}, H={H})"
            ) from exc
        pivots = np.diag(L) ** 2
        if pivots.min() < PIVOT_RTOL * np.diag(cov).max():
            raise FactorizationError(
                f"Cholesky pivot {pivots.min():.3e} below {PIVOT_RTOL:g} * max diagonal "
                f"(steps={steps}, H={H})"
            )
    L.setflags(write=False)
    return L


def increment_factor(grid, H):
    """Cached lower-triangular square root of the increment covariance on ``grid``."""
    return _cached_factor(grid.steps, grid.dt, validate_hurst(H))


def sample_increments(grid, H, q, seed):
    """Draw ``q`` independent fBm increment rows on ``grid``, deterministic in ``seed``."""
    H = validate_hurst(H)
    if int(q) != q or q < 1:
        raise ValidationError(f"q must be a positive integer, got {q}")
    L = increment_factor(grid, H)
    xi = np.random.default_rng(seed).standard_normal((int(q), grid.steps))
    return FbmIncrementSample(xi @ L.T, grid, H, seed)


def sample_batch(grid, H, q, seed, start, stop, stream=0):
    """Increments for Monte-Carlo samples ``start..stop-1``, shape ``(S, q, N)``.

    Sample ``j`` uses its own generator seeded by ``(seed, stream, j)``.
    ``stream`` separates independent uses of one user seed (training versus
    evaluation ensembles, say).
    """
    H = validate_hurst(H)
    L = increment_factor(grid, H)
    S = stop - start
    xi = np.empty((S, q, grid.steps))
    for i, j in enumerate(range(start, stop)):
        xi[i] = np.random.default_rng([seed, stream, j]).standard_normal((q, grid.steps))
    if H == 0.5:
        return xi * L[0, 0]
    return xi @ L.T
