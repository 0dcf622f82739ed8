"""Spectral Galerkin discretizations of two benchmark SPDEs.

Heat equation on ``[0, pi]^2`` with homogeneous Dirichlet data::

    X_t = a Lap X + 1_{[pi/4, 3pi/4]^2} u + gamma exp(-|z1 - pi/2| - z2) X o dW,
    X(0) = b cos(z1) cos(z2),
    y = mean of X over [0, pi]^2 minus the inner square.

Damped wave equation on ``[0, pi]``::

    X_tt + a X_t = X_zz + exp(-|z - pi/2|) u + 2 exp(-|z - pi/2|) X o dW,
    X(0) = 0,  X_t(0) = b cos(z),
    y = (mean of X, mean of X_t) over [pi/2 - eps, pi/2 + eps].

Both use the sine eigenbasis of the Dirichlet Laplacian, orthonormal in L^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import NumericalError, ValidationError
from .model import StochasticLinearSystem

__all__ = [
    "HeatConfig",
    "WaveConfig",
    "heat_modes",
    "build_heat_system",
    "build_wave_system",
    "sine_galerkin_matrix",
]

GAUSS_NODES = 64
QUAD_RTOL = 1e-10
SQ2PI = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class HeatConfig:
    n: int = 256
    a: float = 0.2
    b: float = 1.0
    gamma: float = 0.5
    H: float = 0.5

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError(f"n must be a positive integer, got {self.n}")
        if not (self.a > 0 and self.b > 0):
            raise ValidationError("a and b must be positive")


@dataclass(frozen=True)
class WaveConfig:
    n: int = 200
    a: float = 2.0
    b: float = 1.0
    eps: float = 0.1
    H: float = 0.5

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2 or self.n % 2:
            raise ValidationError(f"n must be a positive even integer, got {self.n}")
        if not (self.a > 0 and self.b > 0):
            raise ValidationError("a and b must be positive")
        if not 0 < self.eps < math.pi / 2:
            raise ValidationError("eps must lie in (0, pi/2)")


# -- one-dimensional pieces ------------------------------------------------------

@lru_cache(maxsize=8)
def _panels(nodes):
    """Gauss-Legendre rule on [0, pi] split at pi/2."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    h = math.pi / 4
    xs = np.concatenate([h * (x + 1), math.pi / 2 + h * (x + 1)])
    ws = np.concatenate([h * w, h * w])
    return xs, ws


def _galerkin(weight, kmax, nodes):
    xs, ws = _panels(nodes)
    k = np.arange(1, kmax + 1)
    psi = SQ2PI * np.sin(np.outer(k, xs))
    return (psi * (ws * weight(xs))) @ psi.T


def sine_galerkin_matrix(weight, kmax, nodes=None):
    """``M[k, k'] = int_0^pi weight(z) psi_k(z) psi_k'(z) dz`` for ``k, k' = 1..kmax``.

    ``nodes`` per panel defaults to 64, raised with ``kmax`` so the products
    of high modes stay resolved.  The rule is checked against one with twice
    the nodes.
    """
    if nodes is None:
        nodes = max(GAUSS_NODES, 2 * kmax + 32)
    M = _galerkin(weight, kmax, nodes)
    M2 = _galerkin(weight, kmax, 2 * nodes)
    err = np.abs(M - M2).max()
    if err > QUAD_RTOL * max(np.abs(M2).max(), 1e-300):
        raise NumericalError(
            f"Galerkin quadrature not converged: node doubling changed entries by {err:.2e}"
        )
    return 0.5 * (M2 + M2.T)


def _sine_moment(k, lo, hi):
    """``int_lo^hi psi_k``."""
    return SQ2PI * (np.cos(k * lo) - np.cos(k * hi)) / k


def _cos_coeff(k):
    """``int_0^pi cos(z) psi_k(z) dz``: nonzero only for even ``k``."""
    k = np.asarray(k, dtype=float)
    out = np.zeros_like(k)
    even = (k % 2) == 0
    out[even] = SQ2PI * 2 * k[even] / (k[even] ** 2 - 1)
    return out


def _kink(z):
    return np.exp(-np.abs(z - math.pi / 2))


# -- heat --------------------------------------------------------------------------

def heat_modes(n):
    """First ``n`` pairs ``(k, l)`` ordered by ``k^2 + l^2``, ties lexicographic."""
    K = int(2 * math.sqrt(n)) + 3
    k, l = np.meshgrid(np.arange(1, K + 1), np.arange(1, K + 1), indexing="ij")
    k, l = k.ravel(), l.ravel()
    lam = k**2 + l**2
    order = np.lexsort((l, k, lam))[:n]
    # every pair with k^2 + l^2 <= K^2 is in the candidate set
    assert lam[order[-1]] <= K * K
    return np.column_stack([k[order], l[order]])


def build_heat_system(cfg=None, **kw):
    cfg = HeatConfig(**kw) if cfg is None else cfg
    modes = heat_modes(cfg.n)
    k, l = modes[:, 0], modes[:, 1]
    kmax = int(modes.max())
    kk = np.arange(1, kmax + 1)
    inner = _sine_moment(kk, math.pi / 4, 3 * math.pi / 4)
    full = _sine_moment(kk, 0.0, math.pi)
    A = np.diag(-cfg.a * (k**2 + l**2).astype(float))
    B = (inner[k - 1] * inner[l - 1])[:, None]
    C = (4.0 / (3.0 * math.pi**2)) * (full[k - 1] * full[l - 1] - inner[k - 1] * inner[l - 1])
    x0 = cfg.b * _cos_coeff(k) * _cos_coeff(l)
    if cfg.gamma != 0:
        M1 = sine_galerkin_matrix(_kink, kmax)
        M2 = sine_galerkin_matrix(lambda z: np.exp(-z), kmax)
        N1 = cfg.gamma * M1[np.ix_(k - 1, k - 1)] * M2[np.ix_(l - 1, l - 1)]
    else:
        N1 = np.zeros((cfg.n, cfg.n))
    return StochasticLinearSystem(
        A, B, C[None, :], (N1,), X0=x0[:, None], z=np.ones(1), H=cfg.H, name="heat"
    )


# -- wave ---------------------------------------------------------------------------

def build_wave_system(cfg=None, **kw):
    cfg = WaveConfig(**kw) if cfg is None else cfg
    h = cfg.n // 2
    k = np.arange(1, h + 1)
    Z = np.zeros((h, h))
    I = np.eye(h)
    A = np.block([[Z, I], [-np.diag(k.astype(float) ** 2), -cfg.a * I]])
    M = sine_galerkin_matrix(_kink, h)
    xs, ws = _panels(2 * max(GAUSS_NODES, 2 * h + 32))
    bvec = (SQ2PI * np.sin(np.outer(k, xs))) @ (ws * _kink(xs))
    B = np.concatenate([np.zeros(h), bvec])[:, None]
    N1 = np.block([[Z, Z], [2.0 * M, Z]])
    avg = _sine_moment(k, math.pi / 2 - cfg.eps, math.pi / 2 + cfg.eps) / (2 * cfg.eps)
    zero = np.zeros(h)
    C = np.vstack([np.concatenate([avg, zero]), np.concatenate([zero, avg])])
    x0 = np.concatenate([zero, cfg.b * _cos_coeff(k)])
    return StochasticLinearSystem(
        A, B, C, (N1,), X0=x0[:, None], z=np.ones(1), H=cfg.H, name="wave"
    )
