"""Path-wise time integration of controlled linear fBm-driven systems.

Two one-step maps are provided:

* ``euler``:    x+ = x + (A x + B u(t_k)) dt + sum_i N_i x dW_ik
  (Euler-Maruyama on the Ito form for ``H = 1/2``; path-wise Euler for Young).
* ``midpoint``: x+ = x + (A xm + B u(t_k + dt/2)) dt + sum_i N_i xm dW_ik,
  ``xm = (x + x+)/2``, applied to the Stratonovich/Young drift.

Everything is batched over Monte-Carlo samples: states are arrays of shape
``(n, S, k)`` (``S`` samples, ``k`` columns per sample) and increments have
shape ``(S, q, N)``.

For a single driver (``q = 1``) the implicit midpoint matrix
``E - c N`` with ``E = I - dt/2 A`` is diagonalized once through the pencil
``E^{-1} N = V D V^{-1}``; a step then costs two dense products per sample
block instead of one LU per sample.  Ill-conditioned pencils and several
drivers fall back to batched dense solves.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import SingularStepError, ValidationError
from .fbm import FbmIncrementSample, UniformGrid
from .model import Interpretation, to_ito, to_stratonovich

__all__ = [
    "Trajectory",
    "FundamentalSample",
    "control_preset",
    "propagate",
    "simulate",
    "euler_path",
    "midpoint_path",
    "fundamental_sample",
    "variation_of_constants",
    "l2_norm",
]

SINGULAR_RTOL = 1e-13
PENCIL_COND_MAX = 1e8


# -- controls -----------------------------------------------------------------

def control_preset(name, m=1):
    """Named deterministic controls ``t -> R^m``.

    ``sin`` is ``sqrt(2/pi) sin(t)``; ``zero``, ``step`` (unit from t = 0)
    and ``chirp`` (``sin(t + t^2)``) exist for tests.
    """
    amp = np.sqrt(2.0 / np.pi)
    table = {
        "sin": lambda t: np.full(m, amp * np.sin(t)),
        "zero": lambda t: np.zeros(m),
        "step": lambda t: np.ones(m),
        "chirp": lambda t: np.full(m, np.sin(t + t * t)),
    }
    try:
        return table[name]
    except KeyError:
        raise ValidationError(f"unknown control preset {name!r}; choose from {sorted(table)}")


def _control_values(u, times, m):
    """Evaluate ``u`` at ``times``; shape ``(len(times), m)``."""
    if u is None:
        return np.zeros((len(times), m))
    out = np.empty((len(times), m))
    for i, t in enumerate(times):
        out[i] = np.broadcast_to(np.asarray(u(float(t)), dtype=float).reshape(-1), (m,))
    return out


def l2_norm(u, grid, m=1):
    """``||u||_{L^2(0,T)}`` by the midpoint rule on ``grid``."""
    vals = _control_values(u, grid.times[:-1] + 0.5 * grid.dt, m)
    return float(np.sqrt(grid.dt * np.sum(vals**2)))


# -- result containers ------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    grid: UniformGrid
    outputs: np.ndarray | None = None

    def to_csv(self, path, comment=None):
        n = self.states.shape[1]
        header = ["t"] + [f"x_{i + 1}" for i in range(n)]
        cols = [self.grid.times[:, None], self.states]
        if self.outputs is not None:
            header += [f"y_{i + 1}" for i in range(self.outputs.shape[1])]
            cols.append(self.outputs)
        data = np.hstack(cols)
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for row in data:
                w.writerow([f"{x:.17g}" for x in row])


@dataclass(frozen=True)
class FundamentalSample:
    """``matrices[j] ~ Phi(t_{start + j}, t_start) @ seed_matrix`` on one path."""

    matrices: np.ndarray
    grid: UniformGrid
    seed: int | None = None
    start_step: int = 0


# -- one-step maps ----------------------------------------------------------------

class _EulerStepper:
    def __init__(self, A, Ns, dt):
        self.A = A
        self.Ns = Ns
        self.dt = dt

    def to_internal(self, X):
        return X

    def to_external(self, W):
        return W

    def step(self, X, dW, g, k, offset):
        n, S, kc = X.shape
        X2 = X.reshape(n, S * kc)
        out = X2 + self.dt * (self.A @ X2)
        for i, Ni in enumerate(self.Ns):
            out += (Ni @ X2) * np.repeat(dW[:, i], kc)[None, :]
        if g is not None:
            out += g[:, None]
        return out.reshape(n, S, kc)


class _PencilMidpoint:
    """Midpoint steps in the eigenbasis of ``E^{-1} N`` (zero or one driver)."""

    def __init__(self, V, Vinv, D, H0, EinvB_factor):
        self.V = V
        self.Vinv = Vinv
        self.D = D
        self.H0 = H0
        self.Vg = EinvB_factor  # V^{-1} E^{-1}, applied to forcing

    @classmethod
    def build(cls, A, Ns, dt):
        n = A.shape[0]
        h = 0.5 * dt
        eye = np.eye(n)
        E = eye - h * A
        F = eye + h * A
        try:
            lu = sla.lu_factor(E, check_finite=False)
        except (ValueError, np.linalg.LinAlgError):
            return None
        if np.min(np.abs(np.diag(lu[0]))) < SINGULAR_RTOL * np.linalg.norm(E, 1):
            return None
        if not Ns:
            V = Vinv = eye
            D = np.zeros(n)
        else:
            N1 = Ns[0]
            sym = np.allclose(A, A.T, rtol=0, atol=1e-14 * max(1.0, np.abs(A).max())) and \
                np.allclose(N1, N1.T, rtol=0, atol=1e-14 * max(1.0, np.abs(N1).max()))
            D = V = None
            if sym:
                try:
                    # N V = E V D with V^T E V = I
                    D, V = sla.eigh(N1, E)
                    Vinv = V.T @ E
                except np.linalg.LinAlgError:
                    D = None
            if D is None:
                D, V = np.linalg.eig(sla.lu_solve(lu, N1))
                if np.linalg.cond(V) > PENCIL_COND_MAX:
                    return None
                Vinv = np.linalg.inv(V)
                if np.all(np.abs(D.imag) == 0) and np.all(V.imag == 0):
                    D, V, Vinv = D.real, V.real, Vinv.real
        EinvF = sla.lu_solve(lu, F)
        H0 = Vinv @ EinvF @ V
        Vg = Vinv @ sla.lu_solve(lu, eye)
        return cls(V, Vinv, D, H0, Vg)

    def to_internal(self, X):
        n, S, k = X.shape
        return (self.Vinv @ X.reshape(n, S * k)).reshape(n, S, k)

    def to_external(self, W):
        n, S, k = W.shape
        out = self.V @ W.reshape(n, S * k)
        if np.iscomplexobj(out):
            out = out.real
        return out.reshape(n, S, k)

    def step(self, W, dW, g, k, offset):
        n, S, kc = W.shape
        W2 = W.reshape(n, S * kc)
        out = self.H0 @ W2
        if g is not None:
            out += (self.Vg @ g)[:, None]
        if dW.shape[1]:
            c = np.repeat(0.5 * dW[:, 0], kc)
            dc = self.D[:, None] * c[None, :]
            out += dc * W2
            denom = 1.0 - dc
            bad = np.abs(denom) < SINGULAR_RTOL * np.maximum(1.0, np.abs(dc))
            if bad.any():
                col = int(np.argwhere(bad.any(axis=0))[0, 0])
                raise SingularStepError(
                    f"midpoint step matrix singular at step {k}", step=k, sample=offset + col // kc
                )
            out /= denom
        return out.reshape(n, S, kc)


class _LUMidpoint:
    def __init__(self, A, Ns, dt):
        n = A.shape[0]
        h = 0.5 * dt
        self.E = np.eye(n) - h * A
        self.F = np.eye(n) + h * A
        self.Ns = np.array(Ns).reshape(len(Ns), n, n)

    def to_internal(self, X):
        return X

    def to_external(self, W):
        return W

    def step(self, X, dW, g, k, offset):
        n, S, kc = X.shape
        c = 0.5 * dW  # (S, q)
        cN = np.einsum("sq,qij->sij", c, self.Ns)
        M = self.E[None] - cN
        Xs = np.moveaxis(X, 1, 0)  # (S, n, k)
        rhs = self.F[None] @ Xs + cN @ Xs
        if g is not None:
            rhs += g[None, :, None]
        sv = np.linalg.svd(M, compute_uv=False)
        bad = sv[:, -1] < SINGULAR_RTOL * sv[:, 0]
        if bad.any():
            s = int(np.argmax(bad))
            raise SingularStepError(
                f"midpoint step matrix singular at step {k}", step=k, sample=offset + s
            )
        return np.moveaxis(np.linalg.solve(M, rhs), 0, 1)


def _stepper(sys, dt, scheme):
    if scheme == "euler":
        A = to_ito(sys).A if sys.interpretation is Interpretation.STRATONOVICH else sys.A
        return _EulerStepper(A, sys.N, dt)
    if scheme == "midpoint":
        A = to_stratonovich(sys).A if sys.interpretation is Interpretation.ITO else sys.A
        if sys.q <= 1:
            st = _PencilMidpoint.build(A, sys.N, dt)
            if st is not None:
                return st
        return _LUMidpoint(A, sys.N, dt)
    raise ValidationError(f"unknown scheme {scheme!r}; use 'euler' or 'midpoint'")


def _stepper_cached(sys, dt, scheme):
    # the pencil decomposition is the expensive part; memoize on the system object
    cache = sys.__dict__.setdefault("_stepper_cache", {})
    key = (float(dt), scheme)
    if key not in cache:
        cache[key] = _stepper(sys, dt, scheme)
    return cache[key]


# -- batched propagation ----------------------------------------------------------

def propagate(sys, init, increments, dt, scheme="midpoint", control=None, visit=None,
              sample_offset=0, start_step=0, forcing_columns=True):
    """Propagate a batch of sample paths.

    Parameters
    ----------
    sys : StochasticLinearSystem
    init : (n, k) or (S, n, k) array
        Initial columns, shared by all samples or given per sample.
    increments : (S, q, N) array
        Driver increments; step ``k`` uses ``increments[:, :, k]``.
    dt : float
    scheme : {'midpoint', 'euler'}
    control : callable, optional
        ``t -> u(t)``; its contribution ``B u`` is added to every column.
    visit : callable, optional
        ``visit(j, X)`` is called for ``j = 0..N'`` with ``X`` of shape
        ``(n, S, k)`` holding the state after ``j`` steps.
    sample_offset : int
        Added to sample indices in error messages.
    start_step : int
        First increment used; time of state ``j`` is ``(start_step + j) dt``.

    Returns
    -------
    X : (n, S, k) array, final state.
    """
    increments = np.asarray(increments, dtype=float)
    if increments.ndim != 3 or increments.shape[1] != sys.q:
        raise ValidationError(
            f"increments must have shape (S, {sys.q}, N), got {increments.shape}"
        )
    S, _, Ntot = increments.shape
    init = np.asarray(init, dtype=float)
    if init.ndim == 1:
        init = init[:, None]
    if init.ndim == 2:
        X = np.broadcast_to(init[:, None, :], (sys.n, S, init.shape[1])).copy()
    elif init.ndim == 3 and init.shape[0] == S:
        X = np.moveaxis(init, 0, 1).copy()
    else:
        raise ValidationError(f"init has incompatible shape {init.shape}")
    if X.shape[0] != sys.n:
        raise ValidationError(f"init must have {sys.n} rows, got {X.shape[0]}")

    st = _stepper_cached(sys, dt, scheme)
    steps = range(start_step, Ntot)
    forcing = None
    if control is not None:
        shift = 0.5 * dt if scheme == "midpoint" else 0.0
        times = np.arange(start_step, Ntot) * dt + shift
        forcing = dt * (_control_values(control, times, sys.m) @ sys.B.T)

    if visit is not None:
        visit(0, X)
    W = st.to_internal(X)
    for j, k in enumerate(steps):
        g = None if forcing is None else forcing[j]
        W = st.step(W, increments[:, :, k], g, k, sample_offset)
        if visit is not None:
            visit(j + 1, st.to_external(W))
    return st.to_external(W)


def simulate(sys, x0, control, increments, dt, scheme="midpoint", states=False,
             sample_offset=0):
    """Outputs (and optionally states) of a batch of paths.

    Returns ``Y`` of shape ``(S, N + 1, p)``, plus ``Xs`` of shape
    ``(S, N + 1, n)`` when ``states`` is true.
    """
    increments = np.asarray(increments, dtype=float)
    S, _, Ntot = increments.shape
    Y = np.empty((S, Ntot + 1, sys.p))
    Xs = np.empty((S, Ntot + 1, sys.n)) if states else None
    C = sys.C

    def visit(j, X):
        x = X[:, :, 0]
        Y[:, j, :] = (C @ x).T
        if states:
            Xs[:, j, :] = x.T

    x0 = np.asarray(x0, dtype=float).reshape(sys.n, 1)
    propagate(sys, x0, increments, dt, scheme, control, visit, sample_offset)
    return (Y, Xs) if states else Y


def _check_noise(sys, noise, grid=None):
    if not isinstance(noise, FbmIncrementSample):
        raise ValidationError("noise must be an FbmIncrementSample")
    if grid is not None and grid != noise.grid:
        raise ValidationError(f"noise grid {noise.grid} does not match requested grid {grid}")
    if noise.q != sys.q:
        raise ValidationError(f"system has q={sys.q} drivers, noise has {noise.q}")
    if sys.q and noise.hurst != sys.H:
        raise ValidationError(f"noise Hurst {noise.hurst} differs from system H={sys.H}")


def _path(sys, x0, u, noise, scheme, grid):
    _check_noise(sys, noise, grid)
    Y, Xs = simulate(sys, x0, u, noise.increments[None], noise.grid.dt, scheme, states=True)
    return Trajectory(Xs[0], noise.grid, Y[0])


def euler_path(sys, x0, u, noise, grid=None):
    """Single explicit Euler path on the grid of ``noise``."""
    return _path(sys, x0, u, noise, "euler", grid)


def midpoint_path(sys, x0, u, noise, grid=None):
    """Single stochastic implicit midpoint path on the grid of ``noise``."""
    return _path(sys, x0, u, noise, "midpoint", grid)


def fundamental_sample(sys, seed_matrix, noise, grid=None, scheme="midpoint", start_step=0):
    """Homogeneous propagation of ``seed_matrix`` along one noise path.

    With ``start_step = s`` the result approximates ``Phi(t_{s+j}, t_s) @ seed``.
    """
    _check_noise(sys, noise, grid)
    seed_matrix = np.asarray(seed_matrix, dtype=float)
    if seed_matrix.ndim == 1:
        seed_matrix = seed_matrix[:, None]
    Ntot = noise.grid.steps
    out = np.empty((Ntot - start_step + 1, sys.n, seed_matrix.shape[1]))

    def visit(j, X):
        out[j] = X[:, 0, :]

    propagate(sys, seed_matrix, noise.increments[None], noise.grid.dt, scheme,
              visit=visit, start_step=start_step)
    return FundamentalSample(out, noise.grid, noise.seed, start_step)


def variation_of_constants(sys, x0, u, noise, grid=None, scheme="midpoint"):
    """Assemble ``x(t_j) = Phi(t_j) [x0 + sum_{l<j} Phi(t_l)^{-1} B u(t_l) dt]``.

    A cross-check of the solution formula, not a production integrator.
    """
    _check_noise(sys, noise, grid)
    g = noise.grid
    Phi = fundamental_sample(sys, np.eye(sys.n), noise, scheme=scheme).matrices
    forcing = _control_values(u, g.times[:-1], sys.m) @ sys.B.T
    k = np.asarray(x0, dtype=float).reshape(-1).copy()
    states = np.empty((g.steps + 1, sys.n))
    states[0] = Phi[0] @ k
    for j in range(1, g.steps + 1):
        P = Phi[j - 1]
        sv = np.linalg.svd(P, compute_uv=False)
        if sv[-1] < SINGULAR_RTOL * sv[0]:
            raise SingularStepError(f"fundamental solution singular at t_{j - 1}", step=j - 1)
        k += np.linalg.solve(P, forcing[j - 1]) * g.dt
        states[j] = Phi[j] @ k
    return Trajectory(states, g, states @ sys.C.T)
