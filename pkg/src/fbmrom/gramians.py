"""Reachability and observability Gramians.

Exact Gramians exist for ``H = 1/2``; they come from generalized Lyapunov
equations (infinite horizon) or from integrating the matrix flow
``Z' = A_N Z + Z A_N^T + sum N_i Z N_i^T`` (finite horizon).  For any
``H`` the Gramians are also estimated by Monte Carlo over sampled
fundamental solutions with the right-endpoint rule on ``s_i = i T / N``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InstabilityError, ValidationError
from .fbm import UniformGrid, validate_hurst
from .integrate import l2_norm, propagate
from .lyapunov import GeneralizedLyapunov
from .model import _dump, _matrix_to_list, drift_ito, is_mean_square_stable
from .montecarlo import TRAIN, map_chunks, noise_chunk, ordered_sum

__all__ = [
    "GramianSet",
    "empirical_gramians",
    "empirical_observability",
    "exact_gramian_P",
    "exact_gramian_Q",
    "exact_gramians",
    "second_moment_flow",
    "dominant_subspace_check",
    "save_gramians",
    "load_gramians",
    "OBSERVABILITY_CAP",
]

OBSERVABILITY_CAP = 512
SYM_RTOL = 1e-12
PSD_RTOL = 1e-10


def _sym(X):
    return 0.5 * (X + X.T)


def _check_gramian(name, X):
    scale = max(np.abs(X).max(), 1e-300)
    if np.abs(X - X.T).max() > SYM_RTOL * scale:
        raise ValidationError(f"{name} is not symmetric")
    tr = np.trace(X)
    if X.size and np.linalg.eigvalsh(X)[0] < -PSD_RTOL * max(abs(tr), 1e-300):
        raise ValidationError(f"{name} has eigenvalues below -1e-10 * trace")


@dataclass(frozen=True)
class GramianSet:
    """Gramians of one system on one horizon.

    ``horizon`` is a float or ``math.inf``.  ``provenance`` is a dict with
    ``kind`` set to ``"exact"`` or ``"empirical"`` (then also ``N``,
    ``N_s``, ``seed``).
    """

    P_u: np.ndarray
    P_x0: np.ndarray
    Q: np.ndarray | None = None
    horizon: float = math.inf
    provenance: dict = field(default_factory=lambda: {"kind": "exact"})

    def __post_init__(self):
        for name in ("P_u", "P_x0", "Q"):
            X = getattr(self, name)
            if X is None:
                continue
            X = _sym(np.asarray(X, dtype=float))
            _check_gramian(name, X)
            X.setflags(write=False)
            object.__setattr__(self, name, X)
        if self.P_u.shape != self.P_x0.shape:
            raise ValidationError("P_u and P_x0 differ in shape")

    @property
    def P(self):
        return self.P_u + self.P_x0

    @property
    def n(self):
        return self.P_u.shape[0]

    def with_Q(self, Q):
        return GramianSet(self.P_u, self.P_x0, Q, self.horizon, dict(self.provenance))


# -- exact (H = 1/2) ------------------------------------------------------------

def _horizon(horizon):
    if horizon is None or horizon == math.inf or horizon == "inf":
        return math.inf
    T = float(horizon)
    if not T > 0:
        raise ValidationError(f"horizon must be positive or infinite, got {horizon}")
    return T


def _solve_gramian(solver, M, T, sys):
    if T == math.inf:
        if not is_mean_square_stable(sys):
            raise InstabilityError(
                "infinite-horizon Gramians need a mean-square asymptotically stable system"
            )
        return _sym(solver.solve(-M))
    return _sym(solver.integral(M, T))


def exact_gramian_P(sys, horizon=math.inf):
    """Reachability Gramians ``P_u`` (from ``B B^T``) and ``P_x0`` (from ``X0 X0^T``)."""
    T = _horizon(horizon)
    solver = GeneralizedLyapunov(drift_ito(sys), sys.N)
    B, X0 = sys.B, sys.X0
    if T == math.inf and not is_mean_square_stable(sys):
        raise InstabilityError(
            "infinite-horizon Gramians need a mean-square asymptotically stable system"
        )
    if T == math.inf:
        P_u = _sym(solver.solve(-B @ B.T))
        P_x0 = _sym(solver.solve(-X0 @ X0.T)) if np.any(X0) else np.zeros((sys.n, sys.n))
    else:
        P_u = _sym(solver.integral(B @ B.T, T))
        P_x0 = _sym(solver.integral(X0 @ X0.T, T)) if np.any(X0) else np.zeros((sys.n, sys.n))
    return GramianSet(P_u, P_x0, None, T, {"kind": "exact"})


def exact_gramian_Q(sys, horizon=math.inf):
    """Observability Gramian from the dual operator with ``M = C^T C``."""
    T = _horizon(horizon)
    A_N = drift_ito(sys)
    solver = GeneralizedLyapunov(A_N.T, [Ni.T for Ni in sys.N])
    return _solve_gramian(solver, sys.C.T @ sys.C, T, sys)


def exact_gramians(sys, horizon=math.inf):
    g = exact_gramian_P(sys, horizon)
    return g.with_Q(exact_gramian_Q(sys, horizon))


def second_moment_flow(sys, M, t, dual=False):
    """``E[Phi(t) M Phi(t)^T]``, or ``E[Phi(t)^T M Phi(t)]`` with ``dual``."""
    A_N = drift_ito(sys)
    if dual:
        solver = GeneralizedLyapunov(A_N.T, [Ni.T for Ni in sys.N])
    else:
        solver = GeneralizedLyapunov(A_N, sys.N)
    return solver.flow(np.asarray(M, dtype=float), float(t))


# -- empirical ---------------------------------------------------------------------

def _check_counts(N, N_s):
    if int(N) != N or N < 1 or int(N_s) != N_s or N_s < 1:
        raise ValidationError(f"N and N_s must be positive integers, got N={N}, N_s={N_s}")


def empirical_gramians(sys, T, N, N_s, seed, threads=1, scheme="midpoint", stream=TRAIN):
    """Monte-Carlo reachability Gramians.

    ``B`` and ``X0`` are propagated together on each sampled path and the
    outer products are summed at ``s_1..s_N`` (``s_0`` excluded).
    """
    _check_counts(N, N_s)
    grid = UniformGrid(T, N)
    H = validate_hurst(sys.H)
    m = sys.m
    seed_cols = np.hstack([sys.B, sys.X0])
    has_x0 = bool(np.any(sys.X0))

    def chunk(a, b):
        dW = noise_chunk(grid, H, sys.q, seed, a, b, stream)
        acc = np.zeros((2, sys.n, sys.n))

        def visit(j, X):
            if j == 0:
                return
            S = X.shape[1]
            Xu = X[:, :, :m].reshape(sys.n, S * m)
            acc[0] += Xu @ Xu.T
            if has_x0:
                Xx = X[:, :, m:].reshape(sys.n, S * sys.v)
                acc[1] += Xx @ Xx.T

        propagate(sys, seed_cols, dW, grid.dt, scheme, visit=visit, sample_offset=a)
        return acc

    acc = ordered_sum(map_chunks(chunk, N_s, threads)) * (T / (N * N_s))
    prov = {"kind": "empirical", "N": int(N), "N_s": int(N_s), "seed": int(seed)}
    return GramianSet(acc[0], acc[1], None, float(T), prov)


def empirical_observability(sys, T, N, N_s, seed, threads=1, scheme="midpoint",
                            stream=TRAIN, cap=OBSERVABILITY_CAP):
    """Monte-Carlo observability Gramian; propagates the full ``n x n`` fundamental matrix."""
    _check_counts(N, N_s)
    if sys.n > cap:
        warnings.warn(
            f"empirical observability Gramian propagates {sys.n}x{sys.n} matrices per path "
            f"(n above cap {cap}); expect long runtimes",
            RuntimeWarning,
            stacklevel=2,
        )
    grid = UniformGrid(T, N)
    H = validate_hurst(sys.H)
    n, p, C = sys.n, sys.p, sys.C

    def chunk(a, b):
        dW = noise_chunk(grid, H, sys.q, seed, a, b, stream)
        acc = np.zeros((n, n))

        def visit(j, X):
            if j == 0:
                return
            S = X.shape[1]
            Y = (C @ X.reshape(n, S * n)).reshape(p, S, n).reshape(p * S, n)
            acc[...] += Y.T @ Y

        propagate(sys, np.eye(n), dW, grid.dt, scheme, visit=visit, sample_offset=a)
        return acc

    return _sym(ordered_sum(map_chunks(chunk, N_s, threads)) * (T / (N * N_s)))


# -- dominant subspaces --------------------------------------------------------------

@dataclass
class InequalityCheck:
    name: str
    lhs: float
    rhs: float
    stderr: float
    equality: bool = False

    @property
    def margin(self):
        return self.rhs - self.lhs

    @property
    def holds(self):
        """Within four standard errors (both sides for an equality)."""
        if self.equality:
            return abs(self.margin) <= 4 * self.stderr
        return self.margin >= -4 * self.stderr


@dataclass
class DominantSubspaceReport:
    checks: list
    v_P_v: float
    z_norm_sq: float
    T_u_norm_sq: float

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def all_hold(self):
        return all(c.holds for c in self.checks)


def _trapz_rows(vals, dt):
    # vals: (S, N+1) -> per-sample trapezoid integral
    return dt * (vals[:, 1:-1].sum(axis=1) + 0.5 * (vals[:, 0] + vals[:, -1]))


def dominant_subspace_check(sys, gramians, v, u, z, T, N_s, N=200, seed=0, threads=1):
    """Monte-Carlo check of the dominant-subspace inequalities for direction ``v``.

    Left-hand sides are simulated with the midpoint rule (time integrals by the
    trapezoid rule); right-hand sides use ``gramians`` (horizon ``T``).
    Reported checks:

    ``x0``      int E<x_x0, v>^2 dt  <=  v^T P_x0 v |z|^2
    ``u``       sup_t E<x_u, v>^2    <=  v^T P_u v |u|^2
    ``full``    int E<x, v>^2 dt     <=  2 v^T P v max(|z|^2, T |u|^2)
    ``output``  int E|C Phi v|^2 dt   =  v^T Q v
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float).reshape(-1)
    if v.shape != (sys.n,) or z.shape != (sys.v,):
        raise ValidationError("v must have length n and z length v")
    if gramians.Q is None:
        raise ValidationError("gramians must include Q")
    grid = UniformGrid(T, N)
    x0 = sys.X0 @ z
    inits = np.column_stack([x0, v])

    def chunk(a, b):
        dW = noise_chunk(grid, sys.H, sys.q, seed, a, b, TRAIN)
        S = b - a
        px0 = np.empty((S, N + 1))
        pout = np.empty((S, N + 1))
        pu = np.empty((S, N + 1))

        def visit_h(j, X):
            px0[:, j] = v @ X[:, :, 0]
            CPhi = np.einsum("pi,is->ps", sys.C, X[:, :, 1])
            pout[:, j] = np.sum(CPhi**2, axis=0)

        def visit_u(j, X):
            pu[:, j] = v @ X[:, :, 0]

        propagate(sys, inits, dW, grid.dt, "midpoint", visit=visit_h, sample_offset=a)
        propagate(sys, np.zeros((sys.n, 1)), dW, grid.dt, "midpoint", control=u,
                  visit=visit_u, sample_offset=a)
        return px0, pu, pout

    parts = map_chunks(chunk, N_s, threads)
    px0 = np.vstack([p[0] for p in parts])
    pu = np.vstack([p[1] for p in parts])
    pout = np.vstack([p[2] for p in parts])
    sqrt_ns = math.sqrt(N_s)

    def mc(x):
        return float(x.mean()), float(x.std(ddof=1) / sqrt_ns) if N_s > 1 else 0.0

    ix0 = _trapz_rows(px0**2, grid.dt)
    ifull = _trapz_rows((px0 + pu) ** 2, grid.dt)
    iout = _trapz_rows(pout, grid.dt)
    mean_u = np.mean(pu**2, axis=0)
    k = int(np.argmax(mean_u))
    u_sq = l2_norm(u, grid, sys.m) ** 2 if u is not None else 0.0
    z_sq = float(z @ z)
    vPx0v = float(v @ gramians.P_x0 @ v)
    vPuv = float(v @ gramians.P_u @ v)
    vPv = float(v @ gramians.P @ v)
    vQv = float(v @ gramians.Q @ v)

    m_x0, se_x0 = mc(ix0)
    m_full, se_full = mc(ifull)
    m_out, se_out = mc(iout)
    checks = [
        InequalityCheck("x0", m_x0, vPx0v * z_sq, se_x0),
        InequalityCheck("u", float(mean_u[k]), vPuv * u_sq, mc(pu[:, k] ** 2)[1]),
        InequalityCheck("full", m_full, 2 * vPv * max(z_sq, T * u_sq), se_full),
        InequalityCheck("output", m_out, vQv, se_out, equality=True),
    ]
    return DominantSubspaceReport(checks, vPv, z_sq, T * u_sq)


# -- container -----------------------------------------------------------------------

def save_gramians(gs, path):
    doc = {
        "n": gs.n,
        "horizon": "infinite" if gs.horizon == math.inf else gs.horizon,
        "provenance": gs.provenance,
        "P_u": _matrix_to_list(gs.P_u),
        "P_x0": _matrix_to_list(gs.P_x0),
        "P": _matrix_to_list(gs.P),
        "Q": None if gs.Q is None else _matrix_to_list(gs.Q),
    }
    _dump(doc, path)


def load_gramians(path):
    with open(path) as fh:
        d = json.load(fh)
    try:
        n = d["n"]
        T = math.inf if d["horizon"] == "infinite" else float(d["horizon"])
        P_u = np.array(d["P_u"], dtype=float).reshape(n, n)
        P_x0 = np.array(d["P_x0"], dtype=float).reshape(n, n)
        Q = None if d.get("Q") is None else np.array(d["Q"], dtype=float).reshape(n, n)
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"malformed Gramian document: {exc}") from exc
    return GramianSet(P_u, P_x0, Q, T, d.get("provenance", {"kind": "exact"}))
