"""Reduction experiments: error tables and singular-value decay."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .bounds import bound_corrected, bound_projection, output_error
from .errors import InterpretationError, ValidationError
from .fbm import UniformGrid
from .gramians import empirical_gramians, exact_gramians
from .integrate import propagate
from .montecarlo import TRAIN, map_chunks, noise_chunk, ordered_sum
from .reduce import (
    build_splitting_rom,
    p_balance,
    pq_balance,
    truncate_corrected,
    truncate_projection,
    BalanceMethod,
)

METHODS = (
    "p_balance",
    "pq_balance",
    "p_empirical",
    "gramian_splitting",
    "pod_splitting",
    "projection_rom",
    "corrected_rom",
)
EXACT_ONLY = {"p_balance", "pq_balance", "projection_rom", "corrected_rom"}
TABLE_HEADER = "method,r,R_E,bound,seconds"


def check_method(method, H):
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if H != 0.5 and method in EXACT_ONLY:
        raise InterpretationError(
            f"{method} needs exact Gramians, which are only computable for H = 1/2 "
            "(no Lyapunov-type equation is available for H > 1/2); "
            "use p_empirical, gramian_splitting or pod_splitting"
        )


def snapshot_grams(sys, T, N, N_s, seed, u, threads=1):
    """``X X^T`` of the snapshot matrices of the controlled and the initial-state subsystem.

    Columns are the states at ``t_1..t_N`` on ``N_s`` training paths.
    """
    grid = UniformGrid(T, N)
    n = sys.n
    x0 = sys.x0.reshape(n, 1)

    def chunk(a, b):
        dW = noise_chunk(grid, sys.H, sys.q, seed, a, b, TRAIN)
        G = np.zeros((2, n, n))

        def visit_u(j, X):
            if j:
                G[0] += X[:, :, 0] @ X[:, :, 0].T

        def visit_x(j, X):
            if j:
                G[1] += X[:, :, 0] @ X[:, :, 0].T

        propagate(sys, np.zeros((n, 1)), dW, grid.dt, control=u, visit=visit_u, sample_offset=a)
        if np.any(x0):
            propagate(sys, x0, dW, grid.dt, visit=visit_x, sample_offset=a)
        return G

    G = ordered_sum(map_chunks(chunk, N_s, threads))
    return G[0], G[1]


@dataclass
class Row:
    method: str
    r: int
    R_E: float
    bound: float | None
    seconds: float

    def csv(self):
        b = "" if self.bound is None else f"{self.bound:.17g}"
        return f"{self.method},{self.r},{self.R_E:.17g},{b},{self.seconds:.3f}"


class Experiment:
    """Lazily computed Gramians and snapshots shared by all methods of one run."""

    def __init__(self, sys, T=1.0, N=100, N_s=1000, seed=0, u=None, threads=1):
        self.sys = sys
        self.T, self.N, self.N_s, self.seed = float(T), int(N), int(N_s), int(seed)
        self.u = u
        self.threads = threads
        self._cache = {}

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def exact(self):
        if self.sys.H != 0.5:
            raise InterpretationError("exact Gramians need H = 1/2")
        return self._get("exact", lambda: exact_gramians(self.sys, self.T))

    @property
    def empirical(self):
        return self._get(
            "empirical",
            lambda: empirical_gramians(self.sys, self.T, self.N, self.N_s, self.seed, self.threads),
        )

    @property
    def snapshots(self):
        return self._get(
            "snapshots",
            lambda: snapshot_grams(self.sys, self.T, self.N, self.N_s, self.seed, self.u,
                                   self.threads),
        )

    def pq(self):
        g = self.exact
        return self._get("pq", lambda: pq_balance(self.sys, g.P, g.Q, restrict=True))

    def rom(self, method, r):
        check_method(method, self.sys.H)
        half = self.sys.H == 0.5
        if method in ("pq_balance", "corrected_rom"):
            return truncate_corrected(self.pq(), r)
        if method == "projection_rom":
            return truncate_projection(self.pq(), r)
        if method == "p_balance":
            bal = self._get("pbal", lambda: p_balance(self.sys, self.exact.P))
            return truncate_corrected(bal, r)
        if method == "p_empirical":
            bal = self._get(
                "pemp", lambda: p_balance(self.sys, self.empirical.P, BalanceMethod.P_EMPIRICAL)
            )
            return truncate_corrected(bal, r) if half else truncate_projection(bal, r)
        if method == "gramian_splitting":
            g = self.exact if half else self.empirical
            return build_splitting_rom(self.sys, method, _sub_r(g.P_u, r), _sub_r(g.P_x0, r),
                                       gramians=g)
        if method == "pod_splitting":
            G_u, G_x = self.snapshots
            return build_splitting_rom(self.sys, method, _sub_r(G_u, r), _sub_r(G_x, r),
                                       snapshots=(G_u, G_x))
        raise ValidationError(method)

    def bound(self, method, r):
        """A-priori bound times the control norm, when the theory covers the case."""
        if self.sys.H != 0.5 or np.any(self.sys.x0) or method not in (
            "pq_balance", "corrected_rom", "projection_rom"
        ):
            return None
        from .bounds import control_norm

        bal = self.pq()
        if bal.rank < self.sys.n:
            return None
        fn = bound_projection if method == "projection_rom" else bound_corrected
        rep = fn(bal.sys_bal, bal.sigma, r)
        return rep.bound_value * control_norm(self.u, self.T, self.N, self.sys.m)

    def table(self, methods, r_list):
        rows = []
        for method in methods:
            check_method(method, self.sys.H)
        for method in methods:
            for r in r_list:
                t0 = time.perf_counter()
                rom = self.rom(method, r)
                err = output_error(self.sys, rom, self.u, self.T, self.N, self.N_s, self.seed,
                                   self.threads)
                try:
                    b = self.bound(method, r)
                except Exception:  # bound preconditions fail on this instance
                    b = None
                rows.append(Row(method, r, err.R_E, b, time.perf_counter() - t0))
        return rows

    def decay(self, methods, count=50):
        """Leading ``count`` characteristic values per method, nonincreasing."""
        cols = {}
        for method in methods:
            check_method(method, self.sys.H)
            if method in ("pq_balance", "corrected_rom", "projection_rom"):
                g = self.exact
                v = hankel_values(g.P, g.Q)
            elif method == "p_balance":
                v = _eig_desc(self.exact.P)
            elif method == "p_empirical":
                v = _eig_desc(self.empirical.P)
            elif method == "gramian_splitting":
                if self.sys.H == 0.5:
                    g = self.exact
                    v = hankel_values(g.P_u, g.Q) + hankel_values(g.P_x0, g.Q)
                else:
                    g = self.empirical
                    v = _eig_desc(g.P_u) + _eig_desc(g.P_x0)
            else:
                G_u, G_x = self.snapshots
                v = np.sqrt(_eig_desc(G_u)) + np.sqrt(_eig_desc(G_x))
            cols[method] = np.sort(v)[::-1][:count]
        return cols


def _eig_desc(X):
    return np.clip(np.linalg.eigvalsh(0.5 * (X + X.T))[::-1], 0.0, None)


def _factor(X):
    w, U = np.linalg.eigh(0.5 * (X + X.T))
    return U * np.sqrt(np.clip(w, 0.0, None))


def hankel_values(P, Q):
    """Square roots of the eigenvalues of ``P Q``, nonincreasing (via factors)."""
    return np.linalg.svd(_factor(Q).T @ _factor(P), compute_uv=False)


def _sub_r(G, r):
    # a subsystem whose Gramian vanishes (no input, or zero initial state) is dropped
    return r if np.any(G) else 0
