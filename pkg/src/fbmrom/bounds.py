"""Output error bounds for truncated ``H = 1/2`` models and the measured error ``R_E``.

For a balanced realization partitioned after ``r`` states, with Ito drift
``A_N`` and ``Delta = sum_i N_i,12 N_i,21``, the reduced Ito drift is

* ``A_N,11 - Delta/2`` for plain truncation,
* ``A_N,11`` for the corrected model.

With that drift ``D`` the auxiliary duals solve

    D^T Qh + Qh A_N + sum_i N_i,11^T Qh N_i = -C_1^T C        (r x n)
    D^T Qr + Qr D   + sum_i N_i,11^T Qr N_i,11 = -C_1^T C_1   (r x r)

and the bound is ``sqrt(tr(Sigma_1 (Qh_1^T - Qr) Delta) + tr(Sigma_2 W))``
with ``W = C_2^T C_2 + 2 A_N,12^T Qh_2 + sum_i N_i,12^T (2 Qh N_i[:, r:] - Qr N_i,12)``.
The first trace is dropped for the corrected model.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import InstabilityError, InterpretationError, SingularGeneratorError, ValidationError
from .fbm import UniformGrid
from .integrate import l2_norm, simulate
from .lyapunov import GeneralizedLyapunov
from .model import drift_ito, is_mean_square_stable, unvec, vec
from .montecarlo import EVAL, map_chunks, noise_chunk, ordered_sum

__all__ = [
    "BoundReport",
    "ErrorReport",
    "solve_mixed_dual",
    "solve_reduced_dual",
    "bound_projection",
    "bound_corrected",
    "output_error",
    "reduction_error",
    "control_norm",
    "CSV_HEADER",
]

CLIP_RTOL = 1e-10
CSV_HEADER = "method,r,bound,tail_term,drift_term,measured_error,stderr"


@dataclass
class BoundReport:
    bound_value: float
    tail_term: float
    drift_term: float
    Q_hat: np.ndarray
    Q_r: np.ndarray
    W: np.ndarray
    method: str = "projection"
    r: int = 0
    measured_error: float | None = None
    stderr: float | None = None

    def csv_row(self):
        def fmt(x):
            return "" if x is None else f"{x:.17g}"

        return ",".join(
            [self.method, str(self.r), fmt(self.bound_value), fmt(self.tail_term),
             fmt(self.drift_term), fmt(self.measured_error), fmt(self.stderr)]
        )


def _require_half(sys):
    if sys.H != 0.5:
        raise InterpretationError("error bounds are available only for H = 1/2")


def _parts(sys_bal, r):
    _require_half(sys_bal)
    n = sys_bal.n
    if int(r) != r or not 1 <= r <= n:
        raise ValidationError(f"r must lie in 1..{n}, got {r}")
    A_N = drift_ito(sys_bal)
    Ns = sys_bal.N
    delta = np.zeros((r, r))
    for Ni in Ns:
        delta += Ni[:r, r:] @ Ni[r:, :r]
    return A_N, Ns, delta


def _drift(A_N, delta, r, corrected):
    D = A_N[:r, :r]
    return D if corrected else D - 0.5 * delta


def solve_mixed_dual(sys_bal, r, corrected=False):
    """Solve for the ``r x n`` matrix ``Qh`` by Kronecker vectorization."""
    A_N, Ns, delta = _parts(sys_bal, r)
    n = sys_bal.n
    D = _drift(A_N, delta, r, corrected)
    op = np.kron(np.eye(n), D.T) + np.kron(A_N.T, np.eye(r))
    for Ni in Ns:
        op += np.kron(Ni.T, Ni[:r, :r].T)
    rhs = -vec(sys_bal.C[:, :r].T @ sys_bal.C)
    lu, piv = sla.lu_factor(op)
    if np.min(np.abs(np.diag(lu))) < 1e-13 * np.linalg.norm(op, 1):
        raise SingularGeneratorError("mixed dual equation is singular")
    return unvec(sla.lu_solve((lu, piv), rhs), r, n)


def solve_reduced_dual(sys_bal, r, corrected=False):
    """Solve for the symmetric ``r x r`` matrix ``Qr``."""
    A_N, Ns, delta = _parts(sys_bal, r)
    D = _drift(A_N, delta, r, corrected)
    C1 = sys_bal.C[:, :r]
    solver = GeneralizedLyapunov(D.T, [Ni[:r, :r].T for Ni in Ns], dense_cap=max(32, r))
    Qr = solver.solve(-C1.T @ C1)
    return 0.5 * (Qr + Qr.T)


def _reduced_ito(sys_bal, r, corrected):
    A_N, Ns, delta = _parts(sys_bal, r)
    D = _drift(A_N, delta, r, corrected)
    return sys_bal.replace(
        A=D,
        B=sys_bal.B[:r],
        C=sys_bal.C[:, :r],
        N=tuple(Ni[:r, :r] for Ni in Ns),
        X0=sys_bal.X0[:r],
        interpretation="Ito",
    )


def _bound(sys_bal, sigma, r, corrected):
    _require_half(sys_bal)
    if np.any(sys_bal.X0 @ sys_bal.z):
        raise ValidationError("error bounds assume a zero initial state")
    sigma = np.asarray(sigma, dtype=float)
    n = sys_bal.n
    if sigma.shape != (n,):
        raise ValidationError(f"sigma must have length {n}")
    if not is_mean_square_stable(sys_bal):
        raise InstabilityError("full system is not mean-square asymptotically stable")
    if r < n and not is_mean_square_stable(_reduced_ito(sys_bal, r, corrected)):
        which = "corrected" if corrected else "truncated"
        raise InstabilityError(f"{which} reduced system of order {r} is not mean-square stable")
    A_N, Ns, delta = _parts(sys_bal, r)
    Qh = solve_mixed_dual(sys_bal, r, corrected)
    Qr = solve_reduced_dual(sys_bal, r, corrected)
    C2 = sys_bal.C[:, r:]
    W = C2.T @ C2 + 2.0 * A_N[:r, r:].T @ Qh[:, r:]
    for Ni in Ns:
        N12 = Ni[:r, r:]
        W += N12.T @ (2.0 * Qh @ Ni[:, r:] - Qr @ N12)
    tail = float(np.sum(sigma[r:] * np.diag(W)))
    drift = 0.0 if corrected else float(np.trace(np.diag(sigma[:r]) @ (Qh[:, :r].T - Qr) @ delta))
    total = tail + drift
    scale = abs(tail) + abs(drift)
    if total < 0:
        if total < -CLIP_RTOL * scale:
            raise InstabilityError(
                f"squared bound is negative ({total:.3e}); preconditions violated"
            )
        warnings.warn(f"squared bound {total:.3e} clipped to zero", RuntimeWarning, stacklevel=3)
        total = 0.0
    return BoundReport(
        math.sqrt(total), tail, drift, Qh, Qr, W,
        method="ito_corrected" if corrected else "projection", r=int(r),
    )


def bound_projection(sys_bal, sigma, r):
    """Bound for the plainly truncated model; includes the ``Sigma_1`` drift term."""
    return _bound(sys_bal, sigma, r, corrected=False)


def bound_corrected(sys_bal, sigma, r):
    """Bound for the corrected model (tail term only)."""
    return _bound(sys_bal, sigma, r, corrected=True)


# -- measured error ------------------------------------------------------------------

@dataclass
class ErrorReport:
    """Monte-Carlo error statistics on a shared-noise ensemble.

    ``mean_error[k]`` and ``mean_output[k]`` estimate ``E|y - y_r|`` and
    ``E|y|`` at ``t_k``.
    """

    mean_error: np.ndarray
    stderr_error: np.ndarray
    mean_output: np.ndarray
    grid: UniformGrid = field(repr=False)

    @property
    def sup_error(self):
        return float(self.mean_error.max())

    @property
    def sup_error_stderr(self):
        return float(self.stderr_error[int(np.argmax(self.mean_error))])

    @property
    def R_E(self):
        denom = float(self.mean_output.max())
        return self.sup_error / denom if denom > 0 else math.nan


def _as_parts(roms):
    if roms is None:
        return []
    if isinstance(roms, (tuple, list)):
        return [r for r in roms if r is not None]
    return [roms]


def _rom_system(rom):
    return getattr(rom, "sys_r", rom)


def output_error(sys, roms, u, T, N, N_s, seed, threads=1, stream=EVAL, scheme="midpoint"):
    """Shared-noise comparison of ``sys`` with one model or a sum of models.

    ``roms`` is a reduced model, a system, or a sequence of them whose outputs
    add up (``None`` entries are skipped).
    """
    grid = UniformGrid(T, N)
    parts = [_rom_system(r) for r in _as_parts(roms)]
    for p in parts:
        if p.q != sys.q or p.p != sys.p:
            raise ValidationError("reduced models must share the noise and output dimensions")

    def chunk(a, b):
        dW = noise_chunk(grid, sys.H, sys.q, seed, a, b, stream)
        Y = simulate(sys, sys.x0, u, dW, grid.dt, scheme, sample_offset=a)
        Yr = np.zeros_like(Y)
        for p in parts:
            Yr += simulate(p, p.x0, u, dW, grid.dt, scheme, sample_offset=a)
        e = np.linalg.norm(Y - Yr, axis=2)
        y = np.linalg.norm(Y, axis=2)
        return np.stack([e.sum(0), (e**2).sum(0), y.sum(0)])

    tot = ordered_sum(map_chunks(chunk, N_s, threads))
    mean_e = tot[0] / N_s
    var = np.clip(tot[1] / N_s - mean_e**2, 0.0, None) * (N_s / max(N_s - 1, 1))
    return ErrorReport(mean_e, np.sqrt(var / N_s), tot[2] / N_s, grid)


def reduction_error(sys, roms, u, T, N, N_s, seed, threads=1, stream=EVAL):
    """``R_E = sup_t E|y - y_r| / sup_t E|y|`` on shared noise."""
    return output_error(sys, roms, u, T, N, N_s, seed, threads, stream).R_E


def control_norm(u, T, N, m=1):
    return l2_norm(u, UniformGrid(T, N), m)
