"""Balancing transformations, truncation and POD reduced-order models."""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DefinitenessError, InterpretationError, RankError, ValidationError
from .model import (
    Interpretation,
    _dump,
    system_from_dict,
    system_to_dict,
    to_stratonovich,
    transform,
)

__all__ = [
    "BalanceMethod",
    "Recipe",
    "BalancedRealization",
    "ReducedOrderModel",
    "RankWarning",
    "p_balance",
    "pq_balance",
    "truncate_projection",
    "truncate_corrected",
    "pod_basis",
    "pod_basis_from_gram",
    "galerkin_rom",
    "project",
    "build_splitting_rom",
    "rom_to_dict",
    "rom_from_dict",
    "save_rom",
    "load_rom",
]

RANK_RTOL = 1e-12
DEFINITE_RTOL = 1e-12


class RankWarning(UserWarning):
    pass


class BalanceMethod(str, enum.Enum):
    P = "P_balance"
    PQ = "PQ_balance"
    P_EMPIRICAL = "P_empirical"
    PQ_EMPIRICAL = "PQ_empirical"


class Recipe(str, enum.Enum):
    PROJECTION = "projection"
    ITO_CORRECTED = "ito_corrected"
    POD = "pod"
    POD_SPLITTING = "pod_splitting"
    GRAMIAN_SPLITTING = "gramian_splitting"


@dataclass(frozen=True, eq=False)
class BalancedRealization:
    sys_bal: object
    S: np.ndarray
    S_inv: np.ndarray
    sigma: np.ndarray
    method: BalanceMethod
    rank: int

    @property
    def n(self):
        return self.S.shape[0]


@dataclass(frozen=True, eq=False)
class ReducedOrderModel:
    sys_r: object
    V: np.ndarray
    W: np.ndarray
    recipe: Recipe
    r: int
    correction: np.ndarray
    sigma: np.ndarray | None = None
    bound: float | None = None

    @property
    def truncated_tail_sum(self):
        if self.sigma is None:
            return None
        return float(np.sum(self.sigma[self.r:]))


def _sign_fix(U):
    # largest-magnitude entry of each column positive
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def _sorted_eigh(X):
    w, U = np.linalg.eigh(0.5 * (X + X.T))
    order = np.argsort(-w, kind="stable")
    return w[order], _sign_fix(U[:, order])


def _strat(sys):
    return to_stratonovich(sys) if sys.interpretation is Interpretation.ITO else sys


# -- balancing ---------------------------------------------------------------

def p_balance(sys, P, method=BalanceMethod.P):
    """Orthogonal transformation diagonalizing ``P`` (eigenvalues nonincreasing)."""
    w, U = _sorted_eigh(np.asarray(P, dtype=float))
    if w[0] <= 0:
        raise DefinitenessError("P has no positive eigenvalue")
    small = w < RANK_RTOL * w[0]
    rank = int(np.count_nonzero(~small))
    if small.any():
        warnings.warn(
            f"P is numerically rank deficient (rank {rank} of {len(w)}); "
            "truncation orders above the rank are rejected",
            RankWarning,
            stacklevel=2,
        )
    sigma = np.clip(w, 0.0, None)
    sys = _strat(sys)
    return BalancedRealization(transform(sys, U.T, U), U.T, U, sigma, BalanceMethod(method), rank)


def _low_rank_factor(X, name):
    w, U = _sorted_eigh(X)
    if w[0] <= 0:
        raise DefinitenessError(f"{name} has no positive eigenvalue")
    keep = w > RANK_RTOL * w[0]
    return U[:, keep] * np.sqrt(w[keep])


def pq_balance(sys, P, Q, method=BalanceMethod.PQ, restrict=False):
    """Square-root balancing of the pair ``(P, Q)``.

    With ``restrict=False`` both Gramians must be positive definite and the
    full ``n x n`` transformation is returned.  With ``restrict=True`` the
    Gramians are factored on their numerical range, only the ``k`` leading
    balanced coordinates (Hankel-type values above ``1e-12`` relative) are
    computed, and the transformation is completed by an oblique complement;
    the trailing ``n - k`` coordinates are not balanced.  Reduced models of
    order ``r <= k`` depend only on the leading coordinates.
    """
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n = P.shape[0]
    if restrict:
        LP = _low_rank_factor(P, "P")
        LQ = _low_rank_factor(Q, "Q")
    else:
        for name, X in (("P", P), ("Q", Q)):
            w = np.linalg.eigvalsh(0.5 * (X + X.T))
            if w[-1] <= 0 or w[0] <= DEFINITE_RTOL * w[-1]:
                raise DefinitenessError(
                    f"{name} is not positive definite: smallest eigenvalue {w[0]:.3e}, "
                    f"largest {w[-1]:.3e}"
                )
        LP = np.linalg.cholesky(0.5 * (P + P.T))
        LQ = np.linalg.cholesky(0.5 * (Q + Q.T))
    Y, s, Zt = np.linalg.svd(LQ.T @ LP, full_matrices=False)
    if restrict:
        k = int(np.count_nonzero(s > RANK_RTOL * s[0]))
    else:
        k = n
        if s[-1] <= 0:
            raise DefinitenessError("P Q is singular")
    Y, s, U = Y[:, :k], s[:k], Zt[:k].T
    # sign convention on the balanced basis
    V = LP @ U / np.sqrt(s)
    signs = np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(k)])
    signs[signs == 0] = 1.0
    V = V * signs
    Wt = (signs / np.sqrt(s))[:, None] * (Y.T @ LQ.T)
    if k < n:
        Vc = sla.null_space(Wt)
        Wct = Vc.T - (Vc.T @ V) @ Wt
        S = np.vstack([Wt, Wct])
        S_inv = np.hstack([V, Vc])
        sigma = np.concatenate([s, np.zeros(n - k)])
    else:
        S, S_inv, sigma = Wt, V, s
    sys = _strat(sys)
    return BalancedRealization(transform(sys, S, S_inv), S, S_inv, sigma, BalanceMethod(method), k)


# -- truncation ----------------------------------------------------------------

def _check_order(r, limit):
    if int(r) != r or not 1 <= r <= limit:
        raise RankError(f"reduced order must lie in 1..{limit}, got {r}")
    return int(r)


def _blocks(bal, r):
    s = bal.sys_bal
    return dict(
        A=s.A[:r, :r],
        B=s.B[:r],
        C=s.C[:, :r],
        N=tuple(Ni[:r, :r] for Ni in s.N),
        X0=s.X0[:r],
        z=s.z,
        H=s.H,
        interpretation=s.interpretation,
    )


def truncate_projection(bal, r):
    """Keep the leading ``r x r`` blocks of the balanced coefficients."""
    r = _check_order(r, bal.rank)
    sys_r = type(bal.sys_bal)(**_blocks(bal, r))
    return ReducedOrderModel(
        sys_r, bal.S_inv[:, :r], bal.S[:r].T, Recipe.PROJECTION, r, np.zeros((r, r)), bal.sigma
    )


def truncate_corrected(bal, r):
    """Truncation of the Ito form, returned in Stratonovich form.

    The drift is ``A_11 + 1/2 sum_i N_i,12 N_i,21``.
    """
    if bal.sys_bal.H != 0.5:
        raise InterpretationError("the corrected reduced model exists only for H = 1/2")
    r = _check_order(r, bal.rank)
    s = bal.sys_bal
    corr = np.zeros((r, r))
    for Ni in s.N:
        corr += Ni[:r, r:] @ Ni[r:, :r]
    corr *= 0.5
    blocks = _blocks(bal, r)
    blocks["A"] = blocks["A"] + corr
    return ReducedOrderModel(
        type(s)(**blocks), bal.S_inv[:, :r], bal.S[:r].T, Recipe.ITO_CORRECTED, r, corr, bal.sigma
    )


# -- POD ------------------------------------------------------------------------

def pod_basis(snapshots, r, return_values=False):
    """Leading ``r`` left singular vectors of the snapshot matrix."""
    X = np.asarray(snapshots, dtype=float)
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    tol = s[0] * max(X.shape) * np.finfo(float).eps if s.size else 0.0
    r = _check_order(r, int(np.count_nonzero(s > tol)))
    V = _sign_fix(U[:, :r])
    return (V, s) if return_values else V


def pod_basis_from_gram(G, r, n_columns=None, return_values=False):
    """POD basis from the accumulated ``X X^T`` of a snapshot matrix ``X``."""
    w, U = _sorted_eigh(np.asarray(G, dtype=float))
    s = np.sqrt(np.clip(w, 0.0, None))
    n = G.shape[0]
    # X X^T squares the condition number; rank tolerance on singular values
    tol = s[0] * max(n, n_columns or n) * np.sqrt(np.finfo(float).eps) if s[0] > 0 else 0.0
    rank = int(np.count_nonzero(s > tol))
    r = _check_order(r, rank)
    V = U[:, :r]
    return (V, s) if return_values else V


# -- Petrov-Galerkin projection ----------------------------------------------

def project(sys, V, W=None):
    """Coefficients ``W^T A V, W^T B, C V, W^T N_i V, W^T X0``; ``W = V`` by default."""
    V = np.asarray(V, dtype=float)
    W = V if W is None else np.asarray(W, dtype=float)
    Wt = W.T
    return type(sys)(
        A=Wt @ sys.A @ V,
        B=Wt @ sys.B,
        C=sys.C @ V,
        N=tuple(Wt @ Ni @ V for Ni in sys.N),
        X0=Wt @ sys.X0,
        z=sys.z,
        H=sys.H,
        interpretation=sys.interpretation,
    )


def galerkin_rom(sys, V, W=None, recipe=Recipe.POD, sigma=None):
    sys = _strat(sys)
    W = V if W is None else W
    if not np.allclose(W.T @ V, np.eye(V.shape[1]), atol=1e-10):
        raise ValidationError("W^T V must be the identity")
    r = V.shape[1]
    return ReducedOrderModel(project(sys, V, W), V, W, Recipe(recipe), r, np.zeros((r, r)), sigma)


# -- splitting ---------------------------------------------------------------------

def _subsystems(sys):
    """Controlled part (zero initial state) and uncontrolled part (``B = 0``)."""
    sys_u = sys.replace(X0=np.zeros((sys.n, 1)), z=np.ones(1))
    sys_x0 = sys.replace(B=np.zeros((sys.n, sys.m)))
    return sys_u, sys_x0


def build_splitting_rom(sys, method, r_u, r_x0, *, gramians=None, snapshots=None,
                        corrected=None, restrict=True):
    """Reduce the controlled and the initial-state subsystem independently.

    Parameters
    ----------
    method : {'gramian_splitting', 'pod_splitting'}
    gramians : GramianSet, for ``gramian_splitting``
        ``P_u``/``P_x0`` are balanced against ``Q`` when ``Q`` is present,
        otherwise diagonalized on their own.
    snapshots : pair ``(X_u, X_x0)``, for ``pod_splitting``
        Snapshot matrices with ``n`` rows, or their Gram matrices ``X X^T``
        (any square symmetric input is read as a Gram matrix).
    corrected : bool, optional
        Use the corrected truncation; defaults to true for ``H = 1/2``.
    r_u, r_x0 : int or None
        ``None`` (or 0) drops the subsystem, which must then be trivial.

    Returns
    -------
    (rom_u, rom_x0) with ``None`` for dropped parts.
    """
    sys_u, sys_x0 = _subsystems(sys)
    if corrected is None:
        corrected = sys.H == 0.5
    roms = []
    if method == "gramian_splitting" or method == Recipe.GRAMIAN_SPLITTING:
        if gramians is None:
            raise ValidationError("gramian_splitting needs a GramianSet")
        for sub, P, r in ((sys_u, gramians.P_u, r_u), (sys_x0, gramians.P_x0, r_x0)):
            if not r:
                roms.append(None)
                continue
            if gramians.Q is not None:
                bal = pq_balance(sub, P, gramians.Q, restrict=restrict)
            else:
                bal = p_balance(sub, P, BalanceMethod.P_EMPIRICAL)
            rom = truncate_corrected(bal, r) if corrected else truncate_projection(bal, r)
            roms.append(_retag(rom, Recipe.GRAMIAN_SPLITTING))
    elif method == "pod_splitting" or method == Recipe.POD_SPLITTING:
        if snapshots is None:
            raise ValidationError("pod_splitting needs snapshot data for both subsystems")
        for sub, X, r in ((sys_u, snapshots[0], r_u), (sys_x0, snapshots[1], r_x0)):
            if not r:
                roms.append(None)
                continue
            X = np.asarray(X, dtype=float)
            if X.shape[0] == X.shape[1] and np.allclose(X, X.T):
                V, s = pod_basis_from_gram(X, r, return_values=True)
            else:
                V, s = pod_basis(X, r, return_values=True)
            roms.append(galerkin_rom(sub, V, recipe=Recipe.POD_SPLITTING, sigma=s))
    else:
        raise ValidationError(f"unknown splitting method {method!r}")
    return tuple(roms)


def _retag(rom, recipe):
    return ReducedOrderModel(rom.sys_r, rom.V, rom.W, recipe, rom.r, rom.correction, rom.sigma)


# -- container ------------------------------------------------------------------------

def rom_to_dict(rom, method=None):
    doc = system_to_dict(rom.sys_r)
    sigma = None if rom.sigma is None else [float(x) for x in rom.sigma]
    doc["recipe"] = {
        "method": method or rom.recipe.value,
        "r": rom.r,
        "sigma": sigma,
        "truncated_tail_sum": rom.truncated_tail_sum,
    }
    doc["correction"] = [[float(x) for x in row] for row in rom.correction]
    doc["V"] = [[float(x) for x in row] for row in rom.V]
    doc["W"] = [[float(x) for x in row] for row in rom.W]
    return doc


def save_rom(rom, path, method=None):
    _dump(rom_to_dict(rom, method), path)


def rom_from_dict(d):
    sys_r = system_from_dict(d)
    rec = d.get("recipe", {})
    r = sys_r.n
    V = np.array(d.get("V", np.eye(r)), dtype=float)
    W = np.array(d.get("W", np.eye(r)), dtype=float)
    sigma = None if rec.get("sigma") is None else np.array(rec["sigma"], dtype=float)
    recipe = rec.get("method", "projection")
    recipe = Recipe(recipe) if recipe in Recipe._value2member_map_ else Recipe.PROJECTION
    corr = np.array(d.get("correction", np.zeros((r, r))), dtype=float).reshape(r, r)
    return ReducedOrderModel(sys_r, V, W, recipe, r, corr, sigma)


def load_rom(path):
    with open(path) as fh:
        return rom_from_dict(json.load(fh))
