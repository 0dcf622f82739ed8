"""Generalized Lyapunov operators ``G(X) = A X + X A^T + sum_i N_i X N_i^T``.

Small problems (``n <= dense_cap``) use the explicit ``n^2 x n^2`` Kronecker
matrix: LU for algebraic equations and the block matrix exponential of Van
Loan for finite-horizon integrals.  Larger problems never form that matrix:
algebraic equations go through GMRES preconditioned by the Lyapunov part
(Bartels-Stewart on a cached real Schur form), and the matrix flow
``Z' = G(Z)`` is integrated by a fourth-order integrating-factor
Runge-Kutta scheme that treats ``A X + X A^T`` exactly.

The dual operator is ``GeneralizedLyapunov(A.T, [N.T for N in Ns])``.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import NumericalError, SingularGeneratorError
from .model import unvec, vec

__all__ = ["GeneralizedLyapunov", "DENSE_CAP", "EXPM_CAP"]

DENSE_CAP = 32
EXPM_CAP = 20
SINGULAR_RTOL = 1e-13


class GeneralizedLyapunov:
    """Solver bundle for one operator ``G``.

    Parameters
    ----------
    A : (n, n) array
    Ns : sequence of (n, n) arrays
    dense_cap, expm_cap : int
        Largest ``n`` handled by the dense Kronecker solve / the dense
        matrix exponential.
    """

    def __init__(self, A, Ns=(), dense_cap=DENSE_CAP, expm_cap=EXPM_CAP):
        self.A = np.asarray(A, dtype=float)
        self.Ns = [np.asarray(Ni, dtype=float) for Ni in Ns]
        self.n = self.A.shape[0]
        self.dense = self.n <= dense_cap
        self.expm_dense = self.n <= expm_cap
        self._K = None
        self._lu = None
        self._schur = None

    # -- operator application ------------------------------------------------

    def apply(self, X):
        out = self.A @ X + X @ self.A.T
        for Ni in self.Ns:
            out += Ni @ X @ Ni.T
        return out

    def _pi(self, X):
        out = np.zeros_like(X)
        for Ni in self.Ns:
            out += Ni @ X @ Ni.T
        return out

    @property
    def K(self):
        if self._K is None:
            eye = np.eye(self.n)
            K = np.kron(self.A, eye) + np.kron(eye, self.A)
            for Ni in self.Ns:
                K += np.kron(Ni, Ni)
            self._K = K
        return self._K

    # -- algebraic equation --------------------------------------------------

    def solve(self, R):
        """Solve ``G(X) = R``."""
        R = np.asarray(R, dtype=float)
        if self.dense:
            return unvec(self._dense_solve(vec(R)), self.n)
        return self._iterative_solve(R)

    def _dense_solve(self, r):
        if self._lu is None:
            K = self.K
            scale = max(np.linalg.norm(K, 1), np.finfo(float).tiny)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                lu, piv = sla.lu_factor(K, check_finite=False)
            if np.min(np.abs(np.diag(lu))) <= SINGULAR_RTOL * scale:
                raise SingularGeneratorError(
                    "generalized Lyapunov operator is numerically singular"
                )
            self._lu = (lu, piv)
        return sla.lu_solve(self._lu, r, check_finite=False)

    def _lyap_solve(self, R):
        """Solve ``A X + X A^T = R`` by Bartels-Stewart."""
        if self._schur is None:
            T, U = sla.schur(self.A, output="real")
            self._schur = (T, U)
        T, U = self._schur
        F = U.T @ R @ U
        Y, scale, info = sla.lapack.dtrsyl(T, T, F, trana="N", tranb="T", isgn=1)
        if info < 0:
            raise NumericalError(f"dtrsyl failed with info={info}")
        if info == 1:
            raise SingularGeneratorError("Lyapunov part has eigenvalues lambda_i + lambda_j ~ 0")
        return U @ (Y / scale) @ U.T

    def _iterative_solve(self, R, rtol=1e-13, maxiter=500):
        n = self.n
        rhs = self._lyap_solve(R)
        if not self.Ns:
            return rhs

        def matvec(x):
            X = unvec(x, n)
            return vec(X + self._lyap_solve(self._pi(X)))

        op = LinearOperator((n * n, n * n), matvec=matvec, dtype=float)
        x, info = gmres(op, vec(rhs), rtol=rtol, atol=0.0, restart=60, maxiter=maxiter)
        if info != 0:
            raise SingularGeneratorError(
                f"GMRES did not converge (info={info}); operator may be singular or unstable"
            )
        X = unvec(x, n)
        res = np.linalg.norm(self.apply(X) - R) / max(np.linalg.norm(R), 1e-300)
        if res > 1e-8:
            raise SingularGeneratorError(f"generalized Lyapunov residual {res:.2e} too large")
        return X

    # -- matrix flow -----------------------------------------------------------

    def flow(self, M, t, steps=None):
        """``Z(t)`` for ``Z' = G(Z)``, ``Z(0) = M``."""
        M = np.asarray(M, dtype=float)
        if t == 0:
            return M.copy()
        if self.expm_dense:
            return unvec(sla.expm(self.K * t) @ vec(M), self.n)
        return self._lawson(M, t, steps)

    def integral(self, M, t, steps=None):
        """``int_0^t Z(s) ds`` for ``Z' = G(Z)``, ``Z(0) = M``."""
        M = np.asarray(M, dtype=float)
        n = self.n
        if t == 0:
            return np.zeros_like(M)
        if self.expm_dense:
            nn = n * n
            aug = np.zeros((nn + 1, nn + 1))
            aug[:nn, :nn] = self.K * t
            aug[:nn, nn] = vec(M) * t
            return unvec(sla.expm(aug)[:nn, nn], n)
        # G(P_t) = Z(t) - M
        Z, quad = self._lawson(M, t, steps, accumulate=True)
        try:
            return self.solve(Z - M)
        except SingularGeneratorError:
            warnings.warn(
                "generalized Lyapunov operator singular; finite-horizon integral "
                "falls back to trapezoidal quadrature of the matrix flow",
                RuntimeWarning,
                stacklevel=2,
            )
            return quad

    def _lawson(self, M, t, steps=None, accumulate=False):
        if steps is None:
            nu = sum(np.linalg.norm(Ni, 2) ** 2 for Ni in self.Ns)
            steps = max(100, math.ceil(t * nu / 0.02))
        h = t / steps
        E1 = sla.expm(h * self.A)
        Eh = sla.expm(0.5 * h * self.A)

        def ef(E, X):
            return E @ X @ E.T

        Z = M.copy()
        quad = 0.5 * h * M if accumulate else None
        for _ in range(steps):
            k1 = self._pi(Z)
            Zh = ef(Eh, Z)
            k2 = self._pi(ef(Eh, Z + 0.5 * h * k1))
            k3 = self._pi(Zh + 0.5 * h * k2)
            k4 = self._pi(ef(E1, Z) + h * ef(Eh, k3))
            Z = ef(E1, Z + h / 6 * k1) + h / 3 * ef(Eh, k2 + k3) + h / 6 * k4
            if accumulate:
                quad += h * Z
        if accumulate:
            quad -= 0.5 * h * Z
            return Z, quad
        return Z
