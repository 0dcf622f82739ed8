"""Controlled linear systems driven by fractional noise.

A :class:`StochasticLinearSystem` holds the coefficients of

    dx = (A x + B u) dt + sum_i N_i x o dW_i,   x(0) = X0 z,   y = C x

together with the Hurst index and the integral interpretation (Young for
``H > 1/2``; Stratonovich or Ito for ``H = 1/2``).  Matrices are dense
float arrays; vectorization is column-major throughout, so
``vec(A X B) = (B^T kron A) vec(X)``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InterpretationError, SingularGeneratorError, ValidationError
from .fbm import validate_hurst

__all__ = [
    "Interpretation",
    "StochasticLinearSystem",
    "to_ito",
    "to_stratonovich",
    "drift_ito",
    "kronecker_generator",
    "is_mean_square_stable",
    "transform",
    "vec",
    "unvec",
    "system_to_dict",
    "system_from_dict",
    "save_system",
    "load_system",
]

PD_RTOL = 1e-10


class Interpretation(str, enum.Enum):
    YOUNG = "Young"
    STRATONOVICH = "Stratonovich"
    ITO = "Ito"


def vec(X):
    return np.asarray(X).reshape(-1, order="F")


def unvec(x, rows, cols=None):
    return np.asarray(x).reshape((rows, rows if cols is None else cols), order="F")


def _as_matrix(M, name, dtype=float):
    M = np.array(M, dtype=dtype)
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2:
        raise ValidationError(f"{name} must be a matrix, got ndim={M.ndim}")
    return M


@dataclass(frozen=True, eq=False)
class StochasticLinearSystem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    N: tuple = ()
    X0: np.ndarray | None = None
    z: np.ndarray | None = None
    H: float = 0.5
    interpretation: Interpretation | str | None = None
    name: str = field(default="", compare=False)

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValidationError(f"A must be square, got {A.shape}")
        B = _as_matrix(self.B, "B")
        if B.shape[0] != n:
            raise ValidationError(f"B must have {n} rows, got {B.shape}")
        C = np.array(self.C, dtype=float)
        if C.ndim == 1:
            C = C[None, :]
        if C.ndim != 2 or C.shape[1] != n:
            raise ValidationError(f"C must have {n} columns, got {C.shape}")
        Ns = tuple(np.array(Ni, dtype=float) for Ni in self.N)
        for i, Ni in enumerate(Ns):
            if Ni.shape != (n, n):
                raise ValidationError(f"N[{i}] must be {n}x{n}, got {Ni.shape}")
        X0 = np.zeros((n, 1)) if self.X0 is None else _as_matrix(self.X0, "X0")
        if X0.shape[0] != n:
            raise ValidationError(f"X0 must have {n} rows, got {X0.shape}")
        v = X0.shape[1]
        z = np.ones(v) if self.z is None else np.array(self.z, dtype=float).reshape(-1)
        if z.shape != (v,):
            raise ValidationError(f"z must have length {v}, got {z.shape}")
        H = validate_hurst(self.H)
        interp = self.interpretation
        if interp is None:
            interp = Interpretation.STRATONOVICH if H == 0.5 else Interpretation.YOUNG
        interp = Interpretation(interp)
        if interp is Interpretation.YOUNG and H == 0.5:
            raise InterpretationError("Young interpretation requires H > 1/2")
        if interp is not Interpretation.YOUNG and H != 0.5:
            raise InterpretationError(f"{interp.value} interpretation requires H = 1/2")
        for name, val in (("A", A), ("B", B), ("C", C), ("X0", X0), ("z", z)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        for Ni in Ns:
            Ni.setflags(write=False)
        object.__setattr__(self, "N", Ns)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "interpretation", interp)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def q(self):
        return len(self.N)

    @property
    def v(self):
        return self.X0.shape[1]

    @property
    def x0(self):
        return self.X0 @ self.z

    def replace(self, **changes):
        return replace(self, **changes)

    def __repr__(self):
        return (
            f"StochasticLinearSystem(n={self.n}, m={self.m}, p={self.p}, q={self.q}, "
            f"v={self.v}, H={self.H}, interpretation={self.interpretation.value})"
        )


def _noise_square(sys):
    out = np.zeros_like(sys.A)
    for Ni in sys.N:
        out += Ni @ Ni
    return out


def to_ito(sys):
    """Ito form of a Stratonovich system: ``A -> A + 1/2 sum N_i^2``."""
    if sys.interpretation is Interpretation.ITO:
        return sys
    if sys.interpretation is not Interpretation.STRATONOVICH:
        raise InterpretationError("to_ito needs a Stratonovich system (H = 1/2)")
    return sys.replace(A=sys.A + 0.5 * _noise_square(sys), interpretation=Interpretation.ITO)


def to_stratonovich(sys):
    """Inverse of :func:`to_ito`."""
    if sys.interpretation is Interpretation.STRATONOVICH:
        return sys
    if sys.interpretation is not Interpretation.ITO:
        raise InterpretationError("to_stratonovich needs an Ito system (H = 1/2)")
    return sys.replace(
        A=sys.A - 0.5 * _noise_square(sys), interpretation=Interpretation.STRATONOVICH
    )


def drift_ito(sys):
    """The Ito drift ``A_N`` of an ``H = 1/2`` system."""
    if sys.H != 0.5:
        raise InterpretationError("the Ito drift exists only for H = 1/2")
    return to_ito(sys).A


def kronecker_generator(sys):
    """``K = A_N (x) I + I (x) A_N + sum_i N_i (x) N_i``.

    ``exp(K t) vec(M) = vec(E[Phi(t) M Phi(t)^T])`` for ``H = 1/2``.
    """
    A_N = drift_ito(sys)
    eye = np.eye(sys.n)
    K = np.kron(A_N, eye) + np.kron(eye, A_N)
    for Ni in sys.N:
        K += np.kron(Ni, Ni)
    return K


def transform(sys, S, S_inv=None):
    """Coefficients in the coordinates ``x~ = S x``."""
    S = np.asarray(S, dtype=float)
    S_inv = np.linalg.inv(S) if S_inv is None else np.asarray(S_inv, dtype=float)
    return sys.replace(
        A=S @ sys.A @ S_inv,
        B=S @ sys.B,
        C=sys.C @ S_inv,
        N=tuple(S @ Ni @ S_inv for Ni in sys.N),
        X0=S @ sys.X0,
    )


def is_mean_square_stable(sys, return_certificate=False):
    """Test mean-square asymptotic stability of an ``H = 1/2`` system.

    Solves ``A_N X + X A_N^T + sum_i N_i X N_i^T = -I`` and checks that ``X``
    is positive definite (smallest eigenvalue above ``1e-10`` times the
    largest).

    Returns
    -------
    stable : bool
    X : ndarray
        The solution, only when ``return_certificate`` is true.
    """
    from .lyapunov import GeneralizedLyapunov

    solver = GeneralizedLyapunov(drift_ito(sys), sys.N)
    X = solver.solve(-np.eye(sys.n))
    w = np.linalg.eigvalsh(X)
    stable = bool(w[-1] > 0 and w[0] > PD_RTOL * w[-1])
    return (stable, X) if return_certificate else stable


# -- plain-text container ---------------------------------------------------

def _matrix_to_list(M):
    return [[float(x) for x in row] for row in np.asarray(M)]


def system_to_dict(sys):
    return {
        "n": sys.n,
        "m": sys.m,
        "p": sys.p,
        "q": sys.q,
        "v": sys.v,
        "H": sys.H,
        "interpretation": sys.interpretation.value,
        "A": _matrix_to_list(sys.A),
        "B": _matrix_to_list(sys.B),
        "C": _matrix_to_list(sys.C),
        "N": [_matrix_to_list(Ni) for Ni in sys.N],
        "X0": _matrix_to_list(sys.X0),
        "z": [float(x) for x in sys.z],
    }


def system_from_dict(d):
    try:
        sys = StochasticLinearSystem(
            A=np.array(d["A"], dtype=float).reshape(d["n"], d["n"]),
            B=np.array(d["B"], dtype=float).reshape(d["n"], d["m"]),
            C=np.array(d["C"], dtype=float).reshape(d["p"], d["n"]),
            N=tuple(np.array(Ni, dtype=float) for Ni in d.get("N", [])),
            X0=np.array(d["X0"], dtype=float).reshape(d["n"], d["v"]),
            z=d["z"],
            H=d["H"],
            interpretation=d.get("interpretation"),
        )
    except KeyError as exc:
        raise ValidationError(f"system document lacks field {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed system document: {exc}") from exc
    if sys.q != d.get("q", sys.q):
        raise ValidationError(f"document says q={d['q']} but holds {sys.q} noise matrices")
    return sys


def _dump(obj, path):
    # json writes floats with repr(), the shortest string that round-trips exactly
    def check(x):
        if isinstance(x, float) and not math.isfinite(x):
            raise ValidationError("non-finite value in matrix container")
        return x

    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, default=check)
        fh.write("\n")


def save_system(sys, path, extra=None):
    doc = system_to_dict(sys)
    if extra:
        doc.update(extra)
    _dump(doc, path)


def load_system(path):
    with open(path) as fh:
        return system_from_dict(json.load(fh))
