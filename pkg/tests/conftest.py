import numpy as np
import pytest

from fbmrom.model import StochasticLinearSystem, is_mean_square_stable


def example_system():
    """Two-state system whose plain truncation loses stability at r = 1."""
    A = np.array([[-13 / 8, 5 / 4], [-5 / 4, -2.0]])
    B = np.array([[1.0], [0.0]])
    N1 = np.array([[1.5, -1.0], [1.0, 1.0]])
    return StochasticLinearSystem(A, B, B.T, (N1,), H=0.5, name="two-state")


def scalar_system(a=-1.0, n1=0.5, b=1.0, c=1.0, H=0.5, x0=0.0):
    return StochasticLinearSystem(
        [[a]], [[b]], [[c]], ([[n1]],) if n1 is not None else (), X0=[[x0]], H=H
    )


def random_stable(rng, n, q=1, m=1, p=1, H=0.5, noise=0.3, shift=1.5, x0=False, tries=50):
    """Random system with a mean-square stable Ito form."""
    for _ in range(tries):
        A = rng.standard_normal((n, n)) / np.sqrt(n) - shift * np.eye(n)
        Ns = tuple(noise * rng.standard_normal((n, n)) / np.sqrt(n) for _ in range(q))
        X0 = rng.standard_normal((n, 1)) if x0 else None
        sys = StochasticLinearSystem(
            A, rng.standard_normal((n, m)), rng.standard_normal((p, n)), Ns, X0=X0, H=H
        )
        if H != 0.5 or is_mean_square_stable(sys):
            return sys
    raise RuntimeError("no stable sample drawn")


@pytest.fixture
def two_state():
    return example_system()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
