import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from conftest import random_stable, scalar_system
from fbmrom.errors import SingularStepError, ValidationError
from fbmrom.fbm import FbmIncrementSample, UniformGrid, sample_increments
from fbmrom.integrate import (
    control_preset,
    euler_path,
    fundamental_sample,
    l2_norm,
    midpoint_path,
    propagate,
    simulate,
    variation_of_constants,
)
from fbmrom.model import StochasticLinearSystem
from fbmrom.montecarlo import map_chunks, noise_chunk, ordered_sum


def deterministic(A, B=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.ones((n, 1)) if B is None else B
    return StochasticLinearSystem(A, B, np.ones((1, n)))


def no_noise(grid):
    return FbmIncrementSample(np.zeros((0, grid.steps)), grid, 0.5)


class TestControls:
    def test_sin(self):
        u = control_preset("sin")
        assert u(math.pi / 2)[0] == pytest.approx(math.sqrt(2 / math.pi))

    def test_unknown(self):
        with pytest.raises(ValidationError):
            control_preset("square")

    def test_l2_norm_of_sin(self):
        # int_0^pi (2/pi) sin^2 = 1
        assert l2_norm(control_preset("sin"), UniformGrid(math.pi, 400)) == pytest.approx(1.0, rel=1e-5)


class TestEuler:
    def test_deterministic_recursion(self):
        a, dt, x0 = -0.7, 0.05, 2.0
        g = UniformGrid(1.0, 20)
        traj = euler_path(deterministic([[a]], np.zeros((1, 1))), [x0], None, no_noise(g))
        expected = x0 * (1 + a * dt) ** np.arange(21)
        np.testing.assert_allclose(traj.states[:, 0], expected, rtol=1e-13)

    def test_product_oracle(self):
        # Ito semantics: x_{k+1} = x_k (1 + dW_k) exactly
        s = StochasticLinearSystem([[0.0]], [[0.0]], [[1.0]], ([[1.0]],), interpretation="Ito")
        noise = sample_increments(UniformGrid(1.0, 50), 0.5, 1, seed=3)
        traj = euler_path(s, [1.5], None, noise)
        assert traj.states[-1, 0] == pytest.approx(1.5 * np.prod(1 + noise.increments[0]), rel=1e-12)

    def test_stratonovich_uses_ito_drift(self):
        s = scalar_system(a=0.0, n1=1.0, b=0.0)
        noise = sample_increments(UniformGrid(1.0, 50), 0.5, 1, seed=3)
        traj = euler_path(s, [1.0], None, noise)
        dt = noise.grid.dt
        assert traj.states[-1, 0] == pytest.approx(np.prod(1 + 0.5 * dt + noise.increments[0]), rel=1e-12)

    def test_zero_trajectory(self, rng):
        s = random_stable(rng, 3, q=2)
        noise = sample_increments(UniformGrid(1.0, 30), 0.5, 2, seed=1)
        for path in (euler_path, midpoint_path):
            traj = path(s, np.zeros(3), None, noise)
            assert not np.any(traj.states) and not np.any(traj.outputs)


class TestMidpoint:
    def test_identity_dynamics(self):
        s = StochasticLinearSystem(np.zeros((2, 2)), np.zeros((2, 1)), np.ones((1, 2)))
        traj = midpoint_path(s, [1.0, -2.0], None, no_noise(UniformGrid(1.0, 10)))
        assert np.all(traj.states == np.array([1.0, -2.0]))

    def test_deterministic_midpoint(self):
        a, g = -1.3, UniformGrid(2.0, 16)
        traj = midpoint_path(deterministic([[a]], np.zeros((1, 1))), [1.0], None, no_noise(g))
        factor = (1 + a * g.dt / 2) / (1 - a * g.dt / 2)
        np.testing.assert_allclose(traj.states[:, 0], factor ** np.arange(17), rtol=1e-13)

    def test_second_order_without_noise(self):
        A = np.array([[-1.0, 2.0], [-2.0, -0.5]])
        s = deterministic(A, np.zeros((2, 1)))
        exact = sla.expm(A) @ np.array([1.0, 1.0])
        errs = []
        for N in (20, 40, 80):
            x = midpoint_path(s, [1.0, 1.0], None, no_noise(UniformGrid(1.0, N))).states[-1]
            errs.append(np.linalg.norm(x - exact))
        rates = np.log2(np.array(errs[:-1]) / errs[1:])
        print(f"deterministic midpoint rates: {rates}")
        assert np.all(np.abs(rates - 2) < 0.1)

    def test_singular_step_reported(self):
        # 1 - dW/2 = 0 at step 3
        g = UniformGrid(1.0, 6)
        inc = np.array([[0.1, -0.2, 0.05, 2.0, 0.0, 0.1]])
        s = StochasticLinearSystem([[0.0]], [[0.0]], [[1.0]], ([[1.0]],))
        with pytest.raises(SingularStepError) as info:
            midpoint_path(s, [1.0], None, FbmIncrementSample(inc, g, 0.5))
        assert info.value.step == 3

    @pytest.mark.parametrize("q", [1, 2])
    def test_pencil_and_lu_paths_agree(self, rng, q):
        s = random_stable(rng, 4, q=q, noise=0.8)
        dW = noise_chunk(UniformGrid(1.0, 40), 0.5, q, 0, 0, 7)
        X = propagate(s, np.eye(4), dW, 1 / 40)
        # reference: one dense solve per step and sample
        E = np.eye(4) - 0.5 / 40 * s.A
        F = np.eye(4) + 0.5 / 40 * s.A
        for j in range(7):
            Y = np.eye(4)
            for k in range(40):
                G = sum(Ni * dW[j, i, k] for i, Ni in enumerate(s.N))
                Y = np.linalg.solve(E - 0.5 * G, (F + 0.5 * G) @ Y)
            np.testing.assert_allclose(X[:, j, :], Y, rtol=1e-9, atol=1e-12)

    def test_mean_matches_ito_euler(self):
        # E x(1) = exp(a_N) x0 for both interpretations of the same system
        s = scalar_system(a=-1.0, n1=0.5)
        g = UniformGrid(1.0, 200)
        dW = noise_chunk(g, 0.5, 1, 9, 0, 20000)
        for scheme in ("midpoint", "euler"):
            x = propagate(s, np.ones((1, 1)), dW, g.dt, scheme)[0, :, 0]
            se = x.std() / math.sqrt(x.size)
            print(f"{scheme}: E x(1) = {x.mean():.4f} +- {se:.4f}, exact {math.exp(-0.875):.4f}")
            assert abs(x.mean() - math.exp(-0.875)) < 4 * se + 5e-3


class TestFundamental:
    def test_identity_at_zero(self, rng):
        s = random_stable(rng, 3)
        fs = fundamental_sample(s, np.eye(3), sample_increments(UniformGrid(1.0, 5), 0.5, 1, 0))
        np.testing.assert_array_equal(fs.matrices[0], np.eye(3))

    def test_matches_expm_without_noise(self):
        A = np.array([[-1.0, 0.5], [0.0, -2.0]])
        g = UniformGrid(1.0, 400)
        fs = fundamental_sample(deterministic(A), np.eye(2), no_noise(g))
        for j in (100, 400):
            np.testing.assert_allclose(fs.matrices[j], sla.expm(A * g.times[j]), atol=1e-5)

    def test_start_step(self, rng):
        s = random_stable(rng, 2, H=0.75)
        noise = sample_increments(UniformGrid(1.0, 20), 0.75, 1, 4)
        whole = fundamental_sample(s, np.eye(2), noise).matrices
        late = fundamental_sample(s, np.eye(2), noise, start_step=8).matrices
        # Phi(t_20) = Phi(t_20, t_8) Phi(t_8) on one path
        np.testing.assert_allclose(late[-1] @ whole[8], whole[-1], rtol=1e-10, atol=1e-13)

    def test_noise_mismatch(self, rng):
        s = random_stable(rng, 2, H=0.75)
        with pytest.raises(ValidationError):
            fundamental_sample(s, np.eye(2), sample_increments(UniformGrid(1.0, 5), 0.6, 1, 0))
        with pytest.raises(ValidationError):
            fundamental_sample(s, np.eye(2), sample_increments(UniformGrid(1.0, 5), 0.75, 2, 0))


class TestVariationOfConstants:
    def test_homogeneous(self, rng):
        s = random_stable(rng, 3)
        noise = sample_increments(UniformGrid(1.0, 30), 0.5, 1, 2)
        x0 = np.array([1.0, -1.0, 0.5])
        voc = variation_of_constants(s, x0, None, noise)
        fs = fundamental_sample(s, x0, noise)
        np.testing.assert_allclose(voc.states, fs.matrices[:, :, 0], atol=1e-13)

    def test_duhamel_without_noise(self):
        A = np.array([[-1.0, 0.3], [0.0, -0.5]])
        s = deterministic(A)
        u = lambda t: np.array([math.cos(t)])
        g = UniformGrid(1.0, 2000)
        voc = variation_of_constants(s, [0.0, 1.0], u, no_noise(g))
        # reference: augmented-state exponential for the forced solution
        ts = np.linspace(0, 1, 401)
        integrand = np.array([sla.expm(A * (1 - t)) @ s.B[:, 0] * math.cos(t) for t in ts])
        w = np.ones(401)
        w[1:-1:2], w[2:-1:2] = 4, 2
        ref = sla.expm(A) @ np.array([0.0, 1.0]) + (1 / 1200) * w @ integrand
        np.testing.assert_allclose(voc.states[-1], ref, atol=2e-3)

    def test_converges_to_euler(self):
        s = StochasticLinearSystem([[-1.0, 0.5], [-0.5, -1.5]], [[1.0], [0.5]], [[1.0, 0.0]],
                                   ([[0.3, 0.1], [0.0, 0.2]],))
        u = control_preset("sin")
        base = sample_increments(UniformGrid(1.0, 4096), 0.5, 1, 5).increments
        errs = []
        for N in (64, 256, 1024):
            f = 4096 // N
            inc = base.reshape(1, N, f).sum(axis=2)
            noise = FbmIncrementSample(inc, UniformGrid(1.0, N), 0.5)
            a = variation_of_constants(s, [1.0, 0.0], u, noise).states
            b = euler_path(s, [1.0, 0.0], u, noise).states
            errs.append(np.max(np.abs(a - b)) / np.max(np.abs(b)))
        print(f"VoC vs Euler discrepancy: {errs}")
        assert errs[0] > errs[1] > errs[2]


class TestLinearity:
    @given(alpha=st.floats(-3, 3), beta=st.floats(-3, 3), seed=st.integers(0, 1000))
    @settings(max_examples=20, deadline=None)
    def test_superposition(self, alpha, beta, seed):
        rng = np.random.default_rng(seed)
        s = random_stable(rng, 3, q=1, m=2)
        noise = sample_increments(UniformGrid(1.0, 25), 0.5, 1, seed)
        x0, x1 = rng.standard_normal(3), rng.standard_normal(3)
        u = lambda t: np.array([math.sin(t), 1.0])
        v = lambda t: np.array([t, -t * t])
        w = lambda t: alpha * u(t) + beta * v(t)
        for path in (euler_path, midpoint_path):
            lhs = path(s, alpha * x0 + beta * x1, w, noise).states
            rhs = alpha * path(s, x0, u, noise).states + beta * path(s, x1, v, noise).states
            scale = max(np.abs(lhs).max(), 1.0)
            assert np.abs(lhs - rhs).max() <= 1e-10 * scale


class TestMonteCarloDriver:
    def test_thread_invariance(self, rng):
        s = random_stable(rng, 3)
        g = UniformGrid(1.0, 20)

        def chunk(a, b):
            dW = noise_chunk(g, 0.5, 1, 7, a, b)
            X = propagate(s, np.eye(3), dW, g.dt, sample_offset=a)
            return np.einsum("isk,jsk->ij", X, X)

        one = ordered_sum(map_chunks(chunk, 450, threads=1))
        four = ordered_sum(map_chunks(chunk, 450, threads=4))
        assert np.array_equal(one, four)

    def test_simulate_shapes(self, rng):
        s = random_stable(rng, 3, p=2)
        dW = noise_chunk(UniformGrid(1.0, 10), 0.5, 1, 0, 0, 4)
        Y, Xs = simulate(s, np.ones(3), None, dW, 0.1, states=True)
        assert Y.shape == (4, 11, 2) and Xs.shape == (4, 11, 3)
        np.testing.assert_allclose(Y, Xs @ s.C.T, atol=1e-14)


class TestTrajectoryExport:
    def test_csv(self, tmp_path):
        s = deterministic([[-1.0]])
        traj = midpoint_path(s, [1.0], control_preset("step"), no_noise(UniformGrid(1.0, 4)))
        path = tmp_path / "t.csv"
        traj.to_csv(path, comment="config: {}")
        lines = path.read_text().splitlines()
        assert lines[0] == "# config: {}"
        assert lines[1] == "t,x_1,y_1"
        assert len(lines) == 7
        assert float(lines[-1].split(",")[1]) == traj.states[-1, 0]
