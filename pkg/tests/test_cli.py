import json
import math
import subprocess
import sys

import numpy as np
import pytest
import scipy.linalg as sla

from conftest import example_system, random_stable
from fbmrom.cli import main, resolve_config
from fbmrom.fbm import UniformGrid
from fbmrom.gramians import load_gramians
from fbmrom.integrate import control_preset, simulate
from fbmrom.model import StochasticLinearSystem, save_system
from fbmrom.montecarlo import noise_chunk
from fbmrom.reduce import load_rom

SMALL_HEAT = ["--benchmark", "heat", "--n", "12", "--steps", "20", "--samples", "60"]


def rows(text):
    return [ln for ln in text.splitlines() if not ln.startswith("#")]


@pytest.fixture
def sys_file(tmp_path, rng):
    path = tmp_path / "sys.json"
    save_system(random_stable(rng, 3, q=1, x0=True), path)
    return str(path)


class TestConfig:
    def test_defaults(self):
        verb, cfg = resolve_config(["benchmark"])
        assert verb == "benchmark"
        assert cfg["n"] == 256 and cfg["samples"] == 1000 and cfg["seed"] == 0

    def test_file_then_flags(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"samples": 5, "seed": 9, "benchmark": "wave"}))
        _, cfg = resolve_config(["simulate", "--config", str(path), "--samples", "7"])
        assert cfg["samples"] == 7 and cfg["seed"] == 9 and cfg["n"] == 200

    def test_unknown_key(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"samplez": 5}))
        assert main(["simulate", "--config", str(path)]) == 2
        assert "samplez" in capsys.readouterr().err


class TestExitCodes:
    def test_exact_method_rough_noise(self, capsys):
        code = main(["benchmark", *SMALL_HEAT, "--hurst", "0.75", "--method", "pq_balance"])
        assert code == 2
        assert "H = 1/2" in capsys.readouterr().err

    def test_unknown_method(self):
        assert main(["benchmark", *SMALL_HEAT, "--method", "magic"]) == 2

    def test_missing_system_file(self, tmp_path):
        assert main(["simulate", "--system", str(tmp_path / "nope.json")]) == 2

    def test_unstable_infinite_horizon(self, tmp_path):
        path = tmp_path / "u.json"
        save_system(StochasticLinearSystem([[0.5]], [[1.0]], [[1.0]]), path)
        out = tmp_path / "g.json"
        assert main(["gramian", "--system", str(path), "--horizon", "inf", "--out", str(out)]) == 3

    def test_bad_r_list(self):
        assert main(["benchmark", *SMALL_HEAT, "--r", "4,2"]) == 2


class TestSimulate:
    def test_zero_trajectory(self, sys_file, capsys):
        assert main(["simulate", "--system", sys_file, "--control", "zero", "--x0", "zero",
                     "--steps", "10"]) == 0
        out = capsys.readouterr().out
        lines = rows(out)
        assert lines[0] == "t,x_1,x_2,x_3,y_1"
        assert out.startswith("# config: ")
        for ln in lines[1:]:
            assert all(float(v) == 0.0 for v in ln.split(",")[1:])

    def test_deterministic_bytes(self, sys_file, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for p in (a, b):
            assert main(["simulate", "--system", sys_file, "--seed", "4", "--out", str(p)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_console_script(self, sys_file):
        res = subprocess.run([sys.executable, "-m", "fbmrom.cli", "simulate", "--system", sys_file,
                              "--steps", "5"], capture_output=True, text=True)
        assert res.returncode == 0
        assert len(rows(res.stdout)) == 7


class TestGramian:
    def test_deterministic_system(self, tmp_path, rng):
        A = rng.standard_normal((3, 3)) - 3 * np.eye(3)
        B = rng.standard_normal((3, 1))
        C = rng.standard_normal((1, 3))
        path = tmp_path / "d.json"
        save_system(StochasticLinearSystem(A, B, C), path)
        out = tmp_path / "g.json"
        assert main(["gramian", "--system", str(path), "--horizon", "inf", "--out", str(out)]) == 0
        g = load_gramians(out)
        np.testing.assert_allclose(g.P, sla.solve_continuous_lyapunov(A, -B @ B.T), rtol=1e-10)
        np.testing.assert_allclose(g.Q, sla.solve_continuous_lyapunov(A.T, -C.T @ C), rtol=1e-10)
        assert g.horizon == math.inf
        assert g.provenance["config"]["horizon"] == "inf"

    def test_empirical(self, sys_file, tmp_path):
        out = tmp_path / "g.json"
        assert main(["gramian", "--system", sys_file, "--kind", "empirical", "--samples", "50",
                     "--steps", "20", "--out", str(out)]) == 0
        g = load_gramians(out)
        assert g.provenance["kind"] == "empirical" and g.Q is not None


class TestReduce:
    def test_full_order_round_trip(self, sys_file, tmp_path, rng):
        out = tmp_path / "rom.json"
        assert main(["reduce", "--system", sys_file, "--method", "pq_balance", "--r", "3",
                     "--horizon", "2", "--out", str(out)]) == 0
        rom = load_rom(out)
        from fbmrom.model import load_system

        full = load_system(sys_file)
        dW = noise_chunk(UniformGrid(1.0, 40), 0.5, 1, 0, 0, 10)
        u = control_preset("sin")
        y = simulate(full, full.x0, u, dW, 0.025)
        yr = simulate(rom.sys_r, rom.sys_r.x0, u, dW, 0.025)
        assert np.abs(y - yr).max() <= 1e-9 * np.abs(y).max()

    def test_splitting_parts(self, sys_file, tmp_path):
        out = tmp_path / "rom.json"
        assert main(["reduce", "--system", sys_file, "--method", "pod_splitting", "--r", "2",
                     "--samples", "100", "--steps", "20", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["method"] == "pod_splitting" and len(doc["parts"]) == 2

    def test_needs_single_order(self, sys_file, tmp_path):
        assert main(["reduce", "--system", sys_file, "--r", "1,2", "--out",
                     str(tmp_path / "x.json")]) == 2


class TestBenchmark:
    def test_byte_determinism(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for p in (a, b):
            assert main(["benchmark", *SMALL_HEAT, "--r", "2,4", "--out", str(p)]) == 0
        assert a.read_bytes() == b.read_bytes()
        lines = rows(a.read_text())
        assert lines[0] == "method,r,R_E,bound"
        assert len(lines) == 1 + 3 * 2

    def test_thread_count_irrelevant(self, capsys):
        main(["benchmark", *SMALL_HEAT, "--r", "2", "--method", "pod_splitting"])
        one = rows(capsys.readouterr().out)
        main(["benchmark", *SMALL_HEAT, "--r", "2", "--method", "pod_splitting", "--threads", "2"])
        two = rows(capsys.readouterr().out)
        assert one == two

    def test_full_order_zero_error(self, sys_file, capsys):
        assert main(["benchmark", "--system", sys_file, "--r", "3", "--samples", "50",
                     "--steps", "20", "--method", "pq_balance,gramian_splitting"]) == 0
        for ln in rows(capsys.readouterr().out)[1:]:
            assert float(ln.split(",")[2]) < 1e-10

    def test_wave_rough(self, capsys):
        assert main(["benchmark", "--benchmark", "wave", "--n", "10", "--hurst", "0.75",
                     "--steps", "20", "--samples", "50", "--r", "2", "--timing"]) == 0
        lines = rows(capsys.readouterr().out)
        assert lines[0] == "method,r,R_E,bound,seconds"
        assert [ln.split(",")[0] for ln in lines[1:]] == ["pod_splitting", "p_empirical",
                                                          "gramian_splitting"]


class TestEigendecay:
    def test_nonincreasing(self, capsys):
        assert main(["eigendecay", *SMALL_HEAT, "--count", "10"]) == 0
        lines = rows(capsys.readouterr().out)
        assert lines[0] == "index,pod_splitting,pq_balance,gramian_splitting"
        vals = np.array([[float(v) for v in ln.split(",")[1:]] for ln in lines[1:]])
        assert np.all(np.diff(vals, axis=0) <= 0)

    def test_hankel_column(self, sys_file, capsys):
        from fbmrom.gramians import exact_gramians
        from fbmrom.model import load_system

        assert main(["eigendecay", "--system", sys_file, "--method", "pq_balance"]) == 0
        lines = rows(capsys.readouterr().out)
        got = np.array([float(ln.split(",")[1]) for ln in lines[1:]])
        g = exact_gramians(load_system(sys_file), 1.0)
        ref = np.sort(np.sqrt(np.abs(np.linalg.eigvals(g.P @ g.Q))))[::-1]
        np.testing.assert_allclose(got, ref, rtol=1e-8)
