"""Command-line front end.

Verbs: ``simulate``, ``gramian``, ``reduce``, ``benchmark``, ``eigendecay``.
Any long option may also come from a JSON file given with ``--config``;
options on the command line win.  Exit status is 0 on success, 2 for invalid
input and 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import sys
import time

import numpy as np

from .benchmarks import HeatConfig, WaveConfig, build_heat_system, build_wave_system
from .errors import NumericalError, ValidationError
from .experiments import METHODS, TABLE_HEADER, Experiment, check_method
from .fbm import UniformGrid, sample_increments
from .gramians import (
    GramianSet,
    empirical_gramians,
    empirical_observability,
    exact_gramians,
    save_gramians,
)
from .integrate import control_preset, euler_path, midpoint_path
from .model import _dump, load_system
from .reduce import (
    pq_balance,
    rom_to_dict,
    truncate_corrected,
    truncate_projection,
)

DEFAULTS = {
    "benchmark": "heat",
    "system": None,
    "hurst": None,
    "method": None,
    "r": None,
    "horizon": 1.0,
    "steps": 100,
    "samples": 1000,
    "seed": 0,
    "out": None,
    "threads": 1,
    "control": "sin",
    "n": None,
    "a": None,
    "b": None,
    "gamma": HeatConfig.gamma,
    "eps": WaveConfig.eps,
    "kind": None,
    "scheme": "midpoint",
    "x0": "system",
    "timing": False,
    "count": 50,
}
DEFAULT_N = {"heat": HeatConfig.n, "wave": WaveConfig.n}
DEFAULT_R = [2, 4, 8, 16]


def _int_list(text):
    if isinstance(text, list):
        return [int(x) for x in text]
    return [int(x) for x in str(text).replace(" ", "").split(",") if x]


def _str_list(text):
    if isinstance(text, list):
        return [str(x) for x in text]
    return [x for x in str(text).replace(" ", "").split(",") if x]


def _parser():
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file with default option values")
    common.add_argument("--benchmark", choices=["heat", "wave"])
    common.add_argument("--system", help="system file (JSON container); overrides --benchmark")
    common.add_argument("--hurst", type=float)
    common.add_argument("--method", help=f"comma-separated subset of {','.join(METHODS)}")
    common.add_argument("--r", help="reduced order(s), comma-separated")
    common.add_argument("--horizon", help="final time T ('inf' for gramian)")
    common.add_argument("--steps", type=int, help="time steps N")
    common.add_argument("--samples", type=int, help="Monte-Carlo samples N_s")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output path (stdout if omitted for CSV)")
    common.add_argument("--threads", type=int)
    common.add_argument("--control", choices=["sin", "zero", "step", "chirp"])
    common.add_argument("--n", type=int, help="benchmark order")
    common.add_argument("--a", type=float, help="benchmark diffusivity / damping")
    common.add_argument("--b", type=float, help="benchmark initial amplitude")
    common.add_argument("--gamma", type=float, help="heat noise coupling")
    common.add_argument("--eps", type=float, help="wave observation half-width")

    p = argparse.ArgumentParser(prog="fbmrom", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    def verb(name, help):
        return sub.add_parser(name, parents=[common], help=help,
                              argument_default=argparse.SUPPRESS)

    s = verb("simulate", "one sample path to CSV")
    s.add_argument("--scheme", choices=["midpoint", "euler"])
    s.add_argument("--x0", choices=["system", "zero"])
    g = verb("gramian", "Gramians to a JSON container")
    g.add_argument("--kind", choices=["exact", "empirical"])
    verb("reduce", "reduced model to a JSON container")
    b = verb("benchmark", "R_E table as CSV")
    b.add_argument("--timing", action="store_true", help="add a wall-time column")
    e = verb("eigendecay", "leading Gramian/POD values as CSV")
    e.add_argument("--count", type=int)
    return p


def resolve_config(argv):
    """Merge defaults, config file and command-line options."""
    args = vars(_parser().parse_args(argv))
    verb = args.pop("verb")
    cfg = dict(DEFAULTS)
    path = args.pop("config", None)
    if path:
        try:
            with open(path) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config file {path}: {exc}") from exc
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(file_cfg)
    cfg.update(args)
    if cfg["n"] is None and cfg["system"] is None:
        cfg["n"] = DEFAULT_N[cfg["benchmark"]]
    if cfg["threads"] is None or int(cfg["threads"]) < 1:
        raise ValidationError("threads must be a positive integer")
    for key in ("steps", "samples"):
        if int(cfg[key]) < 1:
            raise ValidationError(f"{key} must be positive")
    return verb, cfg


def build_system(cfg):
    if cfg["system"]:
        try:
            sys_ = load_system(cfg["system"])
        except OSError as exc:
            raise ValidationError(f"cannot read system file: {exc}") from exc
        if cfg["hurst"] is not None and sys_.H != float(cfg["hurst"]):
            sys_ = sys_.replace(H=float(cfg["hurst"]), interpretation=None)
        return sys_
    H = 0.5 if cfg["hurst"] is None else float(cfg["hurst"])
    kw = {k: cfg[k] for k in ("n", "a", "b") if cfg[k] is not None}
    if cfg["benchmark"] == "heat":
        return build_heat_system(HeatConfig(H=H, gamma=cfg["gamma"], **kw))
    return build_wave_system(WaveConfig(H=H, eps=cfg["eps"], **kw))


def _horizon(cfg):
    h = cfg["horizon"]
    if isinstance(h, str) and h.lower() in ("inf", "infinite"):
        return math.inf
    return float(h)


def _header(cfg, verb):
    # the output path is left out so that a run is replayable to any destination
    shown = {k: v for k, v in cfg.items() if k != "out"}
    return "# config: " + json.dumps({"verb": verb, **shown}, sort_keys=True)


def _emit(text, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _methods(cfg, H):
    if cfg["method"]:
        methods = _str_list(cfg["method"])
    elif H == 0.5:
        methods = ["pod_splitting", "pq_balance", "gramian_splitting"]
    else:
        methods = ["pod_splitting", "p_empirical", "gramian_splitting"]
    for m in methods:
        check_method(m, H)
    return methods


def _r_list(cfg):
    r = DEFAULT_R if cfg["r"] is None else _int_list(cfg["r"])
    if not r or any(x < 1 for x in r) or r != sorted(r):
        raise ValidationError("r list must hold positive integers in ascending order")
    return r


# -- verbs -----------------------------------------------------------------------

def cmd_simulate(cfg):
    sys_ = build_system(cfg)
    T = _horizon(cfg)
    grid = UniformGrid(T, int(cfg["steps"]))
    noise = sample_increments(grid, sys_.H, max(sys_.q, 1), int(cfg["seed"]))
    if sys_.q == 0:
        noise = type(noise)(noise.increments[:0], grid, sys_.H, noise.seed)
    x0 = np.zeros(sys_.n) if cfg["x0"] == "zero" else sys_.x0
    u = control_preset(cfg["control"], sys_.m)
    run = midpoint_path if cfg["scheme"] == "midpoint" else euler_path
    traj = run(sys_, x0, u, noise)
    buf = io.StringIO()
    buf.write(_header(cfg, "simulate") + "\n")
    n, p = sys_.n, sys_.p
    buf.write(",".join(["t"] + [f"x_{i + 1}" for i in range(n)] + [f"y_{i + 1}" for i in range(p)]))
    buf.write("\n")
    for t, x, y in zip(grid.times, traj.states, traj.outputs):
        buf.write(",".join(f"{v:.17g}" for v in (t, *x, *y)) + "\n")
    _emit(buf.getvalue(), cfg["out"])


def cmd_gramian(cfg):
    sys_ = build_system(cfg)
    T = _horizon(cfg)
    kind = cfg["kind"] or ("exact" if sys_.H == 0.5 else "empirical")
    if kind == "exact":
        if sys_.H != 0.5:
            raise ValidationError("exact Gramians need H = 1/2; use --kind empirical")
        g = exact_gramians(sys_, T)
    else:
        if T == math.inf:
            raise ValidationError("empirical Gramians need a finite horizon")
        args = (sys_, T, int(cfg["steps"]), int(cfg["samples"]), int(cfg["seed"]), int(cfg["threads"]))
        g = empirical_gramians(*args)
        g = g.with_Q(empirical_observability(*args))
    prov = dict(g.provenance)
    prov["config"] = {k: v for k, v in cfg.items() if k != "out"}
    g = GramianSet(g.P_u, g.P_x0, g.Q, g.horizon, prov)
    if not cfg["out"]:
        raise ValidationError("gramian needs --out")
    save_gramians(g, cfg["out"])


def cmd_reduce(cfg):
    sys_ = build_system(cfg)
    methods = _methods(cfg, sys_.H) if cfg["method"] else (
        ["pq_balance"] if sys_.H == 0.5 else ["p_empirical"]
    )
    if len(methods) != 1:
        raise ValidationError("reduce takes exactly one method")
    r_list = _r_list(cfg) if cfg["r"] is not None else None
    if not r_list or len(r_list) != 1:
        raise ValidationError("reduce takes exactly one --r")
    method, r = methods[0], r_list[0]
    if method in ("pq_balance", "corrected_rom", "projection_rom"):
        g = exact_gramians(sys_, _horizon(cfg))
        try:
            bal = pq_balance(sys_, g.P, g.Q)
        except NumericalError:
            bal = pq_balance(sys_, g.P, g.Q, restrict=True)
        rom = truncate_projection(bal, r) if method == "projection_rom" else truncate_corrected(bal, r)
        parts = [rom]
    else:
        rom = _experiment(cfg, sys_).rom(method, r)
        parts = list(rom) if isinstance(rom, tuple) else [rom]
    if not cfg["out"]:
        raise ValidationError("reduce needs --out")
    if len(parts) == 1:
        doc = rom_to_dict(parts[0], method)
    else:
        doc = {"method": method, "parts": [None if p is None else rom_to_dict(p, method)
                                           for p in parts]}
    doc["config"] = {k: v for k, v in cfg.items() if k != "out"}
    _dump(doc, cfg["out"])


def _experiment(cfg, sys_):
    u = control_preset(cfg["control"], sys_.m)
    return Experiment(sys_, _horizon(cfg), int(cfg["steps"]), int(cfg["samples"]),
                      int(cfg["seed"]), u, int(cfg["threads"]))


def cmd_benchmark(cfg):
    sys_ = build_system(cfg)
    methods = _methods(cfg, sys_.H)
    r_list = _r_list(cfg)
    exp = _experiment(cfg, sys_)
    t0 = time.perf_counter()
    rows = exp.table(methods, r_list)
    print(f"benchmark finished in {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    lines = [_header(cfg, "benchmark")]
    if cfg["timing"]:
        lines.append(TABLE_HEADER)
        lines += [row.csv() for row in rows]
    else:
        lines.append(TABLE_HEADER.rsplit(",", 1)[0])
        lines += [row.csv().rsplit(",", 1)[0] for row in rows]
    _emit("\n".join(lines) + "\n", cfg["out"])


def cmd_eigendecay(cfg):
    sys_ = build_system(cfg)
    methods = _methods(cfg, sys_.H)
    exp = _experiment(cfg, sys_)
    cols = exp.decay(methods, int(cfg["count"]))
    k = max(len(v) for v in cols.values())
    lines = [_header(cfg, "eigendecay"), ",".join(["index"] + methods)]
    for i in range(k):
        vals = [f"{cols[m][i]:.17g}" if i < len(cols[m]) else "" for m in methods]
        lines.append(",".join([str(i + 1)] + vals))
    _emit("\n".join(lines) + "\n", cfg["out"])


VERBS = {
    "simulate": cmd_simulate,
    "gramian": cmd_gramian,
    "reduce": cmd_reduce,
    "benchmark": cmd_benchmark,
    "eigendecay": cmd_eigendecay,
}


def main(argv=None):
    try:
        verb, cfg = resolve_config(argv)
        VERBS[verb](cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
