"""Experiment configuration, runners and persistence.

A run takes an :class:`ExperimentConfig`, splits the experiment into
independent cells, executes them (optionally on a thread pool) and writes one
CSV per output table plus ``manifest.json``. Rows are sorted by cell key before
writing, so files do not depend on execution order.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import platform
import time
import zlib
from functools import lru_cache
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cost import CostKind
from .oracle import bangbang_protocol, bangbang_times, gaussian_state, qsl_time, som_evolve
from .opt import (
    ControlProblem,
    NoisyFidelity,
    avg_abs_gradient,
    gd_minimize,
    grad_fd,
    project,
    shift_coefficient,
    spsa_minimize,
)
from .prep import ansatz_amplitudes, encode, prepare
from .protocol import Constraints, ControlProtocol, SpatialGrid
from .simcore import make_rng

EXPERIMENTS = (
    "prep-grid", "cost-race", "trotter-grid", "phase-diagram",
    "qsl-analysis", "barren-scan", "noise-train", "shift-coefficient",
)


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# -- configuration ----------------------------------------------------------------

_BASE = {
    "physics": {
        "n": 6, "L": 10.0, "omega_f": 0.1, "delta1": 1e-6, "delta2": 1.0,
        "delta_f": 1.0, "n_steps": 50, "t_f": 3.152, "t_f_range": [2.0, 5.0, 51], "p": 4,
        "initial": "exact",
    },
    "optimizer": {
        "kind": "gd", "cost": "FS", "fs_delta": 1e-3, "lr": 0.1, "max_iter": 500, "tol": 1e-10,
        "restarts": 5, "spsa_a": 0.2, "spsa_c": 0.1, "spsa_A": 10.0, "spsa_alpha": 0.602,
        "spsa_gamma": 0.101,
    },
    "sampling": {"shots": 8192, "betas": [0.0], "seeds": [0], "n_samples": 50},
    "sweep": {
        "n_values": [3, 4, 5, 6, 7, 8], "p_values": [1, 2, 3, 4, 5, 6],
        "n_steps_values": [10, 20, 30, 40, 50], "delta_f_values": [0.1, 0.2, 0.3, 0.5, 1.0],
        "fs_deltas": [1e-4, 1e-3, 1e-2, 1e-1, 1.0], "legend": [[10, 0.2], [30, 0.2], [30, 0.5], [50, 1.0]],
        "threshold": 1e-3, "plateau_window": 100, "perturbation": 0.05,
    },
}

_PER_EXPERIMENT = {
    "cost-race": {"sampling": {"seeds": [0, 1, 2]}},
    "phase-diagram": {"sweep": {"n_steps_values": [10, 20, 30, 40, 50, 75, 100]}},
    "barren-scan": {"sweep": {"n_values": [4, 5, 6, 7, 8]}},
    "shift-coefficient": {"sweep": {"n_values": [4, 5, 6, 7, 8]}},
    "noise-train": {
        "optimizer": {"kind": "spsa", "max_iter": 600, "spsa_a": 10.0},
        "sampling": {"betas": [0.0, 0.02, 0.04, 0.06], "seeds": [0, 1, 2, 3, 4]},
    },
}


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and np.isfinite(v)


def _int_in(lo, hi):
    return lambda v: _is_int(v) and lo <= v <= hi


def _pos(v):
    return _is_num(v) and v > 0


def _nonneg(v):
    return _is_num(v) and v >= 0


def _list_of(check, min_len=1):
    return lambda v: isinstance(v, list) and len(v) >= min_len and all(check(x) for x in v)


def _t_range(v):
    return (isinstance(v, list) and len(v) == 3 and _pos(v[0]) and _pos(v[1])
            and v[0] <= v[1] and _is_int(v[2]) and v[2] >= 1)


def _legend(v):
    return _list_of(lambda c: isinstance(c, list) and len(c) == 2 and _int_in(1, 10_000)(c[0]) and _pos(c[1]))(v)


_SCHEMA = {
    "physics": {
        "n": (_int_in(1, 14), "integer in [1, 14]"),
        "L": (_pos, "positive number"),
        "omega_f": (lambda v: _pos(v) and v <= 1, "number in (0, 1]"),
        "delta1": (_pos, "positive number"),
        "delta2": (_pos, "positive number"),
        "delta_f": (_pos, "positive number"),
        "n_steps": (_int_in(1, 10_000), "integer in [1, 10000]"),
        "t_f": (_pos, "positive number"),
        "t_f_range": (_t_range, "[start, stop, count] with 0 < start <= stop and count >= 1"),
        "p": (_int_in(1, 64), "integer in [1, 64]"),
        "initial": (lambda v: v in ("exact", "prepared"), "one of 'exact', 'prepared'"),
    },
    "optimizer": {
        "kind": (lambda v: v in ("gd", "spsa"), "one of 'gd', 'spsa'"),
        "cost": (lambda v: v in ("IF", "BA", "FS"), "one of 'IF', 'BA', 'FS'"),
        "fs_delta": (_pos, "positive number"),
        "lr": (_pos, "positive number"),
        "max_iter": (_int_in(0, 10_000_000), "non-negative integer"),
        "tol": (_nonneg, "non-negative number"),
        "restarts": (_int_in(1, 1000), "integer in [1, 1000]"),
        "spsa_a": (_pos, "positive number"),
        "spsa_c": (_pos, "positive number"),
        "spsa_A": (_nonneg, "non-negative number"),
        "spsa_alpha": (_pos, "positive number"),
        "spsa_gamma": (_pos, "positive number"),
    },
    "sampling": {
        "shots": (_int_in(1, 10**9), "positive integer"),
        "betas": (_list_of(lambda b: _is_num(b) and 0 <= b <= 1), "non-empty list of numbers in [0, 1]"),
        "seeds": (_list_of(_int_in(0, 2**63 - 1)), "non-empty list of non-negative integers"),
        "n_samples": (_int_in(1, 10**6), "positive integer"),
    },
    "sweep": {
        "n_values": (_list_of(_int_in(1, 14)), "non-empty list of integers in [1, 14]"),
        "p_values": (_list_of(_int_in(1, 64)), "non-empty list of integers in [1, 64]"),
        "n_steps_values": (_list_of(_int_in(1, 10_000)), "non-empty list of positive integers"),
        "delta_f_values": (_list_of(_pos), "non-empty list of positive numbers"),
        "fs_deltas": (_list_of(_pos), "non-empty list of positive numbers"),
        "legend": (_legend, "list of [n_steps, delta_f] pairs"),
        "threshold": (lambda v: _pos(v) and v < 1, "number in (0, 1)"),
        "plateau_window": (_int_in(1, 10**6), "positive integer"),
        "perturbation": (_nonneg, "non-negative number"),
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    """Validated experiment description; blocks are plain dicts with every field filled."""

    experiment: str
    physics: dict
    optimizer: dict
    sampling: dict
    sweep: dict
    output: str = "out"
    seed: int = 0

    @classmethod
    def from_dict(cls, data) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("<root>", "expected a JSON object")
        allowed = {"experiment", "output", "seed", *_SCHEMA}
        for key in data:
            if key not in allowed:
                raise ConfigError(key, "unknown field")
        tag = data.get("experiment")
        if tag not in EXPERIMENTS:
            raise ConfigError("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
        merged = _merge(_merge(_BASE, _PER_EXPERIMENT.get(tag, {})), {k: data[k] for k in _SCHEMA if k in data})
        for block, fields in _SCHEMA.items():
            if not isinstance(data.get(block, {}), dict):
                raise ConfigError(block, "expected an object")
            for key, value in merged[block].items():
                if key not in fields:
                    raise ConfigError(f"{block}.{key}", "unknown field")
                check, expect = fields[key]
                if not check(value):
                    raise ConfigError(f"{block}.{key}", f"expected {expect}, got {value!r}")
        want = "spsa" if tag == "noise-train" else "gd"
        if merged["optimizer"]["kind"] != want:
            raise ConfigError("optimizer.kind", f"experiment {tag} runs with {want!r}")
        ph = merged["physics"]
        if ph["delta1"] >= ph["delta2"]:
            raise ConfigError("physics.delta1", "must be smaller than physics.delta2")
        if not ph["delta1"] <= ph["omega_f"] ** 2 <= ph["delta2"]:
            raise ConfigError("physics.omega_f", "omega_f^2 must lie in [delta1, delta2]")
        output = data.get("output", "out")
        if not isinstance(output, str) or not output:
            raise ConfigError("output", "expected a non-empty string")
        seed = data.get("seed", 0)
        if not _int_in(0, 2**64 - 1)(seed):
            raise ConfigError("seed", "expected an unsigned 64-bit integer")
        return cls(tag, merged["physics"], merged["optimizer"], merged["sampling"], merged["sweep"], output, seed)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError("<root>", f"invalid JSON ({e})") from e
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment, "physics": self.physics, "optimizer": self.optimizer,
            "sampling": self.sampling, "sweep": self.sweep, "output": self.output, "seed": self.seed,
        }

    @property
    def gamma(self) -> float:
        return float(1.0 / np.sqrt(self.physics["omega_f"]))

    def t_f_grid(self) -> np.ndarray:
        a, b, m = self.physics["t_f_range"]
        return np.round(np.linspace(a, b, m), 12)


# -- shared helpers -----------------------------------------------------------------

def derive_seed(root: int, *parts) -> int:
    """Stable per-cell seed from the run seed and a cell label (independent of execution order)."""
    key = zlib.crc32(repr(parts).encode("utf-8"))
    return int(np.random.SeedSequence([int(root), key]).generate_state(1, np.uint64)[0])


def make_constraints(cfg: ExperimentConfig, delta_f: float | None = None) -> Constraints:
    ph = cfg.physics
    return Constraints(delta1=ph["delta1"], delta2=ph["delta2"],
                       slew=ph["delta_f"] if delta_f is None else delta_f,
                       u_start=1.0, u_end=ph["omega_f"] ** 2)


def make_cost(cfg: ExperimentConfig, tag: str | None = None, fs_delta: float | None = None) -> CostKind:
    opt = cfg.optimizer
    tag = tag or opt["cost"]
    return CostKind(tag, opt["fs_delta"] if fs_delta is None else fs_delta)


@lru_cache(maxsize=None)
def prepared_initial(n: int, L: float, p: int, restarts: int, max_iter: int, seed: int) -> np.ndarray:
    """Ansatz-prepared ground state of the initial trap (cached per setting)."""
    target = encode(gaussian_state(1.0, 0.0, SpatialGrid(n, L)))
    params, _, _ = prepare(target, p, seed=seed, restarts=restarts, max_iter=max_iter)
    amps = ansatz_amplitudes(params.theta, p, n)
    amps.flags.writeable = False
    return amps


def make_problem(cfg: ExperimentConfig, n_steps=None, t_f=None, delta_f=None, cost=None, n=None) -> ControlProblem:
    """Control problem for ``cfg``; ``physics.initial = "prepared"`` starts from the ansatz state."""
    ph = cfg.physics
    grid = SpatialGrid(ph["n"] if n is None else n, ph["L"])
    initial = None
    if ph["initial"] == "prepared":
        opt = cfg.optimizer
        initial = prepared_initial(grid.n, grid.L, ph["p"], opt["restarts"], opt["max_iter"],
                                   derive_seed(cfg.seed, "initial", grid.n))
    return ControlProblem(grid, ph["n_steps"] if n_steps is None else n_steps,
                          ph["t_f"] if t_f is None else t_f, cost=cost or make_cost(cfg),
                          constraints=make_constraints(cfg, delta_f), initial=initial, gamma=cfg.gamma)


def perturbed_ramp(problem: ControlProblem, seed: int, scale: float) -> np.ndarray:
    """Linear ramp with Gaussian noise of width ``scale`` on the interior nodes, projected."""
    u = problem.linear_ramp()
    if scale > 0:
        u[1:-1] += make_rng(seed).normal(scale=scale, size=u.size - 2)
    return project(u, problem.constraints)


def train(problem: ControlProblem, cfg: ExperimentConfig, u0=None, seed=None, stop_infidelity=None):
    """Projected GD on ``problem``; returns ``(u, record, gradient_check)``.

    The shift-rule gradient is compared against central differences at the
    starting point; if they disagree by more than ``1e-4`` (relative) the run
    falls back to finite differences.
    """
    opt = cfg.optimizer
    u0 = problem.linear_ramp() if u0 is None else u0
    u_start = project(u0, problem.constraints)
    g_s = problem.gradient(u_start).values
    g_f = grad_fd(problem, u_start).values
    check = float(np.linalg.norm(g_s - g_f) / max(np.linalg.norm(g_f), 1e-300))
    grad = None if check <= 1e-4 else (lambda v: grad_fd(problem, v).values)
    u, rec = gd_minimize(problem, u_start, problem.constraints, lr=opt["lr"], max_iter=opt["max_iter"],
                         tol=opt["tol"], seed=seed, grad=grad, fidelity=problem.fidelity,
                         stop_infidelity=stop_infidelity, tag=f"GD-{problem.cost.label}")
    return u, rec, check


def _log10_infid(F: float) -> float:
    return float(np.log10(max(1.0 - F, 1e-16)))


def bangbang_fraction(u, delta1: float, delta2: float, tol: float = 0.05) -> float:
    """Share of interior nodes within ``tol`` of either bound."""
    inner = np.asarray(u)[1:-1]
    near = (np.abs(inner - delta1) <= tol) | (np.abs(inner - delta2) <= tol)
    return float(near.mean()) if inner.size else 1.0


# -- result containers ------------------------------------------------------------------

@dataclass
class Table:
    name: str
    headers: list
    rows: list = field(default_factory=list)


@dataclass
class CellResult:
    key: tuple
    rows: dict = field(default_factory=dict)
    error: str | None = None
    wall_time: float = 0.0
    summary: dict = field(default_factory=dict)


@dataclass
class Experiment:
    """Cell list plus table layout for one configured experiment."""

    tables: dict
    cells: list
    run_cell: object
    # finalize(rows by table) -> (extra rows by table, summary dict)
    finalize: object = None


# -- experiments ------------------------------------------------------------------------

def _prep_grid(cfg):
    sw, opt = cfg.sweep, cfg.optimizer
    cells = [(n, p) for n in sw["n_values"] for p in sw["p_values"]]

    def run(key):
        n, p = key
        target = encode(gaussian_state(1.0, 0.0, SpatialGrid(n, cfg.physics["L"])))
        params, F, recs = prepare(target, p, seed=derive_seed(cfg.seed, "prep", n, p),
                                  restarts=opt["restarts"], max_iter=opt["max_iter"])
        iters = sum(r.iterations[-1] for r in recs)
        return {"fidelity": [[n, p, F, _log10_infid(F), len(recs), iters]]}

    tables = {"fidelity": ["n", "p", "fidelity", "log10_infidelity", "restarts_run", "iterations"]}
    return Experiment(tables, cells, run)


def _cost_race(cfg):
    sw = cfg.sweep
    labels = [("IF", None), ("BA", None)] + [("FS", d) for d in sw["fs_deltas"]]
    cells = [(tag, d if d is not None else 0.0, s) for s in cfg.sampling["seeds"] for tag, d in labels]

    def run(key):
        tag, d, s = key
        cost = make_cost(cfg, tag, d if tag == "FS" else None)
        problem = make_problem(cfg, cost=cost)
        u0 = perturbed_ramp(problem, derive_seed(cfg.seed, "ramp", s), sw["perturbation"])
        u, rec, check = train(problem, cfg, u0, seed=s)
        trace = [[cost.label, s, it, c, 1.0 - F] for it, c, F in zip(rec.iterations, rec.costs, rec.fidelities)]
        hit = rec.iterations_to(sw["threshold"])
        summary = [[cost.label, s, "" if hit is None else hit, rec.final_fidelity, check]]
        return {"trace": trace, "summary": summary}

    tables = {
        "trace": ["cost", "seed", "iteration", "cost_value", "infidelity"],
        "summary": ["cost", "seed", "iterations_to_threshold", "final_fidelity", "gradient_check"],
    }
    return Experiment(tables, cells, run)


def _trotter_grid(cfg):
    sw = cfg.sweep
    grid_cells = [("grid", nt, df) for nt in sw["n_steps_values"] for df in sw["delta_f_values"]]
    legend_cells = [("legend", int(nt), float(df)) for nt, df in sw["legend"]]

    def run(key):
        kind, nt, df = key
        problem = make_problem(cfg, n_steps=nt, delta_f=df)
        u, rec, _ = train(problem, cfg)
        F = problem.fidelity(u)
        if kind == "grid":
            return {"grid": [[nt, df, F, _log10_infid(F), rec.iterations[-1]]]}
        times = problem.protocol(u).times
        label = f"N_t={nt} df={df:g}"
        return {"protocols": [[label, nt, df, F, k, t, v] for k, (t, v) in enumerate(zip(times, u))]}

    def finalize(_rows):
        ph = cfg.physics
        bb = bangbang_protocol(cfg.gamma, ph["delta1"], ph["delta2"], ph["n_steps"])
        problem = make_problem(cfg, n_steps=bb.n_steps, t_f=bb.t_f)
        F = problem.fidelity(bb.u)
        rows = [["bang-bang", bb.n_steps, "", F, k, t, v] for k, (t, v) in enumerate(zip(bb.times, bb.u))]
        return {"protocols": rows}, {"bangbang_fidelity": F, "bangbang_t_f": bb.t_f}

    tables = {
        "grid": ["n_steps", "delta_f", "fidelity", "log10_infidelity", "iterations"],
        "protocols": ["series", "n_steps", "delta_f", "fidelity", "node", "time", "u"],
    }
    return Experiment(tables, grid_cells + legend_cells, run, finalize)


def _phase_diagram(cfg):
    t_fs = cfg.t_f_grid()
    nt0 = cfg.physics["n_steps"]
    cells = [(float(t), int(nt)) for t in t_fs for nt in sorted(set(cfg.sweep["n_steps_values"]) | {nt0})]
    ph = cfg.physics

    def run(key):
        t_f, nt = key
        problem = make_problem(cfg, n_steps=nt, t_f=t_f)
        u, rec, _ = train(problem, cfg)
        F = problem.fidelity(u)
        out = {"scan": [[t_f, nt, F, _log10_infid(F)]]}
        if nt == nt0:
            frac = bangbang_fraction(u, ph["delta1"], ph["delta2"])
            out["protocols"] = [[t_f, F, frac, *u]]
        return out

    def finalize(rows):
        ok = [r for r in rows["protocols"] if r[1] >= 0.999]
        est = min((r[0] for r in ok), default=None)
        spacing = float(t_fs[1] - t_fs[0]) if t_fs.size > 1 else 0.0
        return {}, {"transition_t_f": est, "transition_uncertainty": spacing,
                    "t_f_opt": bangbang_times(cfg.gamma, ph["delta1"], ph["delta2"]).t_f_opt}

    tables = {
        "protocols": ["t_f", "fidelity", "bangbang_fraction", *[f"u{k}" for k in range(nt0 + 1)]],
        "scan": ["t_f", "n_steps", "fidelity", "log10_infidelity"],
    }
    return Experiment(tables, cells, run, finalize)


def qsl_row(label, t_f, u, constraints, gamma, grid):
    """Fidelity-independent QSL quantities of a node protocol on the continuous-space oracle."""
    protocol = ControlProtocol(np.asarray(u, dtype=float), t_f, constraints)
    psi0 = gaussian_state(1.0, 0.0, grid)
    target = gaussian_state(gamma, 0.0, grid)
    _, traj = som_evolve(psi0, protocol, return_trajectory=True)
    res = qsl_time(traj, protocol.u, protocol.times, psi_target=target, gamma=gamma)
    return [label, t_f, res.mean_dispersion, res.bures_angle, res.tau_bures, res.tau_gaussian]


def _qsl_analysis(cfg):
    cells = [("trained", float(t)) for t in cfg.t_f_grid()] + [("bang-bang", 0.0)]
    ph = cfg.physics

    def run(key):
        kind, t_f = key
        grid = SpatialGrid(ph["n"], ph["L"])
        if kind == "bang-bang":
            bb = bangbang_protocol(cfg.gamma, ph["delta1"], ph["delta2"], ph["n_steps"])
            F = make_problem(cfg, n_steps=bb.n_steps, t_f=bb.t_f).fidelity(bb.u)
            row = qsl_row("bang-bang", bb.t_f, bb.u, bb.constraints, cfg.gamma, grid)
        else:
            problem = make_problem(cfg, t_f=t_f)
            u, _, _ = train(problem, cfg)
            F = problem.fidelity(u)
            row = qsl_row("trained", t_f, u, problem.constraints, cfg.gamma, grid)
        return {"qsl": [row[:2] + [F] + row[2:]]}

    tables = {"qsl": ["protocol", "t_f", "fidelity", "mean_dispersion", "bures_angle", "tau_bures", "tau_gaussian"]}
    return Experiment(tables, cells, run)


def _barren_scan(cfg):
    cells = [(n,) for n in cfg.sweep["n_values"]]
    ph = cfg.physics

    def run(key):
        (n,) = key
        g = avg_abs_gradient(n, 5 * n, cfg.sampling["n_samples"], seed=derive_seed(cfg.seed, "barren", n),
                             t_f=ph["t_f"], L=ph["L"])
        return {"gradients": [[n, 5 * n, g, float(np.log10(g)) if g > 0 else ""]]}

    def finalize(rows):
        pts = [r for r in rows["gradients"] if r[3] != ""]
        slope = float(np.polyfit([r[0] for r in pts], [r[3] for r in pts], 1)[0]) if len(pts) > 1 else None
        return {}, {"log10_slope_per_qubit": slope}

    tables = {"gradients": ["n", "n_steps", "avg_abs_gradient", "log10_avg_abs_gradient"]}
    return Experiment(tables, cells, run, finalize)


def _noise_train(cfg):
    samp, opt, sw = cfg.sampling, cfg.optimizer, cfg.sweep
    cells = [(float(b), s) for b in samp["betas"] for s in samp["seeds"]]

    def run(key):
        beta, s = key
        problem = make_problem(cfg, cost=CostKind("IF"))
        J = NoisyFidelity(problem, samp["shots"], beta)
        # the same stream for every beta at a given seed (common random numbers)
        u, rec = spsa_minimize(J, problem.linear_ramp(), problem.constraints, a=opt["spsa_a"], c=opt["spsa_c"],
                               A=opt["spsa_A"], alpha=opt["spsa_alpha"], gamma=opt["spsa_gamma"],
                               max_iter=opt["max_iter"], seed=derive_seed(cfg.seed, "spsa", s),
                               fidelity=problem.fidelity)
        inf = 1.0 - np.array(rec.fidelities)
        plateau = float(inf[-sw["plateau_window"]:].mean())
        trace = [[beta, s, it, c, 1.0 - F] for it, c, F in zip(rec.iterations, rec.costs, rec.fidelities)]
        return {"trace": trace, "plateau": [[beta, s, plateau, float(inf[-1])]]}

    tables = {
        "trace": ["beta", "seed", "iteration", "noisy_cost", "infidelity"],
        "plateau": ["beta", "seed", "plateau_infidelity", "final_infidelity"],
    }
    return Experiment(tables, cells, run)


def _shift_coefficient(cfg):
    cells = [(n,) for n in cfg.sweep["n_values"]]
    ph = cfg.physics

    def run(key):
        (n,) = key
        sc = shift_coefficient(n, cfg.sampling["n_samples"], seed=derive_seed(cfg.seed, "shift", n),
                               n_steps=ph["n_steps"], t_f=ph["t_f"], L=ph["L"])
        return {"coefficients": [[n, sc.mean_abs, sc.relative_std]]}

    tables = {"coefficients": ["n", "mean_abs_ratio", "relative_std"]}
    return Experiment(tables, cells, run)


_BUILDERS = {
    "prep-grid": _prep_grid, "cost-race": _cost_race, "trotter-grid": _trotter_grid,
    "phase-diagram": _phase_diagram, "qsl-analysis": _qsl_analysis, "barren-scan": _barren_scan,
    "noise-train": _noise_train, "shift-coefficient": _shift_coefficient,
}


# -- execution and persistence ----------------------------------------------------------------

def _run_one(exp: Experiment, key) -> CellResult:
    t0 = time.perf_counter()
    try:
        rows = exp.run_cell(key)
        return CellResult(key, rows, None, time.perf_counter() - t0)
    except Exception as e:  # recorded per cell; the grid continues
        return CellResult(key, {}, f"{type(e).__name__}: {e}", time.perf_counter() - t0)


def _sort_key(key):
    return tuple((0, v, "") if isinstance(v, (int, float)) else (1, 0.0, str(v)) for v in key)


@dataclass
class RunResult:
    experiment: str
    tables: list
    errors: list
    manifest: dict

    @property
    def ok(self) -> bool:
        return not self.errors

    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)


def run(cfg: ExperimentConfig, threads: int = 1, order=None) -> RunResult:
    """Execute every cell of ``cfg``; ``order`` optionally permutes execution (results are re-sorted)."""
    exp = _BUILDERS[cfg.experiment](cfg)
    cells = list(exp.cells)
    if order is not None:
        cells = [cells[i] for i in order]
    t0 = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda k: _run_one(exp, k), cells))
    else:
        results = [_run_one(exp, k) for k in cells]
    results.sort(key=lambda r: _sort_key(r.key))
    tables = {name: Table(name, list(headers)) for name, headers in exp.tables.items()}
    for r in results:
        for name, rows in r.rows.items():
            tables[name].rows.extend(rows)
    summary = {}
    if exp.finalize is not None:
        try:
            extra, summary = exp.finalize({name: list(t.rows) for name, t in tables.items()})
        except Exception as e:
            extra = {}
            results.append(CellResult(("finalize",), error=f"{type(e).__name__}: {e}"))
        for name, rows in extra.items():
            tables[name].rows.extend(rows)
    errors = [{"cell": list(r.key), "error": r.error} for r in results if r.error]
    manifest = {
        "experiment": cfg.experiment,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "cells": [{"cell": list(r.key), "status": "error" if r.error else "ok",
                   "wall_time": round(r.wall_time, 6)} for r in results],
        "errors": errors,
        "summary": summary,
        "versions": _versions(),
        "wall_time": round(time.perf_counter() - t0, 6),
    }
    return RunResult(cfg.experiment, list(tables.values()), errors, manifest)


def _versions() -> dict:
    from importlib import metadata

    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"package": pkg, "numpy": np.__version__, "python": platform.python_version()}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def table_csv(table: Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.headers)
    for row in table.rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def emit(result: RunResult, out_dir) -> list:
    """Write ``<experiment>_<table>.csv`` files and ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for t in result.tables:
        path = out / f"{result.experiment}_{t.name}.csv"
        path.write_text(table_csv(t), encoding="utf-8")
        written.append(path)
    man = dict(result.manifest)
    man["files"] = [p.name for p in written]
    path = out / "manifest.json"
    path.write_text(json.dumps(man, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    written.append(path)
    return written


def _json_default(v):
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialise {type(v).__name__}")
