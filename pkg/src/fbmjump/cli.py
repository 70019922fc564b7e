"""Configuration-driven experiment runner: ``fbmjump run <config> [--out DIR] [--workers N]``.

A config is an INI file with a ``[global]`` block (``subcommand``, ``seed``,
``m``, ``n``, optional ``out``) and one block named after the subcommand.
Unknown blocks and keys are rejected before any computation starts.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import itertools
import json
import math
import os
import platform
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from . import __version__
from .checks import (
    fbm_law_rows,
    frac_identity_rows,
    jump_marchaud_rows,
    kernel_factorization_rows,
    kh_round_trip_rows,
    moment_rows,
)
from .density_krylov import (
    DensityParams,
    density_mass,
    drift_free_samples,
    histogram_l1,
    krylov_check,
)
from .fbm import METHODS, sample_fbm_batch
from .girsanov_weak import DRIFT_LIBRARY, library_drift, simulate_weak_batch
from .point_process import CompoundPoissonSpec, JumpDistribution, sample_jump_path, total_variation
from .reserve_app import ReserveSpec, ruin_probability
from .strong_solver import MOLLIFIERS, DivergenceError, SchemeViolation, SolverConfig, apriori_bound, euler_batch, monotone_solve_batch

__all__ = ["main", "run_experiment", "load_config", "ExperimentConfig", "ConfigError", "parse_jump_law", "parse_test_function"]

OUT_ENV = "FBMJUMP_OUT"
CHUNK = 1000
EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3


class ConfigError(ValueError):
    """Invalid configuration file."""


# -- value parsers ------------------------------------------------------------


def _float(text: str) -> float:
    return float(text)


def _int(text: str) -> int:
    val = float(text)
    if val != int(val):
        raise ValueError(f"{text!r} is not an integer")
    return int(val)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _words(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _items(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(";") if p.strip())


_CALL = re.compile(r"^\s*([a-z][a-z-]*)\s*\(([^()]*)\)\s*$")


def _call(text: str) -> tuple[str, tuple[float, ...]]:
    hit = _CALL.match(text)
    if not hit:
        raise ValueError(f"expected name(args), got {text!r}")
    return hit.group(1), _floats(hit.group(2))


def parse_jump_law(text: str) -> JumpDistribution:
    """``constant(u)``, ``gaussian(mean, std)``, ``exponential(rate)`` or ``two-point(a, b, p)``."""
    name, args = _call(text)
    makers = {
        "constant": (JumpDistribution.constant, 1),
        "gaussian": (JumpDistribution.gaussian, 2),
        "exponential": (JumpDistribution.exponential, 1),
        "two-point": (JumpDistribution.two_point, 3),
    }
    if name not in makers:
        raise ValueError(f"unknown jump law {name!r}; choose from {sorted(makers)}")
    fn, arity = makers[name]
    if len(args) != arity:
        raise ValueError(f"jump law {name} takes {arity} arguments, got {len(args)}")
    return fn(*args)


def parse_test_function(text: str) -> tuple[Callable, tuple[float, float]]:
    """``indicator(a, b)`` of ``[a, b]`` in space, or a smooth ``bump(c, w)`` of half-width ``w``."""
    name, args = _call(text)
    if len(args) != 2:
        raise ValueError(f"{name} takes 2 arguments")
    if name == "indicator":
        a, b = args
        if not a < b:
            raise ValueError(f"indicator needs a < b, got {text!r}")
        return (lambda t, y: ((y >= a) & (y <= b)).astype(float)), (a, b)
    if name == "bump":
        c, w = args
        if not w > 0:
            raise ValueError(f"bump half-width must be positive, got {text!r}")

        def g(t, y):
            z = (np.asarray(y, dtype=float) - c) / w
            inside = np.abs(z) < 1
            return np.where(inside, np.exp(-1.0 / np.where(inside, 1 - z * z, 1.0)), 0.0) * np.ones_like(t)

        return g, (c - w, c + w)
    raise ValueError(f"unknown test function {name!r}; choose indicator or bump")


# -- schema -------------------------------------------------------------------


@dataclass(frozen=True)
class Param:
    parse: Callable
    default: object = None
    required: bool = False


_JUMP_KEYS = {
    "lam": Param(_float, 1.0),
    "jumps": Param(str, "gaussian(0, 1)"),
}
_PATH_KEYS = {
    "x0": Param(_float, 0.0),
    "T": Param(_float, 1.0),
    "sigma": Param(_float, 1.0),
    "c": Param(_float, 1.0),
}

SCHEMAS: dict[str, dict[str, Param]] = {
    "global": {
        "subcommand": Param(str, required=True),
        "seed": Param(_int, required=True),
        "m": Param(_int, required=True),
        "n": Param(_int, required=True),
        "out": Param(str, "results"),
    },
    "fbm": {
        "mode": Param(str, "paths"),
        "H": Param(_floats, (0.5,)),
        "T": Param(_float, 1.0),
        "method": Param(str, "circulant"),
    },
    "frac-selftest": {
        "checks": Param(_words, ("identities", "kernel", "roundtrip", "marchaud-jump")),
        "H_kernel": Param(_floats, (0.3, 0.7)),
        "H_jump": Param(_floats, (0.6, 0.75, 0.9)),
    },
    "density-check": {
        "mode": Param(str, "density"),
        "H": Param(_floats, (0.5,)),
        "lam": Param(_floats, (1.0,)),
        "t": Param(_floats, (1.0,)),
        "T": Param(_float, 1.0),
        "beta": Param(_float, 0.5),
        "jumps": Param(_items, ("gaussian(0, 1)",)),
        "x0": Param(_float, 0.0),
        "sigma": Param(_float, 1.0),
        "bins": Param(_int, 100),
    },
    "weak-sim": {
        "H": Param(_floats, (0.5,)),
        "drift": Param(_words, ("sin",)),
        **_JUMP_KEYS,
        **_PATH_KEYS,
    },
    "strong-sim": {
        "mode": Param(str, "euler-mc"),
        "H": Param(_floats, (0.5,)),
        "drift": Param(_words, ("sin",)),
        "method": Param(str, "circulant"),
        "mollifiers": Param(_words, MOLLIFIERS),
        "R": Param(_float, 10.0),
        "delta": Param(_float, 0.25),
        "n_max": Param(_int, 6),
        "k_max": Param(_int, 6),
        "tolerance": Param(_float, 1e-2),
        **_JUMP_KEYS,
        **_PATH_KEYS,
    },
    "krylov-check": {
        "H": Param(_floats, (0.5,)),
        "drift": Param(_words, ("sin",)),
        "g": Param(_items, ("indicator(0, 0.5)",)),
        "gamma": Param(_float, 2.0),
        "alpha": Param(_float, 2.0),
        **_JUMP_KEYS,
        **_PATH_KEYS,
    },
    "ruin": {
        "H": Param(_float, 0.5),
        "x0": Param(_float, 1.0),
        "c": Param(_float, 1.0),
        "r": Param(_float, 0.0),
        "rho": Param(_float, 0.0),
        "sigma": Param(_float, 1.0),
        "T": Param(_float, 1.0),
        "lam": Param(_float, 0.0),
        "jumps": Param(str, "constant(1)"),
        "method": Param(str, "circulant"),
        "R": Param(_float, 64.0),
    },
}
SUBCOMMANDS = tuple(k for k in SCHEMAS if k != "global")


@dataclass(frozen=True)
class ExperimentConfig:
    subcommand: str
    seed: int
    m: int
    n: int
    out: str
    params: dict
    digest: str


def _hurst_ok(h: float, where: str) -> None:
    if not 0.0 < h < 1.0:
        raise ConfigError(f"{where}: H={h} violates 0 < H < 1")


def _validate(cfg: ExperimentConfig) -> None:
    p, sub = cfg.params, cfg.subcommand
    if cfg.seed < 0:
        raise ConfigError("seed must be nonnegative")
    if cfg.m < 1:
        raise ConfigError("m must be at least 1")
    if cfg.n < 2:
        raise ConfigError("n must be at least 2")
    hs = p.get("H", ())
    for h in hs if isinstance(hs, tuple) else (hs,):
        _hurst_ok(h, sub)
    for key in ("T", "sigma"):
        if key in p and not p[key] > 0:
            raise ConfigError(f"{sub}: {key} must be positive")
    if "method" in p and p["method"] not in METHODS:
        raise ConfigError(f"{sub}: unknown fBM method {p['method']!r}; choose from {METHODS}")
    if "drift" in p:
        for d in p["drift"]:
            if d not in DRIFT_LIBRARY:
                raise ConfigError(f"{sub}: unknown drift {d!r}; choose from {DRIFT_LIBRARY}")
    if "lam" in p and not isinstance(p["lam"], tuple) and sub != "ruin" and not p["lam"] > 0:
        raise ConfigError(f"{sub}: jump rate lam must be positive")
    if isinstance(p.get("jumps"), str):
        parse_jump_law(p["jumps"])
    if sub == "fbm":
        if p["mode"] not in ("paths", "law"):
            raise ConfigError("fbm: mode must be paths or law")
        if p["mode"] == "paths" and len(p["H"]) != 1:
            raise ConfigError("fbm: paths mode takes a single H")
    elif sub == "frac-selftest":
        allowed = ("identities", "kernel", "roundtrip", "marchaud-jump")
        for c in p["checks"]:
            if c not in allowed:
                raise ConfigError(f"frac-selftest: unknown check {c!r}; choose from {allowed}")
        for h in p["H_kernel"]:
            _hurst_ok(h, "frac-selftest H_kernel")
        for h in p["H_jump"]:
            if not 0.5 < h < 1.0:
                raise ConfigError(f"frac-selftest: H_jump={h} violates 1/2 < H < 1")
        if cfg.n < 64:
            raise ConfigError("frac-selftest: n must be at least 64")
    elif sub == "density-check":
        if p["mode"] not in ("moment", "density"):
            raise ConfigError("density-check: mode must be moment or density")
        for law in p["jumps"]:
            parse_jump_law(law)
        if p["mode"] == "density":
            if len(p["jumps"]) != 1:
                raise ConfigError("density-check: density mode takes a single jump law")
            sizes = {len(p[k]) for k in ("H", "lam", "t")} - {1}
            if len(sizes) > 1:
                raise ConfigError("density-check: H, lam and t lists must have equal length (or length 1)")
            if any(v <= 0 for v in p["lam"] + p["t"]):
                raise ConfigError("density-check: lam and t must be positive")
        elif len(p["lam"]) != 1 or not p["lam"][0] > 0:
            raise ConfigError("density-check: moment mode takes a single positive lam")
    elif sub == "strong-sim":
        if p["mode"] not in ("euler-mc", "monotone"):
            raise ConfigError("strong-sim: mode must be euler-mc or monotone")
        for fam in p["mollifiers"]:
            if fam not in MOLLIFIERS:
                raise ConfigError(f"strong-sim: unknown mollifier {fam!r}; choose from {MOLLIFIERS}")
        SolverConfig(cfg.n, p["R"], p["delta"], 0, p["n_max"], p["k_max"], p["tolerance"])
    elif sub == "krylov-check":
        for g in p["g"]:
            parse_test_function(g)
    elif sub == "ruin":
        if p["lam"] < 0:
            raise ConfigError("ruin: lam must be nonnegative")
        if cfg.m < 100:
            raise ConfigError("ruin: m must be at least 100")
        ReserveSpec(p["x0"], p["c"], p["r"], _const_loading(p["rho"]), p["sigma"], p["T"])


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    """Parse and validate an experiment config; raises :class:`ConfigError`."""
    parser = configparser.ConfigParser(interpolation=None, default_section="\x00none")
    parser.optionxform = str  # keep key case (H, T, R)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if "global" not in parser:
        raise ConfigError("config needs a [global] block")
    sub = parser["global"].get("subcommand", "").strip()
    if sub not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {sub!r}; choose from {SUBCOMMANDS}")
    extra = set(parser.sections()) - {"global", sub}
    if extra:
        raise ConfigError(f"unexpected blocks {sorted(extra)} for subcommand {sub!r}")
    values = {}
    for block in ("global", sub):
        schema = SCHEMAS[block]
        raw = dict(parser[block]) if block in parser else {}
        unknown = set(raw) - set(schema)
        if unknown:
            raise ConfigError(f"[{block}] has unknown keys {sorted(unknown)}; allowed: {sorted(schema)}")
        vals = {}
        for key, spec in schema.items():
            if key in raw:
                try:
                    vals[key] = spec.parse(raw[key].strip())
                except ValueError as exc:
                    raise ConfigError(f"[{block}] {key} = {raw[key]!r}: {exc}") from exc
            elif spec.required:
                raise ConfigError(f"[{block}] is missing required key {key!r}")
            else:
                vals[key] = spec.default
        values[block] = vals
    g = values["global"]
    canon = json.dumps(values, sort_keys=True, default=list)
    digest = hashlib.sha256(canon.encode()).hexdigest()
    cfg = ExperimentConfig(sub, g["seed"], g["m"], g["n"], g["out"], values[sub], digest)
    try:
        _validate(cfg)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{sub}: {exc}") from exc
    return cfg


# -- CSV output ---------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


class _Writer:
    """Tracks written files so a failed run can remove them."""

    def __init__(self, out: Path, cfg: ExperimentConfig) -> None:
        self.out = out
        self.cfg = cfg
        self.files: list[Path] = []

    def write(self, name: str, columns, rows, meta: dict | None = None) -> Path:
        rows = list(rows)
        for row in rows:
            for v in row:
                if isinstance(v, (float, np.floating)) and not math.isfinite(v) and not math.isnan(v):
                    raise FloatingPointError(f"non-finite value in {name}")
        info = {"subcommand": self.cfg.subcommand, "seed": self.cfg.seed, "config": self.cfg.digest[:16]}
        info.update(meta or {})
        path = self.out / name
        self.files.append(path)
        with path.open("w", newline="") as fh:
            fh.write("# " + " ".join(f"{k}={_fmt(v)}" for k, v in info.items()) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            w.writerows([_fmt(v) for v in row] for row in rows)
        return path

    def cleanup(self) -> None:
        for path in self.files:
            path.unlink(missing_ok=True)


def _map(fn, jobs, workers: int):
    """Ordered map over jobs; results come back in job order whatever the worker count."""
    jobs = list(jobs)
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _chunks(m: int):
    return [(start, min(CHUNK, m - start)) for start in range(0, m, CHUNK)]


def _const_loading(rho: float):
    return lambda t, x: np.full(np.broadcast(t, x).shape, float(rho))


# -- pipelines ----------------------------------------------------------------


def _fbm_chunk(H, T, n, method, seed, count):
    paths, _ = sample_fbm_batch(H, T, n, count, method, seed)
    return paths


def _run_fbm(cfg, p, w: _Writer, workers):
    if p["mode"] == "law":
        rows = [r for H in p["H"] for r in fbm_law_rows(H, cfg.m, cfg.seed, cfg.n, p["T"])]
        w.write(f"fbm-{cfg.seed}.csv", ("H", "check", "time", "statistic", "reference", "score"), rows, {"mode": "law"})
        return
    H = p["H"][0]
    t = np.linspace(0.0, p["T"], cfg.n)
    jobs = [(H, p["T"], cfg.n, p["method"], cfg.seed + s, k) for s, k in _chunks(cfg.m)]
    blocks = _map(_fbm_chunk, jobs, workers)
    for i, row in enumerate(np.concatenate(blocks)):
        w.write(
            f"fbm-{cfg.seed + i}.csv", ("time", "value"), zip(t, row), {"H": H, "method": p["method"], "path_seed": cfg.seed + i}
        )


def _run_frac(cfg, p, w: _Writer, workers):
    rows = []
    checks = p["checks"]
    n = cfg.n
    if "identities" in checks:
        for name, a, b, nn, err in frac_identity_rows(ns=(n // 4, n // 2, n)):
            rows.append((name, math.nan, a, b, nn, math.nan, math.nan, err))
    if "kernel" in checks:
        for H in p["H_kernel"]:
            for _, t, s, val, ref, err in kernel_factorization_rows(H):
                rows.append(("kernel-factorization", H, t, s, 0, val, ref, err))
    if "roundtrip" in checks:
        for H in p["H_kernel"]:
            for _, name, nn, err in kh_round_trip_rows(H, n):
                rows.append((f"kh-roundtrip:{name}", H, math.nan, math.nan, nn, math.nan, math.nan, err))
    if "marchaud-jump" in checks:
        for H in p["H_jump"]:
            for _, nn, nodes, err in jump_marchaud_rows(H, n):
                rows.append(("marchaud-jump", H, nodes, math.nan, nn, math.nan, math.nan, err))
    w.write(f"frac-selftest-{cfg.seed}.csv", ("check", "H", "p1", "p2", "n", "value", "reference", "error"), rows)


def _run_density(cfg, p, w: _Writer, workers):
    if p["mode"] == "moment":
        rows = []
        for law in p["jumps"]:
            spec = CompoundPoissonSpec(p["lam"][0], parse_jump_law(law), p["T"])
            rows += [(law, *r[1:]) for r in moment_rows(spec, p["beta"], cfg.m, cfg.seed)]
        cols = ("jumps", "lam", "T", "beta", "mc_mean", "stderr", "closed_form", "z")
        w.write(f"density-check-{cfg.seed}.csv", cols, rows, {"mode": "moment"})
        return
    size = max(len(p[k]) for k in ("H", "lam", "t"))
    law = p["jumps"][0]
    rows = []
    for H, lam, t in zip(*(p[k] * size if len(p[k]) == 1 else p[k] for k in ("H", "lam", "t"))):
        spec = CompoundPoissonSpec(lam, parse_jump_law(law), t)
        dp = DensityParams(t, p["x0"], H, spec, p["sigma"])
        samples = drift_free_samples(dp, cfg.m, cfg.seed, cfg.n)
        mass = density_mass(dp)
        rows.append((H, lam, t, law, histogram_l1(dp, samples, p["bins"]), mass, abs(mass - 1.0)))
    w.write(f"density-check-{cfg.seed}.csv", ("H", "lam", "t", "jumps", "l1", "mass", "mass_error"), rows, {"mode": "density"})


def _weak_chunk(drift, H, c, lam, law, T, x0, sigma, n, seed, count):
    spec = CompoundPoissonSpec(lam, parse_jump_law(law), T)
    batch = simulate_weak_batch(library_drift(drift, H, c), H, spec, x0, count, seed, n, sigma)
    return batch.to_csv_rows()


def _run_weak(cfg, p, w: _Writer, workers):
    cases = list(itertools.product(p["H"], p["drift"]))
    jobs = [
        (d, H, p["c"], p["lam"], p["jumps"], p["T"], p["x0"], p["sigma"], cfg.n, cfg.seed + s, k)
        for H, d in cases
        for s, k in _chunks(cfg.m)
    ]
    results = _map(_weak_chunk, jobs, workers)
    rows = [(job[1], job[0], *r) for job, block in zip(jobs, results) for r in block]
    cols = ("H", "drift", "seed", "x_T", "weight", "log_weight", "max_abs_v")
    w.write(f"weak-sim-{cfg.seed}.csv", cols, rows, {"jumps": p["jumps"], "lam": p["lam"], "x0": p["x0"], "n": cfg.n})


def _noise_and_jumps(H, T, n, method, lam, law, seed, count):
    paths, _ = sample_fbm_batch(H, T, n, count, method, seed)
    spec = CompoundPoissonSpec(lam, parse_jump_law(law), T)
    jumps = [sample_jump_path(spec, seed + i) for i in range(count)]
    return paths, jumps


def _euler_chunk(drift, H, c, lam, law, T, x0, sigma, n, method, seed, count):
    b = library_drift(drift, H, c)
    t = np.linspace(0.0, T, n)
    paths, jumps = _noise_and_jumps(H, T, n, method, lam, law, seed, count)
    x, _, _ = euler_batch(b, x0, t, sigma * paths, jumps)
    if not np.all(np.isfinite(x)):
        raise DivergenceError("non-finite Euler path")
    rows = []
    for i in range(count):
        bound = math.nan
        if b.bound is not None:
            bound = apriori_bound(x0, float(np.max(np.abs(sigma * paths[i]))), b.bound, T, total_variation(jumps[i], T))
        rows.append((seed + i, x[i, -1], float(np.max(np.abs(x[i]))), bound))
    return rows


def _monotone_rows(cfg, p, H, drift):
    T, x0, sigma = p["T"], p["x0"], p["sigma"]
    t = np.linspace(0.0, T, cfg.n)
    b = library_drift(drift, H, p["c"])
    paths, jumps = _noise_and_jumps(H, T, cfg.n, p["method"], p["lam"], p["jumps"], cfg.seed, cfg.m)
    noise = sigma * paths
    euler, _, _ = euler_batch(b, x0, t, noise, jumps)
    rows, ledger_rows, finals = [], [], {}
    for fam in p["mollifiers"]:
        scfg = SolverConfig(cfg.n, p["R"], p["delta"], 0, p["n_max"], p["k_max"], p["tolerance"], fam)
        x, _, _, ledger, bR = monotone_solve_batch(b, x0, t, noise, jumps, scfg)
        finals[fam] = x
        for e in ledger:
            ledger_rows.append((H, drift, fam, e.level, e.n, e.k, e.change, e.violation))
        for i in range(cfg.m):
            bound = apriori_bound(x0, float(np.max(np.abs(noise[i]))), bR.bound, T, total_variation(jumps[i], T))
            gap = float(np.max(np.abs(x[i] - euler[i])))
            rows.append((H, drift, fam, cfg.seed + i, "euler", gap, float(np.max(np.abs(x[i]))), bound))
    fams = list(finals)
    for a, b2 in zip(fams[:-1], fams[1:]):
        for i in range(cfg.m):
            gap = float(np.max(np.abs(finals[a][i] - finals[b2][i])))
            rows.append((H, drift, f"{a}|{b2}", cfg.seed + i, "family", gap, math.nan, math.nan))
    return rows, ledger_rows


def _run_strong(cfg, p, w: _Writer, workers):
    cases = list(itertools.product(p["H"], p["drift"]))
    meta = {"mode": p["mode"], "jumps": p["jumps"], "lam": p["lam"], "x0": p["x0"], "n": cfg.n}
    if p["mode"] == "euler-mc":
        jobs = [
            (d, H, p["c"], p["lam"], p["jumps"], p["T"], p["x0"], p["sigma"], cfg.n, p["method"], cfg.seed + s, k)
            for H, d in cases
            for s, k in _chunks(cfg.m)
        ]
        results = _map(_euler_chunk, jobs, workers)
        rows = [(job[1], job[0], *r) for job, block in zip(jobs, results) for r in block]
        w.write(f"strong-sim-{cfg.seed}.csv", ("H", "drift", "seed", "x_T", "sup_abs_x", "apriori_bound"), rows, meta)
        return
    rows, ledger = [], []
    for H, d in cases:
        r, led = _monotone_rows(cfg, p, H, d)
        rows += r
        ledger += led
    meta["tolerance"] = p["tolerance"]
    cols = ("H", "drift", "mollifier", "seed", "compare", "sup_gap", "sup_abs_x", "apriori_bound")
    w.write(f"strong-sim-{cfg.seed}.csv", cols, rows, meta)
    w.write(
        f"strong-sim-{cfg.seed}-ledger.csv", ("H", "drift", "mollifier", "level", "n", "k", "change", "violation"), ledger, meta
    )


def _run_krylov(cfg, p, w: _Writer, workers):
    spec = CompoundPoissonSpec(p["lam"], parse_jump_law(p["jumps"]), p["T"])
    gs = {g: parse_test_function(g) for g in p["g"]}
    rows = []
    for H, d in itertools.product(p["H"], p["drift"]):
        reports, k = krylov_check(library_drift(d, H, p["c"]), H, spec, gs, cfg.m, cfg.seed, p["x0"], cfg.n, None, p["gamma"], p["alpha"])
        for r in reports:
            rows.append((H, d, r.g_id, r.lhs, r.stderr, r.rhs, r.passed, k.G_conservative, k.K, k.K_stderr))
    cols = ("H", "drift", "g", "lhs", "stderr", "rhs", "passed", "G", "K", "K_stderr")
    w.write(f"krylov-check-{cfg.seed}.csv", cols, rows, {"jumps": p["jumps"], "lam": p["lam"], "n": cfg.n})


def _run_ruin(cfg, p, w: _Writer, workers):
    spec = ReserveSpec(p["x0"], p["c"], p["r"], _const_loading(p["rho"]), p["sigma"], p["T"], 0.0, abs(p["rho"]))
    jump_spec = CompoundPoissonSpec(p["lam"], parse_jump_law(p["jumps"]), p["T"]) if p["lam"] > 0 else None
    est = ruin_probability(spec, p["H"], jump_spec, cfg.m, cfg.seed, cfg.n, p["R"], CHUNK, p["method"])
    row = (p["H"], p["x0"], p["c"], p["r"], p["rho"], p["sigma"], p["T"], p["lam"], *est.to_csv_row())
    cols = ("H", "x0", "c", "r", "rho", "sigma", "T", "lam", "probability", "stderr", "m", "tau_mean", "tau_median")
    w.write(f"ruin-{cfg.seed}.csv", cols, [row], {"jumps": p["jumps"] if p["lam"] > 0 else "none", "n": cfg.n})


PIPELINES = {
    "fbm": _run_fbm,
    "frac-selftest": _run_frac,
    "density-check": _run_density,
    "weak-sim": _run_weak,
    "strong-sim": _run_strong,
    "krylov-check": _run_krylov,
    "ruin": _run_ruin,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_experiment(cfg: ExperimentConfig, out: str | os.PathLike | None = None, workers: int = 1) -> list[Path]:
    """Run a validated config; returns the written files (CSVs, then the manifest).

    Output directory precedence: ``out`` argument, ``$FBMJUMP_OUT``, then the
    config's ``out`` key. Files written before a failure are removed.
    """
    target = Path(out if out is not None else os.environ.get(OUT_ENV) or cfg.out)
    target.mkdir(parents=True, exist_ok=True)
    writer = _Writer(target, cfg)
    start = time.perf_counter()
    try:
        with np.errstate(over="ignore"):
            PIPELINES[cfg.subcommand](cfg, cfg.params, writer, max(int(workers), 1))
        manifest = {
            "subcommand": cfg.subcommand,
            "seed": cfg.seed,
            "config_sha256": cfg.digest,
            "versions": {
                "fbmjump": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "wall_time_s": time.perf_counter() - start,
            "files": {p.name: _sha256(p) for p in writer.files},
        }
        path = target / f"{cfg.subcommand}-{cfg.seed}.manifest.json"
        writer.files.append(path)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except BaseException:
        writer.cleanup()
        raise
    return list(writer.files)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="fbmjump", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("--out", default=None, help=f"output directory (overrides ${OUT_ENV} and the config)")
    run.add_argument("--workers", type=int, default=1, help="worker processes for path-parallel pipelines")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        files = run_experiment(cfg, args.out, args.workers)
    except (FloatingPointError, SchemeViolation, DivergenceError) as exc:
        print(f"fbmjump: numerical failure: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"fbmjump: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    for f in files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
