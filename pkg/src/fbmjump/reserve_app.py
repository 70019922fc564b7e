"""Perturbed reserve model ``dX = (r X + c(1 + rho(t, X))) dt + sigma dB^H - dL`` and ruin estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .fbm import check_hurst, sample_fbm_batch
from .girsanov_weak import DriftSpec
from .point_process import CompoundPoissonSpec, JumpPath, sample_jump_path
from .strong_solver import euler_batch, truncate_drift

__all__ = [
    "ReserveSpec",
    "RuinEstimate",
    "reserve_drift",
    "ruin_probability",
    "reflection_ruin",
]


def _zero_loading(t, x):
    return np.zeros(np.broadcast(t, x).shape)


@dataclass(frozen=True)
class ReserveSpec:
    """Initial surplus, premium rate, interest, safety loading, noise scale and horizon.

    ``rho_lipschitz`` is the known Lipschitz constant of ``rho`` in ``x``
    (``None`` when unknown); it feeds the Hölder metadata of the drift.
    """

    x0: float = 1.0
    c: float = 1.0
    r: float = 0.0
    rho_fn: Callable = _zero_loading
    sigma: float = 1.0
    T: float = 1.0
    rho_lipschitz: float | None = 0.0
    rho_bound: float | None = 0.0

    def __post_init__(self) -> None:
        if self.x0 < 0:
            raise ValueError("initial surplus must be nonnegative")
        if not self.c > 0:
            raise ValueError("premium rate must be positive")
        if self.r < 0:
            raise ValueError("interest rate must be nonnegative")
        if not (self.sigma > 0 and self.T > 0):
            raise ValueError("sigma and T must be positive")
        tt = np.linspace(0.0, self.T, 21)[:, None]
        xx = np.linspace(-50.0, 50.0 + 10 * abs(self.x0), 2001)[None, :]
        vals = np.asarray(self.rho_fn(tt, xx), dtype=float)
        if np.any(~np.isfinite(vals)) or np.min(vals) <= -1.0:
            raise ValueError("safety loading must stay above -1")


@dataclass(frozen=True)
class RuinEstimate:
    probability: float
    stderr: float
    m: int
    tau_stats: dict = field(default_factory=dict)
    radius: float | None = None

    def to_csv_row(self):
        return (self.probability, self.stderr, self.m, self.tau_stats.get("mean", math.nan), self.tau_stats.get("median", math.nan))


def reserve_drift(spec: ReserveSpec) -> DriftSpec:
    """``b(t, x) = r x + c (1 + rho(t, x))`` with regularity metadata.

    With ``r > 0`` the drift grows linearly and is named with a
    ``requires-truncation`` tag; solvers then truncate it with radius doubling.
    """
    c, r, rho = spec.c, spec.r, spec.rho_fn

    def b(t, x):
        return r * x + c * (1.0 + np.asarray(rho(t, x), dtype=float))

    lip = None if spec.rho_lipschitz is None else c * spec.rho_lipschitz
    if r > 0:
        return DriftSpec(b, "any", name="reserve|requires-truncation")
    bound = None if spec.rho_bound is None else c * (1.0 + spec.rho_bound)
    if lip is None:
        return DriftSpec(b, "low", max(bound or 1.0, 1.0), 0.25, bound=bound, name="reserve")
    # Lipschitz plus bounded gives every Hölder exponent below one
    k = max(lip, 2.0 * (bound or 0.0), 1e-12)
    return DriftSpec(b, "low", max(bound or k, k), 0.25, 0.99, 1.0, bound, "reserve")


def reflection_ruin(x0: float, c: float, T: float, sigma: float = 1.0) -> float:
    """``P(min_{t<=T} (x0 + c t + sigma W_t) < 0)`` by the reflection principle."""
    s = sigma * math.sqrt(T)
    mu = c / sigma**2
    return float(stats.norm.cdf(-(x0 + c * T) / s) + math.exp(-2 * mu * x0) * stats.norm.cdf((-x0 + c * T) / s))


def _summaries(tau: np.ndarray) -> dict:
    hit = tau[np.isfinite(tau)]
    if hit.size == 0:
        return {"count": 0, "mean": math.nan, "median": math.nan}
    return {"count": int(hit.size), "mean": float(hit.mean()), "median": float(np.median(hit))}


def ruin_probability(
    spec: ReserveSpec,
    H: float,
    jump_spec: CompoundPoissonSpec | None,
    m: int,
    seed: int = 0,
    n: int = 4097,
    R: float = 64.0,
    chunk: int = 1000,
    method: str = "circulant",
    injected: JumpPath | None = None,
) -> RuinEstimate:
    """Fraction of Euler paths whose minimum over grid nodes and jump times is negative.

    ``injected`` replaces the sampled claims of every path with a fixed
    claim path. Drifts with interest are truncated at radius ``R``, which
    doubles (with an agreement check on the ruin indicators) while any path
    leaves the window.
    """
    H = check_hurst(H)
    if m < 100:
        raise ValueError("ruin_probability needs m >= 100")
    if jump_spec is not None and not math.isclose(jump_spec.T, spec.T):
        raise ValueError("claim process and reserve horizons differ")
    b = reserve_drift(spec)
    t = np.linspace(0.0, spec.T, n)
    truncate = spec.r > 0
    while True:
        drift = truncate_drift(b, R, spec.T) if truncate else b
        ruined = np.zeros(m, dtype=bool)
        tau = np.full(m, np.inf)
        escaped = False
        for start in range(0, m, chunk):
            k = min(chunk, m - start)
            paths, _ = sample_fbm_batch(H, spec.T, n, k, method, seed + start)
            if injected is not None:
                jumps = [injected] * k
            elif jump_spec is not None:
                jumps = [sample_jump_path(jump_spec, seed + start + i) for i in range(k)]
            else:
                jumps = [None] * k
            x, run_min, _ = euler_batch(drift, spec.x0, t, spec.sigma * paths, jumps)
            ruined[start : start + k] = run_min < 0
            below = x < 0
            first = np.where(below.any(axis=1), np.argmax(below, axis=1), -1)
            # a claim can ruin between nodes; the next node then records the time
            tau_chunk = np.where(first >= 0, t[np.maximum(first, 0)], np.inf)
            tau_chunk = np.where((run_min < 0) & (first < 0), spec.T, tau_chunk)
            tau[start : start + k] = tau_chunk
            escaped |= bool(truncate and np.max(np.abs(x)) >= R)
        if not escaped:
            break
        R *= 2
    p = float(ruined.mean())
    se = math.sqrt(max(p * (1 - p), 0.0) / m)
    return RuinEstimate(p, se, m, _summaries(tau), R if truncate else None)
