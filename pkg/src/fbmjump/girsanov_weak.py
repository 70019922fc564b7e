"""Weak solutions by change of measure: the shift v, Girsanov weights and weighted estimates.

Paths are built as ``X = x0 + sigma B^H - L`` with ``B^H = K_H W``. Writing
``u_t = -b(t, X_t) / sigma`` and ``v = K_H^{-1}(int_0^. u)``, the weight
``Z_T = exp(-int v dW - 1/2 int v^2 dt)`` turns the law of ``X`` into that
of a weak solution of ``dX = b(t, X) dt + sigma dB^H - dL``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._piecewise import marchaud_jump_batch, marchaud_jump_reference
from .fbm import FbmPath, WienerPath, check_hurst, inverse_from_derivative, kernel_norm, sample_fbm_batch
from .frac_calc import GridFunction
from .point_process import CompoundPoissonSpec, JumpPath, sample_jump_path

__all__ = [
    "DriftSpec",
    "DRIFT_LIBRARY",
    "library_drift",
    "WeightedSample",
    "WeakBatch",
    "NovikovResult",
    "drift_u",
    "compute_v",
    "compute_v_array",
    "compute_v_split",
    "girsanov_weight",
    "novikov_diagnostic",
    "sample_weak_solution",
    "simulate_weak_batch",
    "weighted_expectation",
]

REGIMES = ("low", "high", "any")


@dataclass(frozen=True)
class DriftSpec:
    """Drift ``b(t, x)`` (vectorized over numpy arrays) with its growth or Hölder class.

    ``regime="low"``: ``|b(t,x)| <= k (1 + |x|^rho)`` with ``0 < rho < 1/2``.
    ``regime="high"``: ``|b(t,x) - b(s,y)| <= k (|x-y|^alpha + |t-s|^gamma)``.
    ``regime="any"``: no structural claim (useful for tests of ``drift_u``).
    ``bound`` is a uniform bound ``sup |b|`` when one is known.
    """

    b: Callable
    regime: str = "any"
    k: float = 1.0
    rho: float | None = None
    alpha: float | None = None
    gamma: float | None = None
    bound: float | None = None
    name: str = "custom"

    def __post_init__(self) -> None:
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.regime == "low" and not (self.rho is not None and 0.0 < self.rho < 0.5):
            raise ValueError("low-H drifts need 0 < rho < 1/2")
        if self.regime == "high" and (self.alpha is None or self.gamma is None):
            raise ValueError("high-H drifts need alpha and gamma")

    def __call__(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.b(t, x), dtype=float), np.broadcast(t, x).shape)

    def check(self, H: float, T: float = 1.0, seed: int = 12345, samples: int = 2000) -> None:
        """Validate parameters against ``H`` and spot-check the growth or Hölder bound."""
        H = check_hurst(H)
        if self.regime == "any":
            raise ValueError(f"drift {self.name!r} declares no regime; weak solutions need low or high")
        if self.regime == "low" and H > 0.5:
            raise ValueError("low-H drift class used with H > 1/2")
        if self.regime == "high" and H < 0.5:
            raise ValueError("high-H drift class used with H < 1/2")
        rng = np.random.default_rng(seed)
        t = rng.uniform(0, T, samples)
        x = rng.standard_cauchy(samples) * 3.0
        slack = 1.0 + 1e-9
        if self.regime == "low":
            ok = np.abs(self(t, x)) <= self.k * (1 + np.abs(x) ** self.rho) * slack + 1e-12
        else:
            if not self.gamma > H - 0.5:
                raise ValueError(f"need gamma > H - 1/2, got gamma={self.gamma}")
            if not 1 - 1 / (2 * H) < self.alpha < 1:
                raise ValueError(f"need 1 - 1/(2H) < alpha < 1, got alpha={self.alpha}")
            s = np.clip(t + rng.normal(0, 0.1, samples), 0, T)
            y = x + rng.normal(0, 1.0, samples) * rng.choice([1e-3, 1e-1, 1.0, 10.0], samples)
            lhs = np.abs(self(t, x) - self(s, y))
            ok = lhs <= self.k * (np.abs(x - y) ** self.alpha + np.abs(t - s) ** self.gamma) * slack + 1e-12
        if not np.all(ok):
            i = int(np.argmin(ok))
            raise ValueError(f"drift {self.name!r} violates its {self.regime}-H bound near t={t[i]:.4g}, x={x[i]:.4g}")


def _const(c: float):
    return lambda t, x: np.full(np.broadcast(t, x).shape, float(c))


def library_drift(name: str, H: float = 0.5, c: float = 1.0) -> DriftSpec:
    """Named drifts used by configs and acceptance runs, tagged with the class matching ``H``."""
    low = H <= 0.5
    if name == "zero":
        return DriftSpec(_const(0.0), "low" if low else "high", 0.0, 0.25, 0.9, 1.0, 0.0, name)
    if name == "const":
        return DriftSpec(_const(c), "low" if low else "high", abs(c), 0.25, 0.9, 1.0, abs(c), name)
    if name == "sin":
        # |sin x - sin y| <= 2^{1-a} |x - y|^a for every a in (0, 1]
        return DriftSpec(lambda t, x: np.sin(x), "low" if low else "high", 2.0, 0.25, 0.9, 1.0, 1.0, name)
    if name == "sin-time":
        return DriftSpec(
            lambda t, x: 0.5 * np.sin(x) + 0.5 * np.cos(2 * np.pi * t), "low" if low else "high", 4.0, 0.25, 0.9, 1.0, 1.0, name
        )
    if name == "sqrt-growth":
        # unbounded sublinear growth, low-H class only
        return DriftSpec(lambda t, x: -np.sign(x) * np.abs(x) ** 0.25, "low", 1.0, 0.25, None, None, None, name)
    if name == "sign":
        # bounded, discontinuous in x: admissible for H < 1/2
        return DriftSpec(lambda t, x: -np.sign(x), "low", 1.0, 0.25, None, None, 1.0, name)
    if name == "holder-sign":
        # -sign(x) min(|x|^0.4, 1): bounded and 0.4-Hölder with constant 2^{0.6}
        return DriftSpec(
            lambda t, x: -np.sign(x) * np.minimum(np.abs(x) ** 0.4, 1.0), "low" if low else "high", 2.0, 0.25, 0.4, 1.0, 1.0, name
        )
    if name == "linear":
        return DriftSpec(lambda t, x: x, "any", name=name)
    if name == "neg-linear":
        return DriftSpec(lambda t, x: -x, "any", name=name)
    raise ValueError(f"unknown drift {name!r}; choose from {sorted(DRIFT_LIBRARY)}")


DRIFT_LIBRARY = ("zero", "const", "sin", "sin-time", "sqrt-growth", "sign", "holder-sign", "linear", "neg-linear")


@dataclass(frozen=True)
class WeightedSample:
    """One weak-solution path with its Girsanov weight and the ingredients that produced it."""

    x_path: GridFunction
    weight: float
    v_path: GridFunction
    wiener: WienerPath
    jumps: JumpPath
    log_weight: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.weight) and self.weight > 0):
            raise ValueError(f"weight must be positive and finite, got {self.weight}")

    @property
    def x_T(self) -> float:
        return float(self.x_path.values[-1])


@dataclass(frozen=True)
class WeakBatch:
    """Terminal values and log-weights of ``m`` weak-solution paths (row ``i`` has seed ``seeds[i]``)."""

    seeds: np.ndarray
    x_T: np.ndarray
    log_w: np.ndarray
    max_v: np.ndarray
    int_v2: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_w)

    def to_csv_rows(self):
        w = self.weights
        return [
            (int(s), float(x), float(wi), float(lw), float(mv))
            for s, x, wi, lw, mv in zip(self.seeds, self.x_T, w, self.log_w, self.max_v)
        ]


@dataclass(frozen=True)
class NovikovResult:
    estimate: float
    stderr: float
    estimate_small: float
    stable: bool


def drift_u(b: DriftSpec, fbm: FbmPath, jumps: JumpPath, x0: float, sigma: float = 1.0) -> GridFunction:
    """``u_t = -b(t, x0 + sigma B^H_t - L_t) / sigma`` on the fBM grid, ``L`` cadlag."""
    if not math.isclose(fbm.T, jumps.T, rel_tol=1e-12):
        raise ValueError(f"horizon mismatch: fBM on [0, {fbm.T}], jumps on [0, {jumps.T}]")
    t = fbm.times
    x = x0 + sigma * fbm.values - jumps.value(t)
    return fbm.path.with_values(-b(t, x) / sigma)


def compute_v_array(u: np.ndarray, h: float, H: float, jump_list) -> tuple[np.ndarray, np.ndarray]:
    """Rows of ``K_H^{-1}(int_0^. u)`` on a grid from 0; returns values and per-row prefix lengths.

    ``u`` holds node values; for ``H > 1/2`` it is treated as continuous
    between the jump times of its row and may jump across them.
    """
    H = check_hurst(H)
    u = np.atleast_2d(np.asarray(u, dtype=float))
    m, n = u.shape
    if H == 0.5:
        return u.copy(), np.zeros(m, dtype=int)
    if H < 0.5:
        v, prefix = inverse_from_derivative(u, h, H)
        return v, np.full(m, prefix)
    a = H - 0.5
    d, prefix = marchaud_jump_batch(u, h, a, jump_list)
    t = h * np.arange(n)
    c = 1.0 / kernel_norm(H)
    v = c * t ** a * d
    v[:, 0] = c * h**a * d[:, 0]
    two = prefix == 2
    v[two, 1] = c * h**a * d[two, 1]
    return v, prefix


def compute_v(u: GridFunction, H: float, jumps: JumpPath) -> GridFunction:
    """``v = K_H^{-1}(int_0^. u)`` on the grid of ``u`` (which must start at 0).

    ``H = 1/2`` returns ``u``. For ``H > 1/2`` ``u`` may jump at the jump
    times of ``jumps`` and is continuous elsewhere.
    """
    if u.t0 != 0.0:
        raise ValueError("compute_v needs a grid starting at t=0")
    if not math.isclose(u.t1, jumps.T, rel_tol=1e-12):
        raise ValueError(f"horizon mismatch: u on [0, {u.t1}], jumps on [0, {jumps.T}]")
    v, prefix = compute_v_array(u.values[None, :], u.h, H, [jumps.times])
    return u.with_values(v[0], int(prefix[0]))


def compute_v_split(u: GridFunction, H: float, jumps: JumpPath, branches: np.ndarray):
    """High-H shift via the direct piece-by-piece sum, with its ``(A, B)`` rearrangement.

    ``branches[k]`` is the formula of ``u`` on its ``k``-th piece evaluated on
    the whole grid. Returns ``(v, A, B)`` with ``v = A + B``.
    """
    H = check_hurst(H)
    if not H > 0.5:
        raise ValueError("the piecewise split applies to H > 1/2")
    a = H - 0.5
    h = u.h
    d, prefix, (pa, pb) = marchaud_jump_reference(u.values, h, a, jumps.times, branches)
    t = u.times
    scale = t**a / kernel_norm(H)
    scale[:prefix] = h**a / kernel_norm(H)
    return u.with_values(scale * d, prefix), scale * pa, scale * pb


def girsanov_weight(v: GridFunction, w: WienerPath) -> float:
    """``Z_T = exp(-sum_j v_j dW_j - 1/2 sum_j v_j^2 h)`` with left-point sums over the cells."""
    return math.exp(_log_weight(v.values[None, :], w.increments[None, :], v.h)[0])


def _log_weight(v: np.ndarray, dw: np.ndarray, h: float) -> np.ndarray:
    vl = v[:, :-1]
    return -np.sum(vl * dw, axis=1) - 0.5 * h * np.sum(vl * vl, axis=1)


def _weak_chunk(b: DriftSpec, H: float, spec: CompoundPoissonSpec, x0: float, n: int, seed: int, m: int, sigma: float):
    T = spec.T
    h = T / (n - 1)
    t = np.linspace(0.0, T, n)
    paths, dw = sample_fbm_batch(H, T, n, m, "kernel-from-wiener", seed)
    jumps = [sample_jump_path(spec, seed + i) for i in range(m)]
    levels = np.stack([jp.value(t) for jp in jumps]) if m else np.zeros((0, n))
    x = x0 + sigma * paths - levels
    u = -b(t[None, :], x) / sigma
    v, prefix = compute_v_array(u, h, H, [jp.times for jp in jumps])
    log_w = _log_weight(v, dw, h)
    return x, v, prefix, dw, paths, jumps, log_w


def simulate_weak_batch(
    b: DriftSpec,
    H: float,
    spec: CompoundPoissonSpec,
    x0: float,
    m: int,
    seed: int = 0,
    n: int = 1025,
    sigma: float = 1.0,
    chunk: int = 256,
) -> WeakBatch:
    """``m`` weighted weak-solution paths with seeds ``seed .. seed+m-1``, processed in chunks."""
    H = check_hurst(H)
    b.check(H, spec.T)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    h = spec.T / (n - 1)
    x_t, log_w, max_v, int_v2 = [], [], [], []
    for start in range(0, m, chunk):
        k = min(chunk, m - start)
        x, v, _, _, _, _, lw = _weak_chunk(b, H, spec, x0, n, seed + start, k, sigma)
        x_t.append(x[:, -1])
        log_w.append(lw)
        max_v.append(np.max(np.abs(v), axis=1))
        int_v2.append(h * np.sum(v[:, :-1] ** 2, axis=1))
    cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0)  # noqa: E731
    lw = cat(log_w)
    if not np.all(np.isfinite(lw)):
        raise FloatingPointError("non-finite log-weight encountered")
    return WeakBatch(np.arange(seed, seed + m), cat(x_t), lw, cat(max_v), cat(int_v2))


def sample_weak_solution(
    b: DriftSpec, H: float, spec: CompoundPoissonSpec, x0: float, seed: int, n: int = 1025, sigma: float = 1.0
) -> WeightedSample:
    """One path ``X = x0 + sigma B^H - L`` with its weight ``Z_T``; noise from ``seed``."""
    H = check_hurst(H)
    b.check(H, spec.T)
    x, v, prefix, dw, paths, jumps, lw = _weak_chunk(b, H, spec, x0, n, seed, 1, sigma)
    grid = GridFunction(0.0, spec.T, x[0])
    return WeightedSample(
        x_path=grid,
        weight=math.exp(lw[0]),
        v_path=grid.with_values(v[0], int(prefix[0])),
        wiener=WienerPath(0.0, spec.T, dw[0]),
        jumps=jumps[0],
        log_weight=float(lw[0]),
    )


def weighted_expectation(samples, phi: Callable) -> tuple[float, float]:
    """Unnormalized importance-sampling estimate of ``E[phi(X_T)]`` and its standard error."""
    if isinstance(samples, WeakBatch):
        x_t, w = samples.x_T, samples.weights
    else:
        samples = list(samples)
        x_t = np.array([s.x_T for s in samples])
        w = np.array([s.weight for s in samples])
    if x_t.size == 0:
        raise ValueError("weighted_expectation needs at least one sample")
    vals = w * np.asarray(phi(x_t), dtype=float)
    se = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else float("inf")
    return float(np.mean(vals)), se


def novikov_diagnostic(
    b: DriftSpec,
    H: float,
    spec: CompoundPoissonSpec,
    x0: float,
    m: int,
    seed: int = 0,
    n: int = 1025,
    sigma: float = 1.0,
) -> NovikovResult:
    """Monte Carlo ``E exp(1/2 int_0^T v^2 dt)`` with a finiteness heuristic.

    ``stable`` requires every summand finite and the estimate from the first
    ``m // 10`` paths within a factor 3 of the full estimate.
    """
    if m < 100:
        raise ValueError("novikov_diagnostic needs m >= 100")
    batch = simulate_weak_batch(b, H, spec, x0, m, seed, n, sigma)
    with np.errstate(over="ignore"):
        vals = np.exp(0.5 * batch.int_v2)
    est = float(np.mean(vals))
    small = float(np.mean(vals[: m // 10]))
    se = float(np.std(vals, ddof=1) / math.sqrt(m))
    finite = bool(np.all(np.isfinite(vals)))
    stable = finite and small > 0 and 1 / 3 <= est / small <= 3
    return NovikovResult(est, se, small, stable)
