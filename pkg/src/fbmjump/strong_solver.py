"""Pathwise solutions of ``X_t = x0 + int_0^t b(s, X_s) ds + sigma B^H_t - L_t``.

Two schemes share one batched Euler core: direct left-point stepping, and the
monotone scheme that replaces ``b`` by ``min_{j=n..k} b_j`` for mollified
drifts ``b_j`` and passes to the limit first in ``k`` (decreasing paths) and
then in ``n`` (increasing paths).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .fbm import FbmPath
from .frac_calc import GridFunction
from .girsanov_weak import DriftSpec
from .point_process import JumpPath

__all__ = [
    "SolverConfig",
    "PathSolution",
    "LedgerEntry",
    "MOLLIFIERS",
    "SchemeViolation",
    "DivergenceError",
    "euler_batch",
    "solve_pathwise_euler",
    "truncate_drift",
    "mollify_drift",
    "monotone_batch",
    "monotone_solve",
    "monotone_solve_batch",
    "apriori_bound",
]

MOLLIFIERS = ("poly", "exp")
_QUAD_NODES = 96
MONO_TOL = 1e-8


class SchemeViolation(RuntimeError):
    """The monotonicity ledger broke beyond its tolerance."""


class DivergenceError(FloatingPointError):
    """Non-finite state during stepping."""


@dataclass(frozen=True)
class SolverConfig:
    """Grid size, truncation radius, mollifier scale and monotone-scheme depth.

    Mollifier ``j`` has width ``delta * 2**-j``; the scheme uses indices
    ``n_start .. n_max`` for ``n`` and ``k <= k_max``.
    """

    n: int = 4097
    R: float = 10.0
    delta: float = 0.25
    n_start: int = 0
    n_max: int = 6
    k_max: int = 6
    tolerance: float = 1e-2
    mollifier: str = "poly"

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 2:
            raise ValueError("n must be an integer >= 2")
        if not (self.R > 0 and self.delta > 0 and self.tolerance > 0):
            raise ValueError("R, delta and tolerance must be positive")
        if not 0 <= self.n_start <= self.n_max <= self.k_max:
            raise ValueError("need 0 <= n_start <= n_max <= k_max")
        if self.mollifier not in MOLLIFIERS:
            raise ValueError(f"mollifier must be one of {MOLLIFIERS}")


@dataclass(frozen=True)
class LedgerEntry:
    level: str  # "k" or "n"
    n: int
    k: int
    change: float  # sup |X_new - X_old|
    violation: float  # sup of the wrong-signed part


@dataclass(frozen=True)
class PathSolution:
    x_path: GridFunction
    fbm: FbmPath | None
    jumps: JumpPath | None
    scheme: str
    residual: float
    running_min: float = math.nan
    ledger: tuple = field(default_factory=tuple)
    drift_bound: float | None = None


def _jump_events(jump_list, t0: float, h: float, n: int):
    """Map cell index -> list of (row, time, size), cells ``(t_j, t_{j+1}]``.

    A jump on a node belongs to the cell ending there, so the node value is post-jump.
    """
    events: dict[int, list] = {}
    for r, jp in enumerate(jump_list):
        if jp is None:
            continue
        for s, u in zip(jp.times, jp.sizes):
            j = min(max(math.ceil((s - t0) / h - 1e-9) - 1, 0), n - 2)
            events.setdefault(j, []).append((r, float(s), float(u)))
    for j in events:
        events[j].sort(key=lambda e: (e[0], e[1]))
    return events


def euler_batch(drift, x0, t: np.ndarray, noise: np.ndarray, jump_list):
    """Left-point Euler for rows of ``noise`` (the additive path, zero at t0).

    Jumps are applied at their exact times; inside a cell the noise is
    linearly interpolated. Returns ``(X, running_min, levels)`` where
    ``running_min`` includes post-jump states between grid nodes and
    ``levels`` is ``L`` at the nodes.
    """
    noise = np.atleast_2d(noise)
    m, n = noise.shape
    h = t[1] - t[0]
    x = np.empty((m, n))
    x[:, 0] = x0
    run_min = x[:, 0].copy()
    levels = np.zeros((m, n))
    events = _jump_events(jump_list, t[0], h, n)
    dn = np.diff(noise, axis=1)
    for j in range(n - 1):
        cur = x[:, j]
        nxt = cur + drift(t[j], cur) * h + dn[:, j]
        evs = events.get(j)
        if evs:
            for r in sorted({e[0] for e in evs}):
                xc, tc, bc = cur[r], t[j], noise[r, j]
                for _, s, size in (e for e in evs if e[0] == r):
                    bs = noise[r, j] + (s - t[j]) / h * dn[r, j]
                    xc = xc + float(drift(tc, np.array([xc]))[0]) * (s - tc) + (bs - bc)
                    xc -= size
                    run_min[r] = min(run_min[r], xc)
                    levels[r, j + 1 :] += size
                    tc, bc = s, bs
                nxt[r] = xc + float(drift(tc, np.array([xc]))[0]) * (t[j + 1] - tc) + (noise[r, j + 1] - bc)
        if not np.all(np.isfinite(nxt)):
            raise DivergenceError(f"non-finite state at step {j + 1}")
        x[:, j + 1] = nxt
        np.minimum(run_min, nxt, out=run_min)
    return x, run_min, levels


def _residual(drift, x0, t, x, noise, levels) -> np.ndarray:
    """``max_j |X_j - x0 - trapezoid(int b) - noise_j + L_j|`` per row."""
    h = t[1] - t[0]
    bvals = drift(t[None, :], x)
    integral = np.zeros_like(x)
    integral[:, 1:] = np.cumsum(0.5 * h * (bvals[:, 1:] + bvals[:, :-1]), axis=1)
    return np.max(np.abs(x - x0 - integral - noise + levels), axis=1)


def _check_grid(fbm: FbmPath, jumps: JumpPath | None, cfg: SolverConfig | None) -> None:
    if fbm.path.t0 != 0.0:
        raise ValueError("paths must start at t=0")
    if jumps is not None and not math.isclose(jumps.T, fbm.T, rel_tol=1e-12):
        raise ValueError("fBM and jump horizons differ")
    if cfg is not None and cfg.n != fbm.path.n:
        raise ValueError(f"config grid n={cfg.n} does not match the fBM grid n={fbm.path.n}")


def solve_pathwise_euler(
    b: DriftSpec, fbm: FbmPath, jumps: JumpPath | None, x0: float, cfg: SolverConfig | None = None, sigma: float = 1.0
) -> PathSolution:
    """Explicit Euler on the fBM grid with exact jump times."""
    _check_grid(fbm, jumps, cfg)
    t = fbm.times
    noise = sigma * fbm.values[None, :]
    x, run_min, levels = euler_batch(b, x0, t, noise, [jumps])
    res = _residual(b, x0, t, x, noise, levels)
    return PathSolution(fbm.path.with_values(x[0]), fbm, jumps, "euler", float(res[0]), float(run_min[0]), (), b.bound)


def _grid_sup(b: DriftSpec, R: float, T: float) -> float:
    tt = np.linspace(0.0, T, 17)[:, None]
    xx = np.linspace(-R, R, 4001)[None, :]
    return float(np.max(np.abs(b(tt, xx))))


def truncate_drift(b: DriftSpec, R: float, T: float = 1.0) -> DriftSpec:
    """``b_R(t, x) = b(t, clip(x, -R, R))`` with its uniform bound recorded."""
    if not R > 0:
        raise ValueError("truncation radius must be positive")
    fn = b.b
    bound = _grid_sup(b, R, T)
    if b.bound is not None:
        bound = min(bound, b.bound)
    return replace(b, b=lambda t, x: fn(t, np.clip(x, -R, R)), bound=bound, name=f"{b.name}|R={R:g}")


@lru_cache(maxsize=None)
def _mollifier_rule(family: str):
    z, w = np.polynomial.legendre.leggauss(_QUAD_NODES)
    if family == "poly":
        dens = (1.0 - z**2) ** 3
    elif family == "exp":
        dens = np.exp(-1.0 / (1.0 - z**2))
    else:
        raise ValueError(f"unknown mollifier {family!r}; choose from {MOLLIFIERS}")
    wts = w * dens
    wts /= wts.sum()
    z.setflags(write=False)
    wts.setflags(write=False)
    return z, wts


def _mollified_values(fn, t, x: np.ndarray, deltas: np.ndarray, family: str) -> np.ndarray:
    """``int b(t, x - d z) rho(z) dz`` for every ``d`` in ``deltas``; shape ``x.shape + (len(deltas),)``."""
    z, wts = _mollifier_rule(family)
    pts = x[..., None, None] - deltas[:, None] * z[None, :]
    vals = np.asarray(fn(np.asarray(t, dtype=float)[..., None, None] if np.ndim(t) else t, pts), dtype=float)
    return vals @ wts


def mollify_drift(b: DriftSpec, delta: float, family: str = "poly") -> DriftSpec:
    """Convolution in ``x`` with a compactly supported bump of half-width ``delta``.

    ``family="poly"`` uses ``(1 - z^2)^3``, ``family="exp"`` the smooth
    ``exp(-1/(1 - z^2))``; both integrated by fixed Gauss-Legendre nodes and
    normalized to unit mass, so constants are reproduced exactly.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    fn = b.b
    _mollifier_rule(family)
    ds = np.array([float(delta)])
    return replace(
        b,
        b=lambda t, x: _mollified_values(fn, t, np.asarray(x, dtype=float), ds, family)[..., 0],
        name=f"{b.name}*{family}({delta:g})",
    )


def apriori_bound(x0: float, noise_sup: float, bound: float, T: float, jump_variation: float) -> float:
    """``(|x0| + ||B||_inf + C T + |L|_T) e^{C T}``."""
    return (abs(x0) + noise_sup + bound * T + jump_variation) * math.exp(bound * T)


def monotone_batch(b: DriftSpec, x0: float, t: np.ndarray, noise: np.ndarray, jump_list, cfg: SolverConfig):
    """Monotone scheme on rows of ``noise``; ``b`` must already be bounded.

    For each ``n`` the drift ``min_{j=n..k} b_j`` is refined in ``k`` until
    the sup change stays below the tolerance twice in a row, then ``n`` is
    increased under the same rule. Returns ``(X, run_min, levels, ledger)``.
    """
    deltas_all = cfg.delta * 2.0 ** -np.arange(cfg.k_max + 1)
    fn = b.b

    def solve(n_idx: int, k_idx: int):
        ds = deltas_all[n_idx : k_idx + 1]

        def drift(tt, xx):
            return _mollified_values(fn, tt, np.asarray(xx, dtype=float), ds, cfg.mollifier).min(axis=-1)

        return euler_batch(drift, x0, t, noise, jump_list)

    ledger: list[LedgerEntry] = []
    prev_n = None
    calm_n = 0
    for n_idx in range(cfg.n_start, cfg.n_max + 1):
        cur = solve(n_idx, n_idx)
        last_k = n_idx
        calm = 0
        for k_idx in range(n_idx + 1, cfg.k_max + 1):
            nxt = solve(n_idx, k_idx)
            diff = nxt[0] - cur[0]
            entry = LedgerEntry("k", n_idx, k_idx, float(np.max(np.abs(diff))), float(max(np.max(diff), 0.0)))
            ledger.append(entry)
            if entry.violation > MONO_TOL:
                raise SchemeViolation(f"k-step {k_idx} at n={n_idx} raised the path by {entry.violation:.3g}")
            cur = nxt
            last_k = k_idx
            calm = calm + 1 if entry.change < cfg.tolerance else 0
            if calm >= 2:
                break
        if prev_n is not None:
            diff = cur[0] - prev_n[0]
            entry = LedgerEntry("n", n_idx, last_k, float(np.max(np.abs(diff))), float(max(-np.min(diff), 0.0)))
            ledger.append(entry)
            if entry.violation > cfg.tolerance:
                raise SchemeViolation(f"n-step {n_idx} lowered the path by {entry.violation:.3g}")
            calm_n = calm_n + 1 if entry.change < cfg.tolerance else 0
        prev_n = cur
        if calm_n >= 2:
            break
    x, run_min, levels = prev_n
    return x, run_min, levels, tuple(ledger)


def monotone_solve_batch(b: DriftSpec, x0: float, t: np.ndarray, noise: np.ndarray, jump_list, cfg: SolverConfig):
    """Monotone scheme on rows of ``noise`` with radius doubling.

    When any path reaches ``|X| >= R`` the radius doubles and the batch is
    solved again; the two runs must agree up to each path's first exit from
    ``[-R, R]``. Returns ``(X, run_min, levels, ledger, truncated drift)``.
    """
    R = cfg.R
    prev = None
    for _ in range(8):
        bR = truncate_drift(b, R, float(t[-1] - t[0]))
        x, run_min, levels, ledger = monotone_batch(bR, x0, t, noise, jump_list, replace(cfg, R=R))
        if prev is not None:
            for row in range(x.shape[0]):
                exit_idx = np.nonzero(np.abs(prev[row]) >= R / 2)[0]
                stop = exit_idx[0] if exit_idx.size else t.size
                gap = float(np.max(np.abs(x[row, :stop] - prev[row, :stop]), initial=0.0))
                if gap > 2 * cfg.tolerance:
                    raise SchemeViolation(f"radius {R / 2:g} and {R:g} disagree by {gap:.3g} before the exit time")
        if np.max(np.abs(x)) < R:
            return x, run_min, levels, ledger, bR
        prev = x
        R *= 2
    raise DivergenceError("path keeps leaving the truncation window")


def monotone_solve(
    b: DriftSpec, fbm: FbmPath, jumps: JumpPath | None, x0: float, cfg: SolverConfig, sigma: float = 1.0
) -> PathSolution:
    """Monotone mollifier scheme for ``b`` truncated at radius ``R`` (doubled while the path exits)."""
    _check_grid(fbm, jumps, cfg)
    t = fbm.times
    noise = sigma * fbm.values[None, :]
    x, run_min, levels, ledger, bR = monotone_solve_batch(b, x0, t, noise, [jumps], cfg)
    res = _residual(bR, x0, t, x, noise, levels)
    return PathSolution(
        fbm.path.with_values(x[0]), fbm, jumps, "monotone", float(res[0]), float(run_min[0]), ledger, bR.bound
    )
