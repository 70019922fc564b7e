"""Transition density of the drift-free solution and the Krylov occupation bound."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, signal, stats

from .fbm import check_hurst, sample_fbm_batch
from .girsanov_weak import DriftSpec, simulate_weak_batch
from .point_process import CompoundPoissonSpec, UnsupportedJumpLaw, sample_jump_path
from .strong_solver import euler_batch

__all__ = [
    "DensityParams",
    "KrylovConstants",
    "KrylovReport",
    "transition_density",
    "density_mass",
    "poisson_truncation",
    "krylov_J",
    "krylov_constants",
    "krylov_check",
    "krylov_rhs_norm",
    "drift_free_samples",
    "histogram_l1",
]

TAIL = 1e-12


def poisson_truncation(mean: float, tail: float = TAIL) -> int:
    """Smallest ``N`` with ``P(Poisson(mean) > N) < tail``."""
    if mean <= 0:
        return 0
    n = int(stats.poisson.isf(tail, mean))
    while stats.poisson.sf(n, mean) >= tail:
        n += 1
    return n


@dataclass(frozen=True)
class DensityParams:
    """Law of ``x0 + sigma B^H_t - L_t`` at a fixed time ``t``."""

    t: float
    x0: float
    H: float
    spec: CompoundPoissonSpec | None
    sigma: float = 1.0
    n_trunc: int | None = None

    def __post_init__(self) -> None:
        check_hurst(self.H)
        if not self.t > 0:
            raise ValueError("t must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.n_trunc is None:
            mean = self.spec.lam * self.t if self.spec is not None else 0.0
            object.__setattr__(self, "n_trunc", poisson_truncation(mean))

    @property
    def gauss_var(self) -> float:
        return self.sigma**2 * self.t ** (2 * self.H)

    def poisson_weights(self) -> np.ndarray:
        if self.spec is None:
            return np.ones(1)
        return stats.poisson.pmf(np.arange(self.n_trunc + 1), self.spec.lam * self.t)


def _gaussian_mixture(p: DensityParams, y: np.ndarray) -> np.ndarray:
    law = p.spec.jumps
    w = p.poisson_weights()
    n = np.arange(w.size)
    if law.family == "gaussian":
        mu, s = law.params["mean"], law.params["std"]
        means = p.x0 - n * mu
        var = p.gauss_var + n * s**2
        return np.sum(w * stats.norm.pdf(y[:, None], means, np.sqrt(var)), axis=1)
    if law.family == "constant":
        means = p.x0 - n * law.params["value"]
        return np.sum(w * stats.norm.pdf(y[:, None], means, math.sqrt(p.gauss_var)), axis=1)
    # two-point: S_n = k a + (n - k) b with k ~ Binomial(n, p)
    a, b, q = law.params["a"], law.params["b"], law.params["p"]
    out = np.zeros_like(y)
    sd = math.sqrt(p.gauss_var)
    for nn, wn in zip(n, w):
        k = np.arange(nn + 1)
        wk = stats.binom.pmf(k, nn, q)
        means = p.x0 - (k * a + (nn - k) * b)
        out += wn * np.sum(wk * stats.norm.pdf(y[:, None], means, sd), axis=1)
    return out


def _lattice_density(p: DensityParams, y: np.ndarray) -> np.ndarray:
    """Exponential jumps: Gaussian plus lattice FFT convolutions of the jump density."""
    rate = p.spec.jumps.params["rate"]
    w = p.poisson_weights()
    sd = math.sqrt(p.gauss_var)
    n_max = w.size - 1
    # support of the largest convolution power, padded by its own tail
    hi = (n_max + 12 * math.sqrt(max(n_max, 1)) + 30) / rate
    dz = min(sd / 40, 1 / (40 * rate))
    z = np.arange(0.0, hi + dz, dz)
    f = rate * np.exp(-rate * z)
    f[0] *= 0.5  # trapezoid end weight keeps the lattice mass at one
    g = f * dz
    g /= g.sum()
    s_mass = np.zeros_like(z)
    power = np.zeros_like(z)
    power[0] = 1.0
    for k in range(n_max + 1):
        if k:
            power = signal.fftconvolve(power, g)[: z.size]
            power = np.clip(power, 0.0, None)
        s_mass += w[k] * power
    # density of x0 - S at y: sum over lattice atoms of Gaussian kernels
    atoms = p.x0 - z
    keep = s_mass > 1e-300
    out = np.zeros_like(y)
    for start in range(0, y.size, 512):
        yy = y[start : start + 512]
        out[start : start + 512] = stats.norm.pdf(yy[:, None], atoms[keep], sd) @ s_mass[keep]
    return out


def transition_density(p: DensityParams, y) -> np.ndarray | float:
    """Density of ``x0 + sigma B^H_t - L_t`` at ``y``, including the zero-jump term."""
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    if p.spec is None:
        out = stats.norm.pdf(y_arr, p.x0, math.sqrt(p.gauss_var))
    elif p.spec.jumps.family in ("gaussian", "constant", "two-point"):
        out = _gaussian_mixture(p, y_arr)
    elif p.spec.jumps.family == "exponential":
        out = _lattice_density(p, y_arr)
    else:  # pragma: no cover - families are closed
        raise UnsupportedJumpLaw(p.spec.jumps.family)
    out = np.maximum(out, 0.0)
    return out if np.ndim(y) else float(out[0])


def _support(p: DensityParams) -> tuple[float, float]:
    sd = math.sqrt(p.gauss_var)
    if p.spec is None:
        return p.x0 - 12 * sd, p.x0 + 12 * sd
    law = p.spec.jumps
    n = p.n_trunc
    spread = 12 * math.sqrt(p.gauss_var + n * law.second_moment) + n * abs(law.mean)
    lo = p.x0 - spread - 12 * sd - (n * 40 / law.params["rate"] if law.family == "exponential" else 0.0)
    return lo, p.x0 + spread + 12 * sd


def density_mass(p: DensityParams) -> float:
    """``int p_t(y) dy`` by adaptive quadrature over the effective support."""
    lo, hi = _support(p)
    pts = np.linspace(lo, hi, 65)
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        val, _ = integrate.quad(lambda yy: transition_density(p, yy), a, b, epsabs=1e-13, epsrel=1e-11, limit=200)
        total += val
    return total


def drift_free_samples(p: DensityParams, m: int, seed: int = 0, n_grid: int = 33, method: str = "circulant") -> np.ndarray:
    """``x0 + sigma B^H_t - L_t`` from full path samplers (paths on ``[0, t]``, seeds ``seed + i``)."""
    out = np.empty(m)
    spec = p.spec
    for start in range(0, m, 4096):
        k = min(4096, m - start)
        paths, _ = sample_fbm_batch(p.H, p.t, n_grid, k, method, seed + start)
        out[start : start + k] = p.x0 + p.sigma * paths[:, -1]
        if spec is not None:
            local = CompoundPoissonSpec(spec.lam, spec.jumps, p.t)
            out[start : start + k] -= [sample_jump_path(local, seed + start + i).partial_sums[-1] for i in range(k)]
    return out


def histogram_l1(p: DensityParams, samples: np.ndarray, bins: int = 100) -> float:
    """L1 distance between the empirical bin masses and the density's bin masses.

    Bins span the 0.1% to 99.9% sample quantiles; the two tails count as
    extra bins.
    """
    lo, hi = np.quantile(samples, [0.001, 0.999])
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(samples, edges)
    emp = counts / samples.size
    # Gauss-Legendre per bin for the model masses
    z, wq = np.polynomial.legendre.leggauss(8)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    pts = (mid[:, None] + half[:, None] * z[None, :]).ravel()
    vals = np.asarray(transition_density(p, pts)).reshape(bins, z.size)
    model = (vals @ wq) * half
    emp_tail = 1.0 - emp.sum()
    model_tail = max(1.0 - model.sum(), 0.0)
    return float(np.abs(emp - model).sum() + abs(emp_tail - model_tail))


# -- Krylov ------------------------------------------------------------------


@dataclass(frozen=True)
class KrylovConstants:
    alpha: float
    beta: float
    gamma: float
    gamma_p: float
    J: float
    K: float
    K_stderr: float
    G: float

    @property
    def G_conservative(self) -> float:
        """``G`` with ``K`` raised by two standard errors."""
        return self.J ** (1 / (self.gamma_p * self.beta)) * (self.K + 2 * self.K_stderr) ** (1 / self.alpha)


@dataclass(frozen=True)
class KrylovReport:
    g_id: str
    lhs: float
    stderr: float
    rhs: float

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + 3 * self.stderr

    def to_csv_row(self):
        return (self.g_id, self.lhs, self.stderr, self.rhs, int(self.passed))


def _conjugate(p: float) -> float:
    if not p > 1:
        raise ValueError(f"Hölder exponent must exceed 1, got {p}")
    return p / (p - 1)


def krylov_J(H: float, T: float, gamma_p: float) -> float:
    """``(2 pi)^{1/2 - g'/2} T^{1 + (1-g')H} / (sqrt(g') (1 + (1-g')H))``."""
    e = 1 + (1 - gamma_p) * H
    if not e > 0:
        raise ValueError("need 1 + (1 - gamma')H > 0")
    return (2 * math.pi) ** (0.5 - gamma_p / 2) * T**e / (math.sqrt(gamma_p) * e)


def krylov_constants(H: float, T: float, gamma: float, alpha: float, v_int_sq) -> KrylovConstants:
    """``J`` in closed form, ``K = (E exp(2 alpha^2 int v^2))^{1/2}`` by Monte Carlo, and ``G``.

    ``v_int_sq`` holds ``int_0^T v^2 dt`` per tilted sample (or GridFunction
    shift paths, which are integrated by left-point sums).
    """
    H = check_hurst(H)
    if not gamma > 1 + H:
        raise ValueError(f"need gamma > 1 + H, got gamma={gamma}, H={H}")
    beta = _conjugate(alpha)
    gamma_p = _conjugate(gamma)
    J = krylov_J(H, T, gamma_p)
    vals = []
    for v in v_int_sq:
        if hasattr(v, "values"):
            vals.append(v.h * float(np.sum(v.values[:-1] ** 2)))
        else:
            vals.append(float(v))
    vals = np.asarray(vals)
    if vals.size == 0:
        raise ValueError("need at least one shift sample")
    e = np.exp(2 * alpha**2 * vals)
    mean = float(e.mean())
    se_mean = float(e.std(ddof=1) / math.sqrt(e.size)) if e.size > 1 else 0.0
    K = math.sqrt(mean)
    K_se = se_mean / (2 * K)
    G = J ** (1 / (gamma_p * beta)) * K ** (1 / alpha)
    return KrylovConstants(alpha, beta, gamma, gamma_p, J, K, K_se, G)


def krylov_rhs_norm(g: Callable, T: float, exponent: float, x_range: tuple[float, float]) -> float:
    """``(int_0^T int g(t, y)^p dy dt)^{1/p}`` over the support box of ``g``."""
    lo, hi = x_range
    val, _ = integrate.dblquad(
        lambda y, t: float(g(np.array(t), np.array(y))) ** exponent, 0.0, T, lo, hi, epsabs=1e-10, epsrel=1e-8
    )
    return val ** (1 / exponent)


def krylov_check(
    b: DriftSpec,
    H: float,
    spec: CompoundPoissonSpec,
    gs: dict,
    m: int,
    seed: int = 0,
    x0: float = 0.0,
    n: int = 513,
    constants: KrylovConstants | None = None,
    gamma: float = 2.0,
    alpha: float = 2.0,
) -> tuple[list[KrylovReport], KrylovConstants]:
    """Compare ``E int_0^T g(t, X_t) dt`` over strong-solution paths with ``G ||g||_{beta gamma}``.

    ``gs`` maps an id to ``(g, (y_lo, y_hi))`` with ``g`` vectorized and
    supported in the given ``y`` box. ``G`` is computed from tilted shift
    samples of the weak construction with ``K`` raised by two standard
    errors.
    """
    T = spec.T
    if constants is None:
        batch = simulate_weak_batch(b, H, spec, x0, m, seed + 10_000_000, n)
        constants = krylov_constants(H, T, gamma, alpha, batch.int_v2)
    G = constants.G_conservative
    p = constants.beta * constants.gamma
    t = np.linspace(0.0, T, n)
    h = t[1] - t[0]
    sums = {key: np.zeros(m) for key in gs}
    for start in range(0, m, 1024):
        k = min(1024, m - start)
        paths, _ = sample_fbm_batch(H, T, n, k, "circulant", seed + start)
        jumps = [sample_jump_path(spec, seed + start + i) for i in range(k)]
        x, _, _ = euler_batch(b, x0, t, paths, jumps)
        for key, (g, _) in gs.items():
            vals = np.asarray(g(t[None, :], x), dtype=float)
            if np.any(vals < 0):
                raise ValueError(f"g {key!r} takes negative values")
            sums[key][start : start + k] = h * (0.5 * vals[:, 0] + vals[:, 1:-1].sum(axis=1) + 0.5 * vals[:, -1])
    reports = []
    for key, (g, box) in gs.items():
        occ = sums[key]
        norm = krylov_rhs_norm(g, T, p, box)
        reports.append(KrylovReport(key, float(occ.mean()), float(occ.std(ddof=1) / math.sqrt(m)), G * norm))
    return reports, constants
