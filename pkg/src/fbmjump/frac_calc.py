"""Riemann–Liouville integrals and Marchaud derivatives on uniform grids.

All operators use product integration: the singular factor ``(x - t)^p`` is
integrated exactly over every grid cell against a simple interpolant of the
integrand. Fractional integrals use the left-constant (càdlàg) interpolant,
Marchaud derivatives use the piecewise-linear one, which is what makes the
``eps -> 0`` limit finite on the grid.

The ``*_array`` functions work on the last axis of an ndarray so that Monte
Carlo code can push whole batches of paths through at once; the GridFunction
wrappers are thin shells around them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np
from scipy import signal, special

__all__ = [
    "GridFunction",
    "frac_integral_left",
    "frac_integral_right",
    "marchaud_derivative",
    "weight_pow",
    "rl_integral_array",
    "marchaud_array",
    "causal_convolve",
]

@dataclass(frozen=True)
class GridFunction:
    """A real function sampled on ``n`` equispaced points of ``[t0, t1]``.

    Between grid points the function takes its left (càdlàg) value.
    ``prefix`` counts leading entries that were filled by one-sided
    continuation rather than computed, so callers can skip them.
    """

    t0: float
    t1: float
    values: np.ndarray
    prefix: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValueError("GridFunction values must be one-dimensional")
        if vals.size < 2:
            raise ValueError("GridFunction needs at least 2 grid points")
        if not (np.isfinite(self.t0) and np.isfinite(self.t1)) or self.t1 <= self.t0:
            raise ValueError(f"invalid interval [{self.t0}, {self.t1}]")
        if not np.all(np.isfinite(vals)):
            raise ValueError("GridFunction values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "t1", float(self.t1))
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def h(self) -> float:
        return (self.t1 - self.t0) / (self.n - 1)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.n)

    @classmethod
    def from_callable(cls, fn, t0: float, t1: float, n: int) -> GridFunction:
        return cls(t0, t1, np.asarray(fn(np.linspace(t0, t1, n)), dtype=float) * np.ones(n))

    def with_values(self, values, prefix: int = 0) -> GridFunction:
        return GridFunction(self.t0, self.t1, values, prefix)

    def reversed(self) -> GridFunction:
        return GridFunction(self.t0, self.t1, self.values[::-1].copy())

    def __call__(self, t):
        """Evaluate with the càdlàg convention (left value between nodes)."""
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t0) or np.any(t > self.t1 * (1 + 1e-14) + 1e-300):
            raise ValueError("evaluation time outside the grid interval")
        idx = np.floor((t - self.t0) / self.h + 1e-9).astype(int)
        return self.values[np.clip(idx, 0, self.n - 1)]

    def to_csv_rows(self):
        return np.column_stack([self.times, self.values])


def _check_alpha(alpha: float, allow_one: bool) -> float:
    alpha = float(alpha)
    upper_ok = alpha <= 1.0 if allow_one else alpha < 1.0
    if not (alpha > 0.0 and upper_ok):
        raise ValueError(f"fractional order alpha={alpha} outside (0, 1{']' if allow_one else ')'}")
    return alpha


def causal_convolve(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """``out[..., j] = sum_{m=0}^{j} kernel[m] * x[..., j-m]`` on the last axis."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    k = np.asarray(kernel, dtype=float)[:n]
    if n <= 64:
        out = np.zeros_like(x)
        for m in range(k.size):
            if k[m] != 0.0:
                out[..., m:] += k[m] * x[..., : n - m]
        return out
    k = k.reshape((1,) * (x.ndim - 1) + (-1,))
    return signal.fftconvolve(x, k, axes=-1)[..., :n]


def _cell_weight_average(times: np.ndarray, h: float, beta: float) -> np.ndarray:
    """Average of ``t^beta`` over each cell ``[t_i, t_i + h]``."""
    left = times[:-1]
    right = left + h
    if beta == -1.0:
        return (np.log(right) - np.log(left)) / h
    return (right ** (1.0 + beta) - left ** (1.0 + beta)) / ((1.0 + beta) * h)


def rl_integral_array(
    values: np.ndarray,
    h: float,
    alpha: float,
    t0: float = 0.0,
    weight: float = 0.0,
    interp: str = "left",
) -> np.ndarray:
    """Left Riemann–Liouville integral of ``t^weight * values`` at every node.

    ``interp="left"`` treats ``values`` as left-constant on each cell (the
    càdlàg reading of a grid function); ``"linear"`` interpolates nodes
    linearly, which suits integrands known to be continuous. With a nonzero
    ``weight`` and ``t0 == 0`` the first cell is integrated exactly against
    the kernel (incomplete beta), so negative weights such as ``t^{-0.3}``
    are harmless.
    """
    alpha = _check_alpha(alpha, allow_one=True)
    if interp not in ("left", "linear"):
        raise ValueError(f"unknown interpolation {interp!r}")
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    if weight != 0.0 and t0 < 0.0:
        raise ValueError("power weights need a nonnegative time axis")
    times = t0 + h * np.arange(n)
    singular = weight != 0.0 and t0 == 0.0
    m = np.arange(n, dtype=float)
    scale = h**alpha / special.gamma(alpha)
    res = np.zeros_like(values)
    if interp == "left":
        kern = np.zeros(n)
        kern[1:] = scale * (m[1:] ** alpha - m[:-1] ** alpha) / alpha
        cells = values[..., :-1]
        if weight != 0.0:
            cells = cells * _cell_weight_average(times, h, weight)
        if singular:
            cells = cells.copy()
            cells[..., 0] = 0.0
        res[..., 1:] = causal_convolve(cells, kern[1:])
        if singular:
            res[..., 1:] += values[..., :1] * _first_cell_power(times[1:], h, alpha, weight)
        return res
    g = values
    if weight != 0.0:
        with np.errstate(divide="ignore"):
            g = values * np.where(times > 0, times, 1.0) ** weight
    # linear cell at distance m: G = g_i (1-m+s) + g_{i+1} (m-s), s in [m-1, m]
    p1 = np.zeros(n)
    q1 = np.zeros(n)
    p1[1:] = (m[1:] ** alpha - m[:-1] ** alpha) / alpha
    q1[1:] = (m[1:] ** (alpha + 1) - m[:-1] ** (alpha + 1)) / (alpha + 1)
    a_tab = scale * ((1.0 - m) * p1 + q1)
    b_tab = scale * (m * p1 - q1)
    left = g[..., :-1].copy()
    right = g[..., 1:].copy()
    if singular:
        left[..., 0] = 0.0
        right[..., 0] = 0.0
    res[..., 1:] = causal_convolve(left, a_tab[1:]) + causal_convolve(right, b_tab[1:])
    if singular:
        x = times[1:]
        i0 = _first_cell_power(x, h, alpha, weight)
        i1 = _first_cell_power(x, h, alpha, weight + 1.0) / h
        res[..., 1:] += values[..., :1] * (i0 - i1) + values[..., 1:2] * i1
    return res


def _first_cell_power(x: np.ndarray, h: float, alpha: float, gamma_: float) -> np.ndarray:
    """``∫_0^h r^gamma (x - r)^{alpha-1} dr / Γ(alpha)`` for nodes ``x >= h``."""
    return (
        x ** (alpha + gamma_)
        * special.beta(gamma_ + 1.0, alpha)
        * special.betainc(gamma_ + 1.0, alpha, np.minimum(h / x, 1.0))
        / special.gamma(alpha)
    )


def _moments(lo: np.ndarray, hi: np.ndarray, alpha: float):
    """``P = int sigma^{-1-alpha}`` and ``Q = int sigma^{-alpha}`` over [lo, hi]."""
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(lo > 0, (lo ** (-alpha) - hi ** (-alpha)) / alpha, np.inf)
    q = (hi ** (1.0 - alpha) - lo ** (1.0 - alpha)) / (1.0 - alpha)
    return p, q


def _unit_moments(n: int, alpha: float, e: float):
    """Per-distance tables for cells ``sigma in [m-1, m]`` clipped below at ``e``.

    Returns P, A, B indexed by m (entry 0 unused) such that a linear
    interpolant with left value g_i and right value g_{i+1} on the cell at
    distance m integrates to ``g_i*A[m] + g_{i+1}*B[m]`` against sigma^{-1-alpha}.
    """
    m = np.arange(n, dtype=float)
    lo = np.maximum(m - 1.0, e)
    active = m > max(e, 0.0)
    active[0] = False
    lo_a, hi_a = lo[active], m[active]
    p = np.zeros(n)
    a = np.zeros(n)
    b = np.zeros(n)
    # cancellation-free differences of nearby powers
    with np.errstate(divide="ignore", invalid="ignore"):
        full = lo_a == hi_a - 1.0
        pp, qq = _moments(lo_a, hi_a, alpha)
        inv = 1.0 / hi_a
        pp_full = hi_a ** (-alpha) * np.expm1(-alpha * np.log1p(-inv)) / alpha
        qq_full = hi_a ** (1.0 - alpha) * -np.expm1((1.0 - alpha) * np.log1p(-inv)) / (1.0 - alpha)
        pp = np.where(full & (lo_a > 0), pp_full, pp)
        qq = np.where(full, qq_full, qq)
        p[active] = pp
        a[active] = (1.0 - hi_a) * pp + qq
        b[active] = hi_a * pp - qq
    return p, a, b


def power_cell_moment(c, x, alpha: float, gamma_: float):
    """``∫_0^c r^gamma (x - r)^{-1-alpha} dr`` for ``0 < c < x`` (closed form via 2F1)."""
    c = np.asarray(c, dtype=float)
    x = np.asarray(x, dtype=float)
    return (
        x ** (-1.0 - alpha)
        * c ** (gamma_ + 1.0)
        / (gamma_ + 1.0)
        * special.hyp2f1(1.0 + alpha, gamma_ + 1.0, gamma_ + 2.0, c / x)
    )


def singular_cell_integral(f0, f1, c, x, h: float, alpha: float, beta: float):
    """``∫_0^c r^beta p(r) (x - r)^{-1-alpha} dr`` with p linear from f0 (r=0) to f1 (r=h)."""
    m0 = power_cell_moment(c, x, alpha, beta)
    m1 = power_cell_moment(c, x, alpha, beta + 1.0) / h
    return np.asarray(f0) * (m0 - m1) + np.asarray(f1) * m1


def marchaud_array(
    values: np.ndarray,
    h: float,
    alpha: float,
    t0: float = 0.0,
    eps: float = 0.0,
    weight: float = 0.0,
) -> tuple[np.ndarray, int]:
    """Marchaud derivative of ``g = t^weight * values`` at every node.

    Returns the derivative and the number of leading entries set by
    continuation. ``eps == 0`` is the limit of the piecewise-linear rule,
    which stays finite because the linear interpolant is Lipschitz.
    """
    alpha = _check_alpha(alpha, allow_one=False)
    eps = float(eps)
    if eps < 0.0 or (0.0 < eps < h * (1.0 - 1e-12)):
        raise ValueError(f"eps={eps} must be 0 or at least the grid spacing {h}")
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    times = t0 + h * np.arange(n)
    singular = weight != 0.0 and t0 == 0.0
    if weight != 0.0 and t0 < 0.0:
        raise ValueError("power weights need a nonnegative time axis")
    g = values.copy()
    if weight != 0.0:
        with np.errstate(divide="ignore"):
            wt = np.where(times > 0, times, 1.0) ** weight
        g = values * wt
        if singular:
            g[..., 0] = 0.0
    e = eps / h
    p, a, b = _unit_moments(n, alpha, e)
    scale = h ** (-alpha)
    if eps == 0.0:
        q1 = 1.0 / (1.0 - alpha)
        p[1] = a[1] = b[1] = 0.0
    # cells are indexed by their left node i = j - m; drop cell 0 if singular
    left = g[..., :-1].copy()
    right = g[..., 1:].copy()
    if singular:
        left[..., 0] = 0.0
        right[..., 0] = 0.0
    conv = causal_convolve(left, a[1:]) + causal_convolve(right, b[1:])
    ker_sum = np.cumsum(p)
    s = np.zeros_like(g)
    s[..., 1:] = scale * (g[..., 1:] * ker_sum[1:] - conv)
    if eps == 0.0:
        s[..., 1:] += scale * q1 * (g[..., 1:] - g[..., :-1])
    if singular and n > 2:
        j = np.arange(2, n)
        upper = np.minimum(h, times[j] - eps - t0)
        ok = upper > 0
        fc = np.zeros(values.shape[:-1] + (n - 2,))
        if np.any(ok):
            fc[..., ok] = singular_cell_integral(
                values[..., :1], values[..., 1:2], upper[ok], times[j][ok], h, alpha, weight
            )
        s[..., 2:] -= fc
    out = np.zeros_like(g)
    with np.errstate(divide="ignore"):
        out[..., 1:] = g[..., 1:] / (special.gamma(1.0 - alpha) * (times[1:] - t0) ** alpha)
    out += alpha / special.gamma(1.0 - alpha) * s
    # continuation at the left end: derivative of the locally frozen function
    # evaluated at the second node (uses only values up to the node itself)
    n_cont = 2 if singular else 1
    for j in range(min(n_cont, n)):
        if singular:
            coef = special.gamma(1.0 + weight) / special.gamma(1.0 + weight - alpha)
            out[..., j] = values[..., j] * coef * h ** (weight - alpha)
        else:
            out[..., j] = g[..., j] / (special.gamma(1.0 - alpha) * h**alpha)
    return out, n_cont


def frac_integral_left(phi: GridFunction, alpha: float) -> GridFunction:
    """``(I^alpha_{t0+} phi)(x_j)`` by product integration; ``alpha = 1`` is the running integral."""
    return phi.with_values(rl_integral_array(phi.values, phi.h, alpha, phi.t0))


def frac_integral_right(phi: GridFunction, alpha: float) -> GridFunction:
    """``(I^alpha_{t1-} phi)(x_j)``, defined through time reversal of the left integral."""
    rev = rl_integral_array(phi.values[::-1], phi.h, alpha, 0.0)
    return phi.with_values(rev[::-1].copy())


def marchaud_derivative(f: GridFunction, alpha: float, eps: float = 0.0) -> GridFunction:
    """Marchaud derivative of order ``alpha``; ``eps > 0`` truncates the integral at ``x - eps``."""
    out, prefix = marchaud_array(f.values, f.h, alpha, f.t0, eps)
    return f.with_values(out, prefix)


def weight_pow(f: GridFunction, beta: float) -> GridFunction:
    """``t^beta * f(t)`` on the grid.

    For ``beta < 0`` and a node at ``t = 0`` the product is taken as 0 when
    ``f(0) == 0``; any other value there would be infinite and is rejected.
    """
    t = f.times
    if beta == 0.0:
        return f.with_values(f.values)
    if beta < 0.0 and np.any(t <= 0.0):
        zero = t == 0.0
        if np.any(t < 0.0):
            raise ValueError("negative power weight on a grid reaching negative times")
        if np.any(f.values[zero] != 0.0):
            raise ValueError("t^beta * f(t) is infinite at t=0 because f(0) != 0")
        out = np.zeros_like(t)
        out[~zero] = t[~zero] ** beta * f.values[~zero]
        return f.with_values(out)
    if np.any(t < 0.0):
        raise ValueError("power weights need a nonnegative time axis")
    return f.with_values(t**beta * f.values)
