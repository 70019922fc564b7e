"""Fractional Brownian motion: covariance, the Volterra kernel K_H, and samplers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, linalg, special

from . import _seeding
from .frac_calc import GridFunction, marchaud_array, rl_integral_array

__all__ = [
    "WienerPath",
    "FbmPath",
    "covariance_rh",
    "kernel_norm",
    "gauss_2f1",
    "kernel_kh",
    "apply_kh",
    "apply_kh_array",
    "invert_kh",
    "invert_kh_array",
    "sample_fbm",
    "sample_fbm_batch",
    "wiener_cross_cov",
    "METHODS",
]

METHODS = ("cholesky", "circulant", "kernel-from-wiener")


def check_hurst(H: float) -> float:
    H = float(H)
    if not 0.0 < H < 1.0:
        raise ValueError(f"Hurst parameter H={H} must lie in (0, 1)")
    return H


@dataclass(frozen=True)
class WienerPath:
    """Brownian increments on a uniform grid; the path is their running sum."""

    t0: float
    t1: float
    increments: np.ndarray

    def __post_init__(self) -> None:
        inc = np.asarray(self.increments, dtype=float).copy()
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def n(self) -> int:
        return self.increments.size + 1

    @property
    def h(self) -> float:
        return (self.t1 - self.t0) / (self.n - 1)

    @property
    def path(self) -> GridFunction:
        return GridFunction(self.t0, self.t1, np.concatenate([[0.0], np.cumsum(self.increments)]))


@dataclass(frozen=True)
class FbmPath:
    """One sampled fBM path with the sampler tag and, for kernel sampling, its Wiener driver."""

    path: GridFunction
    hurst: float
    method: str
    seed: int
    wiener: WienerPath | None = None

    @property
    def values(self) -> np.ndarray:
        return self.path.values

    @property
    def times(self) -> np.ndarray:
        return self.path.times

    @property
    def T(self) -> float:
        return self.path.t1


def covariance_rh(t, s, H: float):
    """``R_H(t, s) = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2``."""
    H = check_hurst(H)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise ValueError("covariance_rh needs nonnegative times")
    out = 0.5 * (t ** (2 * H) + s ** (2 * H) - np.abs(t - s) ** (2 * H))
    return out if out.ndim else float(out)


def _series_2f1(a: float, b: float, c: float, z: float) -> float:
    term = 1.0
    total = 1.0
    for k in range(200000):
        term *= (a + k) * (b + k) / ((c + k) * (k + 1.0)) * z
        total += term
        if abs(term) <= 1e-17 * abs(total) and k > 2:
            return total
        if term == 0.0:
            return total
    raise ArithmeticError(f"2F1 series did not converge for z={z}")


def _euler_2f1(a: float, b: float, c: float, z: float) -> float:
    # F = Γ(c)/(Γ(b)Γ(c-b)) ∫ u^{b-1} (1-u)^{c-b-1} (1-zu)^{-a} du, endpoint powers as QAWS weight
    val, _ = integrate.quad(
        lambda u: (1.0 - z * u) ** (-a),
        0.0,
        1.0,
        weight="alg",
        wvar=(b - 1.0, c - b - 1.0),
        epsabs=0.0,
        epsrel=1e-13,
        limit=400,
    )
    return math.exp(special.gammaln(c) - special.gammaln(b) - special.gammaln(c - b)) * val


def gauss_2f1(a: float, b: float, c: float, z: float) -> float:
    """Gauss hypergeometric function ``F(a, b; c; z)`` for real ``z < 1``.

    Uses the Euler integral (adaptive quadrature) whenever one of the upper
    parameters can serve as the Euler exponent, i.e. ``c > b > 0`` or
    ``c > a > 0``; otherwise the hypergeometric series, after a Pfaff
    transformation for ``z < -1/2``.
    """
    a, b, c, z = float(a), float(b), float(c), float(z)
    if not z < 1.0:
        raise ValueError(f"gauss_2f1 needs z < 1, got {z}")
    if c <= 0 and c == math.floor(c):
        raise ValueError(f"gauss_2f1 undefined for c={c}")
    if a == 0.0 or b == 0.0 or z == 0.0:
        return 1.0
    if c > b > 0.0:
        return _euler_2f1(a, b, c, z)
    if c > a > 0.0:
        return _euler_2f1(b, a, c, z)
    if z < -0.5:
        # Pfaff: F(a,b;c;z) = (1-z)^{-a} F(a, c-b; c; z/(z-1))
        return (1.0 - z) ** (-a) * _series_2f1(a, c - b, c, z / (z - 1.0))
    return _series_2f1(a, b, c, z)


def kernel_norm(H: float) -> float:
    """Constant making ``∫ K_H(t,r) K_H(s,r) dr = R_H(t, s)``.

    The hypergeometric form alone factorizes ``V_H * R_H`` with
    ``V_H = Γ(2-2H) cos(πH) / (πH(1-2H))``; the kernel carries ``V_H^{-1/2}``.
    """
    H = check_hurst(H)
    if H == 0.5:
        return 1.0
    v = special.gamma(2 - 2 * H) * math.cos(math.pi * H) / (math.pi * H * (1 - 2 * H))
    return 1.0 / math.sqrt(v)


def kernel_kh(t: float, s: float, H: float) -> float:
    """Volterra kernel of fBM for ``0 < s < t``.

    ``K_H(t, s) = c_H (t-s)^{H-1/2} F(H-1/2, 1/2-H; H+1/2; 1-t/s) / Γ(H+1/2)``
    with ``c_H = kernel_norm(H)``.
    """
    H = check_hurst(H)
    t, s = float(t), float(s)
    if not 0.0 < s < t:
        raise ValueError(f"kernel_kh needs 0 < s < t, got s={s}, t={t}")
    if H == 0.5:
        return 1.0
    f = gauss_2f1(H - 0.5, 0.5 - H, H + 0.5, 1.0 - t / s)
    return kernel_norm(H) * (t - s) ** (H - 0.5) * f / special.gamma(H + 0.5)


def apply_kh_array(values: np.ndarray, h: float, H: float) -> np.ndarray:
    """``(K_H f)(t_j)`` on a grid starting at 0, through the fractional-operator factorization.

    H < 1/2:  c_H I^{2H} t^{1/2-H} I^{1/2-H} t^{H-1/2} f
    H > 1/2:  c_H I^1 t^{H-1/2} I^{H-1/2} t^{1/2-H} f
    """
    H = check_hurst(H)
    if H == 0.5:
        return rl_integral_array(values, h, 1.0)
    c = kernel_norm(H)
    if H < 0.5:
        inner = rl_integral_array(values, h, 0.5 - H, weight=H - 0.5)
        return c * rl_integral_array(inner, h, 2 * H, weight=0.5 - H, interp="linear")
    inner = rl_integral_array(values, h, H - 0.5, weight=0.5 - H)
    return c * rl_integral_array(inner, h, 1.0, weight=H - 0.5, interp="linear")


def _forward_difference(values: np.ndarray, h: float) -> np.ndarray:
    d = np.empty_like(values)
    d[..., :-1] = np.diff(values, axis=-1) / h
    d[..., -1] = d[..., -2]
    return d


def inverse_from_derivative(dh: np.ndarray, h: float, H: float) -> tuple[np.ndarray, int]:
    """``K_H^{-1}`` applied to a primitive whose derivative is ``dh`` (left-constant cells).

    Returns the values and the length of the continued prefix.
    """
    H = check_hurst(H)
    n = dh.shape[-1]
    t = h * np.arange(n)
    if H == 0.5:
        return np.array(dh, dtype=float), 0
    c = 1.0 / kernel_norm(H)
    if H < 0.5:
        inner = rl_integral_array(dh, h, 0.5 - H, weight=0.5 - H)
        out = np.zeros_like(inner)
        out[..., 1:] = c * t[1:] ** (H - 0.5) * inner[..., 1:]
        out[..., 0] = out[..., 1]  # depends on the first cell only
        return out, 1
    deriv, prefix = marchaud_array(dh, h, H - 0.5, weight=0.5 - H)
    out = np.empty_like(deriv)
    out[..., 1:] = c * t[1:] ** (H - 0.5) * deriv[..., 1:]
    out[..., :prefix] = c * h ** (H - 0.5) * deriv[..., :prefix]
    return out, prefix


def invert_kh_array(values: np.ndarray, h: float, H: float) -> tuple[np.ndarray, int]:
    values = np.asarray(values, dtype=float)
    if np.any(values[..., 0] != 0.0):
        raise ValueError("invert_kh needs h(0) = 0")
    return inverse_from_derivative(_forward_difference(values, h), h, H)


def _require_origin(f: GridFunction) -> None:
    if f.t0 != 0.0:
        raise ValueError("K_H operators act on grids starting at t=0")


def apply_kh(f: GridFunction, H: float) -> GridFunction:
    """``t -> ∫_0^t K_H(t, s) f(s) ds`` on the grid of ``f``."""
    _require_origin(f)
    return f.with_values(apply_kh_array(f.values, f.h, H))


def invert_kh(h: GridFunction, H: float) -> GridFunction:
    """``K_H^{-1} h`` with ``h'`` taken by forward differences."""
    _require_origin(h)
    out, prefix = invert_kh_array(h.values, h.h, H)
    return h.with_values(out, prefix)


# -- samplers ---------------------------------------------------------------


@lru_cache(maxsize=16)
def _cholesky_factor(H: float, T: float, n: int) -> np.ndarray:
    t = np.linspace(0.0, T, n)[1:]
    cov = covariance_rh(t[:, None], t[None, :], H)
    fac = linalg.cholesky(cov, lower=True)
    fac.setflags(write=False)
    return fac


@lru_cache(maxsize=16)
def _circulant_sqrt_eigs(H: float, T: float, n: int) -> np.ndarray:
    m = n - 1
    h = T / m
    k = np.arange(m + 1, dtype=float)
    gam = 0.5 * h ** (2 * H) * (np.abs(k + 1) ** (2 * H) - 2 * k ** (2 * H) + np.abs(k - 1) ** (2 * H))
    row = np.concatenate([gam, gam[-2:0:-1]])
    eig = np.fft.fft(row).real
    if eig.min() < -1e-10 * eig.max():
        raise AssertionError(f"circulant embedding is not nonnegative definite (min eig {eig.min()})")
    root = np.sqrt(np.clip(eig, 0.0, None) / row.size)
    root.setflags(write=False)
    return root


def _cheb_nodes(a: float, b: float, deg: int) -> np.ndarray:
    x = np.cos(np.pi * (np.arange(deg + 1) + 0.5) / (deg + 1))
    return 0.5 * (a + b) + 0.5 * (b - a) * x


def _clenshaw(coef: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Chebyshev series with one coefficient row per point."""
    b1 = np.zeros_like(xi)
    b2 = np.zeros_like(xi)
    for k in range(coef.shape[1] - 1, 0, -1):
        b1, b2 = coef[:, k] + 2 * xi * b1 - b2, b1
    return coef[:, 0] + xi * b1 - b2


class _KernelPrimitive:
    """``G(x) = int_0^x K_H(1, s) ds`` on ``[0, 1]`` to near machine precision.

    On ``(0, 1/2]`` the kernel is interpolated on dyadic panels graded towards
    the origin; on ``[1/2, 1]`` it is written ``(1-s)^{H-1/2} phi(s)`` with
    ``phi`` analytic, so ``G(1) - G(1-y) = y^{H+1/2} Psi(y)`` with ``Psi``
    smooth and integrated by Gauss-Jacobi.
    """

    DEG = 30
    LEVELS = 200

    def __init__(self, H: float) -> None:
        self.H = H
        d = self.DEG
        norm = kernel_norm(H) / special.gamma(H + 0.5)

        def phi(s):
            return norm * special.hyp2f1(H - 0.5, 0.5 - H, H + 0.5, 1.0 - 1.0 / s)

        def k(s):
            return (1.0 - s) ** (H - 0.5) * phi(s)

        cheb = np.polynomial.chebyshev
        # panel p covers [2^{-p-2}, 2^{-p-1}]
        rights = 0.5 ** np.arange(1, self.LEVELS + 1)
        coefs = np.empty((self.LEVELS, d + 2))
        for p, right in enumerate(rights):
            left = right / 2
            s = _cheb_nodes(left, right, d)
            c = cheb.chebfit((2 * s - left - right) / (right - left), k(s), d)
            # antiderivative in the local variable, zero at the left edge
            coefs[p] = cheb.chebint(c, lbnd=-1, scl=(right - left) / 2)
        self._left_coefs = coefs
        totals = np.array([cheb.chebval(1.0, c) for c in coefs])
        # G at each panel's left edge: sum of all panels further left
        self._left_base = np.concatenate([np.cumsum(totals[::-1])[::-1][1:], [0.0]])
        self._g_half = float(totals.sum())
        tau, w = special.roots_jacobi(d + 10, 0.0, H - 0.5)
        tau, w = 0.5 * (tau + 1), w * 0.5 ** (H + 0.5)
        y = _cheb_nodes(0.0, 0.5, d)
        psi = np.array([np.dot(w, phi(1.0 - yy * tau)) for yy in y])
        self._psi = cheb.chebfit(4 * y - 1, psi, d)
        self.g_one = self._g_half + 0.5 ** (H + 0.5) * float(cheb.chebval(1.0, self._psi))

    def tail(self, y: np.ndarray) -> np.ndarray:
        """``G(1) - G(1 - y)`` for ``y`` in ``[0, 1/2]``."""
        return y ** (self.H + 0.5) * np.polynomial.chebyshev.chebval(4 * y - 1, self._psi)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        hi = x > 0.5
        out[hi] = self.g_one - self.tail(1.0 - x[hi])
        lo = ~hi & (x > 0.5 ** (self.LEVELS + 1))
        xs = x[lo]
        p = np.clip(np.floor(-np.log2(xs)).astype(int) - 1, 0, self.LEVELS - 1)
        right = 0.5 ** (p + 1)
        left = right / 2
        xi = np.clip((2 * xs - left - right) / (right - left), -1.0, 1.0)
        out[lo] = self._left_base[p] + _clenshaw(self._left_coefs[p], xi)
        out[~hi & ~lo] = 0.0
        return out


@lru_cache(maxsize=8)
def wiener_cross_cov(H: float, T: float, n: int) -> np.ndarray:
    """``C[j-1, i] = Cov(B_{t_j}, W_{t_{i+1}} - W_{t_i})`` for nodes ``j >= 1`` and cells ``i``.

    Uses the scaling ``K_H(ct, cs) = c^{H-1/2} K_H(t, s)`` so every entry is a
    difference of the single primitive ``G``; cells next to the evaluation
    time use the tail form to avoid cancellation.
    """
    H = check_hurst(H)
    h = T / (n - 1)
    out = np.zeros((n - 1, n - 1))
    if H == 0.5:
        out[np.tril_indices(n - 1)] = h
        out.setflags(write=False)
        return out
    prim = _KernelPrimitive(H)
    for j in range(1, n):
        x = np.arange(j + 1) / j
        y = 1.0 - x
        g = np.where(x > 0.5, np.nan, prim(np.minimum(x, 0.5)))
        tail = prim.tail(np.minimum(y, 0.5))
        # G(b) - G(a) with both ends in the same regime where possible
        a, b = slice(0, j), slice(1, j + 1)
        diff = np.where(x[b] <= 0.5, g[b] - g[a], np.where(x[a] >= 0.5, tail[a] - tail[b], 0.0))
        mixed = (x[a] < 0.5) & (x[b] > 0.5)
        if mixed.any():
            diff[mixed] = (prim.g_one - tail[b][mixed]) - g[a][mixed]
        out[j - 1, :j] = (j * h) ** (H + 0.5) * diff
    out.setflags(write=False)
    return out


@lru_cache(maxsize=8)
def _residual_factor(H: float, T: float, n: int) -> np.ndarray | None:
    """Square root of ``Cov(B | W increments)`` on the nodes ``t_1..t_{n-1}``, or ``None`` at H = 1/2."""
    if H == 0.5:
        return None
    h = T / (n - 1)
    c = wiener_cross_cov(H, T, n)
    t = np.linspace(0.0, T, n)[1:]
    cov = covariance_rh(t[:, None], t[None, :], H) - c @ c.T / h
    w, v = linalg.eigh(cov)
    if w.min() < -1e-9 * max(w.max(), 1e-300) - 1e-13:
        raise AssertionError(f"conditional covariance is not nonnegative definite (min eig {w.min()})")
    fac = v * np.sqrt(np.clip(w, 0.0, None))
    fac.setflags(write=False)
    return fac


def _validate_grid(T: float, n: int) -> None:
    if not T > 0:
        raise ValueError(f"horizon T={T} must be positive")
    if int(n) != n or n < 2:
        raise ValueError(f"grid size n={n} must be an integer >= 2")


def sample_fbm_batch(
    H: float, T: float, n: int, m: int, method: str = "circulant", seed: int = 0
) -> tuple[np.ndarray, np.ndarray | None]:
    """``m`` fBM paths on ``n`` grid points of ``[0, T]``; row ``i`` uses seed ``seed + i``.

    Returns ``(paths, wiener_increments)``; the increments are ``None``
    unless ``method == "kernel-from-wiener"``.
    """
    H = check_hurst(H)
    _validate_grid(T, n)
    if method not in METHODS:
        raise ValueError(f"unknown fBM method {method!r}; choose from {METHODS}")
    n = int(n)
    h = T / (n - 1)
    rngs = [_seeding.stream(seed + i) for i in range(m)]
    out = np.zeros((m, n))
    if method == "cholesky":
        z = np.stack([r.standard_normal(n - 1) for r in rngs]) if m else np.zeros((0, n - 1))
        out[:, 1:] = z @ _cholesky_factor(H, float(T), n).T
        return out, None
    if method == "circulant":
        root = _circulant_sqrt_eigs(H, float(T), n)
        size = root.size
        z = np.stack([r.standard_normal((2, size)) for r in rngs]) if m else np.zeros((0, 2, size))
        y = np.fft.fft(root * (z[:, 0] + 1j * z[:, 1]), axis=-1)
        out[:, 1:] = np.cumsum(y.real[:, : n - 1], axis=-1)
        return out, None
    dw = np.sqrt(h) * (np.stack([r.standard_normal(n - 1) for r in rngs]) if m else np.zeros((0, n - 1)))
    out[:, 1:] = dw @ (wiener_cross_cov(H, float(T), n).T / h)
    fac = _residual_factor(H, float(T), n)
    if fac is not None and m:
        # fine-scale part of W not seen by the increments, independent of them
        z = np.stack([_seeding.stream(seed + i, _seeding.AUX).standard_normal(n - 1) for i in range(m)])
        out[:, 1:] += z @ fac.T
    return out, dw


def sample_fbm(H: float, T: float, n: int, method: str = "circulant", seed: int = 0) -> FbmPath:
    """Sample one fBM path; bit-identical for identical arguments."""
    paths, dw = sample_fbm_batch(H, T, n, 1, method, seed)
    wiener = WienerPath(0.0, float(T), dw[0]) if dw is not None else None
    return FbmPath(GridFunction(0.0, float(T), paths[0]), float(H), method, int(seed), wiener)
