"""Numerical self-checks shared by the CLI and the acceptance runs.

Each function returns plain rows (tuples) so results can be written to CSV
without further processing.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special, stats

from .fbm import apply_kh_array, covariance_rh, invert_kh_array, kernel_kh, sample_fbm_batch
from .frac_calc import marchaud_array, rl_integral_array
from .girsanov_weak import compute_v_array
from .point_process import CompoundPoissonSpec, moment_functional, variation_functional_samples

__all__ = [
    "rel_l2",
    "frac_identity_rows",
    "kernel_factorization_rows",
    "kh_round_trip_rows",
    "jump_drift_path",
    "marchaud_quadrature",
    "jump_marchaud_rows",
    "fbm_law_rows",
    "moment_rows",
]


def rel_l2(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def _phi_smooth(t):
    return np.cos(3 * t) + t**2


def _phi_step(t):
    # integrable with a jump and a square-root kink
    return 1.0 + (t >= 0.5) + np.sqrt(np.abs(t - 0.3))


def frac_identity_rows(ns=(1024, 2048, 4096), alphas=(0.1, 0.3, 0.5, 0.7, 0.9), pairs=((0.3, 0.4), (0.1, 0.8), (0.5, 0.45))):
    """Rows ``(check, alpha, beta, n, rel_err)``.

    ``inverse-*``: ``D^a I^a phi = phi`` excluding an 8-point prefix.
    ``semigroup``: ``I^a I^b p = I^{a+b} p`` for ``p = 1 + t + t^2`` against the
    closed form ``sum_k k! t^{k+g} / Gamma(k+1+g)``.
    """
    rows = []
    for n in ns:
        t = np.linspace(0.0, 1.0, n)
        h = t[1]
        for name, fn in (("inverse-smooth", _phi_smooth), ("inverse-step", _phi_step)):
            phi = fn(t)
            for a in alphas:
                d, _ = marchaud_array(rl_integral_array(phi, h, a), h, a)
                rows.append((name, a, 0.0, n, rel_l2(d[8:], phi[8:])))
        poly = 1 + t + t**2
        for a, b in pairs:
            g = a + b
            exact = sum(math.factorial(k) * t ** (k + g) / special.gamma(k + 1 + g) for k in range(3))
            comp = rl_integral_array(rl_integral_array(poly, h, a), h, b)
            rows.append(("semigroup", a, b, n, rel_l2(comp, exact)))
    return rows


def kernel_factorization_rows(H: float, times=(0.2, 0.4, 0.6, 0.8, 1.0)):
    """Rows ``(H, t, s, integral, R_H, rel_err)`` for ``int_0^{t^s} K_H(t,r) K_H(s,r) dr``."""
    rows = []
    for t in times:
        for s in times:
            lo = min(t, s)
            # QAGS extrapolation absorbs the integrable endpoint singularities
            val, _ = integrate.quad(
                lambda r: kernel_kh(t, r, H) * kernel_kh(s, r, H), 0.0, lo, epsabs=1e-13, epsrel=1e-10, limit=400
            )
            r = float(covariance_rh(t, s, H))
            rows.append((H, t, s, val, r, abs(val - r) / r))
    return rows


def kh_round_trip_rows(H: float, n: int = 4096, prefix: int = 8):
    """Rows ``(H, function, n, rel_err)`` of ``invert_kh(apply_kh f)`` against ``f``."""
    t = np.linspace(0.0, 1.0, n)
    h = t[1]
    rows = []
    for name, f in (("cos2t+t", np.cos(2 * t) + t), ("exp(-t)", np.exp(-t)), ("1+sin5t", 1 + np.sin(5 * t))):
        back, _ = invert_kh_array(apply_kh_array(f, h, H), h, H)
        rows.append((H, name, n, rel_l2(back[prefix:], f[prefix:])))
    return rows


JUMPS_DEMO = ((0.37, 0.9), (0.71, -0.6))


def jump_drift_path(t, jumps=JUMPS_DEMO):
    """Drift path ``u = -sin(x)`` of a state ``x(t) = 0.8 sin(2 pi t) + t - L_t`` with two jumps."""
    t = np.asarray(t, dtype=float)
    level = sum(size * (t >= s) for s, size in jumps)
    return -np.sin(0.8 * np.sin(2 * np.pi * t) + t - level)


def marchaud_quadrature(fn, x: float, alpha: float, eps: float, breaks=()) -> float:
    """Truncated Marchaud derivative of ``g(r) = r^{-alpha} fn(r)`` at ``x`` by adaptive quadrature.

    ``D_eps g(x) = g(x) / (Gamma(1-a) x^a) + a/Gamma(1-a) int_eps^x (g(x) - g(x-y)) y^{-1-a} dy``;
    ``breaks`` are discontinuities of ``fn``.
    """
    a = alpha

    def g(r):
        return r ** (-a) * float(fn(r))

    gx = g(x)
    cuts = sorted({x - s for s in breaks if eps < x - s < x})
    edges = [eps, *cuts, x]
    total = 0.0
    for i, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        if i == 0:
            # smooth difference on the first stretch; near y = x the weight r^{-a} is integrable
            val, _ = integrate.quad(lambda y: (gx - g(x - y)) * y ** (-1 - a), lo, hi, epsabs=1e-13, epsrel=1e-11, limit=400)
            total += val
            continue
        ker = (lo ** (-a) - hi ** (-a)) / a
        if hi == x:
            val, _ = integrate.quad(
                lambda y: float(fn(x - y)) * y ** (-1 - a), lo, hi, weight="alg", wvar=(0, -a), epsabs=1e-13, epsrel=1e-11, limit=400
            )
        else:
            val, _ = integrate.quad(lambda y: g(x - y) * y ** (-1 - a), lo, hi, epsabs=1e-13, epsrel=1e-11, limit=400)
        total += gx * ker - val
    c1 = 1.0 / special.gamma(1 - a)
    return gx * c1 / x**a + a * c1 * total


def jump_marchaud_rows(H: float, n: int = 4096, stride: int = 8, guard: int = 8):
    """Rows ``(H, n, nodes, rel_err)``: piecewise shift assembly against the ``eps = h`` quadrature oracle.

    Both sides are turned into the shift ``v = t^a D / c_H``; nodes within
    ``guard`` points of the origin or of either side of a jump are skipped.
    """
    from .fbm import kernel_norm

    a = H - 0.5
    t = np.linspace(0.0, 1.0, n)
    h = t[1]
    times = np.array([s for s, _ in JUMPS_DEMO])
    u = jump_drift_path(t)
    v, _ = compute_v_array(u[None, :], h, H, [times])
    keep = np.ones(n, dtype=bool)
    keep[:guard] = False
    for s in times:
        keep[np.abs(t - s) <= guard * h] = False
    idx = np.nonzero(keep)[0][::stride]
    oracle = np.array([marchaud_quadrature(jump_drift_path, t[i], a, h, times) for i in idx])
    oracle_v = t[idx] ** a * oracle / kernel_norm(H)
    return [(H, n, idx.size, rel_l2(v[0, idx], oracle_v))]


def fbm_law_rows(H: float, m: int = 10_000, seed: int = 0, n: int = 257, T: float = 1.0):
    """Rows ``(H, check, point, statistic, reference, score)``.

    ``cov``: Cholesky ``Cov(B_t, B_T)`` at 8 points, score = |z|.
    ``ks-*``: two-sample KS of ``B_T`` and ``max B`` against Cholesky, score = p-value.
    """
    rows = []
    t = np.linspace(0.0, T, n)
    chol, _ = sample_fbm_batch(H, T, n, m, "cholesky", seed)
    pts = np.linspace(0, n - 1, 9)[1:].astype(int)
    for j in pts:
        prod = chol[:, j] * chol[:, -1]
        est = float(prod.mean())
        se = float(prod.std(ddof=1) / math.sqrt(m))
        ref = float(covariance_rh(t[j], T, H))
        rows.append((H, "cov", t[j], est, ref, abs(est - ref) / se))
    for method in ("circulant", "kernel-from-wiener"):
        other, _ = sample_fbm_batch(H, T, n, m, method, seed + m)
        for stat_name, fn in (("end", lambda p: p[:, -1]), ("max", lambda p: p.max(axis=1))):
            res = stats.ks_2samp(fn(chol), fn(other))
            rows.append((H, f"ks-{method}-{stat_name}", T, float(res.statistic), 0.0, float(res.pvalue)))
    return rows


def moment_rows(spec: CompoundPoissonSpec, beta: float, m: int, seed: int = 0):
    """Rows ``(family, lam, T, beta, mc_mean, stderr, closed_form, z)``."""
    vals = variation_functional_samples(spec, beta, m, seed)
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(m))
    ref = moment_functional(spec, beta)
    return [(spec.jumps.family, spec.lam, spec.T, beta, est, se, ref, (est - ref) / se)]
