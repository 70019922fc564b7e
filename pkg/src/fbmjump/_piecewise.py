"""Marchaud derivative of a function that is continuous between jump times.

For ``H > 1/2`` the Girsanov shift needs ``D^alpha (t^{-alpha} u)`` with
``alpha = H - 1/2`` where ``u`` jumps at the jump times of the driving
point process. Writing the Marchaud integral piece by piece gives, for
``t`` in the piece ``[s_k, s_{k+1})``::

    D(t) = C1 g(t) (t - s_k)^{-alpha}
           - C2 ∫_0^{s_k} g(r) (t - r)^{-1-alpha} dr
           + C2 ∫_{s_k}^t (g(t) - g(r)) (t - r)^{-1-alpha} dr

with ``C1 = 1/Γ(1-alpha)``, ``C2 = alpha C1`` and ``g = t^{-alpha} u``. Inside a
piece ``g`` is interpolated linearly between grid nodes and held constant
from a jump time to the nearest node of its piece, so no interpolant ever
crosses a jump. The first cell carries the weight ``r^{-alpha}`` exactly.

Two implementations live here: a direct per-segment sum that also returns
the A/B rearrangement, and a batched FFT version used by the Monte Carlo
drivers. Tests bind them together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .frac_calc import _unit_moments, causal_convolve, singular_cell_integral


@dataclass(frozen=True)
class _Segment:
    lo: float
    hi: float
    piece: int
    kind: str  # "lin", "const" or "sing"
    left: int  # left node index (lin, sing)
    value: float = 0.0  # const value; sing uses u at nodes 0 and 1
    linear_sing: bool = True


def _node_pieces(t: np.ndarray, jumps: np.ndarray) -> np.ndarray:
    return np.searchsorted(jumps, t, side="right")


def _check_alignment(t: np.ndarray, jumps: np.ndarray, h: float) -> None:
    if jumps.size and np.min(np.abs(t[:, None] - jumps[None, :])) < 1e-9 * h:
        raise ValueError("a jump time coincides with a grid node; the shift is infinite there")
    if jumps.size and (jumps[0] <= 0.0 or np.any(np.diff(jumps) <= 0)):
        raise ValueError("jump times must be strictly increasing and positive")


def _segments(u: np.ndarray, t: np.ndarray, h: float, jumps: np.ndarray, beta: float) -> list[_Segment]:
    n = t.size
    piece = _node_pieces(t, jumps)
    g = np.zeros(n)
    g[1:] = t[1:] ** beta * u[1:]
    segs: list[_Segment] = []
    for i in range(n - 1):
        inside = jumps[(jumps > t[i]) & (jumps <= t[i + 1])]
        if inside.size == 0:
            if i == 0:
                segs.append(_Segment(t[0], t[1], 0, "sing", 0))
            else:
                segs.append(_Segment(t[i], t[i + 1], int(piece[i]), "lin", i))
            continue
        edges = np.concatenate([[t[i]], inside, [t[i + 1]]])
        for k in range(edges.size - 1):
            pc = int(piece[i]) + k
            if k == 0 and i == 0:
                segs.append(_Segment(edges[0], edges[1], pc, "sing", 0, linear_sing=False))
            else:
                val = g[i] if k == 0 else g[i + 1]
                segs.append(_Segment(edges[k], edges[k + 1], pc, "const", i, val))
    return segs


def _seg_integrals(seg: _Segment, x: np.ndarray, u: np.ndarray, g: np.ndarray, h: float, alpha: float, beta: float, tabs):
    """(∫K, ∫G K) over the segment for nodes ``x`` strictly to its right."""
    with np.errstate(divide="ignore"):
        int_k = ((x - seg.hi) ** (-alpha) - (x - seg.lo) ** (-alpha)) / alpha
    if seg.kind == "const":
        return int_k, seg.value * int_k
    if seg.kind == "sing":
        f1 = u[1] if seg.linear_sing else u[0]
        return int_k, singular_cell_integral(u[0], f1, seg.hi, x, h, alpha, beta)
    p_tab, a_tab, b_tab = tabs
    m = np.rint((x - seg.lo) / h).astype(int)
    i = seg.left
    return h ** (-alpha) * p_tab[m], h ** (-alpha) * (g[i] * a_tab[m] + g[i + 1] * b_tab[m])


def _frozen(uval, h: float, alpha: float, beta: float):
    return uval * special.gamma(1.0 + beta) / special.gamma(1.0 + beta - alpha) * h ** (beta - alpha)


def marchaud_jump_reference(
    u: np.ndarray,
    h: float,
    alpha: float,
    jumps: np.ndarray,
    branches: np.ndarray | None = None,
):
    """Direct segment-by-segment evaluation of ``D^alpha(t^{-alpha} u)``.

    Returns ``(D, prefix, parts)``; ``parts`` is ``(A, B)`` in the same units
    as ``D`` when ``branches`` (row k = the k-th piece formula evaluated on
    the whole grid) is given, else ``None``.
    """
    u = np.asarray(u, dtype=float)
    n = u.size
    t = h * np.arange(n)
    jumps = np.asarray(jumps, dtype=float)
    _check_alignment(t, jumps, h)
    beta = -alpha
    piece = _node_pieces(t, jumps)
    bounds = np.concatenate([[0.0], jumps])
    g = np.zeros(n)
    g[1:] = t[1:] ** beta * u[1:]
    c1 = 1.0 / special.gamma(1.0 - alpha)
    c2 = alpha * c1
    tabs = _unit_moments(n, alpha, 0.0)
    local = np.zeros(n)
    hist = np.zeros(n)
    n_pieces = jumps.size + 1
    hist_k = np.zeros((n_pieces, n))
    hist_gk = np.zeros((n_pieces, n))
    for seg in _segments(u, t, h, jumps, beta):
        j = np.nonzero(t > seg.hi + 1e-12 * h)[0]
        if seg.kind == "lin":
            jl = seg.left + 1  # the cell ending on a node: finite m=1 limit
            local[jl] += h ** (-alpha) / (1.0 - alpha) * (g[jl] - g[seg.left])
        if j.size == 0:
            continue
        int_k, int_gk = _seg_integrals(seg, t[j], u, g, h, alpha, beta, tabs)
        is_local = piece[j] == seg.piece
        local[j[is_local]] += g[j[is_local]] * int_k[is_local] - int_gk[is_local]
        jh = j[~is_local]
        hist[jh] -= int_gk[~is_local]
        hist_k[seg.piece, jh] += int_k[~is_local]
        hist_gk[seg.piece, jh] += int_gk[~is_local]
    with np.errstate(divide="ignore", invalid="ignore"):
        lead = (t - bounds[piece]) ** (-alpha)
        d = c1 * g * lead + c2 * (local + hist)
    prefix = 2 if (jumps.size == 0 or jumps[0] > t[1]) else 1
    d[0] = _frozen(u[0], h, alpha, beta)
    if prefix == 2:
        d[1] = _frozen(u[1], h, alpha, beta)
    parts = None
    if branches is not None:
        gb = np.zeros((n_pieces, n))
        gb[:, 1:] = t[1:] ** beta * np.asarray(branches, dtype=float)[:, 1:]
        a_part = np.zeros(n)
        b_part = np.zeros(n)
        for k in range(n_pieces):
            sel = piece == k
            sel[0] = False
            x = t[sel]
            acc = gb[k, sel] * (x - bounds[k]) ** (-alpha)
            bacc = local[sel].copy()
            for i in range(k):
                acc -= gb[i, sel] * ((x - bounds[i + 1]) ** (-alpha) - (x - bounds[i]) ** (-alpha))
                bacc += gb[i, sel] * hist_k[i, sel] - hist_gk[i, sel]
            a_part[sel] = c1 * acc
            b_part[sel] = c2 * bacc
        a_part[:prefix] = d[:prefix]
        b_part[:prefix] = 0.0
        parts = (a_part, b_part)
    return d, prefix, parts


def marchaud_jump_batch(u: np.ndarray, h: float, alpha: float, jump_list) -> tuple[np.ndarray, np.ndarray]:
    """Batched ``D^alpha(t^{-alpha} u)`` for rows of ``u`` with per-row jump times.

    One FFT convolution per batch carries all regular cells; the few cells
    that contain jump times are corrected row by row. Returns the derivative
    and the per-row continued-prefix length.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    m_rows, n = u.shape
    t = h * np.arange(n)
    beta = -alpha
    g = np.zeros_like(u)
    g[:, 1:] = u[:, 1:] * t[1:] ** beta
    piece = np.zeros((m_rows, n), dtype=int)
    s_left = np.zeros((m_rows, n))
    for r, jumps in enumerate(jump_list):
        jumps = np.asarray(jumps, dtype=float)
        if jumps.size:
            _check_alignment(t, jumps, h)
            piece[r] = _node_pieces(t, jumps)
            s_left[r] = np.concatenate([[0.0], jumps])[piece[r]]
    first = np.searchsorted(t, s_left.ravel() - 1e-12 * h, side="left").reshape(m_rows, n)
    regular = piece[:, 1:] == piece[:, :-1]
    p_tab, a_tab, b_tab = _unit_moments(n, alpha, 0.0)
    a_tab[1] = b_tab[1] = 0.0
    left = np.where(regular, g[:, :-1], 0.0)
    right = np.where(regular, g[:, 1:], 0.0)
    left[:, 0] = right[:, 0] = 0.0
    conv = np.zeros_like(u)
    conv[:, 1:] = causal_convolve(left, a_tab[1:]) + causal_convolve(right, b_tab[1:])
    span = np.arange(n)[None, :] - first
    with np.errstate(divide="ignore", invalid="ignore"):
        psum = np.where(span >= 2, (1.0 - np.maximum(span, 1) ** (-alpha)) / alpha, 0.0)
    scale = h ** (-alpha)
    s = scale * (g * psum - conv)
    s[:, 2:] += scale / (1.0 - alpha) * (g[:, 2:] - g[:, 1:-1]) * regular[:, 1:]
    x = t[2:]
    reg0 = regular[:, 0]
    if np.any(reg0):
        fc = singular_cell_integral(u[reg0, :1], u[reg0, 1:2], h, x[None, :], h, alpha, beta)
        s[reg0, 2:] -= fc
    for r, jumps in enumerate(jump_list):
        jumps = np.asarray(jumps, dtype=float)
        if jumps.size == 0:
            continue
        cells = np.nonzero(~regular[r])[0]
        for i in cells:
            inside = jumps[(jumps > t[i]) & (jumps <= t[i + 1])]
            edges = np.concatenate([[t[i]], inside, [t[i + 1]]])
            j = np.arange(i + 1, n)
            xj = t[j]
            for k in range(edges.size - 1):
                lo, hi = edges[k], edges[k + 1]
                last = k == edges.size - 2
                with np.errstate(divide="ignore", invalid="ignore"):
                    int_k = ((xj - hi) ** (-alpha) - (xj - lo) ** (-alpha)) / alpha
                if k == 0 and i == 0:
                    jj = j[xj > hi]
                    s[r, jj] -= singular_cell_integral(u[r, 0], u[r, 0], hi, t[jj], h, alpha, beta)
                    continue
                val = g[r, i] if k == 0 else g[r, i + 1]
                if last:
                    # local for nodes of the piece that starts at this jump
                    loc = piece[r, j] == piece[r, i + 1]
                    jj = j[loc & (j > i + 1)]
                    s[r, jj] += (g[r, jj] - val) * int_k[loc & (j > i + 1)]
                    s[r, j[~loc]] -= val * int_k[~loc]
                else:
                    s[r, j] -= val * int_k
    c1 = 1.0 / special.gamma(1.0 - alpha)
    with np.errstate(divide="ignore", invalid="ignore"):
        lead = (t[None, :] - s_left) ** (-alpha)
        d = c1 * g * lead + alpha * c1 * s
    prefix = np.where(reg0, 2, 1)
    d[:, 0] = _frozen(u[:, 0], h, alpha, beta)
    d[reg0, 1] = _frozen(u[reg0, 1], h, alpha, beta)
    return d, prefix
