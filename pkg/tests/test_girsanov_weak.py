import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from fbmjump.checks import marchaud_quadrature
from fbmjump.fbm import WienerPath, kernel_norm, sample_fbm
from fbmjump.frac_calc import GridFunction
from fbmjump.girsanov_weak import (
    DRIFT_LIBRARY,
    DriftSpec,
    compute_v,
    compute_v_split,
    drift_u,
    girsanov_weight,
    library_drift,
    novikov_diagnostic,
    sample_weak_solution,
    simulate_weak_batch,
    weighted_expectation,
)
from fbmjump.point_process import CompoundPoissonSpec, JumpDistribution, JumpPath

GAUSS = CompoundPoissonSpec(1.0, JumpDistribution.gaussian(0.0, 1.0), 1.0)


def rel_l2(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_drift_u_examples():
    fbm = sample_fbm(0.3, 1.0, 65, "circulant", 1)
    none = JumpPath.empty(1.0)
    zero = library_drift("zero", 0.3)
    assert np.all(drift_u(zero, fbm, none, 1.0).values == 0.0)
    lin = DriftSpec(lambda t, y: y)
    np.testing.assert_allclose(drift_u(lin, fbm, none, 1.0).values, -(fbm.values + 1.0))
    jumps = JumpPath(np.array([0.3, 0.61]), np.array([2.0, -1.0]), 1.0)
    one = DriftSpec(lambda t, y: np.ones_like(y))
    assert np.all(drift_u(one, fbm, jumps, 0.0).values == -1.0)


def test_drift_u_horizon_mismatch():
    fbm = sample_fbm(0.3, 1.0, 33, "circulant", 1)
    with pytest.raises(ValueError):
        drift_u(library_drift("zero", 0.3), fbm, JumpPath.empty(2.0), 0.0)


def test_shift_of_constant_high_hurst():
    H, c = 0.7, 1.3
    u = GridFunction.from_callable(lambda t: np.full_like(t, -c), 0.0, 1.0, 4096)
    v = compute_v(u, H, JumpPath.empty(1.0)).values
    t = u.times
    exact = -c * special.gamma(1.5 - H) / (kernel_norm(H) * special.gamma(2 - 2 * H)) * t[8:] ** (0.5 - H)
    assert rel_l2(v[8:], exact) < 2e-2


def test_shift_of_constant_low_hurst():
    H, c = 0.3, 0.8
    u = GridFunction.from_callable(lambda t: np.full_like(t, -c), 0.0, 1.0, 4096)
    v = compute_v(u, H, JumpPath.empty(1.0)).values
    t = u.times
    exact = -c * special.gamma(1.5 - H) / (kernel_norm(H) * special.gamma(2 - 2 * H)) * t[8:] ** (0.5 - H)
    assert rel_l2(v[8:], exact) < 2e-2


@settings(max_examples=20, deadline=None)
@given(vals=st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=50))
def test_brownian_shift_is_identity(vals):
    u = GridFunction(0.0, 1.0, vals)
    assert np.array_equal(compute_v(u, 0.5, JumpPath.empty(1.0)).values, u.values)


def _step(t, s=0.5003):
    return -1.0 - 1.0 * (np.asarray(t) >= s)


def _piecewise_errors(H, eps_in_cells, n=2048, s=0.5003):
    u = GridFunction.from_callable(_step, 0.0, 1.0, n)
    jumps = JumpPath(np.array([s]), np.array([1.0]), 1.0)
    v = compute_v(u, H, jumps).values
    t, h = u.times, u.h
    idx = [j for j in range(8, n, 16) if abs(t[j] - s) > 8 * h]
    a = H - 0.5
    eps = eps_in_cells * h
    ref = np.array([t[j] ** a * marchaud_quadrature(_step, t[j], a, eps, (s,)) / kernel_norm(H) for j in idx])
    return rel_l2(v[idx], ref)


@pytest.mark.parametrize("H", [0.6, 0.75])
def test_piecewise_shift_against_truncated_quadrature(H):
    assert _piecewise_errors(H, 1.0) < 2e-2


@pytest.mark.parametrize("H", [0.6, 0.75, 0.9])
def test_piecewise_shift_against_untruncated_quadrature(H):
    # the eps -> 0 limit of the quadrature is the operator the grid rule targets
    assert _piecewise_errors(H, 0.0) < 2e-2


@pytest.mark.parametrize("H", [0.6, 0.75, 0.9])
def test_split_rearrangement_agrees(H):
    n = 1025
    s = 0.4003
    t = np.linspace(0.0, 1.0, n)
    branches = np.stack([np.cos(t), 2.0 + np.sin(3 * t)])
    u = GridFunction(0.0, 1.0, np.where(t < s, branches[0], branches[1]))
    jumps = JumpPath(np.array([s]), np.array([0.5]), 1.0)
    v, pa, pb = compute_v_split(u, H, jumps, branches)
    np.testing.assert_allclose(pa + pb, v.values, rtol=1e-10, atol=1e-10 * np.abs(v.values).max())
    direct = compute_v(u, H, jumps).values
    np.testing.assert_allclose(direct, v.values, rtol=1e-8, atol=1e-8 * np.abs(direct).max())


def test_unaligned_discontinuity_on_node_rejected():
    u = GridFunction.from_callable(lambda t: t, 0.0, 1.0, 65)
    with pytest.raises(ValueError):
        compute_v(u, 0.75, JumpPath(np.array([0.5]), np.array([1.0]), 1.0))


def test_weight_of_zero_shift():
    w = WienerPath(0.0, 1.0, np.random.default_rng(0).normal(0, 0.1, 100))
    assert girsanov_weight(GridFunction(0.0, 1.0, np.zeros(101)), w) == 1.0


def test_weight_of_constant_shift():
    c = 1.0
    dw = np.random.default_rng(1).normal(0, 0.1, 100)
    w = WienerPath(0.0, 1.0, dw)
    z = girsanov_weight(GridFunction(0.0, 1.0, np.full(101, -c)), w)
    assert z == pytest.approx(math.exp(c * dw.sum() - c**2 / 2), rel=1e-12)


def test_constant_shift_weights_have_unit_mean():
    # u = -1 gives v = -1 and Z_T = exp(W_T - 1/2)
    batch = simulate_weak_batch(library_drift("const", 0.5), 0.5, GAUSS, 0.0, 10_000, 0, 65)
    w = batch.weights
    assert abs(w.mean() - 1) < 3 * w.std() / math.sqrt(w.size)


def test_weighted_mean_zero_drift():
    x0 = 1.0
    spec = CompoundPoissonSpec(2.0, JumpDistribution.gaussian(0.5, 1.0), 1.0)
    batch = simulate_weak_batch(library_drift("zero", 0.3), 0.3, spec, x0, 4000, 0, 129)
    est, se = weighted_expectation(batch, lambda y: y)
    assert np.all(batch.weights == 1.0)
    assert abs(est - (x0 - 2.0 * 0.5)) < 3 * se
    one, _ = weighted_expectation(batch, lambda y: np.ones_like(y))
    assert one == 1.0


def test_weighted_expectation_empty():
    with pytest.raises(ValueError):
        weighted_expectation([], lambda y: y)


def test_sample_weak_solution_zero_drift():
    ws = sample_weak_solution(library_drift("zero", 0.3), 0.3, GAUSS, 0.5, 7, n=129)
    assert ws.weight == 1.0
    levels = ws.jumps.value(ws.x_path.times)
    fbm = sample_fbm(0.3, 1.0, 129, "kernel-from-wiener", 7)
    np.testing.assert_allclose(ws.x_path.values, 0.5 + fbm.values - levels, atol=1e-12)


def test_weights_positive_and_reproducible():
    b = library_drift("sin", 0.3)
    a = simulate_weak_batch(b, 0.3, GAUSS, 0.0, 500, 3, 129)
    c = simulate_weak_batch(b, 0.3, GAUSS, 0.0, 500, 3, 129, chunk=77)
    assert np.all(a.weights > 0)
    assert np.array_equal(a.log_w, c.log_w)


def test_novikov_examples():
    zero = novikov_diagnostic(library_drift("zero", 0.5), 0.5, GAUSS, 0.0, 100, n=65)
    assert zero.estimate == 1.0
    one = novikov_diagnostic(library_drift("const", 0.5), 0.5, GAUSS, 0.0, 100, n=65)
    assert one.estimate == pytest.approx(math.exp(0.5), rel=1e-12)
    assert one.stable


def test_novikov_sin_low_hurst_stable():
    res = novikov_diagnostic(library_drift("sin", 0.3), 0.3, GAUSS, 0.0, 2000, n=129)
    assert math.isfinite(res.estimate) and res.stable


def test_novikov_needs_samples():
    with pytest.raises(ValueError):
        novikov_diagnostic(library_drift("zero", 0.5), 0.5, GAUSS, 0.0, 10)


@pytest.mark.parametrize("name", [d for d in DRIFT_LIBRARY if d not in ("linear", "neg-linear", "sqrt-growth", "sign")])
@pytest.mark.parametrize("H", [0.3, 0.75])
def test_library_drifts_satisfy_their_class(name, H):
    library_drift(name, H).check(H)


def test_regime_mismatch_rejected():
    with pytest.raises(ValueError):
        library_drift("sign", 0.3).check(0.75)
    with pytest.raises(ValueError):
        library_drift("linear").check(0.3)


def test_growth_violation_detected():
    bad = DriftSpec(lambda t, x: 3 * x, "low", 1.0, 0.25)
    with pytest.raises(ValueError):
        bad.check(0.3)
