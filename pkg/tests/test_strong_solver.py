import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbmjump.fbm import FbmPath, sample_fbm
from fbmjump.frac_calc import GridFunction
from fbmjump.girsanov_weak import DriftSpec, library_drift
from fbmjump.point_process import CompoundPoissonSpec, JumpDistribution, JumpPath, sample_jump_path, total_variation
from fbmjump.strong_solver import (
    SolverConfig,
    apriori_bound,
    euler_batch,
    mollify_drift,
    monotone_solve,
    solve_pathwise_euler,
    truncate_drift,
)

GAUSS = CompoundPoissonSpec(1.0, JumpDistribution.gaussian(0.0, 1.0), 1.0)


def zero_noise(n):
    return FbmPath(GridFunction(0.0, 1.0, np.zeros(n)), 0.5, "cholesky", 0)


def test_zero_drift_reproduces_noise_minus_jumps():
    fbm = sample_fbm(0.3, 1.0, 257, "circulant", 4)
    jumps = sample_jump_path(GAUSS, 4)
    sol = solve_pathwise_euler(library_drift("zero", 0.3), fbm, jumps, 0.7)
    np.testing.assert_allclose(sol.x_path.values, 0.7 + fbm.values - jumps.value(fbm.times), atol=1e-13)


def test_linear_decay_against_exponential():
    sol = solve_pathwise_euler(library_drift("neg-linear"), zero_noise(4096), None, 1.0)
    assert np.max(np.abs(sol.x_path.values - np.exp(-sol.x_path.times))) < 1e-3


def test_single_jump_is_cadlag():
    fbm = sample_fbm(0.5, 1.0, 4097, "circulant", 1)
    jumps = JumpPath(np.array([0.5]), np.array([1.0]), 1.0)
    sol = solve_pathwise_euler(library_drift("zero", 0.5), fbm, jumps, 2.0)
    j = 2048
    assert fbm.times[j] == 0.5
    assert sol.x_path.values[j] == pytest.approx(2.0 + fbm.values[j] - 1.0, abs=1e-13)
    assert sol.x_path.values[j - 1] == pytest.approx(2.0 + fbm.values[j - 1], abs=1e-13)


def test_running_min_sees_claims_between_nodes():
    t = np.linspace(0.0, 1.0, 5)
    jumps = JumpPath(np.array([0.3]), np.array([5.0]), 1.0)
    up = DriftSpec(lambda s, x: np.full(np.shape(x), 10.0))
    x, run_min, _ = euler_batch(up, 1.0, t, np.zeros((1, 5)), [jumps])
    # 1 + 10 * 0.3 - 5 = -1 just after the claim; back to 1 at the next node
    assert np.all(x >= 0)
    assert x[0, 2] == pytest.approx(1.0)
    assert run_min[0] == pytest.approx(-1.0)


def test_truncate_examples():
    lin = truncate_drift(library_drift("linear"), 2.0)
    assert lin(0.0, 1.5) == 1.5
    assert lin(0.0, 5.0) == 2.0
    sq = truncate_drift(DriftSpec(lambda t, y: y**2), 1.0)
    assert sq(0.0, -3.0) == 1.0
    assert sq.bound == pytest.approx(1.0)


def test_truncate_rejects_bad_radius():
    with pytest.raises(ValueError):
        truncate_drift(library_drift("linear"), 0.0)


@pytest.mark.parametrize("family", ["poly", "exp"])
def test_mollify_constant(family):
    b = mollify_drift(library_drift("const", 0.5, 2.5), 0.3, family)
    np.testing.assert_allclose(b(0.0, np.linspace(-3, 3, 11)), 2.5, rtol=1e-14)


@pytest.mark.parametrize("family", ["poly", "exp"])
def test_mollify_abs_at_origin(family):
    vals = []
    for d in (0.1, 0.01, 0.001):
        vals.append(float(mollify_drift(DriftSpec(lambda t, y: np.abs(y)), d, family)(0.0, 0.0)))
        assert 0 < vals[-1] < d
    # exact scaling of the bump convolution: value / delta is constant
    np.testing.assert_allclose(np.array(vals) / np.array([0.1, 0.01, 0.001]), vals[0] / 0.1, rtol=1e-10)


@pytest.mark.parametrize("name", ["sign", "holder-sign", "sin"])
def test_mollify_preserves_bound(name):
    b = library_drift(name, 0.3)
    mb = mollify_drift(b, 0.2)
    x = np.linspace(-4, 4, 2001)
    assert np.max(np.abs(mb(0.1, x))) <= np.max(np.abs(b(0.1, x))) + 1e-14


def test_monotone_zero_drift_iterates_identical():
    fbm = sample_fbm(0.3, 1.0, 257, "circulant", 9)
    jumps = sample_jump_path(GAUSS, 9)
    cfg = SolverConfig(n=257, k_max=3, n_max=2)
    sol = monotone_solve(library_drift("zero", 0.3), fbm, jumps, 0.0, cfg)
    np.testing.assert_allclose(sol.x_path.values, fbm.values - jumps.value(fbm.times), atol=1e-13)
    assert all(e.change == 0.0 for e in sol.ledger)


@pytest.mark.parametrize("H", [0.3, 0.75])
def test_monotone_limit_matches_euler_for_lipschitz(H):
    n = 4097
    fbm = sample_fbm(H, 1.0, n, "circulant", 21)
    jumps = sample_jump_path(GAUSS, 21)
    b = library_drift("sin", H)
    cfg = SolverConfig(n=n)
    mono = monotone_solve(b, fbm, jumps, 0.5, cfg)
    eul = solve_pathwise_euler(b, fbm, jumps, 0.5)
    assert np.max(np.abs(mono.x_path.values - eul.x_path.values)) < 1e-2
    for e in mono.ledger:
        assert e.violation <= 1e-8
    assert np.max(np.abs(mono.x_path.values)) <= apriori_bound(
        0.5, np.max(np.abs(fbm.values)), mono.drift_bound, 1.0, total_variation(jumps, 1.0)
    )


def test_mollifier_families_agree_for_holder_drift():
    n = 2049
    fbm = sample_fbm(0.3, 1.0, n, "circulant", 5)
    jumps = sample_jump_path(GAUSS, 5)
    b = library_drift("holder-sign", 0.3)
    tol = 1e-2
    sols = [monotone_solve(b, fbm, jumps, 0.0, SolverConfig(n=n, tolerance=tol, mollifier=f)) for f in ("poly", "exp")]
    assert np.max(np.abs(sols[0].x_path.values - sols[1].x_path.values)) <= 2 * tol


def test_residual_halves_under_refinement():
    b = library_drift("sin", 0.5)
    res = []
    for n in (1025, 2049, 4097):
        t = np.linspace(0.0, 1.0, n)
        fbm = FbmPath(GridFunction(0.0, 1.0, 0.3 * np.sin(2 * np.pi * t)), 0.5, "cholesky", 0)
        res.append(solve_pathwise_euler(b, fbm, None, 1.0).residual)
    for coarse, fine in zip(res[:-1], res[1:]):
        assert 2 * 0.7 <= coarse / fine <= 2 * 1.3


def test_truncation_consistency_before_exit():
    n = 1025
    fbm = sample_fbm(0.5, 1.0, n, "circulant", 2)
    b = DriftSpec(lambda t, x: 2.0 * x)
    x1 = solve_pathwise_euler(truncate_drift(b, 1.5), fbm, None, 1.0).x_path.values
    x2 = solve_pathwise_euler(truncate_drift(b, 3.0), fbm, None, 1.0).x_path.values
    out = np.nonzero(np.abs(x1) >= 1.5)[0]
    stop = out[0] if out.size else n
    np.testing.assert_array_equal(x1[:stop], x2[:stop])


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(n_start=3, n_max=2)
    with pytest.raises(ValueError):
        SolverConfig(mollifier="gauss")
    fbm = sample_fbm(0.5, 1.0, 65, "circulant", 0)
    with pytest.raises(ValueError):
        solve_pathwise_euler(library_drift("zero"), fbm, None, 0.0, SolverConfig(n=129))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), x0=st.floats(-3, 3), H=st.sampled_from([0.3, 0.5, 0.75]))
def test_apriori_bound_holds(seed, x0, H):
    fbm = sample_fbm(H, 1.0, 257, "circulant", seed)
    jumps = sample_jump_path(GAUSS, seed)
    b = library_drift("sin-time", H)
    sol = solve_pathwise_euler(b, fbm, jumps, x0)
    bound = apriori_bound(x0, float(np.max(np.abs(fbm.values))), 1.0, 1.0, total_variation(jumps, 1.0))
    assert np.max(np.abs(sol.x_path.values)) <= bound
    assert math.isfinite(sol.residual)
