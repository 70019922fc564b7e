import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from fbmjump.density_krylov import (
    DensityParams,
    density_mass,
    drift_free_samples,
    histogram_l1,
    krylov_check,
    krylov_constants,
    krylov_J,
    poisson_truncation,
    transition_density,
)
from fbmjump.frac_calc import GridFunction
from fbmjump.girsanov_weak import library_drift
from fbmjump.point_process import CompoundPoissonSpec, JumpDistribution

GAUSS = JumpDistribution.gaussian(0.0, 1.0)


def test_no_jump_limit_is_gaussian():
    p = DensityParams(0.8, 0.4, 0.3, CompoundPoissonSpec(1e-12, GAUSS, 1.0))
    y = np.linspace(-3, 3, 41)
    np.testing.assert_allclose(transition_density(p, y), stats.norm.pdf(y, 0.4, 0.8**0.3), rtol=1e-9)


def test_gaussian_mixture_spot_value():
    # sum_n e^{-1}/n! N(0, 1 + n) density at 0, frozen from mpmath
    p = DensityParams(1.0, 0.7, 0.5, CompoundPoissonSpec(1.0, GAUSS, 1.0))
    assert transition_density(p, 0.7) == pytest.approx(0.308459241525593695, rel=1e-10)


@pytest.mark.parametrize(
    "law",
    [GAUSS, JumpDistribution.constant(0.8), JumpDistribution.two_point(-1.0, 0.5, 0.4), JumpDistribution.exponential(1.5)],
)
def test_unit_mass(law):
    p = DensityParams(0.7, 0.0, 0.3, CompoundPoissonSpec(2.0, law, 1.0))
    assert density_mass(p) == pytest.approx(1.0, abs=1e-6)
    assert np.all(transition_density(p, np.linspace(-15, 10, 501)) >= 0)


def test_exponential_jump_density_against_quadrature():
    # one exponential claim: e^{-lt}[N(x0, s^2) + lt (N * Exp)] + O((lt)^2) terms
    rate, lam, t, H = 2.0, 0.01, 1.0, 0.5
    p = DensityParams(t, 0.0, H, CompoundPoissonSpec(lam, JumpDistribution.exponential(rate), 1.0))
    y = -0.7

    def conv(z):
        return rate * math.exp(-rate * z) * stats.norm.pdf(y + z)

    one, _ = integrate.quad(conv, 0, np.inf)
    ref = math.exp(-lam) * (stats.norm.pdf(y) + lam * one)
    assert transition_density(p, y) == pytest.approx(ref, rel=1e-3)


def test_truncation_tail():
    n = poisson_truncation(3.0)
    assert stats.poisson.sf(n, 3.0) < 1e-12 <= stats.poisson.sf(n - 1, 3.0)
    assert poisson_truncation(0.0) == 0


def test_sampler_histogram_matches_density():
    p = DensityParams(1.0, 0.0, 0.5, CompoundPoissonSpec(1.0, GAUSS, 1.0))
    x = drift_free_samples(p, 20_000, seed=1, n_grid=9)
    assert histogram_l1(p, x) < 0.1


def test_krylov_J_frozen():
    # (2 pi)^{-1/2} / (sqrt 2 * 0.75), frozen from mpmath
    assert krylov_J(0.25, 1.0, 2.0) == pytest.approx(0.376126389031837525, rel=1e-14)


def test_krylov_J_against_time_integral():
    val, _ = integrate.quad(lambda t: (2 * math.pi) ** -0.5 * 2**-0.5 * t**-0.25, 0, 1)
    assert krylov_J(0.25, 1.0, 2.0) == pytest.approx(val, rel=1e-10)


def test_constants_for_zero_shift():
    zeros = [GridFunction(0.0, 1.0, np.zeros(9)) for _ in range(5)]
    c = krylov_constants(0.25, 1.0, 2.0, 2.0, zeros)
    assert c.K == 1.0 and c.K_stderr == 0.0
    assert 1 / c.alpha + 1 / c.beta == pytest.approx(1.0, abs=1e-12)
    assert 1 / c.gamma + 1 / c.gamma_p == pytest.approx(1.0, abs=1e-12)
    assert c.G == pytest.approx(c.J ** (1 / (c.gamma_p * c.beta)), rel=1e-14)


def test_constants_domain():
    with pytest.raises(ValueError):
        krylov_constants(0.5, 1.0, 1.5, 2.0, [0.0])


def test_zero_test_function():
    spec = CompoundPoissonSpec(1.0, GAUSS, 1.0)
    gs = {"zero": (lambda t, y: np.zeros(np.broadcast(t, y).shape), (-1.0, 1.0))}
    reports, _ = krylov_check(library_drift("sin", 0.5), 0.5, spec, gs, 200, n=33)
    r = reports[0]
    assert r.lhs == 0.0 and r.rhs == 0.0 and r.passed


def test_indicator_occupation_against_density():
    spec = CompoundPoissonSpec(1.0, GAUSS, 1.0)
    box = (-1.0, 1.0)
    gs = {"box": (lambda t, y: ((y >= -1.0) & (y <= 1.0)).astype(float) * np.ones_like(t), box)}
    m = 4000
    reports, _ = krylov_check(library_drift("zero", 0.5), 0.5, spec, gs, m, n=257)
    r = reports[0]

    def mass(t):
        if t == 0:
            return 1.0
        p = DensityParams(t, 0.0, 0.5, spec)
        return integrate.quad(lambda y: float(transition_density(p, y)), -1, 1)[0]

    ref, _ = integrate.quad(mass, 0, 1, limit=100)
    assert abs(r.lhs - ref) < 3 * r.stderr + 2e-3
    assert r.passed


def test_gaussian_bump_passes_low_hurst():
    spec = CompoundPoissonSpec(1.0, GAUSS, 1.0)
    gs = {"bump": (lambda t, y: np.exp(-((y / 0.3) ** 2)) * np.ones_like(t), (-3.0, 3.0))}
    reports, _ = krylov_check(library_drift("sin", 0.3), 0.3, spec, gs, 2000, n=129)
    assert reports[0].passed


@settings(max_examples=15, deadline=None)
@given(H=st.floats(0.1, 0.9), lam=st.floats(0.1, 3.0), t=st.floats(0.2, 1.0))
def test_density_nonnegative_and_normalized(H, lam, t):
    p = DensityParams(t, 0.0, H, CompoundPoissonSpec(lam, GAUSS, 1.0))
    assert density_mass(p) == pytest.approx(1.0, abs=1e-6)
    assert np.all(transition_density(p, np.linspace(-8, 8, 101)) >= 0)
