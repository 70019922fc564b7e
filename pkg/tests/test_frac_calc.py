import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from fbmjump.frac_calc import (
    GridFunction,
    frac_integral_left,
    frac_integral_right,
    marchaud_derivative,
    weight_pow,
)

N = 4096


def rel_l2(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def grid(fn, n=N):
    return GridFunction.from_callable(fn, 0.0, 1.0, n)


def test_left_integral_of_one_order_one_is_cumulative():
    g = grid(lambda t: np.ones_like(t), 257)
    np.testing.assert_allclose(frac_integral_left(g, 1.0).values, g.times, atol=1e-13)


def test_left_integral_power_rule_constant():
    g = grid(lambda t: np.ones_like(t))
    out = frac_integral_left(g, 0.5)
    exact = g.times**0.5 / special.gamma(1.5)
    assert rel_l2(out.values, exact) < 1e-2


def test_left_integral_power_rule_linear():
    g = grid(lambda t: t)
    out = frac_integral_left(g, 0.5)
    # Gamma(2)/Gamma(2.5), frozen from mpmath
    exact = 0.752252778063675049 * g.times**1.5
    assert rel_l2(out.values, exact) < 1e-2


def test_right_integral_order_one():
    g = grid(lambda t: np.ones_like(t), 257)
    np.testing.assert_allclose(frac_integral_right(g, 1.0).values, 1.0 - g.times, atol=1e-13)


def test_right_integral_power_rule():
    g = grid(lambda t: np.ones_like(t))
    exact = (1.0 - g.times) ** 0.5 / special.gamma(1.5)
    assert rel_l2(frac_integral_right(g, 0.5).values, exact) < 1e-2


@pytest.mark.parametrize("alpha", [0.2, 0.5, 0.9])
def test_right_integral_is_reversed_left_integral(alpha):
    g = grid(lambda t: np.cos(4 * t) + t, 513)
    left_rev = frac_integral_left(g.reversed(), alpha).reversed()
    assert np.array_equal(left_rev.values, frac_integral_right(g, alpha).values)


def test_marchaud_of_identity():
    g = grid(lambda t: t)
    d = marchaud_derivative(g, 0.5, 0.0)
    exact = g.times**0.5 / special.gamma(1.5)
    assert rel_l2(d.values[8:], exact[8:]) < 2e-2


@pytest.mark.parametrize("alpha", [0.1, 0.3, 0.5, 0.7, 0.9])
def test_marchaud_inverts_left_integral(alpha):
    g = grid(lambda t: np.cos(3 * t) + t**2)
    d = marchaud_derivative(frac_integral_left(g, alpha), alpha, 0.0)
    assert rel_l2(d.values[8:], g.values[8:]) < 1e-2


@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
def test_marchaud_of_constant(alpha):
    c = 2.5
    g = grid(lambda t: np.full_like(t, c), 1025)
    d = marchaud_derivative(g, alpha, 0.0)
    exact = c / (special.gamma(1 - alpha) * g.times[1:] ** alpha)
    np.testing.assert_allclose(d.values[1:], exact, rtol=1e-12)


def test_marchaud_truncation_rejects_subgrid_eps():
    g = grid(lambda t: t, 65)
    with pytest.raises(ValueError):
        marchaud_derivative(g, 0.5, g.h / 3)


def test_inversion_error_decreases_under_refinement():
    alpha = 0.5
    errs = []
    for n in (1024, 2048, 4096):
        g = grid(lambda t: np.sin(2 * t) + 1, n)
        d = marchaud_derivative(frac_integral_left(g, alpha), alpha, 0.0)
        errs.append(rel_l2(d.values[8:], g.values[8:]))
    assert errs[0] > errs[1] > errs[2]
    assert np.log2(errs[0] / errs[2]) / 2 >= 0.5


def test_weight_pow_cases():
    g = grid(lambda t: np.ones_like(t), 33)
    np.testing.assert_allclose(weight_pow(g, 2.0).values, g.times**2)
    assert np.array_equal(weight_pow(g, 0.0).values, g.values)
    lin = grid(lambda t: t, 33)
    out = weight_pow(lin, -0.5).values
    assert out[0] == 0.0
    np.testing.assert_allclose(out[1:], lin.times[1:] ** 0.5)
    with pytest.raises(ValueError):
        weight_pow(g, -0.5)


def test_order_out_of_range_rejected():
    g = grid(lambda t: t, 17)
    with pytest.raises(ValueError):
        frac_integral_left(g, 1.5)
    with pytest.raises(ValueError):
        marchaud_derivative(g, 1.0)


def test_grid_function_validation():
    with pytest.raises(ValueError):
        GridFunction(0.0, 1.0, [1.0])
    with pytest.raises(ValueError):
        GridFunction(1.0, 0.0, [1.0, 2.0])
    with pytest.raises(ValueError):
        GridFunction(0.0, 1.0, [1.0, np.nan])


def test_grid_function_is_cadlag():
    g = GridFunction(0.0, 1.0, [0.0, 1.0, 2.0])
    assert g(0.49) == 0.0
    assert g(0.5) == 1.0
    assert g(1.0) == 2.0


coeffs = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=25, deadline=None)
@given(a=coeffs, b=coeffs, alpha=st.floats(0.05, 1.0))
def test_left_integral_is_linear(a, b, alpha):
    f = grid(lambda t: np.sin(5 * t), 129)
    g = grid(lambda t: t**2, 129)
    combo = f.with_values(a * f.values + b * g.values)
    lhs = frac_integral_left(combo, alpha).values
    rhs = a * frac_integral_left(f, alpha).values + b * frac_integral_left(g, alpha).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + abs(a) + abs(b)))


@settings(max_examples=25, deadline=None)
@given(
    vals=st.lists(st.floats(0, 10, allow_nan=False), min_size=2, max_size=64),
    alpha=st.floats(0.05, 1.0),
)
def test_left_integral_preserves_positivity(vals, alpha):
    g = GridFunction(0.0, 1.0, vals)
    assert np.all(frac_integral_left(g, alpha).values >= -1e-12)
