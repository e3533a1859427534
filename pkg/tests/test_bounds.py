import math

import numpy as np
import pytest

from robust_extremes.bounds import (
    MomentSummary,
    Regime,
    clip_to_triangle,
    delta_star,
    delta_star_star,
    exact_bound,
    kl_bound,
    moments_for_pickands,
    optimizer_density,
    pseudo_density,
    renyi_eta_bound,
    sqrt_bound,
)
from robust_extremes.numerics import integrate
from robust_extremes.spectral import AsymmetricLogistic, ExtremalT, HuslerReiss, pickands

HR = HuslerReiss(0.6)
AL = AsymmetricLogistic(0.4, 0.7, 1.0)


def test_moment_summary_from_points():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    y = np.array([0.0, 1.0, 1.0, 0.0])
    ms = MomentSummary.from_weighted(x, y, np.full(4, 0.25))
    assert ms.e_x == pytest.approx(1.5)
    assert ms.var_x == pytest.approx(1.25)
    assert ms.cov_xy[0] == pytest.approx(0.0)
    assert ms.det_ratio == pytest.approx(1.25)


def test_singular_constraints_rejected():
    with pytest.raises(ValueError):
        MomentSummary.from_weighted(np.arange(3.0), np.ones(3), np.ones(3))


def test_sqrt_bound_formula():
    ms = moments_for_pickands(HR, 0.4)
    assert ms.e_x == pytest.approx(pickands(HR, 0.4), abs=1e-14)
    for d in (0.0, 0.1, 2.0):
        half = math.sqrt(d * ms.det_ratio)
        assert sqrt_bound(ms, d, "upper") == pytest.approx(ms.e_x + half)
        assert sqrt_bound(ms, d, "lower") == pytest.approx(ms.e_x - half)
    with pytest.raises(ValueError):
        sqrt_bound(ms, -1.0)
    with pytest.raises(ValueError):
        sqrt_bound(ms, 0.1, "sideways")


def test_clip_to_triangle():
    lo, hi = clip_to_triangle([0.2, 0.5], [0.1, 0.4], [1.3, 0.9])
    np.testing.assert_allclose(lo, [0.8, 0.5])
    np.testing.assert_allclose(hi, [1.0, 0.9])


@pytest.mark.parametrize("direction", ["upper", "lower"])
def test_sqrt_bound_is_exact_below_threshold(direction):
    d1 = delta_star(HR, 0.4, "p", direction)
    r = exact_bound(HR, 0.4, "p", 0.9 * d1, direction)
    assert r.regime == Regime.SQRT_EXACT
    assert r.exact_value == pytest.approx(r.sqrt_value, abs=1e-12)


@pytest.mark.parametrize("model", [HR, AL, ExtremalT(0.65, 1.21)])
@pytest.mark.parametrize("direction", ["upper", "lower"])
def test_exact_between_centre_and_sqrt(model, direction):
    sign = 1.0 if direction == "upper" else -1.0
    for d in (0.05, 0.3, 1.0):
        r = exact_bound(model, 0.3, "p", d, direction)
        assert r.exact_value is not None
        assert sign * (r.exact_value - r.e_x) >= -1e-10
        assert sign * (r.sqrt_value - r.exact_value) >= -1e-10
        assert 0.7 - 1e-10 <= r.exact_value <= 1 + 1e-10


def test_degenerate_above_second_threshold():
    both = AsymmetricLogistic(0.4, 0.7, 0.7)
    d2 = delta_star_star(both, 0.3, "p", "upper")
    assert d2 == pytest.approx(7 / 3, abs=1e-6)
    r = exact_bound(both, 0.3, "p", 1.1 * d2, "upper")
    assert r.regime == Regime.DEGENERATE
    assert r.exact_value == 1.0
    d2 = delta_star_star(AL, 0.3, "p", "lower")
    assert delta_star(AL, 0.3, "p", "lower") <= d2
    assert exact_bound(AL, 0.3, "p", 1.1 * d2, "lower").exact_value == 0.7


def test_upper_threshold_needs_both_endpoint_atoms():
    assert delta_star_star(HR, 0.3, "p", "upper") == math.inf
    assert delta_star_star(AL, 0.3, "p", "upper") == math.inf


def test_optimizer_density_is_feasible():
    d = 0.3
    r = exact_bound(AL, 0.3, "p", d, "lower")
    assert r.regime == Regime.EXACT_SOLVED
    q = optimizer_density(r, AL, 0.3, "p")
    assert q.total_mass() == pytest.approx(1.0, abs=1e-6)
    assert integrate(lambda y: y, q) == pytest.approx(0.5, abs=1e-6)
    x = lambda y: 2.0 * np.maximum(0.7 * y, 0.3 * (1 - y))  # noqa: E731
    assert integrate(x, q) == pytest.approx(r.exact_value, abs=1e-6)


def test_pseudo_density_negative_beyond_threshold():
    d1 = delta_star(HR, 0.4, "p", "upper")
    y = np.linspace(0, 1, 4001)[1:-1]
    assert np.min(pseudo_density(HR, 0.4, "p", 0.5 * d1, "upper")(y)) >= -1e-9
    assert np.min(pseudo_density(HR, 0.4, "p", 4.0 * d1, "upper")(y)) < 0


def test_near_degenerate_solve_is_bracketed():
    # close to the degenerate threshold the dual is nearly singular
    m = AsymmetricLogistic(0.875, 0.5, 0.5)
    prev = -math.inf
    for d in (0.8, 0.9, 0.99):
        r = exact_bound(m, 0.1, "p", d, "upper")
        assert r.regime == Regime.EXACT_SOLVED
        # values agree with monotonicity up to the quadrature residual
        assert prev - 5e-8 <= r.exact_value <= 1.0 + 1e-8
        prev = r.exact_value


def test_renyi_order_two_matches_divergence_ball():
    r2 = renyi_eta_bound(AL, 0.3, math.log1p(0.2), eta=2.0, direction="upper")
    ex = exact_bound(AL, 0.3, "p", 0.2, "upper")
    assert r2.value == pytest.approx(ex.value, abs=1e-6)


def test_kl_bound_monotone_in_radius():
    vals = [kl_bound(HR, 0.4, d, "upper").value for d in (0.01, 0.05, 0.2)]
    assert pickands(HR, 0.4) < vals[0] < vals[1] < vals[2] <= 1.0
    lows = [kl_bound(HR, 0.4, d, "lower").value for d in (0.01, 0.05, 0.2)]
    assert 0.6 <= lows[2] < lows[1] < lows[0] < pickands(HR, 0.4)
