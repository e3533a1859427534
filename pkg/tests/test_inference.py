import dataclasses

import numpy as np
import pytest

from robust_extremes.inference import (
    EXPERIMENTS,
    AngularSample,
    bootstrap_pickands,
    fit_mle,
    log_likelihood,
    model_class_bounds,
    polar_topk,
    robust_band,
    run_experiment,
)
from robust_extremes.numerics import RngState
from robust_extremes.spectral import AsymmetricLogistic, ExtremalT, HuslerReiss, pickands, sample_angle


def test_polar_topk_keeps_largest_radii():
    data = np.array([[1.0, 1.0], [3.0, 1.0], [0.5, 0.5], [1.0, 4.0]])
    s = polar_topk(data, 2)
    np.testing.assert_allclose(np.sort(s.angles), [0.2, 0.75])
    assert s.threshold == 2.0 and s.n_total == 4 and s.k == 2


def test_polar_topk_validates_k():
    with pytest.raises(ValueError):
        polar_topk(np.ones((4, 2)), 4)


def test_angular_sample_validation():
    with pytest.raises(ValueError):
        AngularSample(np.array([0.5, 1.5]), 10, 1.0)


@pytest.mark.parametrize("model", [HuslerReiss(0.8), AsymmetricLogistic(0.5, 0.9, 0.5), ExtremalT(0.6, 2.0)],
                         ids=lambda m: m.family)
def test_mle_recovers_parameters(model):
    y = sample_angle(model, 5000, RngState(11))
    fit = fit_mle(model.family, y, endpoint_tol=1e-9)
    assert fit.converged
    np.testing.assert_allclose(fit.model.params, model.params, atol=0.1)
    assert fit.loglik >= log_likelihood(model, y, 1e-9) - 1e-6


def test_unknown_family_rejected():
    with pytest.raises(ValueError):
        fit_mle("gumbel", np.full(100, 0.5))


def test_bootstrap_envelope_contains_fit():
    model = HuslerReiss(0.8)
    y = sample_angle(model, 400, RngState(1))
    fitted = fit_mle("hr", y).model
    z = np.linspace(0, 1, 11)
    env = bootstrap_pickands(AngularSample(y, 1000, 1.0), "hr", 30, z, RngState(2), fitted=fitted)
    c = pickands(fitted, z)
    assert np.all(env.lower <= c + 1e-12) and np.all(c <= env.upper + 1e-12)
    assert env.n_used + env.n_failed == 30


def test_robust_band_widens_with_delta():
    z = np.linspace(0, 1, 11)
    lo1, hi1 = robust_band(HuslerReiss(0.6), z, 0.05)
    lo2, hi2 = robust_band(HuslerReiss(0.6), z, 0.2)
    assert np.all(lo2 <= lo1 + 1e-12) and np.all(hi1 <= hi2 + 1e-12)
    assert lo1[0] == hi1[0] == 1.0
    a = pickands(HuslerReiss(0.6), z)
    assert np.all(lo1 <= a + 1e-12) and np.all(a <= hi1 + 1e-12)


def test_model_class_bound_inside_nonparametric_bound():
    model = HuslerReiss(0.6)
    val, lam = model_class_bounds("hr", model, 0.4, "p", 0.1, "upper")
    lo, hi = robust_band(model, np.array([0.4]), 0.1, clip=False)
    assert pickands(model, 0.4) < val <= hi[0] + 1e-10
    with pytest.raises(ValueError):
        model_class_bounds("et", model, 0.4)


def test_small_experiment_runs_and_is_deterministic():
    cfg = dataclasses.replace(EXPERIMENTS[4], n=3000, k=200, boot=5, z_grid=tuple(np.linspace(0, 1, 11)))
    a = run_experiment(cfg, seed=3)
    b = run_experiment(cfg, seed=3)
    np.testing.assert_array_equal(a.robust_hi, b.robust_hi)
    assert a.delta_hat == b.delta_hat and a.delta_hat >= 0
    assert np.all(a.robust_lo <= a.a_fit + 1e-12) and np.all(a.a_fit <= a.robust_hi + 1e-12)
    assert a.boot_lo is not None and a.boot_lo.shape == a.z.shape
