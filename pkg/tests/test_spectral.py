import numpy as np
import pytest

from robust_extremes.numerics import RngState
from robust_extremes.spectral import (
    AsymmetricLogistic,
    ExtremalT,
    HuslerReiss,
    extremal_coefficient,
    format_model,
    moment,
    parse_model,
    pickands,
    read_sample_csv,
    sample_angle,
    simulate_asym_logistic,
    to_pareto_margins,
    write_sample_csv,
)

MODELS = [HuslerReiss(0.6), HuslerReiss(3.0), AsymmetricLogistic(0.4, 0.7, 1.0), AsymmetricLogistic(0.5, 0.9, 0.5),
          ExtremalT(0.65, 1.21), ExtremalT(0.0, 4.0)]


@pytest.mark.parametrize("model", MODELS, ids=format_model)
def test_unit_mass_and_mean_half(model):
    assert moment(model, 0) == pytest.approx(1.0, abs=1e-12)
    assert moment(model, 1) == pytest.approx(0.5, abs=1e-10)


@pytest.mark.parametrize("model", MODELS, ids=format_model)
def test_pickands_is_convex_and_in_triangle(model):
    z = np.linspace(0, 1, 101)
    a = pickands(model, z)
    assert a[0] == 1.0 and a[-1] == 1.0
    assert np.all(a <= 1 + 1e-12) and np.all(a >= np.maximum(z, 1 - z) - 1e-12)
    assert np.all(np.diff(a, 2) >= -1e-10)


def test_logistic_closed_form():
    # symmetric logistic: A(z) = ((1-z)^(1/a) + z^(1/a))^a
    z = np.linspace(0.05, 0.95, 19)
    a = 0.4
    np.testing.assert_allclose(pickands(AsymmetricLogistic(a, 1.0, 1.0), z),
                               ((1 - z) ** (1 / a) + z ** (1 / a)) ** a, atol=1e-10)


def test_husler_reiss_extremal_coefficient():
    from scipy.stats import norm

    lam = 0.8
    assert extremal_coefficient(HuslerReiss(lam)) == pytest.approx(2 * norm.cdf(lam), abs=1e-10)


def test_asymmetric_logistic_atoms():
    m = AsymmetricLogistic(0.4, 0.7, 1.0)
    # the coordinate with weight b1 = 0.7 leaves (1 - 0.7) / 2 at one end
    assert m.atom_mass(0.0) == pytest.approx(0.0)
    assert m.atom_mass(1.0) == pytest.approx(0.15)


@pytest.mark.parametrize("text", ["hr:0.6", "al:0.4,0.7,1", "et:0.65,1.21"])
def test_parse_format_round_trip(text):
    m = parse_model(text)
    assert parse_model(format_model(m)) == m


@pytest.mark.parametrize("text", ["xx:1", "hr:-1", "al:1.5,1,1", "hr"])
def test_parse_rejects_bad_models(text):
    with pytest.raises(ValueError):
        parse_model(text)


def test_sample_angle_matches_mean():
    y = sample_angle(AsymmetricLogistic(0.5, 0.9, 0.5), 50_000, RngState(1))
    assert np.all((y >= 0) & (y <= 1))
    assert y.mean() == pytest.approx(0.5, abs=0.01)


def test_simulated_margins_are_unit_frechet():
    s = simulate_asym_logistic(0.4, 0.7, 1.0, 50_000, RngState(2))
    for j in range(2):
        # P(Z <= 1) = exp(-1) for unit Frechet margins
        assert np.mean(s.data[:, j] <= 1.0) == pytest.approx(np.exp(-1), abs=0.01)


def test_simulation_is_deterministic():
    a = simulate_asym_logistic(0.5, 1.0, 1.0, 100, RngState(5)).data
    b = simulate_asym_logistic(0.5, 1.0, 1.0, 100, RngState(5)).data
    np.testing.assert_array_equal(a, b)


def test_sample_csv_round_trip(tmp_path):
    s = simulate_asym_logistic(0.5, 1.0, 1.0, 50, RngState(0))
    write_sample_csv(s, tmp_path / "s.csv")
    np.testing.assert_array_equal(read_sample_csv(tmp_path / "s.csv").data, s.data)


def test_pareto_margins_are_positive():
    s = to_pareto_margins(simulate_asym_logistic(0.5, 1.0, 1.0, 1000, RngState(0)))
    assert np.all(s.data > 0)
