import numpy as np
import pytest

from robust_extremes.numerics import AtomicMeasure, RngState, SolverError, integrate, sample_positive_stable, solve_system


def test_lebesgue_mass_and_moments():
    m = AtomicMeasure.lebesgue()
    assert m.total_mass() == pytest.approx(1.0, abs=1e-12)
    assert integrate(lambda y: y**2, m) == pytest.approx(1 / 3, abs=1e-12)


def test_atoms_are_added_to_the_density():
    m = AtomicMeasure(density=lambda y: 2 * np.ones_like(y), atoms=((0.0, 0.25), (1.0, 0.5)))
    assert m.total_mass() == pytest.approx(2.75, abs=1e-12)
    assert integrate(lambda y: y, m) == pytest.approx(1.5, abs=1e-12)


def test_kink_points_are_respected():
    m = AtomicMeasure(density=lambda y: np.ones_like(y), points=(0.3,))
    assert integrate(lambda y: np.abs(y - 0.3), m) == pytest.approx(0.5 * (0.09 + 0.49), abs=1e-12)


@pytest.mark.parametrize("atoms", [((0.5, 1.0), (0.5, 2.0)), ((0.5, -1.0),), ((1.5, 1.0),)])
def test_invalid_atoms_raise(atoms):
    with pytest.raises(ValueError):
        AtomicMeasure(atoms=atoms)


def test_rng_state_is_reproducible_and_streams_differ():
    a = RngState(7, 1).generator().random(5)
    b = RngState(7, 1).generator().random(5)
    c = RngState(7).spawn(2).generator().random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_solve_system_finds_root():
    x = solve_system(lambda v: np.array([v[0] ** 2 - 2.0, v[1] - v[0]]), [1.0, 0.0])
    np.testing.assert_allclose(x, [np.sqrt(2), np.sqrt(2)], atol=1e-10)


def test_solve_system_reports_failure():
    with pytest.raises(SolverError):
        solve_system(lambda v: np.array([v[0] ** 2 + 1.0]), [1.0], max_iter=20)


def test_positive_stable_laplace_transform():
    s = sample_positive_stable(0.5, RngState(3), size=200_000)
    for t in (0.5, 1.0, 2.0):
        assert np.mean(np.exp(-t * s)) == pytest.approx(np.exp(-(t**0.5)), abs=5e-3)


def test_positive_stable_index_one_is_degenerate():
    np.testing.assert_array_equal(sample_positive_stable(1.0, 0, size=4), np.ones(4))
    with pytest.raises(ValueError):
        sample_positive_stable(1.5, 0, size=4)
