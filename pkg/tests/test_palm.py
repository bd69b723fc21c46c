import math

import numpy as np
import pytest

from superpalm.core import InvalidInputError, Window, make_rng
from superpalm.palm import (
    BatchPatterns,
    PalmCheck,
    MonteCarloEstimate,
    campbell_lhs,
    grid_function,
    mixture_weights,
    palm_mixture_rhs,
    poisson_component,
    standard_test_pairs,
    superposition_sampler,
    validate_poisson_superposition,
)

UNIT = Window(0.0, 1.0, 0.0, 1.0)


def poisson_closed_form(intensity, fvals, gvals, area_cell):
    """E[Phi(g) e^{-Phi(f)}] for a Poisson process with piecewise-constant f, g.

    Campbell-Mecke plus Slivnyak: lam int g e^{-f} dx * exp(-lam int (1 - e^{-f}) dx).
    """
    ef = np.exp(-fvals)
    return intensity * area_cell * float((gvals * ef).sum()) * math.exp(-intensity * area_cell * float((1 - ef).sum()))


def test_batch_sums_group_by_pattern():
    b = BatchPatterns(np.array([[0.1, 0.1], [0.2, 0.2], [0.9, 0.9]]), np.array([2, 0, 1]))
    np.testing.assert_allclose(b.sums(lambda x: x[:, 0]), [0.3, 0.0, 0.9])


def test_palm_batch_contains_the_atom():
    comp = poisson_component(UNIT, 5.0)
    xs = np.array([[0.25, 0.75], [0.5, 0.5], [0.9, 0.1]])
    batch = comp.sample_palm_batch(xs, make_rng(0))
    starts = np.concatenate([[0], np.cumsum(batch.counts)[:-1]])
    np.testing.assert_array_equal(batch.points[starts], xs)
    assert np.all(batch.counts >= 1)


def test_grid_function_cells():
    vals = np.arange(16.0).reshape(4, 4)
    fn = grid_function(vals, UNIT)
    pts = np.array([[0.1, 0.1], [0.3, 0.1], [0.1, 0.3], [1.0, 1.0], [0.0, 0.0]])
    np.testing.assert_array_equal(fn(pts), [0.0, 4.0, 1.0, 15.0, 0.0])


def test_standard_pairs_are_frozen_and_bounded():
    a = standard_test_pairs(UNIT)
    b = standard_test_pairs(UNIT)
    pts = make_rng(0).random((500, 2))
    for (f1, g1), (f2, g2) in zip(a, b):
        np.testing.assert_array_equal(f1(pts), f2(pts))
        np.testing.assert_array_equal(g1(pts), g2(pts))
        assert np.all((0 <= f1(pts)) & (f1(pts) <= 0.05))
        assert np.all((0 <= g1(pts)) & (g1(pts) <= 1))
    assert len(a) == 5


def test_mixture_weights_are_intensity_shares():
    comps = [poisson_component(UNIT, 60), poisson_component(UNIT, 40)]
    w = mixture_weights(comps, make_rng(1).random((10, 2)))
    np.testing.assert_allclose(w, np.tile([0.6, 0.4], (10, 1)), rtol=1e-15)
    with pytest.raises(InvalidInputError):
        mixture_weights([poisson_component(UNIT, 0)], np.zeros((1, 2)))


def test_lhs_matches_poisson_closed_form():
    rng = np.random.default_rng(3)
    fv, gv = 0.05 * rng.random((4, 4)), rng.random((4, 4))
    f, g = grid_function(fv, UNIT), grid_function(gv, UNIT)
    comps = [poisson_component(UNIT, 60), poisson_component(UNIT, 40)]
    exact = poisson_closed_form(100, fv, gv, 1 / 16)
    lhs = campbell_lhs(superposition_sampler(comps), f, g, 20_000, make_rng(4))
    rhs = palm_mixture_rhs(comps, f, g, 20_000, make_rng(5))
    assert abs(lhs.estimate - exact) <= 4 * lhs.std_error
    assert abs(rhs.estimate - exact) <= 4 * rhs.std_error


def test_rhs_branch_frequencies():
    comps = [poisson_component(UNIT, 60), poisson_component(UNIT, 40)]
    f, g = standard_test_pairs(UNIT)[0]
    _, w = palm_mixture_rhs(comps, f, g, 1000, make_rng(6), return_weights=True)
    assert w.shape == (1000, 2)


def test_identity_holds_for_all_standard_pairs():
    for i, (f, g) in enumerate(standard_test_pairs(UNIT)):
        check = validate_poisson_superposition([60, 40], f, g, 20_000, make_rng(7, 2 * i), make_rng(7, 2 * i + 1))
        assert check.passed(), check.to_dict()


def test_identity_detects_wrong_mixture():
    # dropping the Palm atom (using the plain process) must break the identity
    comps = [poisson_component(UNIT, 60), poisson_component(UNIT, 40)]
    fv = np.full((4, 4), 0.05)
    f, g = grid_function(fv, UNIT), grid_function(np.ones((4, 4)), UNIT)
    lhs = campbell_lhs(superposition_sampler(comps), f, g, 20_000, make_rng(8))
    wrong = 100 * np.mean(np.exp(-superposition_sampler(comps)(20_000, make_rng(9)).sums(f)))
    assert abs(lhs.estimate - wrong) > 10 * lhs.std_error


def test_deterministic_given_seed():
    f, g = standard_test_pairs(UNIT)[1]
    a = validate_poisson_superposition([60, 40], f, g, 500, make_rng(1), make_rng(2))
    b = validate_poisson_superposition([60, 40], f, g, 500, make_rng(1), make_rng(2))
    assert a.to_dict() == b.to_dict()


def test_sample_size_floor_and_window_mismatch():
    f, g = standard_test_pairs(UNIT)[0]
    comps = [poisson_component(UNIT, 60)]
    with pytest.raises(InvalidInputError):
        campbell_lhs(superposition_sampler(comps), f, g, 99, make_rng(0))
    with pytest.raises(InvalidInputError):
        palm_mixture_rhs([poisson_component(UNIT, 1), poisson_component(Window(0, 2, 0, 1), 1)], f, g, 100, make_rng(0))


def test_palm_check_z_score():
    c = PalmCheck(MonteCarloEstimate(1.0, 0.3, 100), MonteCarloEstimate(0.0, 0.4, 100))
    assert c.z_score == pytest.approx(2.0)
    assert c.passed()
    assert set(c.to_dict()) == {"lhs", "lhs_se", "rhs", "rhs_se", "z_score", "pass"}
