import math

import numpy as np
import pytest

from particle_planning.errors import SpecError
from particle_planning.noise import (
    DiagonalGaussian,
    FiniteSupport,
    density,
    log_density,
    mgf_bound_check,
    point_mass,
    sample,
    uniform_atoms,
)


def test_gaussian_log_density_at_mean():
    dist = DiagonalGaussian([0.0], [1.0])
    assert dist.log_density(np.array([0.0])) == pytest.approx(-0.5 * math.log(2 * math.pi))


def test_gaussian_shapes_and_moments():
    dist = DiagonalGaussian([1.0, -1.0], [2.0, 0.5])
    rng = np.random.Generator(np.random.Philox(0))
    assert dist.sample(rng).shape == (2,)
    assert dist.sample(rng, 7).shape == (7, 2)
    np.testing.assert_array_equal(dist.mean(), [1.0, -1.0])
    np.testing.assert_array_equal(dist.covariance(), np.diag([2.0, 0.5]))


def test_gaussian_rejects_zero_variance():
    with pytest.raises(SpecError):
        DiagonalGaussian([0.0], [0.0])


def test_query_dimension_checked():
    with pytest.raises(SpecError):
        DiagonalGaussian([0.0, 0.0], [1.0, 1.0]).log_density(np.zeros(3))


def test_atom_mass_is_exact_match():
    dist = uniform_atoms([0.0, 1.0])
    np.testing.assert_array_equal(dist.mass(np.array([[0.0], [1.0], [0.5], [2.0]])), [0.5, 0.5, 0.0, 0.0])
    assert dist.log_density(np.array([0.5])) == -np.inf


def test_atom_moments():
    dist = uniform_atoms([0.0, 1.0])
    assert dist.mean()[0] == 0.5
    assert dist.covariance()[0, 0] == pytest.approx(0.25)
    assert dist.support_size == 2
    assert not dist.is_point_mass


@pytest.mark.parametrize("points, masses, scale", [
    ([[0.0], [1.0]], [0.5, 0.6], 1.0),
    ([[0.0], [0.5]], [0.5, 0.5], 1.0),
    ([[1.0], [1.0]], [0.5, 0.5], 1.0),
    ([[0.0], [1.0]], [0.0, 1.0], 1.0),
])
def test_invalid_finite_support(points, masses, scale):
    with pytest.raises(SpecError):
        FiniteSupport(np.array(points), np.array(masses), lattice_scale=scale)


def test_half_lattice():
    dist = FiniteSupport(np.array([[-0.5], [0.5]]), np.array([0.5, 0.5]), lattice_scale=0.5)
    assert dist.mass(np.array([0.5]))[()] == 0.5


def test_point_mass_consumes_no_draws():
    rng = np.random.Generator(np.random.Philox(3))
    fresh = np.random.Generator(np.random.Philox(3))
    dist = point_mass([2.0])
    np.testing.assert_array_equal(dist.sample(rng, 4), [[2.0]] * 4)
    assert rng.standard_normal() == fresh.standard_normal()
    assert dist.is_point_mass


def test_draws_land_on_atoms():
    dist = uniform_atoms([-1.0, 1.0])
    draws = dist.sample(np.random.Generator(np.random.Philox(5)), 1000)
    assert set(np.unique(draws)) == {-1.0, 1.0}


def test_mgf_check_rademacher():
    dist = uniform_atoms([-1.0, 1.0])
    assert mgf_bound_check(dist, 1.0).passed
    assert not mgf_bound_check(dist, 2.0).passed


def test_mgf_check_gaussian():
    dist = DiagonalGaussian([0.0], [1.0])
    assert mgf_bound_check(dist, 1.0).passed
    report = mgf_bound_check(dist, 2.0)
    assert not report.passed
    assert report.max_ratio > 1.0


def test_density_is_mass_on_atoms_and_pdf_for_gaussian():
    atoms = uniform_atoms([-1.0, 1.0])
    np.testing.assert_allclose(density(atoms, np.array([[-1.0], [0.0], [1.0]])), [0.5, 0.0, 0.5])
    gauss = DiagonalGaussian([0.0], [1.0])
    assert density(gauss, np.array([0.0])) == pytest.approx(1.0 / math.sqrt(2 * math.pi))


def test_sample_moments_over_a_million_draws():
    rng = np.random.Generator(np.random.Philox(11))
    signs = sample(uniform_atoms([-1.0, 1.0]), rng, 1_000_000)
    assert -0.004 <= signs.mean() <= 0.004
    normals = sample(DiagonalGaussian([0.0], [1.0]), rng, 1_000_000)
    assert 0.995 <= normals.var() <= 1.005
    assert abs(normals.mean()) <= 0.004


def test_atom_masses_sum_to_one():
    dist = FiniteSupport(np.array([[0.0], [1.0], [3.0]]), np.array([0.2, 0.3, 0.5]))
    assert math.fsum(dist.masses) == pytest.approx(1.0, abs=1e-12)
    assert math.fsum(uniform_atoms([0.0, 1.0, 2.0, 5.0, 7.0, 9.0, 11.0]).masses) == pytest.approx(1.0, abs=1e-12)
    single = point_mass([0.0])
    np.testing.assert_array_equal(single.sample(rng=None, size=3), np.zeros((3, 1)))


@pytest.mark.parametrize("dist, queries", [
    (DiagonalGaussian([0.5, -1.0], [0.3, 2.0]), np.array([[0.0, 0.0], [0.5, -1.0], [3.0, 2.0]])),
    (FiniteSupport(np.array([[0.0], [1.0], [3.0]]), np.array([0.2, 0.3, 0.5])), np.array([[0.0], [1.0], [3.0]])),
])
def test_log_density_matches_density(dist, queries):
    np.testing.assert_allclose(np.exp(log_density(dist, queries)), density(dist, queries), rtol=1e-12)
