"""Shared fixtures: small systems and stream keys."""

import numpy as np
import pytest

from particle_planning.lowerbound import build_lowerbound_process
from particle_planning.model import AvgL1Reward, LinearPolicy, time_invariant_spec
from particle_planning.noise import DiagonalGaussian, point_mass, uniform_atoms
from particle_planning.streams import StreamKey


@pytest.fixture
def key():
    return StreamKey(20240101)


@pytest.fixture
def gaussian_scalar_spec():
    """A = 0.9, B = C = 1, unit Gaussian noise, T = 5."""
    noise = DiagonalGaussian([0.0], [1.0])
    return time_invariant_spec(0.9, 1.0, 1.0, noise, noise, horizon=5)


@pytest.fixture
def two_atom_spec():
    """+-1 transition steps, unit Gaussian observations, A = 0.5, T = 4."""
    return time_invariant_spec(0.5, 1.0, 1.0, uniform_atoms([-1.0, 1.0], subgaussian_m=1.0),
                               DiagonalGaussian([0.0], [1.0]), horizon=4)


@pytest.fixture
def zero_noise_spec():
    zero = point_mass([0.0])
    return time_invariant_spec(1.0, 1.0, 1.0, zero, zero, horizon=6, x0=[1.0])


@pytest.fixture
def scalar_policy():
    return LinearPolicy(np.array([[-0.5]]))


@pytest.fixture
def avg_l1():
    def make(spec):
        return AvgL1Reward(spec.state_dim, spec.horizon)
    return make


@pytest.fixture
def lowerbound3():
    return build_lowerbound_process(3)
