import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scarlab.basis import (BasisError, brute_force_basis, build_momentum_zero_sector, burnside_count,
                           dimensions, enumerate_basis, index_of, transfer_matrix_dim, translation_orbits)

import oracles


@pytest.mark.parametrize("D,expected", [(2, 7), (3, 18), (4, 47), (10, 15127)])
def test_known_dimensions(D, expected):
    assert transfer_matrix_dim(D, 1) == expected
    assert enumerate_basis(D, 1).dim == expected


@pytest.mark.parametrize("D,j", [(D, 1) for D in range(2, 7)] + [(2, 2), (3, 2), (4, 2)])
def test_enumeration_matches_brute_force(D, j):
    basis = enumerate_basis(D, j)
    assert np.array_equal(basis.codes, brute_force_basis(D, j))
    assert [tuple(s) for s in basis.states] == oracles.constrained_states(D, j)


@pytest.mark.parametrize("D,full,k0,even,odd", [
    (2, 7, 5, 3, 2), (3, 18, 8, 5, 3), (4, 47, 15, 9, 6), (8, 2207, 285, None, None),
    (10, 15127, 1529, 792, 737)])
def test_sector_dimensions(D, full, k0, even, odd):
    d = dimensions(D, 1)
    assert d["dim_full"] == full and d["dim_k0"] == k0
    if even is not None:
        assert (d["dim_even"], d["dim_odd"]) == (even, odd)
    assert d["dim_even"] + d["dim_odd"] == d["dim_k0"]


@pytest.mark.parametrize("D,j", [(3, 1), (5, 1), (6, 1), (7, 1), (4, 2)])
def test_orbits_against_oracle_and_burnside(D, j):
    basis = enumerate_basis(D, j)
    n = build_momentum_zero_sector(basis).dim
    assert n == oracles.orbit_count(D, j) == burnside_count(basis)


def test_index_of_and_blockade():
    basis = enumerate_basis(4, 1)
    assert index_of(basis, [1, -1, 0, 0]) is None
    assert index_of(basis, [0, 0, 0, 0]) is not None
    assert index_of(basis, [-1, 1, 0, 0]) is not None
    # periodic bond site 4 -> site 1
    assert index_of(basis, [-1, 0, 0, 1]) is None


@pytest.mark.parametrize("D,j", [(0, 1), (1, 1), (3, 0), (2.5, 1)])
def test_invalid_sizes(D, j):
    with pytest.raises(BasisError):
        enumerate_basis(D, j)


def test_dim_cap():
    with pytest.raises(BasisError, match="cap"):
        enumerate_basis(10, 1, dim_cap=1000)


@settings(max_examples=25, deadline=None)
@given(D=st.integers(2, 7), j=st.integers(1, 2))
def test_transfer_matrix_matches_enumeration(D, j):
    if (2 * j + 1) ** D > 20000:
        return
    assert transfer_matrix_dim(D, j) == len(brute_force_basis(D, j))


@settings(max_examples=20, deadline=None)
@given(D=st.integers(2, 8))
def test_sector_isometry(D):
    basis = enumerate_basis(D, 1)
    sec = build_momentum_zero_sector(basis)
    V = sec.V.toarray()
    assert np.allclose(V.T @ V, np.eye(sec.dim), atol=1e-13)
    T = basis.symmetry_matrix("translation").toarray()
    assert np.allclose(T @ V, V, atol=1e-13)
    I = basis.symmetry_matrix("inversion").toarray()
    assert np.allclose(I @ V, V * sec.parity[None, :], atol=1e-13)
    assert np.all(np.diff(sec.parity) <= 0)  # even block first


def test_orbit_periods_divide_length():
    basis = enumerate_basis(6, 1)
    rep, period = translation_orbits(basis)
    assert np.all(6 % period == 0)
    assert np.all(rep <= basis.codes)
