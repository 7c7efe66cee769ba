import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scarlab import dynamics as dyn
from scarlab.basis import build_momentum_zero_sector, enumerate_basis

import oracles


@pytest.fixture(scope="module")
def obs6(model6):
    O = model6.observable("sz(1)*sz(2)")
    return O, model6.spectrum.to_eigenbasis(O)


def test_orbit_states_D3():
    sec = build_momentum_zero_sector(enumerate_basis(3, 1))
    orbit = dyn.orbit_product_states(sec)
    assert len(orbit) == 8 == oracles.orbit_count(3, 1)
    for ms, v in orbit:
        assert np.isclose(np.linalg.norm(v), 1.0)


def test_orbit_count_D10():
    sec = build_momentum_zero_sector(enumerate_basis(10, 1), resolve_parity=False)
    assert len(dyn.orbit_product_states(sec)) == 1529


def test_initial_state_errors(model6):
    sec = model6.sector
    with pytest.raises(dyn.DynamicsError, match="blockade"):
        dyn.make_initial_state(("product", [1, -1, 0, 0, 0, 0]), sec)
    with pytest.raises(dyn.DynamicsError):
        dyn.make_initial_state(("product", [1, 1]), sec)
    with pytest.raises(dyn.DynamicsError):
        dyn.make_initial_state("psi9", sec)
    with pytest.raises(dyn.DynamicsError):
        dyn.make_initial_state(("raw", np.ones(3)), sec)


def test_time_series_must_increase():
    with pytest.raises(dyn.DynamicsError):
        dyn.TimeSeries(np.array([0.0, 1.0, 1.0]), np.zeros(3))


def test_identity_observable_is_constant(model6):
    sp_ = model6.spectrum
    ts = dyn.evolve_expectation(sp_, model6.psi1, np.eye(sp_.dim), np.linspace(0, 20, 50))
    assert np.allclose(ts.values, 1.0)
    assert dyn.fluctuation_exact(sp_, model6.psi1, np.eye(sp_.dim)) < 1e-25


def test_eigenstate_is_stationary(model6, obs6):
    O, _ = obs6
    sp_ = model6.spectrum
    v = sp_.vectors[:, 7]
    ts = dyn.evolve_expectation(sp_, v, O, np.linspace(0, 30, 40))
    assert np.ptp(ts.values) < 1e-12
    assert dyn.fluctuation_exact(sp_, v, O) < 1e-24


def test_evolution_matches_matrix_exponential(model6, obs6):
    from scipy.linalg import expm
    O, _ = obs6
    sp_ = model6.spectrum
    H = model6.H_sector.matrix
    psi = model6.psi2
    ts = dyn.evolve_expectation(sp_, psi, O, [0.0, 0.7, 3.1])
    for t, val in zip(ts.times, ts.values):
        phi = expm(-1j * H * t) @ psi
        assert np.isclose(val, (phi.conj() @ O.matrix @ phi).real, atol=1e-12)
    f = dyn.fidelity_series(sp_, psi, [0.0, 1.3])
    assert np.isclose(f.values[0], 1.0)
    assert np.isclose(f.values[1], abs(psi.conj() @ expm(-1j * H * 1.3) @ psi) ** 2)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 1000))
def test_phase_randomization_invariance(model6, obs6, seed):
    O, O_eig = obs6
    sp_ = model6.spectrum
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=sp_.dim) + 1j * rng.normal(size=sp_.dim)
    psi /= np.linalg.norm(psi)
    c = sp_.coefficients(psi)
    # multiply each degenerate block by a common random phase
    groups = sp_.degenerate_groups()
    ph = np.exp(2j * np.pi * rng.random(groups.max() + 1))[groups]
    psi2 = sp_.vectors @ (c * ph)
    for f in (dyn.long_time_average, dyn.fluctuation_exact):
        assert np.isclose(f(sp_, psi, O), f(sp_, psi2, O), rtol=1e-10, atol=1e-14)


def test_long_time_average_matches_brute_force(model6, obs6):
    O, O_eig = obs6
    sp_ = model6.spectrum
    rng = np.random.default_rng(5)
    psi = rng.normal(size=sp_.dim) + 1j * rng.normal(size=sp_.dim)
    psi /= np.linalg.norm(psi)
    c = sp_.coefficients(psi)
    mean, var = oracles.time_average(sp_.energies, c, O_eig, 4000.0)
    assert abs(dyn.long_time_average(sp_, psi, O) - mean) < 1e-3
    # the E -> -E symmetry repeats gaps; only the gap-resolved sum converges to the time variance
    assert abs(dyn.fluctuation_gap_resolved(sp_, psi, O) - var) / var < 0.02
    ex = dyn.fluctuation_exact(sp_, psi, O)
    assert 0.03 < abs(ex - var) / var < 0.15
    assert ex < var


def test_degenerate_block_average_differs_from_naive(model8):
    sp_ = model8.spectrum
    O_eig = sp_.to_eigenbasis(model8.observable("sz(1)*sz(2)"))
    groups = sp_.degenerate_groups()
    big = np.nonzero(np.bincount(groups) > 1)[0]
    assert len(big) > 0
    idx = np.nonzero(groups == big[0])[0]
    # a state spread over one degenerate block keeps its block coherence forever
    c = np.zeros(sp_.dim, dtype=complex)
    c[idx] = 1 / np.sqrt(len(idx))
    psi = sp_.vectors @ c
    blk = O_eig[np.ix_(idx, idx)]
    assert np.isclose(dyn.long_time_average(sp_, psi, None, O_eig=O_eig), (c[idx].conj() @ blk @ c[idx]).real)


def test_fluctuation_table_agrees_with_single_state(model6, obs6):
    O, O_eig = obs6
    sp_ = model6.spectrum
    S = np.column_stack([model6.psi1, model6.psi2])
    K = np.random.default_rng(0).random((sp_.dim, sp_.dim))
    K = K + K.T
    tab = dyn.fluctuation_table(sp_, S, O_eig, K, K)
    for s in range(2):
        assert np.isclose(tab["longtime"][s], dyn.long_time_average(sp_, S[:, s], O))
        assert np.isclose(tab["exact"][s], dyn.fluctuation_exact(sp_, S[:, s], O))
        assert np.isclose(tab["dos"][s], dyn.fluctuation_estimate(sp_, S[:, s], K))
    out = dyn.temporal_fluctuation(sp_, S[:, 0], O, dos_kernel=K)
    assert out["ccp"] is None and np.isclose(out["dos"], tab["dos"][0])


def test_inverse_dos_kernel():
    K = dyn.inverse_dos_kernel(np.array([[2.0, 4.0], [4.0, 0.0]]))
    assert np.array_equal(K, [[0.0, 0.25], [0.25, 0.0]])


def test_shape_errors(model6):
    sp_ = model6.spectrum
    with pytest.raises(dyn.DynamicsError):
        dyn.long_time_average(sp_, np.ones(3), np.eye(sp_.dim))
    with pytest.raises(dyn.DynamicsError):
        dyn.fluctuation_exact(sp_, model6.psi1, np.eye(3))
