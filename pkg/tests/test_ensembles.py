import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scarlab import ensembles as ens
from scarlab.basis import enumerate_basis
from scarlab.partial_trace import region_split

import oracles


def _toy(n=40, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=n), rng.uniform(0, 3, size=n)


def test_canonical_beta_grid_oracle_D3():
    H, _ = oracles.dense_hamiltonian(3, 1)
    E = np.linalg.eigvalsh(H)
    for beta in (-2.0, -0.5, 0.3, 1.0, 4.0):
        w = np.exp(-beta * (E - E.min()))
        w /= w.sum()
        sol = ens.solve_canonical(E, float(w @ E), tol=1e-12)
        assert np.isclose(sol.beta, beta, rtol=1e-7, atol=1e-9)


def test_canonical_special_targets():
    E = np.array([-1.0, -1.0, 0.0, 2.0])
    assert ens.solve_canonical(E, E.mean()).beta == 0.0
    low = ens.solve_canonical(E, -1.0)
    assert low.beta == np.inf and low.flag == "beta+inf"
    assert np.allclose(low.weights, [0.5, 0.5, 0, 0])
    assert ens.solve_canonical(E, 2.0).beta == -np.inf
    with pytest.raises(ens.InfeasibleTarget):
        ens.solve_canonical(E, 2.5)


def test_canonical_accepts_spectrum(model6):
    sol = ens.solve_canonical(model6.spectrum, 0.5)
    assert np.isclose(sol.average(model6.E), 0.5, atol=1e-7)


def test_grand_round_trip():
    E, N = _toy()
    w = ens.boltzmann_weights(E, N, 0.5, 0.3)
    sol = ens.solve_grand_canonical(E, N, w @ E, w @ N, tol=1e-12)
    assert sol.flag == "ok"
    assert np.isclose(sol.beta, 0.5, rtol=1e-7) and np.isclose(sol.mu, 0.3, rtol=1e-6)
    assert sol.iterations < 50


@settings(max_examples=30, deadline=None)
@given(beta=st.floats(-1.5, 1.5), mu=st.floats(-1.0, 1.0), seed=st.integers(0, 50))
def test_grand_reproduces_targets(beta, mu, seed):
    E, N = _toy(30, seed)
    w = ens.boltzmann_weights(E, N, beta, mu)
    sol = ens.solve_grand_canonical(E, N, w @ E, w @ N, tol=1e-9)
    assert abs(sol.weights @ E - w @ E) <= 1e-8 * np.ptp(E)
    assert abs(sol.weights @ N - w @ N) <= 1e-8 * np.ptp(N)
    assert np.all(sol.weights >= 0) and np.isclose(sol.weights.sum(), 1.0)


def test_grand_outside_hull_and_vertices():
    E = np.array([0.0, 1.0, 0.0, 1.0, 0.5])
    N = np.array([0.0, 0.0, 1.0, 1.0, 0.5])
    with pytest.raises(ens.InfeasibleTarget):
        ens.solve_grand_canonical(E, N, 2.0, 0.5)
    v = ens.solve_grand_canonical(E, N, 1.0, 1.0)
    assert v.flag.startswith("boundary-vertex")
    assert np.allclose(v.weights, [0, 0, 0, 1, 0])
    f = ens.solve_grand_canonical(E, N, 0.25, 0.0)
    assert f.flag.startswith("boundary-face")
    assert np.isclose(f.weights @ E, 0.25) and np.isclose(f.weights @ N, 0.0)
    assert np.all(f.weights[[2, 3, 4]] == 0)


def test_grand_falls_back_to_canonical():
    E = np.array([-1.0, 0.0, 1.0])
    sol = ens.solve_grand_canonical(E, np.ones(3), 0.2, 1.0)
    assert "canonical-fallback" in sol.flag
    assert np.isclose(sol.weights @ E, 0.2)


def test_trace_distance_examples():
    a = np.diag([1.0, 0.0])
    b = np.diag([0.0, 1.0])
    assert ens.trace_distance(a, b) == pytest.approx(1.0)
    assert ens.trace_distance(a, a) == 0.0
    plus = np.full((2, 2), 0.5)
    assert ens.trace_distance(a, plus) == pytest.approx(np.sqrt(0.5))
    with pytest.raises(ens.EnsembleError):
        ens.trace_distance(a, np.eye(3))


def _rand_dm(rng, d=3):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    r = A @ A.conj().T
    return r / np.trace(r)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_trace_distance_metric(seed):
    rng = np.random.default_rng(seed)
    r, s, t = (_rand_dm(rng) for _ in range(3))
    d = ens.trace_distance
    assert 0 <= d(r, s) <= 1 + 1e-12
    assert np.isclose(d(r, s), d(s, r))
    assert d(r, t) <= d(r, s) + d(s, t) + 1e-12


def test_reduced_dm_of_uniform_mixture_D3():
    basis = enumerate_basis(3, 1)
    split = region_split(basis, [1])
    rho = ens.reduced_dm(split, np.eye(basis.dim), np.full(basis.dim, 1 / basis.dim))
    counts = np.zeros(3)
    for s in oracles.constrained_states(3, 1):
        counts[s[0] + 1] += 1
    assert basis.dim == 18
    assert np.allclose(np.diag(rho).real, counts / 18)
    assert np.allclose(rho, np.diag(np.diag(rho)))
    with pytest.raises(ens.EnsembleError):
        ens.reduced_dm(split, np.eye(basis.dim))


def test_ensemble_average_shape_check():
    sol = ens.solve_canonical(np.array([0.0, 1.0]), 0.5)
    assert ens.ensemble_average(sol, [2.0, 4.0]) == pytest.approx(3.0)
    with pytest.raises(ens.EnsembleError):
        ens.ensemble_average(sol, [1.0, 2.0, 3.0])


def test_compare_ensembles_rows(model6):
    from scarlab.partial_trace import reduced_dms
    m = model6
    rdms = reduced_dms(region_split(m.basis, [1]), m.full_vectors)
    eev = m.table.observables["sz(1)*sz(2)"]
    rows = ens.compare_ensembles(m.E, m.Nvals, eev, rdms, range(len(m.E)))
    assert len(rows) == len(m.E)
    ok = [r for r in rows if r.flag == "ok"]
    assert ok and all(np.isfinite(r.dev_grand) for r in ok)
    assert all(0 <= r.td_canonical <= 1 for r in rows)
