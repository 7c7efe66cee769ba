import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scarlab import coherence as coh
from scarlab.basis import enumerate_basis
from scarlab.model import ChainModel
from scarlab.partial_trace import (RegionError, cross_dm, mixture_dm, reduced_dms, region_split)

import oracles


def _full_vectors_product_space(model):
    F = model.full_vectors
    states = [tuple(s) for s in model.basis.states]
    return np.column_stack([oracles.full_vector(states, F[:, i], model.D, model.j) for i in range(F.shape[1])])


def test_reduced_dm_matches_oracle(model6):
    F = model6.full_vectors
    rho = reduced_dms(region_split(model6.basis, [1]), F)
    G = _full_vectors_product_space(model6)
    for i in (0, 5, 17, F.shape[1] - 1):
        assert np.allclose(rho[i], oracles.reduced_dm_site1(G[:, i], 6, 1), atol=1e-13)
        assert np.isclose(np.trace(rho[i]).real, 1.0)


def test_ccp_matches_oracle(model6):
    G = _full_vectors_product_space(model6)
    T = coh.ccp_all(model6.spectrum, [1])
    for i, k in [(0, 1), (3, 20), (7, 7), (10, 31)]:
        X = oracles.reduced_dm_site1(G[:, i], 6, 1, G[:, k])
        assert np.isclose(T[i, k], np.sum(np.abs(X) ** 2), atol=1e-13)
    assert np.isclose(T[2, 9], coh.ccp(model6.spectrum, 2, 9, [1]))


def test_ccp_raw_matrix_symmetric(model8):
    split = region_split(model8.basis, [1])
    raw = coh.ccp_matrix(split, model8.full_vectors)
    assert np.abs(raw - raw.T).max() <= 1e-14 * max(1.0, raw.max())
    T = coh.ccp_all(model8.spectrum, [1])
    assert np.array_equal(T, T.T)


@pytest.mark.parametrize("D", [3, 4])
def test_ccp_is_one_for_whole_chain(D):
    m = ChainModel(D, 1)
    T = coh.ccp_all(m.spectrum, list(range(1, D + 1)))
    assert np.allclose(T, 1.0, atol=1e-12)


def test_cross_dm_diagonal_is_reduced_dm(model6):
    split = region_split(model6.basis, [2, 3])
    F = model6.full_vectors
    assert np.allclose(cross_dm(split, F[:, 4], F[:, 4]), reduced_dms(split, F[:, 4])[0])
    w = np.full(F.shape[1], 1.0 / F.shape[1])
    assert np.isclose(np.trace(mixture_dm(split, F, w)).real, 1.0)


@pytest.mark.parametrize("sites", [[], [0], [7], [1, 1]])
def test_region_errors(sites):
    with pytest.raises(RegionError):
        region_split(enumerate_basis(6, 1), sites)


def test_cross_reduced_dm_index_error(model6):
    with pytest.raises(IndexError):
        coh.cross_reduced_dm(model6.spectrum, 0, 10_000)


def test_bound_has_no_violations(model8):
    rng = np.random.default_rng(0)
    pairs = rng.integers(0, model8.spectrum.dim, size=(300, 2))
    out = coh.bound_violations(model8.spectrum, pairs, [1], 30, seed=1)
    assert out["violations"] == 0 and out["max_ratio"] <= 1.0


def test_dos_normalization_and_symmetry():
    rng = np.random.default_rng(2)
    m = coh.DosModel.from_states(rng.normal(size=50), rng.uniform(0, 2, size=50))
    assert np.isclose(m.normalization(), 1.0, rtol=1e-4)
    W = m.pair_matrix()
    assert np.allclose(W, W.T) and np.all(W > 0)
    assert np.isclose(W[3, 7], m((m.E[3] + m.E[7]) / 2, (m.N[3] + m.N[7]) / 2))
    with pytest.raises(ValueError):
        coh.DosModel(m.E, m.N, 0.0, 1.0)


def test_density_selection_is_nested():
    rng = np.random.default_rng(4)
    E, N = rng.normal(size=60), rng.uniform(0, 3, size=60)
    s = coh.pair_samples(E, N, np.ones((60, 60)))
    masks = [coh.select_pairs_by_density(s, p) for p in (10, 30, 50, 90, 100)]
    for a, b in zip(masks, masks[1:]):
        assert np.all(b[a])
    assert abs(masks[0].mean() - 0.1) < 0.01
    with pytest.raises(ValueError):
        coh.select_pairs_by_density(s, 0)


@settings(max_examples=15, deadline=None)
@given(a=st.floats(0.5, 5.0), h1=st.floats(0.3, 1.5), h2=st.floats(0.2, 0.8), seed=st.integers(0, 100))
def test_inverse_dos_fit_recovers_parameters(a, h1, h2, seed):
    rng = np.random.default_rng(seed)
    E, N = rng.normal(size=40), rng.uniform(0, 3, size=40)
    truth = coh.DosModel(E, N, h1, h2)
    e, n = np.meshgrid(np.linspace(-1.5, 1.5, 12), np.linspace(0.3, 2.7, 12))
    g = coh.GridMeans(e.ravel(), n.ravel(), 1.0 / (a * truth(e.ravel(), n.ravel())), np.ones(e.size, int))
    fit = coh.fit_inverse_dos(g, truth.with_widths(1.0, 1.0))
    assert fit.r2 > 1 - 1e-9
    assert np.isclose(fit.a, a, rtol=1e-4)
    assert np.isclose(fit.h1, h1, rtol=1e-4) and np.isclose(fit.h2, h2, rtol=1e-4)


def test_fit_errors():
    m = coh.DosModel(np.zeros(3), np.zeros(3))
    few = coh.GridMeans(np.zeros(3), np.zeros(3), np.ones(3), np.ones(3, int))
    with pytest.raises(coh.FitError, match="bins"):
        coh.fit_inverse_dos(few, m)
    flat = coh.GridMeans(np.arange(20.0), np.arange(20.0), np.ones(20), np.ones(20, int))
    with pytest.raises(coh.FitError, match="constant"):
        coh.fit_inverse_dos(flat, m)


def test_bin_plane_counts():
    e = np.array([0.0, 0.1, 0.9, 1.0])
    n = np.array([0.0, 0.0, 1.0, 1.0])
    g = coh.bin_plane(e, n, np.array([1.0, 3.0, 5.0, 7.0]), (2, 2), 1)
    assert sorted(g.value) == [2.0, 6.0]
    assert sorted(g.count) == [2, 2]


def test_dos_peak_and_decay():
    m = coh.DosModel(np.array([0.3]), np.array([1.2]), 0.5, 0.25)
    assert np.isclose(m(0.3, 1.2), 1 / (2 * np.pi * 0.5 * 0.25))
    assert m(0.3 + 11 * 0.5, 1.2) < 1e-20 * m.Z


def test_diagonal_ccp_is_purity(model6):
    T = coh.ccp_all(model6.spectrum, [1])
    d = np.diag(T)
    assert np.all(d <= 1 + 1e-12) and np.all(d >= 1 / 3 - 1e-12)
    rho = reduced_dms(region_split(model6.basis, [1]), model6.full_vectors)
    assert np.allclose(d, np.einsum("iab,iba->i", rho, rho).real)


def test_cross_dm_traces(model6):
    sp_ = model6.spectrum
    assert np.isclose(np.trace(coh.cross_reduced_dm(sp_, 3, 3)), 1.0)
    X = coh.cross_reduced_dm(sp_, 3, 8)
    assert abs(np.trace(X)) < 1e-12
    assert np.allclose(coh.cross_reduced_dm(sp_, 8, 3), X.conj().T)
