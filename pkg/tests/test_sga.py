import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scarlab import sga
from scarlab.coherence import DosModel, FitError
from scarlab.operators import build_sga_operators, project_to_sector


@pytest.fixture(scope="module")
def sga8(model8):
    m = model8
    Rk = m.Rk_sector(1)
    ops = build_sga_operators(m.basis, m.H)
    dense = {k: project_to_sector(v, m.sector).matrix for k, v in ops.items() if k != "Rk"}
    return m, Rk, dense, sga.sga_ratios(m.spectrum, Rk, m.Nvals)


def test_sector_commutators(model8):
    r = sga.verify_sga_commutators(model8.basis, model8.sector)
    assert max(r[k] for k in ("HQz", "HQy", "HQplus", "HQminus")) < 1e-12 * r["norm_H"]


def test_diagonal_elements_vanish(sga8):
    assert sga8[3].diag_max < 1e-10


def test_only_opposite_parity_pairs_couple(sga8):
    m, Rk, _, _ = sga8
    A = sga.offdiagonal_matrix(m.spectrum, Rk)
    same = ~sga.allowed_pairs(m.spectrum)
    assert np.abs(A[same]).max() < 1e-10


def test_sum_form_equals_direct_form(sga8):
    m, _, dense, rep = sga8
    idx = sga.nonresonant_states(m.spectrum)[:40]
    direct = sga.direct_ratios(m.spectrum, dense, idx)
    assert np.allclose(direct["plus"], rep.r_plus[idx], rtol=1e-8)
    assert np.allclose(direct["minus"], rep.r_minus[idx], rtol=1e-8)


def test_full_R_is_k_sum(sga8):
    # in the momentum-zero sector every bond contributes equally: R = i j D / sqrt(2) R_1
    m, Rk, dense, _ = sga8
    assert np.allclose(dense["R"], 1j * m.j * m.D / np.sqrt(2) * Rk.matrix, atol=1e-12)


def test_ratios_are_positive_and_scars_low(sga8):
    m, _, _, rep = sga8
    assert np.all(rep.n >= 0) and np.all(rep.d_plus > 0)
    assert np.nanmax(rep.r_plus[m.scars]) < np.nanmedian(rep.r_plus)


@settings(max_examples=20, deadline=None)
@given(A=st.floats(0.1, 10), w0=st.floats(-1, 1), s=st.floats(0.1, 0.6))
def test_gaussian_fit_exact_samples(A, w0, s):
    c = np.linspace(-3, 3, 60)
    fit = sga.fit_gaussian(c, sga.gaussian(c, A, w0, s), np.ones(60))
    assert np.allclose([fit.A, fit.omega0, fit.sigma], [A, w0, s], rtol=1e-6, atol=1e-8)


# bin averaging lowers the peak by about (bin width)^2 / (24 sigma^2); keep that under 1%
@settings(max_examples=20, deadline=None)
@given(A=st.floats(0.1, 10), w0=st.floats(-1, 1), s=st.floats(0.3, 0.6), seed=st.integers(0, 99))
def test_gaussian_fit_recovers_parameters(A, w0, s, seed):
    rng = np.random.default_rng(seed)
    om = rng.uniform(-3, 3, 20000)
    vals = sga.gaussian(om, A, w0, s) * (1 + 0.01 * rng.normal(size=om.size))
    fit = sga.fit_gaussian(*sga.bin_omega(om, vals, 60, 10))
    assert np.isclose(fit.A, A, rtol=0.01)
    assert abs(fit.omega0 - w0) < 0.01
    assert np.isclose(fit.sigma, s, rtol=0.01)


def test_fit_gaussian_needs_bins():
    with pytest.raises(FitError):
        sga.fit_gaussian(np.arange(3.0), np.ones(3), np.ones(3))


def test_zero_g_gives_zero_estimate(model8):
    m = model8
    dos = DosModel.from_states(m.E, m.Nvals)
    d = sga.estimate_d_fit(m.spectrum, lambda w: np.zeros_like(w), m.Nvals, dos)
    assert d.shape == (len(m.E),) and np.all(d == 0)


def test_empty_window_raises(model6):
    m = model6
    with pytest.raises(FitError, match="no pairs"):
        sga.offdiag_dos_check(m.spectrum, m.Rk_sector(1), m.Nvals, DosModel.from_states(m.E, m.Nvals),
                              window=(100.0, 101.0))


def test_unimodal_fraction():
    assert sga.unimodal_fraction([1, 2, 3, 2, 1]) == 1.0
    assert sga.unimodal_fraction([]) == 0.0
    assert sga.unimodal_fraction([3, 1, 3, 1]) == 0.75


def test_bin_omega_drops_sparse_bins():
    om = np.array([0.0, 0.1, 0.2, 5.0])
    c, m, n = sga.bin_omega(om, np.ones(4), 2, 2)
    assert len(c) == 1 and n[0] == 3
