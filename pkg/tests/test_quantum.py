import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg

from cavity_push.fields import SystemParams, default_system
from cavity_push.quantum import (HilbertConfig, LocalCouplings, Operators, apply_superop,
                                 basis_index, build_interaction_hamiltonian, build_liouvillian,
                                 correlation_integrals, correlation_integrals_time_domain,
                                 excited_population, local_quantities, mean_photon_number,
                                 projector, steady_state, transmission_spectrum)

H6 = HilbertConfig(6)
TWO_PI_MHZ = 2e6 * math.pi


def random_density(d, rng):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def liouvillian(params, local, cfg=H6):
    return build_liouvillian(build_interaction_hamiltonian(params, local, cfg), params, cfg)


def test_zero_couplings_give_zero_hamiltonian():
    p = SystemParams(1.0, 1.0, 1.0)
    assert np.all(build_interaction_hamiltonian(p, LocalCouplings(), H6) == 0)


def test_detuning_diagonal():
    p = SystemParams(1.0, 1.0, 1.0, delta_ap=2.0, delta_cp=3.0)
    H = build_interaction_hamiltonian(p, LocalCouplings(stark_local=0.5), H6)
    assert np.allclose(H, np.diag(np.diag(H)))
    assert H[basis_index(1, 2, H6), basis_index(1, 2, H6)] == pytest.approx(2.5 + 6.0)


def test_vacuum_rabi_matrix_element(params):
    H = build_interaction_hamiltonian(params, LocalCouplings(g_local=0.7 * params.g0), H6)
    assert H[basis_index(0, 1, H6), basis_index(1, 0, H6)] == pytest.approx(0.7 * params.g0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=7, max_size=7))
def test_hamiltonian_hermitian(v):
    p = SystemParams.from_MHz(g0=abs(v[0]) + 1, kappa=18.6, gamma=3.0, delta_ap=v[1], delta_cp=v[2],
                              eta_drive=v[3])
    H = build_interaction_hamiltonian(p, LocalCouplings(v[4] * TWO_PI_MHZ, v[5] * TWO_PI_MHZ,
                                                        abs(v[6]) * TWO_PI_MHZ), H6)
    assert np.array_equal(H, H.conj().T)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        build_liouvillian(np.zeros((3, 3)), default_system(), H6)


def test_liouvillian_trace_preserving(params, rng):
    L = liouvillian(params, LocalCouplings(params.g0, params.delta_st_max, 1e6))
    for _ in range(100):
        rho = random_density(H6.dim, rng)
        assert abs(np.trace(apply_superop(L, rho))) < 1e-12 * np.linalg.norm(L)


def test_short_time_propagation_keeps_trace(params, rng):
    L = liouvillian(params, LocalCouplings(params.g0, params.delta_st_max))
    prop = linalg.expm(L * 1e-10)
    for _ in range(10):
        rho = random_density(H6.dim, rng).reshape(-1)
        for _ in range(20):
            rho = prop @ rho
        assert abs(np.trace(rho.reshape(H6.dim, H6.dim)) - 1.0) < 1e-9


def test_no_dissipation_annihilates_mixed_state():
    p = SystemParams(1.0, 1e-300, 1e-300)
    L = build_liouvillian(np.zeros((H6.dim, H6.dim)), p, H6)
    assert np.allclose(apply_superop(L, np.eye(H6.dim) / H6.dim), 0.0, atol=1e-12)


def test_ground_vacuum_is_dark_without_drive(params):
    p = replace(params, eta_drive=0.0)
    L = liouvillian(p, LocalCouplings(p.g0, p.delta_st_max))
    assert np.linalg.norm(apply_superop(L, projector(0, 0, H6))) < 1e-12 * np.linalg.norm(L)
    rho = steady_state(L)
    assert np.allclose(rho, projector(0, 0, H6), atol=1e-12)


@pytest.mark.parametrize("g_frac", [0.0, 0.5, 1.0])
def test_steady_state_residual_and_positivity(params, g_frac):
    L = liouvillian(params, LocalCouplings(g_frac * params.g0, params.delta_st_max, 2e7))
    rho = steady_state(L)
    assert np.linalg.norm(apply_superop(L, rho)) <= 1e-10 * np.linalg.norm(L)
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(rho, rho.conj().T)
    assert np.linalg.eigvalsh(rho).min() >= -1e-8


def test_photon_number_of_fock_states():
    assert mean_photon_number(projector(0, 0, H6), H6) == 0.0
    assert mean_photon_number(projector(0, 1, H6), H6) == pytest.approx(1.0)
    assert excited_population(projector(0, 0, H6), H6) == 0.0
    assert excited_population(projector(1, 0, H6), H6) == pytest.approx(1.0)


def test_drive_calibrated_to_empty_photon_number(params):
    rho = steady_state(liouvillian(params, LocalCouplings()))
    assert mean_photon_number(rho, H6) == pytest.approx(0.06, rel=1e-6)


@pytest.mark.parametrize("delta_mhz", [0.0, 5.0, -20.0])
def test_weak_drive_empty_cavity_lorentzian(params, delta_mhz):
    p = replace(params, eta_drive=params.kappa / 10)
    d = delta_mhz * TWO_PI_MHZ
    [(_, n)] = transmission_spectrum(p, LocalCouplings(), H6, [d])
    assert n == pytest.approx(p.eta_drive**2 / (p.kappa**2 + d**2), rel=0.01)


def test_empty_spectrum_half_width(params):
    p = replace(params, eta_drive=params.kappa / 10)
    [(_, n0), (_, nk)] = transmission_spectrum(p, LocalCouplings(), H6, [0.0, p.kappa])
    assert nk / n0 == pytest.approx(0.5, rel=1e-3)


def test_weak_drive_resonance_suppression(params):
    p = replace(params, eta_drive=params.kappa * 1e-3, delta_st_max=0.0)
    [(_, n)] = transmission_spectrum(p, LocalCouplings(p.g0), H6, [0.0])
    ratio = n / p.empty_cavity_photons()
    assert ratio == pytest.approx((1 + 2 * p.cooperativity) ** -2, rel=0.2)


def test_vacuum_rabi_spectrum_symmetry(params):
    grid = TWO_PI_MHZ * np.array([-16.0, -3.0, 3.0, 16.0])
    n = [v for _, v in transmission_spectrum(params, LocalCouplings(params.g0, 0.0), H6, grid)]
    assert n[0] == pytest.approx(n[3], rel=1e-6)
    assert n[1] == pytest.approx(n[2], rel=1e-6)
    n = [v for _, v in transmission_spectrum(params, LocalCouplings(params.g0, params.delta_st_max), H6, grid)]
    assert abs(n[0] / n[3] - 1.0) > 1e-3


def test_fock_cutoff_convergence(params):
    loc = LocalCouplings(params.g0, params.delta_st_max)
    n6 = mean_photon_number(steady_state(liouvillian(params, loc, H6)), H6)
    h8 = HilbertConfig(8)
    n8 = mean_photon_number(steady_state(liouvillian(params, loc, h8)), h8)
    assert abs(n8 / n6 - 1.0) < 1e-3


def test_undriven_correlations_vanish(params):
    p = replace(params, eta_drive=0.0)
    xi, chi = correlation_integrals(p, LocalCouplings(p.g0), H6)
    assert abs(xi) < 1e-20 and abs(chi) < 1e-28


def test_uncoupled_atom_dipole_correlations(params):
    # with g = 0 the atom stays in |g>; Phi = a+ s_ge + s_eg a still connects the
    # coherent field to the atom, so xi is <n> gamma / (gamma^2 + Delta^2), not zero
    for stark in (0.0, params.delta_st_max):
        q = local_quantities(params, LocalCouplings(0.0, stark), H6)
        delta = params.delta_ap + stark
        assert q.phi_mean == pytest.approx(0.0, abs=1e-14)
        assert q.xi == pytest.approx(q.n_mean * params.gamma / (params.gamma**2 + delta**2), rel=1e-6)
    assert local_quantities(params, LocalCouplings(0.0, 0.0), H6).chi == pytest.approx(0.0, abs=1e-25)


def test_push_beam_two_level_saturation(params):
    p = replace(params, eta_drive=params.kappa * 1e-4)
    for s in (0.1, 1.0, 3.0):
        omega = params.gamma * math.sqrt(2 * s)
        q = local_quantities(p, LocalCouplings(0.0, 0.0, omega), H6)
        assert q.sigma_e == pytest.approx(0.5 * s / (1 + s), rel=0.02)
        # absorption equals emission at 2 gamma <sigma_e>
        assert q.push_rate == pytest.approx(2 * p.gamma * q.sigma_e, rel=1e-6)


def test_resolvent_matches_time_domain(params):
    rng = np.random.default_rng(7)
    for _ in range(10):
        loc = LocalCouplings(rng.uniform(-1, 1) * params.g0, rng.uniform(-1, 0) * TWO_PI_MHZ,
                             rng.uniform(0, 1) * params.gamma)
        q = local_quantities(params, loc, H6)
        xi_t, chi_t = correlation_integrals_time_domain(params, loc, H6, n_steps=6000)
        assert q.xi == pytest.approx(xi_t, rel=0.01, abs=1e-3 * abs(q.xi) + 1e-14)
        scale = max(abs(chi_t), 1e-3 * abs(q.xi) / params.kappa)
        assert abs(q.chi - chi_t) <= 0.01 * scale
