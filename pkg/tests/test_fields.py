import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavity_push.fields import (ModeGeometry, PhysicalConstants, PushBeamParams, SystemParams,
                                coupling_at, mode_function, saturation_at, scattering_accel,
                                scattering_rate, stark_shift_at)


def test_figures_of_merit(params):
    assert params.cooperativity == pytest.approx(16.02**2 / (2 * 18.6 * 3.033), rel=1e-12)
    assert params.critical_photon_number == pytest.approx(3.033**2 / (2 * 16.02**2), rel=1e-12)


def test_drive_sets_empty_cavity_photons(params):
    assert params.empty_cavity_photons() == pytest.approx(0.06, rel=1e-12)


@pytest.mark.parametrize("kw", [dict(g0=0.0, kappa=1.0, gamma=1.0), dict(g0=1.0, kappa=-1.0, gamma=1.0),
                                dict(g0=1.0, kappa=1.0, gamma=0.0)])
def test_rates_must_be_positive(kw):
    with pytest.raises(ValueError):
        SystemParams(**kw)


def test_geometry_validation():
    with pytest.raises(ValueError):
        ModeGeometry(w0=-1e-6)
    assert ModeGeometry().w_lock == ModeGeometry().w0


def test_push_validation():
    with pytest.raises(ValueError):
        PushBeamParams(s0=-1.0)
    with pytest.raises(ValueError):
        PushBeamParams(direction=0)


def test_mode_peak_at_center(geom, constants, params):
    psi, grad = mode_function(geom.center, geom, constants)
    assert psi == pytest.approx(1.0)
    assert np.allclose(grad, 0.0, atol=1e-9)
    assert coupling_at(geom.center, geom, params, constants) == pytest.approx(params.g0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e-6, 1e-6), st.floats(-60e-6, 60e-6), st.floats(-60e-6, 60e-6))
def test_mode_gradient_matches_finite_difference(x, y, dz):
    geom, k = ModeGeometry(), PhysicalConstants()
    p = np.array([x, y, -geom.d + dz])
    psi, grad = mode_function(p, geom, k)
    assert abs(psi) <= 1.0
    h = np.array([1e-11, 1e-10, 1e-10])
    for i in range(3):
        e = np.zeros(3)
        e[i] = h[i]
        fd = (mode_function(p + e, geom, k)[0] - mode_function(p - e, geom, k)[0]) / (2 * h[i])
        scale = k.k if i == 0 else 2.0 / geom.w0
        assert fd == pytest.approx(grad[i], abs=1e-5 * scale)


def test_stark_shift_maximal_at_center(geom, params):
    assert stark_shift_at(geom.center, geom, params) == pytest.approx(params.delta_st_max)
    far = geom.center + np.array([0.0, 5 * geom.w0, 0.0])
    assert abs(stark_shift_at(far, geom, params)) < 1e-10 * abs(params.delta_st_max)


def test_saturation_profile_and_switch_on():
    push = PushBeamParams(s0=2.0, waist=1e-3, turn_on_time=1e-3)
    assert saturation_at([0.0, 0.0, 0.0], push, t=0.0) == 0.0
    assert saturation_at([0.0, 0.0, 0.0], push, t=2e-3) == pytest.approx(2.0)
    assert saturation_at([1e-3, 0.0, 0.0], push) == pytest.approx(2.0 * math.exp(-2.0))
    assert saturation_at([5.0, 5.0, 0.0], PushBeamParams(s0=0.5)) == 0.5


def test_scattering_rate_lorentzian_and_doppler(params, constants):
    gam = params.gamma
    push = PushBeamParams(s0=1.0, delta_aps=gam)
    assert scattering_rate(0.0, 1.0, push, constants, gam) == pytest.approx(gam / 3.0)
    # Doppler term cancels the detuning at k vz = delta
    vz = push.delta_aps / constants.k
    assert scattering_rate(vz, 1.0, push, constants, gam) == pytest.approx(gam / 2.0)
    # symmetric in delta about k vz
    kv = constants.k * 0.3
    r = [scattering_rate(0.3, 1e-3, PushBeamParams(s0=1e-3, delta_aps=kv + sgn * 2 * gam), constants, gam)
         for sgn in (1, -1)]
    assert r[0] == pytest.approx(r[1], rel=1e-12)
    assert kv / (2 * math.pi) == pytest.approx(0.4e6, rel=0.05)


def test_scattering_force_direction(params, constants):
    above = PushBeamParams(s0=1e-3, direction=1)
    below = PushBeamParams(s0=1e-3, direction=-1)
    g = constants.gtilde
    assert scattering_accel(0.0, 1e-3, above, constants, params.gamma) < -g
    assert scattering_accel(0.0, 1e-3, below, constants, params.gamma) > -g
    assert scattering_accel(0.0, 0.0, above, constants, params.gamma) == pytest.approx(-g)


def test_gradient_thousand_points(geom, constants):
    rng = np.random.default_rng(3)
    p = np.column_stack([rng.uniform(0, constants.lambda_probe, 1000),
                         rng.uniform(-2, 2, 1000) * geom.w0,
                         -geom.d + rng.uniform(-2, 2, 1000) * geom.w0])
    _, grad = mode_function(p, geom, constants)
    h = np.array([1e-12, 1e-10, 1e-10])
    fd = np.empty_like(grad)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h[i]
        fd[:, i] = (mode_function(p + e, geom, constants)[0] - mode_function(p - e, geom, constants)[0]) / (2 * h[i])
    err = np.linalg.norm(fd - grad, axis=1) / np.linalg.norm(grad, axis=1)
    assert np.median(err) < 1e-6
    assert np.all(err < 1e-4)


def test_free_fall_bit_exact(constants, params):
    push = PushBeamParams(s0=0.3, delta_aps=1e7)
    assert scattering_accel(-0.2, 0.0, push, constants, params.gamma) == -constants.gtilde


def test_optical_term_monotone_in_saturation(constants, params):
    push = PushBeamParams(s0=1.0, delta_aps=-2 * params.gamma)
    s = np.linspace(0.0, 5.0, 200)
    opt = -(scattering_accel(-0.3, s, push, constants, params.gamma) + constants.gtilde)
    assert np.all(np.diff(opt) > 0)
    assert np.all(opt <= constants.recoil_velocity * params.gamma * s / (1 + s) * (1 + 1e-12))


def test_fields_bounded(geom, constants, params):
    rng = np.random.default_rng(4)
    p = np.column_stack([rng.uniform(-1e-5, 1e-5, 5000), rng.normal(0, geom.w0, 5000),
                         -geom.d + rng.normal(0, geom.w0, 5000)])
    assert np.all(np.abs(coupling_at(p, geom, params, constants)) <= params.g0)
    assert np.all(np.abs(stark_shift_at(p, geom, params)) <= abs(params.delta_st_max))
