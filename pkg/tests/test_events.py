import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from cavity_push.events import (ArrivalModelParams, CountStream, OnOffRecord, SaturatedBinError,
                                ThresholdError, analytic_g2, arrival_moments, arrival_pdf,
                                detect_dips, fit_arrival, fit_arrival_counts, fit_threshold,
                                g2_correlation, jacobian, reconstruct_poisson, sample_arrival_times,
                                stochastic_round)
from cavity_push.fields import PhysicalConstants

K = PhysicalConstants()
CONV = 180.29 / 0.06
REF = ArrivalModelParams(1.0, 83e-6, 4.8e-3)


@pytest.fixture(scope="module")
def poisson_model():
    counts = np.random.default_rng(1).poisson(180.29, 200_000)
    return fit_threshold(counts, CONV)


def test_threshold_on_shot_noise(poisson_model):
    m = poisson_model
    assert m.c_bar == pytest.approx(180.29, abs=0.2)
    assert m.sigma == pytest.approx(math.sqrt(180.29), rel=0.03)
    assert m.threshold_counts == pytest.approx(m.c_bar - 4 * m.sigma)
    assert m.n_th == pytest.approx(m.threshold_counts / CONV)
    assert m.tail_probability == pytest.approx(stats.norm.cdf(-4))
    assert m.subthreshold_fraction < 1e-4
    assert set(m.report()) >= {"c_bar", "sigma", "n_th", "eta_over", "eta_miss"}


def test_threshold_with_atom_dips():
    rng = np.random.default_rng(2)
    bare = rng.poisson(180.29, 100_000)
    dips = rng.poisson(rng.uniform(5, 60, 3000))
    m = fit_threshold(np.concatenate([bare, dips]), CONV)
    assert m.sigma == pytest.approx(math.sqrt(180.29), rel=0.05)
    assert m.n_atom == pytest.approx(3000, rel=0.05)
    assert m.eta_miss < 0.02
    assert m.eta_over < 0.01


@pytest.mark.parametrize("bad", [[], [-1, 5, 5], [0, 0, 0, 0]])
def test_threshold_rejects_bad_records(bad):
    with pytest.raises(ThresholdError):
        fit_threshold(bad)


def test_threshold_warns_on_excess_noise():
    counts = np.clip(np.random.default_rng(3).normal(180, 40, 50_000), 0, None).round()
    with pytest.warns(RuntimeWarning, match="non-Poissonian"):
        fit_threshold(counts)


def _stream(counts, bin_time=50e-6):
    return CountStream(0, bin_time, np.asarray(counts), CONV)


def test_detect_dips_minimum_and_merge(poisson_model):
    c = np.full(40, 180)
    c[5:7] = [50, 20]          # event at bin 6
    c[8] = 10                  # 100 us later: merged, lower minimum wins
    c[30] = 40
    rec = detect_dips(_stream(c), poisson_model, T_int=175e-6)
    assert np.allclose(rec.event_times, [8.5 * 50e-6, 30.5 * 50e-6])
    assert list(rec.min_counts) == [10, 40]
    rec = detect_dips(_stream(c), poisson_model, T_int=50e-6)
    assert rec.event_times.size == 3


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 250), min_size=1, max_size=400), st.floats(10e-6, 500e-6))
def test_dead_time_never_violated(counts, t_int):
    model = fit_threshold(np.random.default_rng(0).poisson(180.29, 5000), CONV)
    rec = detect_dips(_stream(counts), model, t_int)
    assert np.all(np.diff(rec.event_times) >= t_int - 1e-15)


def test_count_stream_validation():
    with pytest.raises(ValueError):
        CountStream(0, 50e-6, [1, -2], CONV)
    with pytest.raises(ValueError):
        CountStream(0, 0.0, [1], CONV)


def _censored_records(lam, M, bin_time, rng):
    """Sequences with Poisson(lam_i) atoms per bin; on/off keeps one event."""
    out = []
    for s in range(M):
        n = rng.poisson(lam)
        idx = np.nonzero(n)[0]
        out.append(OnOffRecord(s, (idx + rng.random(idx.size)) * bin_time, 0.0))
    return out


def test_poisson_round_trip():
    rng = np.random.default_rng(4)
    bin_time = 500e-6
    lam = 0.6 * np.exp(-0.5 * ((np.arange(120) - 60) / 15.0) ** 2) + 0.01
    hist = reconstruct_poisson(_censored_records(lam, 5000, bin_time, rng), bin_time=bin_time, t_tot=60e-3)
    z = (hist.reconstructed_mean - lam) / hist.stderr
    # 120 bins: an occasional |z| slightly above 3 is expected
    assert np.all(np.abs(z) < 4.5)
    assert np.mean(np.abs(z) < 3) > 0.97
    assert abs(z.mean()) < 0.3 and z.std() == pytest.approx(1.0, abs=0.2)
    assert hist.poisson_pmf(0) == pytest.approx(hist.p_zero)
    assert np.allclose(sum(hist.poisson_pmf(k) for k in range(30)), 1.0)


def test_saturated_bin_is_reported():
    recs = [OnOffRecord(s, np.array([1e-4]), 0.0) for s in range(3)]
    with pytest.raises(SaturatedBinError) as err:
        reconstruct_poisson(recs, bin_time=500e-6, t_tot=2e-3)
    assert err.value.bins == [0]


def test_arrival_pdf_normalised():
    m0, mean, std = arrival_moments(REF, K)
    assert m0 == pytest.approx(1.0, abs=1e-6)
    t = np.linspace(1e-3, 0.1, 20001)
    assert np.all(arrival_pdf(t, REF, K) >= 0)
    with pytest.raises(ValueError):
        arrival_pdf(0.0, REF, K)
    with pytest.raises(ValueError):
        ArrivalModelParams(1.0, -1e-6, 4.8e-3)


def test_local_pdf_normalised():
    m0, mean, std = arrival_moments(REF, K, local=True)
    assert m0 == pytest.approx(1.0, abs=1e-6)
    assert mean < arrival_moments(REF, K)[1]


def test_jacobian_matches_numeric_determinant():
    rng = np.random.default_rng(5)
    d = 4.8e-3

    def velocity(p):
        x, y, t = p
        return np.array([x / t, y / t, (0.5 * K.gtilde * t * t - d) / t])

    for _ in range(100):
        p = np.array([rng.normal(0, 2e-3), rng.normal(0, 2e-3), rng.uniform(5e-3, 80e-3)])
        J = np.empty((3, 3))
        for i in range(3):
            h = 1e-6 * max(abs(p[i]), 1e-3)
            e = np.zeros(3)
            e[i] = h
            J[:, i] = (velocity(p + e) - velocity(p - e)) / (2 * h)
        assert abs(np.linalg.det(J)) == pytest.approx(jacobian(p[2], d, K), rel=1e-5)


def test_sampler_matches_pdf():
    t = sample_arrival_times(20000, REF, np.random.default_rng(6), K)
    cdf = lambda x: integrate.quad(lambda s: arrival_pdf(s, REF, K), 1e-6, x, limit=200)[0]
    grid = np.quantile(t, np.linspace(0.05, 0.95, 10))
    emp = np.array([np.mean(t <= g) for g in grid])
    assert np.allclose(emp, [cdf(g) for g in grid], atol=0.015)


def test_fit_recovers_parameters():
    rng = np.random.default_rng(7)
    t = sample_arrival_times(20000, REF, rng, K)
    edges = np.arange(0, 80e-3 + 1e-12, 500e-6)
    counts = np.histogram(t, edges)[0]
    fit = fit_arrival_counts(0.5 * (edges[1:] + edges[:-1]), counts, ArrivalModelParams(1.0, 70e-6, 4.5e-3), K,
                             scale=20000 * 500e-6)
    assert abs(fit.params.T - REF.T) < 3 * fit.stderr[1]
    assert abs(fit.params.d - REF.d) < 3 * fit.stderr[2]
    assert fit.params.c == pytest.approx(1.0, abs=3 * fit.stderr[0])
    assert fit.chi2 / fit.dof < 1.3  # empty tail bins pull it below 1
    r = fit.report()
    assert r["T_uK"] == pytest.approx(fit.params.T * 1e6)


def test_fit_arrival_on_reconstruction():
    rng = np.random.default_rng(8)
    bin_time = 500e-6
    edges = np.arange(121) * bin_time
    lam = 2.0 * np.diff([integrate.quad(lambda s: arrival_pdf(s, REF, K), 1e-6, e)[0] if e > 0 else 0.0
                         for e in edges])
    hist = reconstruct_poisson(_censored_records(lam, 4000, bin_time, rng), bin_time=bin_time)
    fit = fit_arrival(hist, K, ArrivalModelParams(1.0, 70e-6, 4.5e-3))
    assert abs(fit.params.T - REF.T) < 3 * fit.stderr[1]
    assert abs(fit.params.d - REF.d) < 3 * fit.stderr[2]
    assert fit.params.c == pytest.approx(2.0 * bin_time, rel=0.05)


def test_stochastic_round_preserves_mean():
    x = np.full(100_000, 2.3)
    r = stochastic_round(x, np.random.default_rng(0))
    assert set(np.unique(r)) == {2, 3}
    assert r.mean() == pytest.approx(2.3, abs=0.01)


def _poisson_sequences(M, rate, window, rng):
    return [OnOffRecord(s, np.sort(rng.uniform(*window, rng.poisson(rate * (window[1] - window[0])))), 0.0)
            for s in range(M)]


def test_g2_of_homogeneous_poisson_is_flat():
    recs = _poisson_sequences(3000, 100.0, (0.0, 60e-3), np.random.default_rng(9))
    g = g2_correlation(recs)
    z = (g.g2 - 1.0) / g.stderr
    assert np.all(np.abs(z) < 4) and np.mean(np.abs(z) < 3) > 0.9
    gp = g2_correlation(recs, period=60e-3)
    assert np.all(np.abs(gp.g2 - 1.0) < 4 * gp.stderr)


def _envelope_sequences(M, rng, fluct):
    pdf = lambda t: arrival_pdf(np.maximum(t, 1e-6), REF, K)
    recs = []
    for s in range(M):
        n = rng.poisson(6.0 * (rng.gamma(1 / fluct**2, fluct**2) if fluct else 1.0))
        t = sample_arrival_times(n, REF, rng, K)
        recs.append(OnOffRecord(s, np.sort(t[t < 60e-3]), 0.0))
    return recs, pdf


def test_g2_bunching_from_atom_number_fluctuations():
    rng = np.random.default_rng(10)
    recs, pdf = _envelope_sequences(3000, rng, fluct=0.5)
    g = g2_correlation(recs, tau_edges=np.arange(0, 21e-3, 2e-3))
    flat_env = analytic_g2(g.tau, pdf)
    # envelope alone gives analytic_g2; number fluctuations multiply by 1 + var/mean^2
    assert np.all(g.g2[:3] > flat_env[:3])
    assert g.g2[0] == pytest.approx(flat_env[0] * 1.25, rel=0.1)


def test_g2_randomised_sequences_follow_envelope():
    rng = np.random.default_rng(11)
    recs, pdf = _envelope_sequences(3000, rng, fluct=0.5)
    # reassign every event to a random sequence: only the common envelope survives
    times = np.concatenate([r.event_times for r in recs])
    owner = rng.integers(0, len(recs), times.size)
    shuffled = [OnOffRecord(s, np.sort(times[owner == s]), 0.0) for s in range(len(recs))]
    edges = np.arange(0, 21e-3, 2e-3)
    g = g2_correlation(shuffled, tau_edges=edges)
    assert np.all(np.abs(g.g2 - analytic_g2(g.tau, pdf)) < 3.5 * g.stderr)
    # randomising the times inside the window as well removes all structure
    flat = [OnOffRecord(s, np.sort(rng.uniform(0, 60e-3, r.event_times.size)), 0.0)
            for s, r in enumerate(shuffled)]
    g = g2_correlation(flat, tau_edges=edges)
    assert np.all(np.abs(g.g2 - 1.0) < 3.5 * g.stderr)


def test_g2_reconstruction_adds_events():
    rng = np.random.default_rng(12)
    bin_time = 500e-6
    lam = np.full(120, 0.3)
    recs = _censored_records(lam, 1000, bin_time, rng)
    hist = reconstruct_poisson(recs, bin_time=bin_time)
    g = g2_correlation(recs, reconstructed=hist, rng=rng)
    n_meas = sum(r.event_times.size for r in recs)
    assert g.n_events == pytest.approx(n_meas + np.sum(hist.reconstructed_mean * 1000 - hist.measured_count), rel=0.01)
    with pytest.raises(ValueError):
        g2_correlation([])
