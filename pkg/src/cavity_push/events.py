"""Photon-count analysis: threshold calibration, dead-time dip counting,
Poisson reconstruction of multi-atom events, arrival-time model and fit,
and the second-order correlation of arrival events.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

from .fields import PhysicalConstants

REFERENCE_BIN = 50e-6  # bin time the count conversion factor refers to


class ThresholdError(ValueError):
    pass


class SaturatedBinError(ValueError):
    def __init__(self, bins):
        self.bins = list(bins)
        super().__init__(f"bins with every sequence 'on' cannot be inverted: {self.bins}")


class FitError(RuntimeError):
    pass


@dataclass
class CountStream:
    sequence_id: int
    bin_time: float
    counts: np.ndarray
    conversion_eta: float  # counts per unit <n> per bin of this stream

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if not self.bin_time > 0:
            raise ValueError("bin_time must be positive")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")


@dataclass
class ThresholdModel:
    c_bar: float
    sigma: float
    amplitude: float
    conversion_eta: float
    n_th: float
    eta_over: float
    eta_miss: float
    tail_probability: float
    subthreshold_fraction: float
    n_sm: int = 0
    n_shot: float = 0.0
    n_atom: float = 0.0
    n_la: float = 0.0

    @property
    def threshold_counts(self) -> float:
        return self.c_bar - 4.0 * self.sigma

    def report(self) -> dict:
        return {"c_bar": self.c_bar, "sigma": self.sigma, "threshold_counts": self.threshold_counts,
                "n_th": self.n_th, "eta_over": self.eta_over, "eta_miss": self.eta_miss,
                "tail_probability": self.tail_probability,
                "subthreshold_fraction": self.subthreshold_fraction,
                "conversion_eta": self.conversion_eta}


def _gauss(x, c, mu, sigma):
    return c * np.exp(-0.5 * ((x - mu) / sigma) ** 2)


def fit_threshold(counts, conversion_eta: float = 180.29 / 0.06, n_sigma: float = 4.0
                  ) -> ThresholdModel:
    """Fit the bare-cavity peak of a count histogram and set the threshold
    at C - 4 sigma.

    ``counts`` are raw per-bin photon counts (unit-width histogram is built
    internally).  Overcounting is N_shot / N_sm, the share of sub-threshold
    bins lying under the fitted Gaussian.  Missing probability is
    N_la / N_atom, where N_atom is the excess of data over the Gaussian on
    the low side outside the fit window and N_la its part at or above
    threshold.
    """
    counts = np.asarray(counts).astype(np.int64).ravel()
    if counts.size == 0:
        raise ThresholdError("empty count record")
    if counts.min() < 0:
        raise ThresholdError("negative counts")
    hist = np.bincount(counts).astype(float)
    x = np.arange(hist.size, dtype=float)
    mode = float(np.argmax(hist))
    if mode <= 0 or hist.max() < 10:
        raise ThresholdError("no dominant bare-cavity peak")
    mu, sig = mode, math.sqrt(mode)
    c = hist.max()
    for _ in range(2):
        sel = (x >= mu - 2.0 * sig) & (x <= mu + 4.0 * sig) & (hist > 0)
        if sel.sum() < 4:
            raise ThresholdError("peak too narrow to fit")
        try:
            (c, mu, sig), _ = optimize.curve_fit(_gauss, x[sel], hist[sel], p0=(c, mu, sig),
                                                 sigma=np.sqrt(hist[sel]), absolute_sigma=True)
        except RuntimeError as err:
            raise ThresholdError(f"Gaussian fit failed: {err}") from err
        sig = abs(sig)
    if not 0.5 < sig / math.sqrt(mu) < 2.0:
        warnings.warn(f"peak width {sig:.2f} inconsistent with sqrt(C)={math.sqrt(mu):.2f}: "
                      "non-Poissonian counts", RuntimeWarning, stacklevel=2)
    thr = mu - n_sigma * sig
    model = _gauss(x, c, mu, sig)
    below = x < thr
    n_sm = int(hist[below].sum())
    n_shot = float(np.minimum(hist[below], model[below]).sum())
    excess = np.clip(hist - model, 0.0, None)
    low = x < mu - 2.0 * sig
    n_atom = float(excess[low].sum())
    n_la = float(excess[low & ~below].sum())
    return ThresholdModel(
        c_bar=float(mu), sigma=float(sig), amplitude=float(c), conversion_eta=conversion_eta,
        n_th=float(thr / conversion_eta),
        eta_over=n_shot / n_sm if n_sm else math.nan,
        eta_miss=n_la / n_atom if n_atom > 0 else math.nan,
        tail_probability=float(special.ndtr(-n_sigma)),
        subthreshold_fraction=n_sm / counts.size,
        n_sm=n_sm, n_shot=n_shot, n_atom=n_atom, n_la=n_la)


@dataclass
class OnOffRecord:
    sequence_id: int
    event_times: np.ndarray
    T_int: float
    min_counts: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.event_times = np.asarray(self.event_times, dtype=float)


def detect_dips(stream: CountStream, model: ThresholdModel, T_int: float = 175e-6) -> OnOffRecord:
    """One "on" event per below-threshold excursion, timed at the bin of
    minimum counts; events closer than ``T_int`` merge into one (the lower
    minimum wins)."""
    thr = model.n_th * stream.conversion_eta
    c = stream.counts
    below = c < thr
    times, mins = [], []
    if below.any():
        edges = np.diff(np.concatenate(([0], below.view(np.int8), [0])))
        starts = np.nonzero(edges == 1)[0]
        stops = np.nonzero(edges == -1)[0]
        for a, b in zip(starts, stops):
            i = a + int(np.argmin(c[a:b]))
            t = (i + 0.5) * stream.bin_time
            if times and t - times[-1] < T_int:
                if c[i] < mins[-1]:
                    times[-1], mins[-1] = t, c[i]
                continue
            times.append(t)
            mins.append(c[i])
    times = np.asarray(times)
    assert np.all(np.diff(times) >= T_int - 1e-15), "dead-time violated"
    return OnOffRecord(stream.sequence_id, times, T_int, np.asarray(mins))


@dataclass
class ReconstructedDistribution:
    edges: np.ndarray
    measured_count: np.ndarray      # sequences with >= 1 "on" event per bin
    n_sequences: int

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def bin_time(self) -> float:
        return float(self.edges[1] - self.edges[0])

    @property
    def measured_mean(self) -> np.ndarray:
        return self.measured_count / self.n_sequences

    @property
    def p_zero(self) -> np.ndarray:
        return 1.0 - self.measured_mean

    @property
    def reconstructed_mean(self) -> np.ndarray:
        return -np.log(self.p_zero)

    @property
    def stderr(self) -> np.ndarray:
        p = self.measured_mean
        return np.sqrt(p / ((1.0 - p) * self.n_sequences))

    def poisson_pmf(self, k: int) -> np.ndarray:
        lam = self.reconstructed_mean
        return np.exp(k * np.log(np.where(lam > 0, lam, 1.0)) * (lam > 0) - lam - special.gammaln(k + 1)) \
            if k else np.exp(-lam)


def reconstruct_poisson(records, n_sequences: int | None = None, bin_time: float = 500e-6,
                        t_tot: float = 60e-3, t_start: float = 0.0) -> ReconstructedDistribution:
    """Invert on/off censoring per bin: <N^a> = -ln(1 - <N^m>/M)."""
    records = list(records)
    M = len(records) if n_sequences is None else int(n_sequences)
    n_bins = int(round(t_tot / bin_time))
    edges = t_start + bin_time * np.arange(n_bins + 1)
    occupied = np.zeros(n_bins, dtype=np.int64)
    for rec in records:
        idx = np.floor((rec.event_times - t_start) / bin_time).astype(np.int64)
        idx = np.unique(idx[(idx >= 0) & (idx < n_bins)])
        occupied[idx] += 1
    sat = np.nonzero(occupied >= M)[0]
    if sat.size:
        raise SaturatedBinError(sat)
    return ReconstructedDistribution(edges, occupied, M)


@dataclass(frozen=True)
class ArrivalModelParams:
    c: float = 1.0
    T: float = 83e-6
    d: float = 4.80e-3

    def __post_init__(self):
        if not (self.T > 0 and self.d > 0):
            raise ValueError("T and d must be positive")


def _check_t(t):
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("arrival time must be positive")
    return t


def jacobian(t, d: float, constants: PhysicalConstants | None = None):
    """|d(vx, vy, vz) / d(x, y, t)| = (g t^2 / 2 + d) / t^4."""
    g = (constants or PhysicalConstants()).gtilde
    t = _check_t(t)
    return (0.5 * g * t * t + d) / t**4


def arrival_pdf(t, params: ArrivalModelParams, constants: PhysicalConstants | None = None):
    """Time-of-flight density of a point source released at t = 0,
    integrated over the whole detection plane; normalised to 1 for c = 1."""
    k = constants or PhysicalConstants()
    t = _check_t(t)
    a = k.m / (2.0 * k.kB * params.T)
    u = 0.5 * k.gtilde * t * t
    return params.c * np.sqrt(a / np.pi) * (u + params.d) / (t * t) * np.exp(-a * (u - params.d) ** 2 / (t * t))


def local_arrival_pdf(t, params: ArrivalModelParams, constants: PhysicalConstants | None = None):
    """Arrival density at a point on the plane (x = y = 0), normalised to 1.

    Same kinematics as :func:`arrival_pdf` but without the transverse
    integration, which brings an extra 1/t^2.
    """
    k = constants or PhysicalConstants()
    unnorm = lambda s: arrival_pdf(s, ArrivalModelParams(1.0, params.T, params.d), k) / (s * s)
    norm = _moment(unnorm, 0, params, k)
    return params.c * unnorm(_check_t(t)) / norm


def _moment(f, order, params, constants):
    t_star = math.sqrt(2 * params.d / constants.gtilde)
    hi = 20.0 * t_star + 50.0 * math.sqrt(constants.kB * params.T / constants.m) / constants.gtilde
    g = lambda s: s**order * f(s)
    return (integrate.quad(g, 1e-9, t_star, limit=400, epsabs=0, epsrel=1e-11)[0]
            + integrate.quad(g, t_star, hi, limit=400, epsabs=0, epsrel=1e-11)[0])


def arrival_moments(params: ArrivalModelParams, constants: PhysicalConstants | None = None,
                    local: bool = False) -> tuple[float, float, float]:
    """(integral, mean, std) by adaptive quadrature."""
    k = constants or PhysicalConstants()
    f = (lambda s: local_arrival_pdf(s, params, k)) if local else (lambda s: arrival_pdf(s, params, k))
    m0 = _moment(f, 0, params, k)
    m1 = _moment(f, 1, params, k) / m0
    m2 = _moment(f, 2, params, k) / m0
    return m0, m1, math.sqrt(max(m2 - m1 * m1, 0.0))


def sample_arrival_times(n: int, params: ArrivalModelParams, rng: np.random.Generator,
                         constants: PhysicalConstants | None = None) -> np.ndarray:
    """Exact draws from the ballistic model: v_z ~ N(0, kB T / m),
    t solves -d = v_z t - g t^2 / 2."""
    k = constants or PhysicalConstants()
    vz = rng.normal(0.0, math.sqrt(k.kB * params.T / k.m), n)
    return (vz + np.sqrt(vz * vz + 2.0 * k.gtilde * params.d)) / k.gtilde


@dataclass
class ArrivalFit:
    params: ArrivalModelParams
    stderr: ArrivalModelParams | tuple
    chi2: float
    dof: int
    covariance: np.ndarray

    def report(self) -> dict:
        c_err, T_err, d_err = self.stderr
        return {"c": self.params.c, "c_err": c_err,
                "T_uK": self.params.T * 1e6, "T_uK_err": T_err * 1e6,
                "d_mm": self.params.d * 1e3, "d_mm_err": d_err * 1e3,
                "chi2": self.chi2, "dof": self.dof}


def fit_arrival_counts(centers, counts, init: ArrivalModelParams | None = None,
                       constants: PhysicalConstants | None = None, scale: float = 1.0,
                       weights: str = "model", max_nfev: int = 5000) -> ArrivalFit:
    """Weighted least squares of the arrival model to per-bin values
    ``counts / scale``.

    Poisson weights sigma = sqrt(max(N, 1)) / scale.  With
    ``weights="data"`` N is the observed count; with ``"model"`` (default)
    the fit is repeated with N taken from the previous model curve, which
    removes the low bias that data weights give in sparsely filled bins.
    """
    k = constants or PhysicalConstants()
    init = init or ArrivalModelParams()
    if weights not in ("data", "model"):
        raise ValueError("weights must be 'data' or 'model'")
    t = np.asarray(centers, dtype=float)
    n = np.asarray(counts, dtype=float)
    keep = t > 0
    t, n = t[keep], n[keep]
    if n.sum() <= 0:
        raise FitError("empty histogram")
    y = n / scale

    def model(tt, c, T_uK, d_mm):
        return arrival_pdf(tt, ArrivalModelParams(c, abs(T_uK) * 1e-6, abs(d_mm) * 1e-3), k)

    c0 = init.c
    if c0 == 1.0:  # rescale amplitude from the data
        shape = model(t, 1.0, init.T * 1e6, init.d * 1e3)
        c0 = float(np.sum(y * shape) / max(np.sum(shape * shape), 1e-300))
    p = np.array([c0, init.T * 1e6, init.d * 1e3])
    sig = np.sqrt(np.maximum(n, 1.0)) / scale
    for it in range(4 if weights == "model" else 1):
        if it:
            sig = np.sqrt(np.maximum(model(t, *p) * scale, 1.0)) / scale
        try:
            p, pcov = optimize.curve_fit(model, t, y, p0=p, sigma=sig, absolute_sigma=True,
                                         maxfev=max_nfev)
        except RuntimeError as err:
            resid = (y - model(t, *p)) / sig
            raise FitError(f"arrival fit did not converge (chi2 {np.sum(resid**2):.3g}): {err}") from err
    c, T_uK, d_mm = p[0], abs(p[1]), abs(p[2])
    err = np.sqrt(np.diag(pcov))
    chi2 = float(np.sum(((y - model(t, *p)) / sig) ** 2))
    return ArrivalFit(ArrivalModelParams(float(c), T_uK * 1e-6, d_mm * 1e-3),
                      (float(err[0]), float(err[1]) * 1e-6, float(err[2]) * 1e-3),
                      chi2, int(t.size - 3), pcov)


def fit_arrival(hist: ReconstructedDistribution, constants: PhysicalConstants | None = None,
                init: ArrivalModelParams | None = None, weights: str = "model") -> ArrivalFit:
    """Fit the reconstructed per-sequence means <N^a> (per bin, so the
    amplitude c absorbs the bin width and the atom number)."""
    M = hist.n_sequences
    return fit_arrival_counts(hist.centers, hist.reconstructed_mean * M, init, constants, scale=M,
                              weights=weights)


@dataclass
class G2Result:
    tau: np.ndarray          # bin centres
    g2: np.ndarray
    stderr: np.ndarray
    pairs: np.ndarray
    n_events: int


def stochastic_round(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    base = np.floor(x)
    return (base + (rng.random(x.shape) < x - base)).astype(np.int64)


def add_reconstructed_events(records, hist: ReconstructedDistribution,
                             rng: np.random.Generator) -> list[OnOffRecord]:
    """Scatter the multi-atom events missing from each bin over random
    sequences, uniformly within the bin."""
    M = hist.n_sequences
    extra = stochastic_round(np.clip(hist.reconstructed_mean * M - hist.measured_count, 0, None), rng)
    by_seq: dict[int, list] = {}
    for i, n in enumerate(extra):
        if n == 0:
            continue
        seqs = rng.integers(0, M, n)
        ts = hist.edges[i] + rng.random(n) * hist.bin_time
        for s, t in zip(seqs, ts):
            by_seq.setdefault(int(s), []).append(t)
    records = list(records)
    out = []
    for pos in range(M):
        rec = records[pos] if pos < len(records) else OnOffRecord(pos, np.zeros(0), hist.bin_time)
        add = by_seq.get(pos)
        times = rec.event_times if add is None else np.sort(np.concatenate([rec.event_times, add]))
        out.append(OnOffRecord(rec.sequence_id, times, rec.T_int))
    return out


def g2_correlation(records, n_sequences: int | None = None, tau_edges=None,
                   window: tuple[float, float] = (0.0, 60e-3),
                   reconstructed: ReconstructedDistribution | None = None,
                   rng: np.random.Generator | None = None,
                   period: float | None = None) -> G2Result:
    """Normalised coincidence histogram of arrival events.

    Pairs are counted within each sequence (or, with ``period``, on the
    concatenated timeline t + seq * period) and divided by the expectation
    for uncorrelated events at the time-averaged rate.  If
    ``reconstructed`` is given the missing multi-atom events are first
    distributed over random sequences.
    """
    records = list(records)
    M = len(records) if n_sequences is None else int(n_sequences)
    if M == 0:
        raise ValueError("empty record set")
    if reconstructed is not None:
        records = add_reconstructed_events(records, reconstructed, rng or np.random.default_rng())
    t0, t1 = window
    W = t1 - t0
    tau_edges = np.arange(0.0, 0.5 * W + 1e-12, 1e-3) if tau_edges is None else np.asarray(tau_edges, float)
    per_seq = [np.sort(r.event_times[(r.event_times >= t0) & (r.event_times < t1)]) for r in records]
    n_events = int(sum(p.size for p in per_seq))
    pairs = np.zeros(tau_edges.size - 1)
    tmax = tau_edges[-1]
    if period is None:
        for ts in per_seq:
            if ts.size > 1:
                dif = ts[None, :] - ts[:, None]
                pairs += np.histogram(dif[np.triu_indices(ts.size, 1)], bins=tau_edges)[0]
        span = W
        total = M * W
    else:
        allt = np.sort(np.concatenate([ts + i * period for i, ts in enumerate(per_seq)]))
        for j in range(allt.size):
            hi = np.searchsorted(allt, allt[j] + tmax, side="right")
            pairs += np.histogram(allt[j + 1:hi] - allt[j], bins=tau_edges)[0]
        span = M * period
        total = span
    rate = n_events / total
    a, b = tau_edges[:-1], tau_edges[1:]
    lag_measure = (span * (b - a) - 0.5 * (b * b - a * a))
    if period is None:
        lag_measure = np.clip(lag_measure, 0, None) * M
    expected = rate * rate * np.clip(lag_measure, 1e-300, None)
    g2 = pairs / expected
    return G2Result(0.5 * (a + b), g2, np.sqrt(np.maximum(pairs, 1.0)) / expected, pairs, n_events)


def analytic_g2(tau, pdf, window: tuple[float, float] = (0.0, 60e-3), n_grid: int = 6001):
    """<P(t) P(t + tau)> / <P>^2 over the window, with the same lag
    normalisation as :func:`g2_correlation`."""
    t0, t1 = window
    W = t1 - t0
    t = np.linspace(t0, t1, n_grid)
    p = pdf(t)
    h = t[1] - t[0]
    mean_p = integrate.trapezoid(p, t) / W
    out = []
    for tau_i in np.atleast_1d(tau):
        s = int(round(tau_i / h))
        if s >= n_grid - 1:
            out.append(math.nan)
            continue
        prod = p[: n_grid - s] * p[s:]
        out.append(integrate.trapezoid(prod, dx=h) / ((W - s * h) * mean_p**2))
    return np.asarray(out)
