"""Semiclassical Ito dynamics of one atom inside the cavity mode.

dx = v dt
dp = -hbar g0 <Phi> grad(psi) dt
     - (hbar g0^2 / m) chi (p . grad psi) grad psi dt
     + hbar g0 sqrt(2 xi) grad(psi) dW_x
     + hbar k sqrt(<sigma_e>) sqrt(2 gamma E) dW
     + (-m g - dir * hbar k R_push) z_hat dt

Steady-state quantities depend on position only through the local
coupling g(r), the lock light shift and the push saturation, so they are
tabulated once on a (g, Delta_st, s) grid and interpolated multilinearly.
R_push = Omega_ps Im<sigma_eg> is the push-beam absorption rate.  The push
beam from below is switched on per trajectory by a threshold trigger on
the synthesized transmission.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from dataclasses import field as dc_field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.ndimage import uniform_filter1d

from .fields import (ModeGeometry, PhysicalConstants, PushBeamParams, SystemParams,
                     mode_function, saturation_at, stark_shift_at)
from .quantum import HilbertConfig, LocalCouplings, SteadyStateError, local_quantities
from .transport import TrajectoryState, trajectory_rng

RADIATION_TENSOR = np.diag([2.0 / 5.0, 3.0 / 10.0, 3.0 / 10.0])
TABLE_FIELDS = ("phi_mean", "xi", "chi", "sigma_e", "n_mean", "push_rate")
_BLOCK = 1000


class StabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class SdeTerms:
    """Switches for isolating individual force terms."""

    dipole: bool = True
    friction: bool = True
    diffusion: bool = True
    recoil: bool = True
    push: bool = True
    gravity: bool = True

    @classmethod
    def only(cls, *names: str) -> "SdeTerms":
        return cls(**{f: f in names for f in cls.__dataclass_fields__})


@dataclass(frozen=True)
class SdeConfig:
    dt: float = 1e-7
    t_max: float = 4e-3
    record_interval: float = 1e-6
    n_trajectories: int = 500
    rng_seed: int = 0
    # initial conditions, lengths in units of w0
    z_start: float = 3.0          # height above the mode centre
    vz0: float = -0.3
    vz_sigma: float = 0.0
    y_halfwidth: float = 1.0
    v_transverse_sigma: float = 0.0
    box_top: float = 4.0
    box_bottom: float = 6.0
    box_side: float = 4.0
    # table resolution
    n_g: int = 81
    n_stark: int = 9
    n_s: int = 9
    fock_cutoff: int = 6
    rabi_factor: float = 1.0      # Omega_ps = rabi_factor * gamma * sqrt(2 s)
    # push trigger
    trigger_mode: str = "counts"  # "counts", "mean" or "always"
    trigger_bin: float = 50e-6
    conversion_eta: float = 180.29 / 0.06  # counts per <n> per 50 us
    n_th: float | None = None     # None: (C - 4 sqrt(C)) / conversion
    stability_limit: float = 0.1

    def __post_init__(self):
        for name in ("dt", "t_max", "record_interval", "trigger_bin", "conversion_eta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_g < 2 or self.n_stark < 1 or self.n_s < 1:
            raise ValueError("grid resolutions must be positive (n_g >= 2)")
        if self.trigger_mode not in ("counts", "mean", "always"):
            raise ValueError(f"unknown trigger_mode {self.trigger_mode!r}")
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")

    @property
    def record_steps(self) -> int:
        return max(1, int(round(self.record_interval / self.dt)))

    @property
    def trigger_steps(self) -> int:
        return max(1, int(round(self.trigger_bin / self.dt)))


def _axis_weights(axis: np.ndarray, x: np.ndarray):
    if axis.size == 1:
        z = np.zeros(x.shape, dtype=np.int64)
        return z, z, np.zeros(x.shape)
    x = np.clip(x, axis[0], axis[-1])
    i0 = np.clip(np.searchsorted(axis, x, side="right") - 1, 0, axis.size - 2)
    w = (x - axis[i0]) / (axis[i0 + 1] - axis[i0])
    return i0, i0 + 1, w


@dataclass
class QuantumCoefficientTable:
    """Steady-state quantities on a (g, Delta_st, s) grid.

    ``values`` has shape (n_g, n_stark, n_s, 6) in the order of
    ``TABLE_FIELDS``; ``xi`` in s, ``chi`` in s^2, ``push_rate`` in 1/s.
    Interpolation is a cubic spline along g (the excited population grows
    as g^2 near the nodes, which linear interpolation resolves poorly) and
    linear along Delta_st and s.  Lookups outside the grid are clamped to
    its edges.
    """

    g_axis: np.ndarray
    stark_axis: np.ndarray
    s_axis: np.ndarray
    values: np.ndarray
    _coef: np.ndarray = dc_field(init=False, repr=False)

    def __post_init__(self):
        if self.g_axis.size >= 4:
            self._coef = CubicSpline(self.g_axis, self.values, axis=0).c
        else:
            h = np.diff(self.g_axis)[:, None, None, None]
            slope = np.diff(self.values, axis=0) / h
            self._coef = np.stack([np.zeros_like(slope), np.zeros_like(slope), slope, self.values[:-1]])

    def lookup(self, g, stark, s) -> np.ndarray:
        g, stark, s = np.broadcast_arrays(np.asarray(g, float), np.asarray(stark, float),
                                          np.asarray(s, float))
        a0, _, _ = _axis_weights(self.g_axis, g)
        dx = np.clip(g, self.g_axis[0], self.g_axis[-1]) - self.g_axis[a0]
        b0, b1, wb = _axis_weights(self.stark_axis, stark)
        c0, c1, wc = _axis_weights(self.s_axis, s)
        c = self._coef
        dx = dx[..., None]
        out = 0.0
        for ib, fb in ((b0, 1 - wb), (b1, wb)):
            for ic, fc in ((c0, 1 - wc), (c1, wc)):
                k = c[:, a0, ib, ic]
                v = ((k[0] * dx + k[1]) * dx + k[2]) * dx + k[3]
                out = out + (fb * fc)[..., None] * v
        return out

    def field(self, name: str, g, stark, s):
        return self.lookup(g, stark, s)[..., TABLE_FIELDS.index(name)]

    @classmethod
    def constant(cls, **values) -> "QuantumCoefficientTable":
        """Position-independent table, for isolating force terms."""
        vals = np.array([float(values.get(f, 0.0)) for f in TABLE_FIELDS])
        one = np.zeros(1)
        return cls(np.array([-1.0, 1.0]) * 1e12, one, one, np.broadcast_to(vals, (2, 1, 1, 6)).copy())


def omega_from_saturation(s, gamma: float, rabi_factor: float = 1.0):
    return rabi_factor * gamma * np.sqrt(2.0 * np.asarray(s, dtype=float))


def build_coefficient_table(params: SystemParams, geom: ModeGeometry, cfg: SdeConfig,
                            push_on: bool, push: PushBeamParams | None = None
                            ) -> QuantumCoefficientTable:
    """Solve the local steady state on the whole grid.

    The push-off table has a single s = 0 plane.  With the push on, a
    uniform beam needs only s = s0; a Gaussian beam gets ``cfg.n_s``
    points in [0, s0].
    """
    hilbert = HilbertConfig(cfg.fock_cutoff)
    g_axis = np.linspace(-params.g0, params.g0, cfg.n_g)
    if params.delta_st_max == 0 or cfg.n_stark == 1:
        stark_axis = np.array([params.delta_st_max if cfg.n_stark == 1 else 0.0])
    else:
        stark_axis = np.linspace(min(params.delta_st_max, 0), max(params.delta_st_max, 0), cfg.n_stark)
    if not push_on or push is None or push.s0 == 0:
        s_axis = np.zeros(1)
    elif math.isinf(push.waist):
        s_axis = np.array([push.s0])
    else:
        s_axis = np.linspace(0.0, push.s0, cfg.n_s)
    values = np.empty((g_axis.size, stark_axis.size, s_axis.size, len(TABLE_FIELDS)))
    for i, g in enumerate(g_axis):
        for j, st in enumerate(stark_axis):
            for k, s in enumerate(s_axis):
                local = LocalCouplings(float(g), float(st),
                                       float(omega_from_saturation(s, params.gamma, cfg.rabi_factor)))
                try:
                    q = local_quantities(params, local, hilbert)
                except SteadyStateError as err:
                    raise SteadyStateError(
                        f"table point g/2pi={g / 2e6 / math.pi:.4g} MHz, "
                        f"stark/2pi={st / 2e6 / math.pi:.4g} MHz, s={s:.4g}: {err}") from err
                values[i, j, k] = (q.phi_mean, max(q.xi, 0.0), q.chi, q.sigma_e, q.n_mean, q.push_rate)
    return QuantumCoefficientTable(g_axis, stark_axis, s_axis, values)


@dataclass
class CoefficientTables:
    off: QuantumCoefficientTable
    on: QuantumCoefficientTable


def build_tables(params: SystemParams, geom: ModeGeometry, cfg: SdeConfig,
                 push: PushBeamParams) -> CoefficientTables:
    off = build_coefficient_table(params, geom, cfg, False)
    on = build_coefficient_table(params, geom, cfg, True, push) if push.s0 > 0 else off
    return CoefficientTables(off, on)


@dataclass
class TransmissionTrace:
    t: np.ndarray
    n_mean: np.ndarray
    counts: np.ndarray | None = None
    bin_time: float | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.n_mean = np.asarray(self.n_mean, dtype=float)
        if np.any(self.n_mean < -1e-12):
            raise ValueError("n_mean must be >= 0")
        if self.counts is not None and np.any(np.asarray(self.counts) < 0):
            raise ValueError("counts must be >= 0")


def _local_inputs(pos, gate, tables, geom, params, push, constants):
    psi, grad = mode_function(pos, geom, constants)
    g = params.g0 * psi
    stark = stark_shift_at(pos, geom, params)
    s = saturation_at(pos, push)
    q_off = tables.off.lookup(g, stark, 0.0)
    if gate.any():
        q_on = tables.on.lookup(g, stark, s)
        q = np.where(gate[:, None], q_on, q_off)
    else:
        q = q_off
    return q, grad


def _drift_and_noise(vel, q, grad, params, push, constants, dt, terms, tensor, noise,
                     stability_limit):
    """Velocity increment for arrays of shape (N, 3); ``noise`` is (N, 4)
    standard normals or None."""
    m, hbar = constants.m, constants.hbar
    g0 = params.g0
    phi, xi, chi, sig_e, _, push_rate = (q[:, i] for i in range(6))
    grad2 = np.einsum("ij,ij->i", grad, grad)
    stab = hbar * g0**2 * np.abs(chi) * grad2 * dt / m
    if terms.friction and np.any(stab >= stability_limit):
        i = int(np.argmax(stab))
        raise StabilityError(f"friction step {stab[i]:.3g} >= {stability_limit} "
                             f"(chi={chi[i]:.3g} s^2, |grad psi|^2={grad2[i]:.3g} m^-2, dt={dt:.3g} s)")
    dv = np.zeros_like(vel)
    if terms.dipole:
        dv -= (hbar * g0 / m * phi * dt)[:, None] * grad
    if terms.friction:
        vg = np.einsum("ij,ij->i", vel, grad)
        dv -= (hbar * g0**2 / m * chi * vg * dt)[:, None] * grad
    if terms.gravity:
        dv[:, 2] -= constants.gtilde * dt
    if terms.push:
        dv[:, 2] -= push.direction * constants.recoil_velocity * push_rate * dt
    if noise is not None:
        sdt = math.sqrt(dt)
        if terms.diffusion:
            dv += (hbar * g0 / m * np.sqrt(2.0 * xi) * noise[:, 0] * sdt)[:, None] * grad
        if terms.recoil:
            amp = constants.recoil_velocity * np.sqrt(np.clip(sig_e, 0, None) * 2.0 * params.gamma)
            dv += amp[:, None] * np.sqrt(np.diag(tensor))[None, :] * noise[:, 1:4] * sdt
    return dv


def sde_step(state: TrajectoryState, tables: CoefficientTables, geom: ModeGeometry,
             params: SystemParams, push: PushBeamParams, constants: PhysicalConstants | None = None,
             rng: np.random.Generator | None = None, dt: float = 1e-7, push_gate: bool = False,
             tensor: np.ndarray = RADIATION_TENSOR, terms: SdeTerms = SdeTerms(),
             stability_limit: float = 0.1) -> TrajectoryState:
    """One Euler-Maruyama step; ``rng=None`` drops the noise terms."""
    constants = constants or PhysicalConstants()
    pos = np.asarray(state.pos, float)[None, :]
    vel = np.asarray(state.vel, float)[None, :]
    q, grad = _local_inputs(pos, np.array([push_gate]), tables, geom, params, push, constants)
    noise = None if rng is None else rng.standard_normal((1, 4))
    dv = _drift_and_noise(vel, q, grad, params, push, constants, dt, terms, tensor, noise,
                          stability_limit)
    return TrajectoryState(pos[0] + vel[0] * dt, vel[0] + dv[0], state.t + dt, state.alive)


def default_threshold(cfg: SdeConfig, n_empty: float) -> float:
    """n_th from the bare-cavity count level: (C - 4 sqrt(C)) / conversion."""
    if cfg.n_th is not None:
        return cfg.n_th
    c = cfg.conversion_eta * n_empty
    return (c - 4.0 * math.sqrt(c)) / cfg.conversion_eta


@dataclass
class EnsembleTransits:
    t: np.ndarray                 # record times
    n_mean: np.ndarray            # (N, n_rec)
    crossings: np.ndarray         # crossings of z = -d per trajectory
    first_crossing: np.ndarray    # time of the first crossing, nan if none
    trigger_time: np.ndarray      # push switch-on time, nan if never
    exit_time: np.ndarray
    initial_pos: np.ndarray
    n_empty: float
    n_th: float
    positions: np.ndarray | None = None   # (N, n_rec, 6) if recorded

    def trace(self, i: int) -> TransmissionTrace:
        return TransmissionTrace(self.t, self.n_mean[i])

    def traces(self) -> list[TransmissionTrace]:
        return [self.trace(i) for i in range(self.n_mean.shape[0])]


def _initial_state(rng, cfg: SdeConfig, geom: ModeGeometry, constants: PhysicalConstants):
    x = rng.uniform(0.0, constants.lambda_probe)
    y = rng.uniform(-cfg.y_halfwidth, cfg.y_halfwidth) * geom.w0
    z = -geom.d + cfg.z_start * geom.w0
    vx, vy = rng.normal(0.0, cfg.v_transverse_sigma, 2) if cfg.v_transverse_sigma > 0 else (0.0, 0.0)
    vz = cfg.vz0 + (rng.normal(0.0, cfg.vz_sigma) if cfg.vz_sigma > 0 else 0.0)
    return np.array([x, y, z]), np.array([vx, vy, vz])


def run_ensemble(cfg: SdeConfig, params: SystemParams, geom: ModeGeometry, push: PushBeamParams,
                 constants: PhysicalConstants | None = None, tables: CoefficientTables | None = None,
                 ids=None, terms: SdeTerms = SdeTerms(), noise: bool = True,
                 record_positions: bool = False) -> EnsembleTransits:
    """Integrate many independent transits in lock step.

    Each trajectory draws from its own stream (seed, id): initial state,
    then blocks of Wiener increments and the trigger's Poisson counts, so
    results do not depend on ensemble size.  A trajectory ends when it
    leaves the box around the mode or at ``cfg.t_max``; afterwards its
    trace holds the bare-cavity value.
    """
    constants = constants or PhysicalConstants()
    tables = tables or build_tables(params, geom, cfg, push)
    ids = np.arange(cfg.n_trajectories) if ids is None else np.asarray(ids)
    n = ids.size
    rngs = [trajectory_rng(cfg.rng_seed, int(i)) for i in ids]
    pos = np.empty((n, 3))
    vel = np.empty((n, 3))
    for k, rng in enumerate(rngs):
        pos[k], vel[k] = _initial_state(rng, cfg, geom, constants)
    init = pos.copy()
    n_empty = float(tables.off.field("n_mean", 0.0, 0.0, 0.0))
    n_th = default_threshold(cfg, n_empty)
    conv_bin = cfg.conversion_eta * cfg.trigger_bin / 50e-6
    thr_counts = n_th * conv_bin

    n_steps = int(math.ceil(cfg.t_max / cfg.dt))
    rec = cfg.record_steps
    n_rec = n_steps // rec + 1
    trig = cfg.trigger_steps
    n_hist = np.full((n, n_rec), n_empty)
    pos_hist = np.full((n, n_rec, 6), np.nan) if record_positions else None
    crossings = np.zeros(n, dtype=np.int64)
    first_crossing = np.full(n, np.nan)
    trigger_time = np.full(n, np.nan)
    exit_time = np.full(n, np.nan)
    gate = np.full(n, cfg.trigger_mode == "always" and push.s0 > 0)
    n_acc = np.zeros(n)
    live = np.arange(n)
    buf = np.empty((n, _BLOCK, 4))
    plane = -geom.d
    top = plane + cfg.box_top * geom.w0
    bottom = plane - cfg.box_bottom * geom.w0
    side = cfg.box_side * geom.w0

    for step in range(n_steps + 1):
        if live.size == 0:
            break
        t = step * cfg.dt
        q, grad = _local_inputs(pos, gate[live], tables, geom, params, push, constants)
        n_now = q[:, 4]
        if step % rec == 0:
            n_hist[live, step // rec] = n_now
            if record_positions:
                pos_hist[live, step // rec, :3] = pos
                pos_hist[live, step // rec, 3:] = vel
        if step == n_steps:
            break
        # push trigger
        if cfg.trigger_mode == "mean" and push.s0 > 0:
            fire = ~gate[live] & (n_now < n_th)
            if fire.any():
                gate[live[fire]] = True
                trigger_time[live[fire]] = t
        elif cfg.trigger_mode == "counts" and push.s0 > 0:
            n_acc[live] += n_now
            if (step + 1) % trig == 0:
                waiting = live[~gate[live]]
                for i in waiting:
                    c = rngs[i].poisson(conv_bin * n_acc[i] / trig)
                    if c < thr_counts:
                        gate[i] = True
                        trigger_time[i] = t + cfg.dt
                n_acc[live] = 0.0
        if noise:
            if step % _BLOCK == 0:
                for i in live:
                    buf[i] = rngs[i].standard_normal((_BLOCK, 4))
            dw = buf[live, step % _BLOCK]
        else:
            dw = None
        dv = _drift_and_noise(vel, q, grad, params, push, constants, cfg.dt, terms,
                              RADIATION_TENSOR, dw, cfg.stability_limit)
        new_pos = pos + vel * cfg.dt
        vel = vel + dv
        crossed = np.sign(pos[:, 2] - plane) != np.sign(new_pos[:, 2] - plane)
        if crossed.any():
            c = live[crossed]
            f = (pos[crossed, 2] - plane) / (pos[crossed, 2] - new_pos[crossed, 2])
            first_crossing[c] = np.where(np.isnan(first_crossing[c]), t + f * cfg.dt, first_crossing[c])
            crossings[c] += 1
        pos = new_pos
        out = (pos[:, 2] > top) | (pos[:, 2] < bottom) | (np.abs(pos[:, 1]) > side)
        if out.any():
            exit_time[live[out]] = t + cfg.dt
            keep = ~out
            live, pos, vel = live[keep], pos[keep], vel[keep]

    t_rec = np.arange(n_rec) * rec * cfg.dt
    return EnsembleTransits(t_rec, n_hist, crossings, first_crossing, trigger_time, exit_time, init,
                            n_empty, n_th, pos_hist)


def run_single_transit(cfg: SdeConfig, params: SystemParams, geom: ModeGeometry,
                       push: PushBeamParams, constants: PhysicalConstants | None = None,
                       tables: CoefficientTables | None = None, trajectory_id: int = 0,
                       noise: bool = True):
    """Returns (trajectory array with columns t, x, y, z, vx, vy, vz;
    TransmissionTrace)."""
    res = run_ensemble(replace(cfg, n_trajectories=1), params, geom, push, constants, tables,
                       ids=[trajectory_id], noise=noise, record_positions=True)
    p = res.positions[0]
    ok = ~np.isnan(p[:, 0])
    traj = np.column_stack([res.t[ok], p[ok]])
    return traj, res.trace(0)


def synthesize_counts(trace: TransmissionTrace, conversion_eta: float, bin_time: float,
                      rng: np.random.Generator, reference_bin: float = 50e-6) -> TransmissionTrace:
    """Bin the mean photon number and draw Poisson counts.

    ``conversion_eta`` is in counts per unit <n> per ``reference_bin``;
    the mean count of a bin is conversion_eta * (bin_time / reference_bin)
    * (bin average of <n>).
    """
    if not conversion_eta > 0:
        raise ValueError("conversion_eta must be positive")
    t, n = trace.t, trace.n_mean
    span = t[-1] - t[0] + (t[1] - t[0] if t.size > 1 else 0.0)
    n_bins = max(1, int(math.floor(span / bin_time + 1e-9)))
    idx = np.floor((t - t[0]) / bin_time + 1e-9).astype(np.int64)
    keep = idx < n_bins
    sums = np.bincount(idx[keep], weights=n[keep], minlength=n_bins)
    cnt = np.bincount(idx[keep], minlength=n_bins)
    mean_n = sums / np.maximum(cnt, 1)
    lam = conversion_eta * bin_time / reference_bin * mean_n
    counts = rng.poisson(lam)
    centers = t[0] + (np.arange(n_bins) + 0.5) * bin_time
    return TransmissionTrace(centers, mean_n, counts, bin_time)


@dataclass
class AveragedTrace:
    tau: np.ndarray
    n_mean: np.ndarray
    n_used: int
    n_excluded: int


def average_transits(traces, n_dip: float | None = None, smooth: int = 1) -> AveragedTrace:
    """Align traces at their dip minimum and average pointwise.

    The minimum is located on a ``smooth``-sample boxcar average, so that
    standing-wave flicker does not set the alignment.  Traces whose
    minimum is not below ``n_dip`` (default: 99% of the first sample) are
    excluded.  Samples beyond the end of a shorter trace are ignored.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("need at least one trace")
    dt = traces[0].t[1] - traces[0].t[0] if traces[0].t.size > 1 else 1.0
    picked = []
    for tr in traces:
        ref = uniform_filter1d(tr.n_mean, smooth, mode="nearest") if smooth > 1 else tr.n_mean
        lim = 0.99 * tr.n_mean[0] if n_dip is None else n_dip
        i = int(np.argmin(ref))
        if ref[i] < lim:
            picked.append((i, tr.n_mean))
    if not picked:
        return AveragedTrace(np.zeros(0), np.zeros(0), 0, len(traces))
    before = max(i for i, _ in picked)
    after = max(v.size - i for i, v in picked)
    acc = np.zeros(before + after)
    num = np.zeros(before + after)
    for i, v in picked:
        s = before - i
        acc[s:s + v.size] += v
        num[s:s + v.size] += 1
    with np.errstate(invalid="ignore"):
        avg = acc / num
    tau = (np.arange(before + after) - before) * dt
    return AveragedTrace(tau, avg, len(picked), len(traces) - len(picked))


def fwhm(avg: AveragedTrace, baseline: float) -> float:
    """Full width at half depth of an averaged dip."""
    depth = baseline - np.nanmin(avg.n_mean)
    half = baseline - 0.5 * depth
    below = np.nonzero(avg.n_mean <= half)[0]
    if below.size == 0:
        return math.nan
    dt = avg.tau[1] - avg.tau[0]
    return float((below[-1] - below[0] + 1) * dt)


def tail_ratio(avg: AveragedTrace, baseline: float, window: float = 300e-6) -> float:
    """Dip area after the minimum divided by the area before it."""
    d = baseline - avg.n_mean
    d = np.where(np.isnan(d), 0.0, d)
    dt = avg.tau[1] - avg.tau[0]
    first = d[(avg.tau < 0) & (avg.tau >= -window)].sum() * dt
    second = d[(avg.tau > 0) & (avg.tau <= window)].sum() * dt
    return float(second / first) if first > 0 else math.inf


def count_dips(n_mean: np.ndarray, n_th: float, smooth: int = 1, min_gap: int = 1) -> int:
    """Number of separate excursions below ``n_th`` after a boxcar average
    over ``smooth`` samples (the detector integrates over a count bin)."""
    n_mean = np.asarray(n_mean, dtype=float)
    if smooth > 1:
        n_mean = uniform_filter1d(n_mean, smooth, mode="nearest")
    below = n_mean < n_th
    if not below.any():
        return 0
    edges = np.diff(np.concatenate(([0], below.view(np.int8), [0])))
    starts = np.nonzero(edges == 1)[0]
    stops = np.nonzero(edges == -1)[0]
    n = 1
    for a, b_prev in zip(starts[1:], stops[:-1]):
        if a - b_prev >= min_gap:
            n += 1
    return n
