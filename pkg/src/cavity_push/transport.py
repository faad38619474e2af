"""Monte Carlo transport of atoms from the MOT to the cavity plane.

Each atom is integrated with explicit Euler steps (positions advance with
the previous-step velocity).  v_z follows gravity plus the push-beam
scattering force; every scattered photon adds an isotropic recoil whose
x, y components are applied to the transverse velocity.  Scattering
events are drawn from a per-trajectory Poisson process by time rescaling
(accumulate R dt, fire when an Exp(1) threshold is crossed).

Random streams are per trajectory, seeded from (rng_seed, trajectory_id),
so results do not depend on how an ensemble is split across workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fields import (ModeGeometry, PhysicalConstants, PushBeamParams, SystemParams,
                     default_system, saturation_at, scattering_rate)

_BLOCK = 64


@dataclass(frozen=True)
class EnsembleConfig:
    n_atoms: int = 10_000
    temperature: float = 83e-6
    release_time: float = 0.0
    source_position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    source_sigma: tuple[float, float, float] = (0.0, 0.0, 0.0)
    dt: float = 1e-6
    rng_seed: int = 0
    t_max: float = 0.2
    bin_time: float = 500e-6
    acceptance_radius: float | None = None  # |y| cut at crossing; None -> 2*w0
    recoil: bool = True

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_atoms < 1:
            raise ValueError("n_atoms must be >= 1")
        if not self.t_max > self.release_time:
            raise ValueError("t_max must exceed release_time")


@dataclass
class TrajectoryState:
    pos: np.ndarray
    vel: np.ndarray
    t: float
    alive: bool = True


@dataclass(frozen=True)
class ArrivalEvent:
    t_arr: float
    transverse_offset: tuple[float, float]
    v_at_crossing: float
    trajectory_id: int


@dataclass
class ArrivalHistogram:
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    std: float

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])


@dataclass
class TransportResult:
    events: list[ArrivalEvent]
    histogram: ArrivalHistogram
    n_launched: int
    n_crossed: int
    all_events: list[ArrivalEvent] = field(repr=False, default_factory=list)

    @property
    def arrival_times(self) -> np.ndarray:
        return np.array([e.t_arr for e in self.events])


def trajectory_rng(seed: int, trajectory_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(trajectory_id),)))


def _initial_draw(rng: np.random.Generator, cfg: EnsembleConfig, sigma_v: float):
    vel = rng.normal(0.0, sigma_v, 3)
    offset = rng.normal(0.0, 1.0, 3) * np.asarray(cfg.source_sigma, dtype=float)
    return np.asarray(cfg.source_position, dtype=float) + offset, vel


def sample_maxwell_boltzmann(cfg: EnsembleConfig, constants: PhysicalConstants | None = None,
                             ids=None) -> list[TrajectoryState]:
    """Isotropic thermal velocities, sigma_v = sqrt(kB T / m) per axis."""
    constants = constants or PhysicalConstants()
    sigma_v = math.sqrt(constants.kB * cfg.temperature / constants.m)
    ids = range(cfg.n_atoms) if ids is None else ids
    states = []
    for i in ids:
        pos, vel = _initial_draw(trajectory_rng(cfg.rng_seed, i), cfg, sigma_v)
        states.append(TrajectoryState(pos, vel, cfg.release_time))
    return states


def _isotropic(rng: np.random.Generator, n: int) -> np.ndarray:
    u = rng.normal(size=(n, 3))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


class _ScatterStreams:
    """Per-trajectory buffers of Exp(1) thresholds and emission directions.

    ``next_thr`` and ``acc`` are kept aligned with the caller's compacted
    live arrays; the buffers are indexed by the chunk-local trajectory id.
    """

    def __init__(self, rngs: list[np.random.Generator]):
        self.rngs = rngs
        n = len(rngs)
        self.thr = np.empty((n, _BLOCK))
        self.dirs = np.empty((n, _BLOCK, 3))
        self.ptr = np.zeros(n, dtype=np.int64)
        for i in range(n):
            self._refill(i)
        self.next_thr = self.thr[:, 0].copy()
        self.acc = np.zeros(n)

    def _refill(self, i: int):
        rng = self.rngs[i]
        self.thr[i] = rng.exponential(1.0, _BLOCK)
        self.dirs[i] = _isotropic(rng, _BLOCK)
        self.ptr[i] = 0

    def compact(self, keep: np.ndarray):
        self.next_thr = self.next_thr[keep]
        self.acc = self.acc[keep]

    def fire(self, live: np.ndarray, expected: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Advance the live processes by ``expected`` scatterings.

        Returns positions (into ``live``) that scattered and their summed
        unit recoil vectors.
        """
        self.acc += expected
        hit = np.nonzero(self.acc >= self.next_thr)[0]
        if hit.size == 0:
            return hit, np.zeros((0, 3))
        kick = np.zeros((hit.size, 3))
        pending = np.arange(hit.size)
        while pending.size:
            h = hit[pending]
            j = live[h]
            self.acc[h] -= self.next_thr[h]
            kick[pending] += self.dirs[j, self.ptr[j]]
            self.ptr[j] += 1
            for i in j[self.ptr[j] >= _BLOCK]:
                self._refill(i)
            self.next_thr[h] = self.thr[j, self.ptr[j]]
            pending = pending[self.acc[h] >= self.next_thr[h]]
        return hit, kick


def _euler_update(pos, vel, t, push, constants, gamma, dt):
    s_local = saturation_at(pos, push, t)
    rate = scattering_rate(vel[:, 2], s_local, push, constants, gamma)
    accel_z = -constants.gtilde - push.direction * constants.recoil_velocity * rate
    new_pos = pos + vel * dt
    new_vel = vel.copy()
    new_vel[:, 2] += accel_z * dt
    return new_pos, new_vel, rate


def step_trajectory(state: TrajectoryState, push: PushBeamParams, cfg: EnsembleConfig,
                    constants: PhysicalConstants | None = None, gamma: float | None = None,
                    rng: np.random.Generator | None = None) -> TrajectoryState:
    """Single explicit Euler step of one atom.

    Recoil (if ``cfg.recoil`` and ``rng`` given) draws Poisson(R dt)
    isotropic photons and applies their x, y components.
    """
    constants = constants or PhysicalConstants()
    gamma = default_system().gamma if gamma is None else gamma
    pos, vel, rate = _euler_update(state.pos[None, :], state.vel[None, :], state.t,
                                   push, constants, gamma, cfg.dt)
    if cfg.recoil and rng is not None:
        n = rng.poisson(rate[0] * cfg.dt)
        if n:
            vel[0, :2] += constants.recoil_velocity * _isotropic(rng, n)[:, :2].sum(axis=0)
    return TrajectoryState(pos[0], vel[0], state.t + cfg.dt, state.alive)


def detect_arrival(before: TrajectoryState, after: TrajectoryState, geom: ModeGeometry,
                   trajectory_id: int = 0) -> ArrivalEvent | None:
    """Downward crossing of the cavity plane z = -d, linearly interpolated."""
    z0, z1 = before.pos[2], after.pos[2]
    plane = -geom.d
    if not (z0 > plane >= z1):
        return None
    f = (z0 - plane) / (z0 - z1)
    t = before.t + f * (after.t - before.t)
    xy = before.pos[:2] + f * (after.pos[:2] - before.pos[:2])
    vz = before.vel[2] + f * (after.vel[2] - before.vel[2])
    return ArrivalEvent(float(t), (float(xy[0]), float(xy[1])), float(vz), int(trajectory_id))


def _simulate_chunk(args):
    ids, cfg, push, geom, constants, gamma = args
    n = len(ids)
    sigma_v = math.sqrt(constants.kB * cfg.temperature / constants.m)
    rngs = [trajectory_rng(cfg.rng_seed, i) for i in ids]
    pos = np.empty((n, 3))
    vel = np.empty((n, 3))
    for k, rng in enumerate(rngs):
        pos[k], vel[k] = _initial_draw(rng, cfg, sigma_v)
    streams = _ScatterStreams(rngs) if cfg.recoil and push.s0 > 0 else None
    vr = constants.recoil_velocity
    plane = -geom.d
    out = np.full((n, 4), np.nan)  # t, x, y, vz at crossing
    live = np.arange(n)
    n_steps = int(math.ceil((cfg.t_max - cfg.release_time) / cfg.dt))
    for step in range(n_steps):
        if live.size == 0:
            break
        t = cfg.release_time + step * cfg.dt
        new_pos, new_vel, rate = _euler_update(pos, vel, t, push, constants, gamma, cfg.dt)
        if streams is not None:
            hit, kick = streams.fire(live, rate * cfg.dt)
            if hit.size:
                new_vel[hit, :2] += vr * kick[:, :2]
        crossed = new_pos[:, 2] <= plane
        if crossed.any():
            c = np.nonzero(crossed)[0]
            f = (pos[c, 2] - plane) / (pos[c, 2] - new_pos[c, 2])
            rows = live[c]
            out[rows, 0] = t + f * cfg.dt
            out[rows, 1:3] = pos[c, :2] + f[:, None] * (new_pos[c, :2] - pos[c, :2])
            out[rows, 3] = vel[c, 2] + f * (new_vel[c, 2] - vel[c, 2])
            keep = ~crossed
            live, new_pos, new_vel = live[keep], new_pos[keep], new_vel[keep]
            if streams is not None:
                streams.compact(keep)
        pos, vel = new_pos, new_vel
    return np.asarray(ids), out


def arrival_histogram(times, bin_time: float, start: float = 0.0, stop: float | None = None
                      ) -> ArrivalHistogram:
    times = np.asarray(times, dtype=float)
    if stop is None:
        stop = start + bin_time * max(1, math.ceil(((times.max() if times.size else start) - start)
                                                 / bin_time + 1e-12))
    n_bins = max(1, int(round((stop - start) / bin_time)))
    edges = start + bin_time * np.arange(n_bins + 1)
    counts, _ = np.histogram(times, bins=edges)
    mean = float(times.mean()) if times.size else math.nan
    std = float(times.std()) if times.size else math.nan
    return ArrivalHistogram(edges, counts, mean, std)


def run_transport(cfg: EnsembleConfig, push: PushBeamParams, geom: ModeGeometry | None = None,
                  constants: PhysicalConstants | None = None, system: SystemParams | None = None,
                  workers: int = 1, chunk_size: int = 10_000) -> TransportResult:
    """Simulate ``cfg.n_atoms`` atoms and histogram their cavity arrivals.

    An arrival counts as a cavity transit when |y| at the crossing is
    within ``cfg.acceptance_radius`` (default 2*w0; ``math.inf`` counts
    every atom that reaches the plane).
    """
    geom = geom or ModeGeometry()
    constants = constants or PhysicalConstants()
    gamma = (system or default_system()).gamma
    ids = np.arange(cfg.n_atoms)
    chunks = [(ids[i:i + chunk_size], cfg, push, geom, constants, gamma)
              for i in range(0, cfg.n_atoms, chunk_size)]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_chunk, chunks))
    else:
        parts = [_simulate_chunk(c) for c in chunks]
    parts.sort(key=lambda p: p[0][0])
    out = np.concatenate([p[1] for p in parts])
    radius = 2.0 * geom.w0 if cfg.acceptance_radius is None else cfg.acceptance_radius
    all_events, events = [], []
    for tid in np.nonzero(~np.isnan(out[:, 0]))[0]:
        t, x, y, vz = out[tid]
        ev = ArrivalEvent(float(t), (float(x), float(y)), float(vz), int(tid))
        all_events.append(ev)
        if abs(y) <= radius:
            events.append(ev)
    hist = arrival_histogram([e.t_arr for e in events], cfg.bin_time, start=cfg.release_time)
    return TransportResult(events, hist, cfg.n_atoms, len(all_events), all_events)


def ballistic_crossings(n: int, cfg: EnsembleConfig, geom: ModeGeometry, rng: np.random.Generator,
                        constants: PhysicalConstants | None = None) -> np.ndarray:
    """Closed-form plane crossings of ``n`` freely falling atoms.

    Returns rows (t, x, y, vz) for every launched atom (all reach the
    plane without a push).  Exact counterpart of :func:`run_transport`
    at s = 0, drawn from a single stream.
    """
    constants = constants or PhysicalConstants()
    sv = math.sqrt(constants.kB * cfg.temperature / constants.m)
    p0 = np.asarray(cfg.source_position) + rng.normal(size=(n, 3)) * np.asarray(cfg.source_sigma)
    v = rng.normal(0.0, sv, (n, 3))
    g = constants.gtilde
    h = p0[:, 2] + geom.d  # height above the plane
    tau = (v[:, 2] + np.sqrt(v[:, 2] ** 2 + 2.0 * g * h)) / g
    xy = p0[:, :2] + v[:, :2] * tau[:, None]
    return np.column_stack([cfg.release_time + tau, xy, v[:, 2] - g * tau])
