"""Synthetic reference experiment: free-falling atoms crossing the mode,
recorded as shot-noise-limited photon counts.

Single-atom transits come from the SDE engine (push off) and are stored as
transmission ratios n(t)/n_empty about the crossing time.  Each injected
atom picks the template with the nearest |y| and is time-stretched by the
ratio of template to actual velocity.  Several atoms in the mode multiply
their ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .events import REFERENCE_BIN, CountStream
from .fields import ModeGeometry, PhysicalConstants, PushBeamParams, SystemParams
from .sde import CoefficientTables, SdeConfig, build_tables, run_ensemble
from .transport import EnsembleConfig, ballistic_crossings


@dataclass
class TransitTemplates:
    tau: np.ndarray          # time relative to the crossing, s
    ratio: np.ndarray        # (n_templates, n_tau) transmission ratio
    abs_y: np.ndarray        # |y| at injection, m
    vz: float
    n_empty: float
    n_th: float

    def pick(self, abs_y: np.ndarray) -> np.ndarray:
        order = np.argsort(self.abs_y)
        pos = np.clip(np.searchsorted(self.abs_y[order], abs_y), 0, order.size - 1)
        lower = np.clip(pos - 1, 0, order.size - 1)
        closer = np.abs(self.abs_y[order][lower] - abs_y) < np.abs(self.abs_y[order][pos] - abs_y)
        return order[np.where(closer, lower, pos)]


def build_templates(params: SystemParams, geom: ModeGeometry, cfg: SdeConfig,
                    constants: PhysicalConstants | None = None,
                    tables: CoefficientTables | None = None) -> TransitTemplates:
    """Free-fall SDE transits aligned at their first crossing of z = -d."""
    push = PushBeamParams(s0=0.0, direction=-1)
    res = run_ensemble(cfg, params, geom, push, constants, tables)
    dt = res.t[1] - res.t[0]
    half = int(round(min(res.first_crossing[~np.isnan(res.first_crossing)].min(),
                         res.t[-1] - np.nanmax(res.first_crossing)) / dt))
    tau = np.arange(-half, half + 1) * dt
    ratio = np.ones((res.n_mean.shape[0], tau.size))
    for i, tc in enumerate(res.first_crossing):
        if np.isnan(tc):
            continue
        ratio[i] = np.interp(tc + tau, res.t, res.n_mean[i]) / res.n_empty
    return TransitTemplates(tau, ratio, np.abs(res.initial_pos[:, 1]), abs(cfg.vz0),
                            res.n_empty, res.n_th)


@dataclass
class InjectedTransit:
    sequence: int
    t: float
    y: float
    vz: float


def sample_transits(n_sequences: int, per_sequence: float, ens: EnsembleConfig, geom: ModeGeometry,
                    y_max: float, rng: np.random.Generator,
                    constants: PhysicalConstants | None = None) -> list[list[InjectedTransit]]:
    """Poisson number of accepted (|y| <= y_max) free-fall crossings per
    sequence, drawn from the closed-form ballistic distribution."""
    counts = rng.poisson(per_sequence, n_sequences)
    need = int(counts.sum())
    pool = np.zeros((0, 4))
    while pool.shape[0] < need:
        batch = ballistic_crossings(max(100_000, 50 * need), ens, geom, rng, constants)
        pool = np.vstack([pool, batch[np.abs(batch[:, 2]) <= y_max]])
    pool = pool[:need]
    out, k = [], 0
    for s, c in enumerate(counts):
        rows = pool[k:k + c]
        k += c
        out.append([InjectedTransit(s, float(r[0]), float(r[2]), float(r[3]))
                    for r in rows[np.argsort(rows[:, 0])]])
    return out


def render_sequence(transits: list[InjectedTransit], templates: TransitTemplates, n_bins: int,
                    bin_time: float, sub: int = 50) -> np.ndarray:
    """Bin-averaged <n> of one sequence (``sub`` samples per bin)."""
    ratio = np.ones(n_bins * sub)
    h = bin_time / sub
    grid_t = (np.arange(n_bins * sub) + 0.5) * h
    if transits:
        idx = templates.pick(np.array([abs(tr.y) for tr in transits]))
        for tr, j in zip(transits, idx):
            stretch = templates.vz / max(abs(tr.vz), 1e-6)
            span = templates.tau[-1] * stretch
            a = max(0, int((tr.t - span) / h))
            b = min(ratio.size, int((tr.t + span) / h) + 2)
            if a >= b:
                continue
            local = (grid_t[a:b] - tr.t) / stretch
            ratio[a:b] *= np.interp(local, templates.tau, templates.ratio[j], left=1.0, right=1.0)
    return templates.n_empty * ratio.reshape(n_bins, sub).mean(axis=1)


def synthesize_streams(transits, templates: TransitTemplates, conversion_eta: float,
                       bin_time: float, record_time: float, rng: np.random.Generator
                       ) -> list[CountStream]:
    """Poisson counts per bin; ``conversion_eta`` per unit <n> per 50 us."""
    n_bins = int(round(record_time / bin_time))
    conv_bin = conversion_eta * bin_time / REFERENCE_BIN
    streams = []
    for s, seq in enumerate(transits):
        n_bin = render_sequence(seq, templates, n_bins, bin_time)
        streams.append(CountStream(s, bin_time, rng.poisson(conv_bin * n_bin), conv_bin))
    return streams


def injected_rate(transits, y_max: float, t_stop: float | None = None) -> float:
    """Mean number of injected transits with |y| <= y_max per sequence."""
    n = sum(1 for seq in transits for tr in seq
            if abs(tr.y) <= y_max and (t_stop is None or tr.t < t_stop))
    return n / max(len(transits), 1)
