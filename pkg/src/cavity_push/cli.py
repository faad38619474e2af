"""Command-line front end.

    simulate MODE [--config PATH] [--seed N] [--out DIR] [--override key=value ...]

MODE is one of spectrum, transport, trajectory, analyze,
reference-pipeline.  Every run writes CSV/JSON results, PNG figures
(unless ``--no-figures``), the resolved ``config.ini`` and a
``manifest.json`` with SHA-256 checksums.  ``CAVITY_PUSH_OUT`` overrides
the output directory.

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import math
import os
import platform
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import MODES, ConfigError, RunConfig, apply_override, load_config, serialize
from .events import (REFERENCE_BIN, ArrivalModelParams, CountStream, FitError, SaturatedBinError,
                     ThresholdError, analytic_g2, arrival_pdf, detect_dips,
                     fit_arrival, fit_arrival_counts, fit_threshold, g2_correlation,
                     reconstruct_poisson)
from .fields import TWO_PI, PushBeamParams
from .quantum import HilbertConfig, LocalCouplings, SteadyStateError, transmission_spectrum
from .reference import build_templates, injected_rate, sample_transits, synthesize_streams
from .sde import (CoefficientTables, StabilityError, average_transits, build_coefficient_table,
                  count_dips, fwhm, run_ensemble, run_single_transit, synthesize_counts, tail_ratio)
from .transport import run_transport

ENV_OUT = "CAVITY_PUSH_OUT"
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
NUMERICAL_ERRORS = (SteadyStateError, StabilityError, FitError, SaturatedBinError, ThresholdError,
                    FloatingPointError, np.linalg.LinAlgError)


class InputError(ValueError):
    pass


def _g(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else f"{x:.10g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


@dataclass
class Output:
    root: Path
    figures: bool = True
    files: list[Path] = field(default_factory=list)

    def path(self, name: str) -> Path:
        p = self.root / name
        self.files.append(p)
        return p

    def csv(self, name: str, columns: list[str], rows, meta: dict | None = None):
        with open(self.path(name), "w", newline="", encoding="utf-8") as fh:
            for k, v in (meta or {}).items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_g(v) for v in r])

    def json(self, name: str, data: dict):
        with open(self.path(name), "w", encoding="utf-8") as fh:
            json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def figure(self, name: str, draw, *args, **kw):
        if self.figures:
            draw(self.path(name), *args, **kw)


# spectrum -----------------------------------------------------------------

def run_spectrum(cfg: RunConfig, out: Output) -> dict:
    p = cfg.system()
    h = HilbertConfig(cfg["system"]["fock_cutoff"])
    grid = TWO_PI * 1e6 * np.linspace(-50.0, 50.0, 401)
    empty = np.array([n for _, n in transmission_spectrum(p, LocalCouplings(), h, grid)])
    coupled = np.array([n for _, n in transmission_spectrum(p, LocalCouplings(p.g0, p.delta_st_max), h, grid)])
    no_stark = np.array([n for _, n in transmission_spectrum(p, LocalCouplings(p.g0, 0.0), h, grid)])
    lorentz = p.eta_drive**2 / (p.kappa**2 + grid**2)
    det = grid / (TWO_PI * 1e6)
    out.csv("spectrum.csv", ["detuning_MHz", "n_empty", "n_coupled", "n_coupled_no_stark", "n_empty_analytic"],
            zip(det, empty, coupled, no_stark, lorentz))

    def peaks(y):
        i = [k for k in range(1, y.size - 1) if y[k] > y[k - 1] and y[k] >= y[k + 1]]
        return sorted(i, key=lambda k: -y[k])[:2]

    pk = sorted(peaks(coupled))
    weak = replace(p, eta_drive=p.kappa * 1e-3)
    on_res = [n for _, n in transmission_spectrum(weak, LocalCouplings(p.g0, 0.0), h, [0.0])]
    summary = {
        "cooperativity": p.cooperativity,
        "critical_photon_number": p.critical_photon_number,
        "empty_max_rel_error": float(np.max(np.abs(empty / lorentz - 1.0))),
        "resonance_ratio": float(coupled[200] / empty[200]),
        "resonance_ratio_weak_drive": on_res[0] / weak.empty_cavity_photons(),
        "resonance_ratio_weak_drive_oracle": (1.0 + 2.0 * p.cooperativity) ** -2,
        "peak_detunings_MHz": [float(det[k]) for k in pk],
        "peak_heights": [float(coupled[k]) for k in pk],
    }
    out.json("spectrum_summary.json", summary)
    from .plotting import plot_spectrum
    out.figure("spectrum.png", plot_spectrum, det, {"empty": empty, "coupled": coupled})
    return summary


# transport ----------------------------------------------------------------

def run_transport_mode(cfg: RunConfig, out: Output) -> dict:
    ens, push, geom = cfg.ensemble(), cfg.push(), cfg.geometry()
    res = run_transport(ens, push, geom, cfg.constants(), cfg.system(), workers=cfg["ensemble"]["workers"])
    radius = ens.acceptance_radius
    out.csv("arrivals.csv", ["trajectory_id", "t_s", "x_m", "y_m", "vz_m_per_s", "accepted"],
            ((e.trajectory_id, e.t_arr, *e.transverse_offset, e.v_at_crossing,
              int(abs(e.transverse_offset[1]) <= radius)) for e in res.all_events))
    t_all = np.array([e.t_arr for e in res.all_events])
    edges = res.histogram.edges
    if t_all.size and t_all.max() >= edges[-1]:
        edges = ens.release_time + ens.bin_time * np.arange(int(math.ceil((t_all.max() - ens.release_time) / ens.bin_time)) + 1)
    acc = np.histogram(res.arrival_times, edges)[0]
    allc = np.histogram(t_all, edges)[0]
    out.csv("histogram.csv", ["t_left_s", "t_right_s", "counts_accepted", "counts_all"],
            zip(edges[:-1], edges[1:], acc, allc))
    centers = 0.5 * (edges[1:] + edges[:-1])
    init = ArrivalModelParams(1.0, ens.temperature, geom.d)
    fits = {}
    for name, counts in (("all", allc), ("accepted", acc)):
        try:
            fits[name] = fit_arrival_counts(centers, counts, init, cfg.constants(),
                                            scale=ens.n_atoms * ens.bin_time).report()
        except FitError as err:
            fits[name] = {"error": str(err)}
    summary = {
        "n_launched": res.n_launched, "n_crossed": res.n_crossed, "n_accepted": len(res.events),
        "mean_accepted_ms": float(np.mean(res.arrival_times) * 1e3) if res.events else math.nan,
        "std_accepted_ms": float(np.std(res.arrival_times) * 1e3) if res.events else math.nan,
        "mean_all_ms": float(t_all.mean() * 1e3) if t_all.size else math.nan,
        "std_all_ms": float(t_all.std() * 1e3) if t_all.size else math.nan,
    }
    out.json("fit_report.json", fits)
    out.json("transport_summary.json", summary)
    if "error" not in fits["all"]:
        from .plotting import plot_arrivals
        f = fits["all"]
        tt = np.linspace(max(centers[0], 1e-4), centers[-1], 400)
        model = arrival_pdf(tt, ArrivalModelParams(f["c"], f["T_uK"] * 1e-6, f["d_mm"] * 1e-3), cfg.constants())
        out.figure("arrivals.png", plot_arrivals, edges, allc, tt, model * ens.n_atoms * ens.bin_time)
    return {**summary, "fit": fits}


# trajectory ---------------------------------------------------------------

def run_trajectory(cfg: RunConfig, out: Output) -> dict:
    p, geom, sde = cfg.system(), cfg.geometry(), cfg.sde()
    waist = cfg["trajectory"]["push_waist_um"] * 1e-6
    off = build_coefficient_table(p, geom, sde, False)
    window = cfg["trajectory"]["tail_window_us"] * 1e-6
    smooth = max(1, int(round(sde.trigger_bin / sde.record_interval)))
    summary, avgs, example = {}, {}, None
    for s in cfg["trajectory"]["push_s_values"]:
        push = PushBeamParams(s0=s, direction=-1, waist=waist)
        on = build_coefficient_table(p, geom, sde, True, push) if s > 0 else off
        tables = CoefficientTables(off, on)
        res = run_ensemble(sde, p, geom, push, cfg.constants(), tables)
        dips = np.array([count_dips(res.n_mean[i], res.n_th, smooth) for i in range(res.n_mean.shape[0])])
        double = (res.crossings >= 2) & (dips >= 2)
        avg = average_transits(res.traces(), res.n_th, smooth)
        key = f"{s:g}"
        avgs[key] = (avg.tau, avg.n_mean)
        summary[key] = {
            "turnaround_fraction": float(np.mean(res.crossings >= 2)),
            "double_dip_fraction": float(np.mean(double)),
            "triggered_fraction": float(np.mean(~np.isnan(res.trigger_time))),
            "tail_ratio": tail_ratio(avg, res.n_empty, window),
            "fwhm_us": fwhm(avg, res.n_empty) * 1e6,
            "n_used": avg.n_used, "n_excluded": avg.n_excluded,
            "n_empty": res.n_empty, "n_th": res.n_th,
        }
        if double.any():
            example = (s, int(np.nonzero(double)[0][0]), tables, push)
    tau_all = sorted({round(t, 12) for tau, _ in avgs.values() for t in tau})
    tau_all = np.array(tau_all)
    cols = ["tau_s"] + [f"n_mean_s{k}" for k in avgs]
    table = [tau_all] + [np.interp(tau_all, tau, n, left=np.nan, right=np.nan) for tau, n in avgs.values()]
    out.csv("averaged_traces.csv", cols, zip(*table))
    if example is None:  # fall back to the first trajectory of the last setting
        example = (s, 0, tables, push)
    s_ex, tid, tables, push = example
    traj, trace = run_single_transit(sde, p, geom, push, cfg.constants(), tables, trajectory_id=tid)
    out.csv("trajectory.csv", ["t_s", "x_m", "y_m", "z_m", "vx_m_per_s", "vy_m_per_s", "vz_m_per_s"], traj,
            {"s": _g(s_ex), "trajectory_id": tid})
    binned = synthesize_counts(trace, sde.conversion_eta, sde.trigger_bin,
                               np.random.default_rng([cfg.rng_seed, tid, 1]))
    out.csv("trace.csv", ["t_s", "n_mean", "counts"], zip(binned.t, binned.n_mean, binned.counts),
            {"bin_time_s": _g(sde.trigger_bin), "s": _g(s_ex), "trajectory_id": tid})
    out.json("trajectory_summary.json", summary)
    from .plotting import plot_averaged_traces, plot_transit
    out.figure("averaged_traces.png", plot_averaged_traces, avgs)
    out.figure("transit.png", plot_transit, traj, trace.t, trace.n_mean, geom.d, geom.w0)
    return summary


# analysis -----------------------------------------------------------------

def read_count_csv(path: str) -> list[CountStream]:
    meta, rows = {}, []
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("#"):
                    k, _, v = line[1:].strip().partition("=")
                    meta[k.strip()] = v.strip()
                    continue
                rows.append(line.strip())
    except OSError as err:
        raise InputError(f"cannot read {path}: {err}") from err
    if "bin_time_s" not in meta or "conversion_eta" not in meta:
        raise InputError("count CSV header must declare bin_time_s and conversion_eta")
    if not rows or rows[0].split(",") != ["sequence_id", "bin_index", "counts"]:
        raise InputError("count CSV columns must be sequence_id,bin_index,counts")
    try:
        data = np.array([[int(v) for v in r.split(",")] for r in rows[1:] if r], dtype=np.int64).reshape(-1, 3)
    except ValueError as err:
        raise InputError(f"malformed count row: {err}") from err
    bin_time, conv = float(meta["bin_time_s"]), float(meta["conversion_eta"])
    streams = []
    for sid in np.unique(data[:, 0]):
        sel = data[data[:, 0] == sid]
        counts = np.zeros(sel[:, 1].max() + 1, dtype=np.int64)
        counts[sel[:, 1]] = sel[:, 2]
        streams.append(CountStream(int(sid), bin_time, counts, conv))
    return streams


def write_count_csv(out: Output, name: str, streams: list[CountStream]):
    s0 = streams[0]
    with open(out.path(name), "w", encoding="utf-8") as fh:
        fh.write(f"# bin_time_s={float(s0.bin_time)!r}\n# conversion_eta={float(s0.conversion_eta)!r}\n")
        fh.write("sequence_id,bin_index,counts\n")
        for s in streams:
            idx = np.arange(s.counts.size)
            fh.write("".join(f"{s.sequence_id},{i},{c}\n" for i, c in zip(idx, s.counts)))


def analyze_streams(cfg: RunConfig, streams: list[CountStream], out: Output,
                    rng: np.random.Generator) -> dict:
    a = cfg["analysis"]
    if not streams:
        raise InputError("no count streams")
    conv_ref = streams[0].conversion_eta * REFERENCE_BIN / streams[0].bin_time
    model = fit_threshold(np.concatenate([s.counts for s in streams]), conversion_eta=streams[0].conversion_eta)
    threshold = model.report()
    threshold["conversion_counts_per_photon_per_50us"] = conv_ref
    out.json("threshold.json", threshold)
    records = [detect_dips(s, model, a["T_int_us"] * 1e-6) for s in streams]
    out.csv("events.csv", ["sequence_id", "t_s", "min_counts"],
            ((r.sequence_id, t, c) for r in records for t, c in zip(r.event_times, r.min_counts)))
    hist = reconstruct_poisson(records, bin_time=a["hist_bin_us"] * 1e-6, t_tot=a["t_tot_ms"] * 1e-3)
    out.csv("reconstructed.csv", ["t_left_s", "t_right_s", "measured_mean", "reconstructed_mean", "stderr"],
            zip(hist.edges[:-1], hist.edges[1:], hist.measured_mean, hist.reconstructed_mean, hist.stderr),
            {"n_sequences": hist.n_sequences})
    fit = fit_arrival(hist, cfg.constants(),
                      ArrivalModelParams(1.0, cfg["ensemble"]["temperature_uK"] * 1e-6, cfg.geometry().d))
    out.json("fit_report.json", fit.report())
    tau_edges = np.arange(0.0, a["tau_max_ms"] * 1e-3 + 1e-12, a["tau_bin_ms"] * 1e-3)
    window = (0.0, a["t_tot_ms"] * 1e-3)
    g2 = g2_correlation(records, tau_edges=tau_edges, window=window, reconstructed=hist, rng=rng)
    model_g2 = analytic_g2(g2.tau, lambda t: arrival_pdf(np.maximum(t, 1e-6), fit.params, cfg.constants()), window)
    out.csv("g2.csv", ["tau_s", "g2", "stderr", "g2_model"], zip(g2.tau, g2.g2, g2.stderr, model_g2))
    from .plotting import plot_count_histogram, plot_g2, plot_reconstruction
    allc = np.concatenate([s.counts for s in streams])
    out.figure("count_histogram.png", plot_count_histogram, allc, model)
    tt = np.linspace(hist.edges[0] + 1e-4, hist.edges[-1], 400)
    out.figure("reconstructed.png", plot_reconstruction, hist.edges, hist.measured_mean,
               hist.reconstructed_mean, tt, arrival_pdf(tt, fit.params, cfg.constants()) * hist.bin_time)
    out.figure("g2.png", plot_g2, g2.tau, g2.g2, g2.stderr, g2.tau, model_g2)
    return {"threshold": threshold, "fit": fit.report(), "n_events": int(sum(r.event_times.size for r in records)),
            "g2_0": float(g2.g2[0]), "records": records}


def run_analyze(cfg: RunConfig, out: Output) -> dict:
    path = cfg["analysis"]["counts_csv"]
    if not path:
        raise InputError("analyze mode needs [analysis] counts_csv")
    streams = read_count_csv(path)
    res = analyze_streams(cfg, streams, out, np.random.default_rng([cfg.rng_seed, 2]))
    res.pop("records")
    return res


def run_reference(cfg: RunConfig, out: Output) -> dict:
    p, geom = cfg.system(), cfg.geometry()
    r, a = cfg["reference"], cfg["analysis"]
    sde = replace(cfg.sde(), n_trajectories=r["n_templates"], y_halfwidth=r["template_y_halfwidth_w0"],
                  t_max=2.0 * cfg["trajectory"]["z_start_w0"] * geom.w0 / abs(cfg["trajectory"]["vz0_m_per_s"]))
    templates = build_templates(p, geom, sde, cfg.constants())
    out.csv("templates.csv", ["tau_s"] + [f"ratio_{i}" for i in range(templates.ratio.shape[0])],
            zip(templates.tau, *templates.ratio), {"abs_y_m": " ".join(_g(y) for y in templates.abs_y)})
    rng = np.random.default_rng([cfg.rng_seed, 1])
    y_max = r["template_y_halfwidth_w0"] * geom.w0
    transits = sample_transits(r["n_sequences"], r["transits_per_sequence"], cfg.ensemble(), geom, y_max,
                               rng, cfg.constants())
    out.csv("injected.csv", ["sequence_id", "t_s", "y_m", "vz_m_per_s"],
            ((tr.sequence, tr.t, tr.y, tr.vz) for seq in transits for tr in seq))
    streams = synthesize_streams(transits, templates, a["conversion_counts_per_photon"], a["bin_time_us"] * 1e-6,
                                 r["record_ms"] * 1e-3, rng)
    write_count_csv(out, "counts.csv", streams)
    res = analyze_streams(cfg, streams, out, rng)
    records = res.pop("records")
    t_tot = a["t_tot_ms"] * 1e-3
    recovered = sum(int(np.sum(rec.event_times < t_tot)) for rec in records) / len(records)
    truth = injected_rate(transits, geom.w0, t_tot)
    res["recovered_rate"] = recovered
    res["injected_rate_within_w0"] = truth
    res["recovery_ratio"] = recovered / truth if truth else math.nan
    out.json("pipeline_summary.json", res)
    return res


RUNNERS = {
    "spectrum": run_spectrum,
    "transport": run_transport_mode,
    "trajectory": run_trajectory,
    "analyze": run_analyze,
    "reference-pipeline": run_reference,
}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import matplotlib
    import scipy
    return {"cavity_push": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "matplotlib": matplotlib.__version__}


def run(mode: str, cfg: RunConfig, out_dir: str | Path, figures: bool = True) -> dict:
    """Dispatch one mode and write its manifest; returns the manifest."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    out = Output(root, figures)
    start = _dt.datetime.now(_dt.timezone.utc).isoformat()
    with open(out.path("config.ini"), "w", encoding="utf-8") as fh:
        fh.write(serialize(cfg))
    with np.errstate(divide="ignore", invalid="ignore"):
        summary = RUNNERS[mode](cfg, out)
    manifest = {
        "mode": mode,
        "seed": cfg.rng_seed,
        "config": cfg.as_dict(),
        "config_source": cfg.source,
        "defaults_used": cfg.defaults_used,
        "versions": _versions(),
        "start": start,
        "end": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "files": [{"path": f.name, "sha256": _sha256(f), "bytes": f.stat().st_size} for f in out.files],
    }
    with open(root / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest["summary"] = summary
    return manifest


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="simulate", description="Atom transport and cavity-transmission simulations.")
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", default=None, help="INI file; omitted sections use defaults")
    ap.add_argument("--seed", type=_seed, default=0)
    ap.add_argument("--out", default="out", help=f"output directory (overridden by ${ENV_OUT})")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                    help="set a config key, e.g. push.s0=1e-3 (repeatable)")
    ap.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = os.environ.get(ENV_OUT) or args.out
    try:
        cfg = load_config(args.config, rng_seed=args.seed)
        for item in args.override:
            apply_override(cfg, item)
        manifest = run(args.mode, cfg, out_dir, figures=not args.no_figures)
    except (ConfigError, InputError) as err:
        print(f"simulate: invalid input: {err}", file=sys.stderr)
        return EXIT_INVALID
    except NUMERICAL_ERRORS as err:
        print(f"simulate: numerical failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"simulate {args.mode}: wrote {len(manifest['files'])} files to {out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
