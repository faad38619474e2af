"""INI run configuration with unit-suffixed keys.

Every key carries its unit in the name (``w0_um``, ``d_mm``,
``g0_over_2pi_MHz``) and is converted to SI when the typed parameter
objects are built.  Unknown sections or keys are rejected; missing ones
fall back to the defaults below and are listed in ``defaults_used``.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

from .fields import TWO_PI, ModeGeometry, PhysicalConstants, PushBeamParams, SystemParams
from .sde import SdeConfig
from .transport import EnsembleConfig

MODES = ("spectrum", "transport", "trajectory", "analyze", "reference-pipeline")


class ConfigError(ValueError):
    pass


def _float(v: str) -> float:
    return float(v)


def _int(v: str) -> int:
    return int(v)


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.replace(",", " ").split())


def _str(v: str) -> str:
    return v.strip()


def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _choice(*opts):
    return lambda x: x in opts


# section -> key -> (parser, default, check or None)
SCHEMA: dict[str, dict[str, tuple]] = {
    "system": {
        "g0_over_2pi_MHz": (_float, 16.02, _positive),
        "kappa_over_2pi_MHz": (_float, 18.6, _positive),
        "gamma_over_2pi_MHz": (_float, 3.033, _positive),
        "delta_ap_over_2pi_MHz": (_float, 0.0, None),
        "delta_cp_over_2pi_MHz": (_float, 0.0, None),
        "delta_st_max_over_2pi_MHz": (_float, -1.0, None),
        "empty_cavity_photons": (_float, 0.06, _positive),
        "fock_cutoff": (_int, 6, _positive),
    },
    "geometry": {
        "w0_um": (_float, 26.198, _positive),
        "cavity_length_um": (_float, 151.686, _positive),
        "d_mm": (_float, 4.80, _positive),
        "lambda_lock_nm": (_float, 788.0, _positive),
        "w_lock_um": (_float, 26.198, _positive),
    },
    "push": {
        "s0": (_float, 0.0, _nonneg),
        "delta_aps_over_2pi_MHz": (_float, 0.0, None),
        "direction": (_str, "above", _choice("above", "below")),
        "waist_um": (_float, math.inf, _positive),
        "turn_on_time_ms": (_float, 0.0, _nonneg),
    },
    "ensemble": {
        "n_atoms": (_int, 10_000, _positive),
        "temperature_uK": (_float, 83.0, _positive),
        "dt_us": (_float, 1.0, _positive),
        "t_max_ms": (_float, 200.0, _positive),
        "bin_time_us": (_float, 500.0, _positive),
        "acceptance_radius_w0": (_float, 2.0, _positive),
        "recoil": (_bool, True, None),
        "workers": (_int, 1, _positive),
    },
    "trajectory": {
        "n_trajectories": (_int, 500, _positive),
        "dt_us": (_float, 0.1, _positive),
        "t_max_ms": (_float, 4.0, _positive),
        "record_interval_us": (_float, 1.0, _positive),
        "vz0_m_per_s": (_float, -0.3, None),
        "z_start_w0": (_float, 3.0, _positive),
        "y_halfwidth_w0": (_float, 1.0, _nonneg),
        "n_g": (_int, 81, lambda x: x >= 2),
        "n_stark": (_int, 9, _positive),
        "rabi_factor": (_float, 1.0, _positive),
        "trigger_mode": (_str, "counts", _choice("counts", "mean", "always")),
        "trigger_bin_us": (_float, 50.0, _positive),
        "push_s_values": (_floats, (0.0, 0.1, 0.8, 1.0, 1.5, 1.9), lambda xs: all(x >= 0 for x in xs)),
        "push_waist_um": (_float, math.inf, _positive),
        "tail_window_us": (_float, 300.0, _positive),
    },
    "analysis": {
        "bin_time_us": (_float, 50.0, _positive),
        "conversion_counts_per_photon": (_float, 180.29 / 0.06, _positive),
        "T_int_us": (_float, 175.0, _positive),
        "hist_bin_us": (_float, 500.0, _positive),
        "t_tot_ms": (_float, 60.0, _positive),
        "tau_bin_ms": (_float, 1.0, _positive),
        "tau_max_ms": (_float, 30.0, _positive),
        "counts_csv": (_str, "", None),
    },
    "reference": {
        "n_sequences": (_int, 2000, _positive),
        "transits_per_sequence": (_float, 4.0, _positive),
        "n_templates": (_int, 200, _positive),
        "template_y_halfwidth_w0": (_float, 2.0, _positive),
        "record_ms": (_float, 70.0, _positive),
    },
}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


@dataclass
class RunConfig:
    values: dict[str, dict[str, object]]
    rng_seed: int = 0
    defaults_used: list[str] = field(default_factory=list)
    source: str | None = None

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    # typed parameter objects, SI units
    def system(self) -> SystemParams:
        s = self["system"]
        mhz = TWO_PI * 1e6
        kappa = s["kappa_over_2pi_MHz"] * mhz
        dcp = s["delta_cp_over_2pi_MHz"] * mhz
        return SystemParams(
            g0=s["g0_over_2pi_MHz"] * mhz, kappa=kappa, gamma=s["gamma_over_2pi_MHz"] * mhz,
            delta_ap=s["delta_ap_over_2pi_MHz"] * mhz, delta_cp=dcp,
            delta_st_max=s["delta_st_max_over_2pi_MHz"] * mhz,
            eta_drive=math.sqrt(s["empty_cavity_photons"] * (kappa**2 + dcp**2)))

    def geometry(self) -> ModeGeometry:
        g = self["geometry"]
        return ModeGeometry(w0=g["w0_um"] * 1e-6, cavity_length=g["cavity_length_um"] * 1e-6,
                            d=g["d_mm"] * 1e-3, lambda_lock=g["lambda_lock_nm"] * 1e-9,
                            w_lock=g["w_lock_um"] * 1e-6)

    def push(self) -> PushBeamParams:
        p = self["push"]
        return PushBeamParams(s0=p["s0"], delta_aps=p["delta_aps_over_2pi_MHz"] * TWO_PI * 1e6,
                              direction=1 if p["direction"] == "above" else -1,
                              waist=p["waist_um"] * 1e-6, turn_on_time=p["turn_on_time_ms"] * 1e-3)

    def ensemble(self) -> EnsembleConfig:
        e = self["ensemble"]
        return EnsembleConfig(n_atoms=e["n_atoms"], temperature=e["temperature_uK"] * 1e-6,
                              dt=e["dt_us"] * 1e-6, rng_seed=self.rng_seed, t_max=e["t_max_ms"] * 1e-3,
                              bin_time=e["bin_time_us"] * 1e-6,
                              acceptance_radius=e["acceptance_radius_w0"] * self.geometry().w0,
                              recoil=e["recoil"])

    def sde(self) -> SdeConfig:
        t = self["trajectory"]
        return SdeConfig(dt=t["dt_us"] * 1e-6, t_max=t["t_max_ms"] * 1e-3,
                         record_interval=t["record_interval_us"] * 1e-6,
                         n_trajectories=t["n_trajectories"], rng_seed=self.rng_seed,
                         z_start=t["z_start_w0"], vz0=t["vz0_m_per_s"], y_halfwidth=t["y_halfwidth_w0"],
                         n_g=t["n_g"], n_stark=t["n_stark"], fock_cutoff=self["system"]["fock_cutoff"],
                         rabi_factor=t["rabi_factor"], trigger_mode=t["trigger_mode"],
                         trigger_bin=t["trigger_bin_us"] * 1e-6,
                         conversion_eta=self["analysis"]["conversion_counts_per_photon"])

    def constants(self) -> PhysicalConstants:
        return PhysicalConstants()

    def to_ini(self) -> str:
        lines = []
        for sec, keys in SCHEMA.items():
            lines.append(f"[{sec}]")
            for key in keys:
                lines.append(f"{key} = {_fmt(self.values[sec][key])}")
            lines.append("")
        return "\n".join(lines)

    def as_dict(self) -> dict:
        """Snapshot with values in their config-file spelling."""
        return {sec: {k: _fmt(self.values[sec][k]) for k in keys} for sec, keys in SCHEMA.items()}


def _check(sec: str, key: str, value):
    check = SCHEMA[sec][key][2]
    if check is not None and not check(value):
        raise ConfigError(f"invalid value for [{sec}] {key}: {_fmt(value)}")


def _validate_cross(cfg: RunConfig):
    # constructing the typed objects runs their own invariants
    try:
        cfg.system(), cfg.geometry(), cfg.push(), cfg.ensemble(), cfg.sde()
    except ValueError as err:
        raise ConfigError(str(err)) from err


def defaults(rng_seed: int = 0) -> RunConfig:
    vals = {sec: {k: spec[1] for k, spec in keys.items()} for sec, keys in SCHEMA.items()}
    return RunConfig(vals, rng_seed, defaults_used=list(SCHEMA))


def parse_config(text: str, source: str | None = None, rng_seed: int = 0) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case sensitive (MHz, uK)
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as err:
        raise ConfigError(f"parse error: {err}") from err
    cfg = defaults(rng_seed)
    cfg.source = source
    cfg.defaults_used = []
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
    for sec, keys in SCHEMA.items():
        if not parser.has_section(sec):
            cfg.defaults_used.append(sec)
            continue
        for key, raw in parser.items(sec):
            if key not in keys:
                raise ConfigError(f"unknown key [{sec}] {key}")
            set_value(cfg, sec, key, raw)
        for key in keys:
            if not parser.has_option(sec, key):
                cfg.defaults_used.append(f"{sec}.{key}")
    _validate_cross(cfg)
    return cfg


def load_config(path: str | None, rng_seed: int = 0) -> RunConfig:
    """Read and validate an INI file; ``None`` gives the defaults."""
    if path is None:
        cfg = defaults(rng_seed)
        _validate_cross(cfg)
        return cfg
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return parse_config(text, source=str(path), rng_seed=rng_seed)


def set_value(cfg: RunConfig, sec: str, key: str, raw: str):
    parse = SCHEMA[sec][key][0]
    try:
        value = parse(raw)
    except ValueError as err:
        raise ConfigError(f"cannot parse [{sec}] {key} = {raw!r}: {err}") from err
    _check(sec, key, value)
    cfg.values[sec][key] = value


def apply_override(cfg: RunConfig, item: str):
    """``section.key=value`` or ``key=value`` when the key is unique."""
    if "=" not in item:
        raise ConfigError(f"override must be key=value: {item!r}")
    name, raw = (s.strip() for s in item.split("=", 1))
    if "." in name:
        sec, key = name.split(".", 1)
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            raise ConfigError(f"unknown key {name}")
    else:
        hits = [s for s, keys in SCHEMA.items() if name in keys]
        if not hits:
            raise ConfigError(f"unknown key {name}")
        if len(hits) > 1:
            raise ConfigError(f"ambiguous key {name}: use one of " + ", ".join(f"{h}.{name}" for h in hits))
        sec, key = hits[0], name
    set_value(cfg, sec, key, raw)
    if f"{sec}.{key}" in cfg.defaults_used:
        cfg.defaults_used.remove(f"{sec}.{key}")
    _validate_cross(cfg)


def serialize(cfg: RunConfig) -> str:
    return cfg.to_ini()


__all__ = ["ConfigError", "RunConfig", "SCHEMA", "MODES", "load_config",
           "parse_config", "apply_override", "serialize", "defaults"]
