"""Physical constants, cavity/beam geometry, spatial field maps and the
classical scattering-force law shared by both trajectory engines.

Coordinates: MOT at the origin, gravity along -z, cavity axis along x,
cavity centre at (0, 0, -d).  All frequencies are angular (rad/s).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import constants as sc

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = sc.hbar
    kB: float = sc.k
    m: float = 86.909180527 * sc.atomic_mass  # 87Rb
    gtilde: float = sc.g
    lambda_probe: float = 780.241e-9
    Isat: float = 16.7  # W/m^2, 1.67 mW/cm^2

    def __post_init__(self):
        for name in ("hbar", "kB", "m", "gtilde", "lambda_probe", "Isat"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def k(self) -> float:
        return TWO_PI / self.lambda_probe

    @property
    def recoil_velocity(self) -> float:
        """hbar*k/m in m/s."""
        return self.hbar * self.k / self.m


@dataclass(frozen=True)
class SystemParams:
    """Atom-cavity constants in rad/s.

    ``gamma`` is the atomic dipole (half-width) decay rate of the master
    equation; the excited-state population decays at ``2*gamma``.
    """

    g0: float
    kappa: float
    gamma: float
    delta_ap: float = 0.0
    delta_cp: float = 0.0
    delta_st_max: float = 0.0
    eta_drive: float = 0.0

    def __post_init__(self):
        for name in ("g0", "kappa", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_MHz(cls, **kw) -> "SystemParams":
        """Build from values given as nu = omega / 2pi in MHz."""
        return cls(**{k: TWO_PI * 1e6 * v for k, v in kw.items()})

    @property
    def cooperativity(self) -> float:
        return self.g0**2 / (2.0 * self.kappa * self.gamma)

    @property
    def critical_photon_number(self) -> float:
        return self.gamma**2 / (2.0 * self.g0**2)

    def empty_cavity_photons(self, detuning: float = 0.0) -> float:
        """Coherent-state photon number of the driven empty cavity."""
        return self.eta_drive**2 / (self.kappa**2 + detuning**2)


def default_system(**overrides) -> SystemParams:
    """Default parameter set of the experiment, drive set for <n> = 0.06."""
    mhz = dict(g0=16.02, kappa=18.6, gamma=3.033, delta_ap=0.0, delta_cp=0.0,
               delta_st_max=-1.0, eta_drive=18.6 * math.sqrt(0.06))
    mhz.update(overrides)
    return SystemParams.from_MHz(**mhz)


@dataclass(frozen=True)
class ModeGeometry:
    w0: float = 26.198e-6
    cavity_length: float = 151.686e-6
    d: float = 4.80e-3
    lambda_lock: float = 788e-9
    w_lock: float | None = None  # defaults to w0

    def __post_init__(self):
        if not (self.w0 > 0 and self.d > 0 and self.cavity_length > 0
                and self.lambda_lock > 0):
            raise ValueError("geometry lengths must be positive")
        if self.w_lock is None:
            object.__setattr__(self, "w_lock", self.w0)
        elif not self.w_lock > 0:
            raise ValueError("w_lock must be positive")

    @property
    def center(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.d])


@dataclass(frozen=True)
class PushBeamParams:
    """Push beam propagating along z.

    direction = +1: beam from above (force along -z);
    direction = -1: beam from below (force along +z).
    ``waist = inf`` gives a uniform (plane-wave) intensity.
    """

    s0: float = 0.0
    delta_aps: float = 0.0
    direction: int = 1
    waist: float = math.inf
    axis_offset: tuple[float, float] = field(default=(0.0, 0.0))
    turn_on_time: float = 0.0

    def __post_init__(self):
        if self.s0 < 0:
            raise ValueError("s0 must be >= 0")
        if not self.waist > 0:
            raise ValueError("waist must be positive")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        object.__setattr__(self, "axis_offset", tuple(float(v) for v in self.axis_offset))


def mode_function(pos, geom: ModeGeometry, constants: PhysicalConstants):
    """TEM00 standing-wave mode and its gradient.

    psi = cos(k x) * exp(-(y^2 + (z + d)^2) / w0^2)

    ``pos`` has shape (..., 3).  Returns ``(psi, grad)`` with shapes
    (...) and (..., 3).
    """
    pos = np.asarray(pos, dtype=float)
    x, y, z = pos[..., 0], pos[..., 1], pos[..., 2]
    k = constants.k
    zc = z + geom.d
    w2 = geom.w0**2
    c = np.cos(k * x)
    gauss = np.exp(-(y * y + zc * zc) / w2)
    psi = c * gauss
    grad = np.stack([
        -k * np.sin(k * x) * gauss,
        -2.0 * y / w2 * psi,
        -2.0 * zc / w2 * psi,
    ], axis=-1)
    return psi, grad


def coupling_at(pos, geom: ModeGeometry, params: SystemParams,
                constants: PhysicalConstants | None = None):
    psi, _ = mode_function(pos, geom, constants or PhysicalConstants())
    return params.g0 * psi


def stark_shift_at(pos, geom: ModeGeometry, params: SystemParams):
    """Lock-field light shift of the transition, cos^2 standing wave at
    ``lambda_lock`` with antinode registered at the mode centre."""
    pos = np.asarray(pos, dtype=float)
    x, y, z = pos[..., 0], pos[..., 1], pos[..., 2]
    zc = z + geom.d
    k_lock = TWO_PI / geom.lambda_lock
    return (params.delta_st_max * np.cos(k_lock * x) ** 2
            * np.exp(-2.0 * (y * y + zc * zc) / geom.w_lock**2))


def saturation_at(pos, push: PushBeamParams, t: float | None = None):
    """Local saturation parameter of the push beam (Gaussian transverse
    profile about an axis parallel to z); zero before ``turn_on_time``."""
    pos = np.asarray(pos, dtype=float)
    if t is not None and t < push.turn_on_time:
        return np.zeros(pos.shape[:-1])
    if math.isinf(push.waist):
        return np.full(pos.shape[:-1], float(push.s0))
    dx = pos[..., 0] - push.axis_offset[0]
    dy = pos[..., 1] - push.axis_offset[1]
    return push.s0 * np.exp(-2.0 * (dx * dx + dy * dy) / push.waist**2)


def scattering_rate(vz, s_local, push: PushBeamParams,
                    constants: PhysicalConstants, gamma: float):
    """Photon scattering rate gamma*s / (1 + s + ((D - dir*k*vz)/gamma)^2)."""
    delta_eff = push.delta_aps - push.direction * constants.k * np.asarray(vz)
    return gamma * s_local / (1.0 + s_local + (delta_eff / gamma) ** 2)


def scattering_accel(vz, s_local, push: PushBeamParams,
                     constants: PhysicalConstants, gamma: float):
    """dv_z/dt under gravity plus the push-beam scattering force."""
    optical = constants.recoil_velocity * scattering_rate(vz, s_local, push, constants, gamma)
    return -constants.gtilde - push.direction * optical
