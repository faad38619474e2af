"""Driven Jaynes-Cummings model with atomic and cavity damping.

Operators live on the atom (x) Fock space with basis index
``atom * (N + 1) + n`` (atom 0 = |g>, 1 = |e>).  Hamiltonians are returned
in units of hbar, i.e. in rad/s.  Density matrices are vectorised
row-major, so that vec(A rho B) = kron(A, B.T) vec(rho).

Dissipators follow the form gamma(2 s rho s+ - s+s rho - rho s+s) and
kappa(2 a rho a+ - ...), so ``gamma`` and ``kappa`` are amplitude decay
rates (population decay 2*gamma).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .fields import SystemParams


class SteadyStateError(RuntimeError):
    """Liouvillian has no unique steady state."""


@dataclass(frozen=True)
class HilbertConfig:
    fock_cutoff: int = 6
    atom_levels: int = 2

    def __post_init__(self):
        if self.fock_cutoff < 2:
            raise ValueError("fock_cutoff must be >= 2")
        if self.atom_levels != 2:
            raise ValueError("only two-level atoms are supported")

    @property
    def dim(self) -> int:
        return 2 * (self.fock_cutoff + 1)


@dataclass(frozen=True)
class LocalCouplings:
    g_local: float = 0.0
    stark_local: float = 0.0
    omega_ps: float = 0.0


class Operators:
    """Cached operator set for one Hilbert-space truncation."""

    _cache: dict[int, "Operators"] = {}

    def __init__(self, cfg: HilbertConfig):
        nf = cfg.fock_cutoff + 1
        self.cfg = cfg
        self.dim = cfg.dim
        i2 = np.eye(2)
        destroy = np.diag(np.sqrt(np.arange(1, nf)), 1).astype(complex)
        self.a = np.kron(i2, destroy)
        self.sigma_ge = np.kron(np.array([[0, 1], [0, 0]], dtype=complex), np.eye(nf))
        self.sigma_eg = self.sigma_ge.conj().T
        self.sigma_e = np.kron(np.diag([0.0, 1.0]).astype(complex), np.eye(nf))
        self.num = self.a.conj().T @ self.a
        self.phi = self.a.conj().T @ self.sigma_ge + self.sigma_eg @ self.a
        self.identity = np.eye(self.dim, dtype=complex)

    @classmethod
    def get(cls, cfg: HilbertConfig) -> "Operators":
        ops = cls._cache.get(cfg.fock_cutoff)
        if ops is None:
            ops = cls._cache[cfg.fock_cutoff] = cls(cfg)
        return ops


def basis_index(atom: int, n: int, cfg: HilbertConfig) -> int:
    return atom * (cfg.fock_cutoff + 1) + n


def projector(atom: int, n: int, cfg: HilbertConfig) -> np.ndarray:
    rho = np.zeros((cfg.dim, cfg.dim), dtype=complex)
    i = basis_index(atom, n, cfg)
    rho[i, i] = 1.0
    return rho


def build_interaction_hamiltonian(params: SystemParams, local: LocalCouplings,
                                  cfg: HilbertConfig) -> np.ndarray:
    """H/hbar in the frame rotating at the probe frequency, plus the
    resonant push-beam term (omega_ps / 2)(sigma_ge + h.c.)."""
    op = Operators.get(cfg)
    ad = op.a.conj().T
    h = ((params.delta_ap + local.stark_local) * op.sigma_e
         + params.delta_cp * op.num
         + local.g_local * (ad @ op.sigma_ge + op.sigma_eg @ op.a)
         + params.eta_drive * (ad + op.a)
         + 0.5 * local.omega_ps * (op.sigma_ge + op.sigma_eg))
    return h


def _dissipator(c: np.ndarray, rate: float) -> np.ndarray:
    d = c.shape[0]
    eye = np.eye(d)
    cdc = c.conj().T @ c
    return rate * (2.0 * np.kron(c, c.conj()) - np.kron(cdc, eye) - np.kron(eye, cdc.T))


def build_liouvillian(H: np.ndarray, params: SystemParams, cfg: HilbertConfig) -> np.ndarray:
    op = Operators.get(cfg)
    if H.shape != (cfg.dim, cfg.dim):
        raise ValueError(f"H has shape {H.shape}, expected {(cfg.dim, cfg.dim)}")
    eye = np.eye(cfg.dim)
    L = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
    L += _dissipator(op.sigma_ge, params.gamma)
    L += _dissipator(op.a, params.kappa)
    return L


def apply_superop(L: np.ndarray, rho: np.ndarray) -> np.ndarray:
    d = rho.shape[0]
    return (L @ rho.reshape(-1)).reshape(d, d)


class BorderedSolver:
    """LU factorisation of L with its first row (the rho_00 equation)
    replaced by the trace functional.

    Because Tr L[.] = 0 the dropped row is implied by the others whenever
    the right-hand side is traceless, so the same factorisation yields the
    steady state (rhs = trace 1) and resolvent solves on the traceless
    subspace (rhs traceless, solution constrained to trace 0).
    """

    def __init__(self, L: np.ndarray, pivot_tol: float = 1e-12):
        n = L.shape[0]
        d = int(round(np.sqrt(n)))
        self.d = d
        M = L.copy()
        trace_row = np.zeros(n, dtype=complex)
        trace_row[:: d + 1] = 1.0
        M[0, :] = trace_row
        self.lu = linalg.lu_factor(M, check_finite=False)
        diag = np.abs(np.diag(self.lu[0]))
        if diag.min() <= pivot_tol * diag.max():
            raise SteadyStateError("Liouvillian null space is not one-dimensional")

    def steady_state(self) -> np.ndarray:
        rhs = np.zeros(self.d * self.d, dtype=complex)
        rhs[0] = 1.0
        return linalg.lu_solve(self.lu, rhs, check_finite=False).reshape(self.d, self.d)

    def solve_traceless(self, X: np.ndarray) -> np.ndarray:
        """Y with L[Y] = X and Tr Y = 0, for traceless X."""
        rhs = np.array(X, dtype=complex).reshape(-1)
        rhs[0] = 0.0
        return linalg.lu_solve(self.lu, rhs, check_finite=False).reshape(self.d, self.d)


def steady_state(L: np.ndarray) -> np.ndarray:
    rho = BorderedSolver(L).steady_state()
    return 0.5 * (rho + rho.conj().T)


def expect(op: np.ndarray, rho: np.ndarray) -> complex:
    return np.trace(op @ rho)


def mean_photon_number(rho: np.ndarray, cfg: HilbertConfig | None = None) -> float:
    cfg = cfg or HilbertConfig(fock_cutoff=rho.shape[0] // 2 - 1)
    return float(expect(Operators.get(cfg).num, rho).real)


def excited_population(rho: np.ndarray, cfg: HilbertConfig | None = None) -> float:
    cfg = cfg or HilbertConfig(fock_cutoff=rho.shape[0] // 2 - 1)
    return float(expect(Operators.get(cfg).sigma_e, rho).real)


def solve_local(params: SystemParams, local: LocalCouplings, cfg: HilbertConfig):
    """Steady state and its factorised bordered Liouvillian at one point."""
    H = build_interaction_hamiltonian(params, local, cfg)
    L = build_liouvillian(H, params, cfg)
    solver = BorderedSolver(L)
    rho = solver.steady_state()
    return 0.5 * (rho + rho.conj().T), solver


def transmission_spectrum(params: SystemParams, local: LocalCouplings, cfg: HilbertConfig,
                          detuning_grid) -> list[tuple[float, float]]:
    """Scan the probe with omega_c = omega_a fixed (delta_ap = delta_cp).

    Returns (delta / 2pi in MHz, <n>) pairs.
    """
    out = []
    for delta in np.asarray(detuning_grid, dtype=float):
        p = SystemParams(params.g0, params.kappa, params.gamma, delta, delta,
                         params.delta_st_max, params.eta_drive)
        rho, _ = solve_local(p, local, cfg)
        out.append((delta / (2e6 * np.pi), mean_photon_number(rho, cfg)))
    return out


@dataclass(frozen=True)
class LocalQuantities:
    phi_mean: float
    xi: float          # s
    chi: float         # s^2
    sigma_e: float
    n_mean: float
    push_rate: float   # net photon absorption rate from the push beam, 1/s


def correlation_integrals(params: SystemParams, local: LocalCouplings, cfg: HilbertConfig,
                          imag_tol: float = 1e-8) -> tuple[float, float]:
    """(xi, chi) of the coupling operator Phi = a+ s_ge + s_eg a."""
    q = local_quantities(params, local, cfg, imag_tol=imag_tol)
    return q.xi, q.chi


def _regression_inputs(rho: np.ndarray, op: Operators):
    phi = op.phi
    phi_mean = expect(phi, rho).real
    x_sym = 0.5 * (phi @ rho + rho @ phi) - phi_mean * rho
    x_comm = phi @ rho - rho @ phi
    return phi_mean, x_sym, x_comm


def local_quantities(params: SystemParams, local: LocalCouplings, cfg: HilbertConfig,
                     imag_tol: float = 1e-8) -> LocalQuantities:
    """All steady-state inputs of the semiclassical force at one point.

    xi  = int_0^inf [1/2 <Phi(t)Phi + Phi Phi(t)> - <Phi>^2] dt  = Tr Phi (-L^-1 X_sym)
    chi = i int_0^inf t <[Phi(t), Phi]> dt                       = i Tr Phi (L^-2 X_comm)
    with L inverted on the traceless subspace.
    """
    op = Operators.get(cfg)
    rho, solver = solve_local(params, local, cfg)
    phi_mean, x_sym, x_comm = _regression_inputs(rho, op)
    y = solver.solve_traceless(-x_sym)
    xi_c = expect(op.phi, y)
    w = solver.solve_traceless(x_comm)
    z = solver.solve_traceless(w)
    chi_c = 1j * expect(op.phi, z)
    for name, val, scale in (("xi", xi_c, 1.0 / params.kappa), ("chi", chi_c, params.kappa**-2)):
        if abs(val.imag) > imag_tol * (abs(val.real) + 1e-6 * scale):
            raise SteadyStateError(f"{name} has imaginary residue {val.imag:.3e} (real {val.real:.3e})")
    push_rate = local.omega_ps * expect(op.sigma_eg, rho).imag
    return LocalQuantities(
        phi_mean=float(phi_mean), xi=float(xi_c.real), chi=float(chi_c.real),
        sigma_e=float(expect(op.sigma_e, rho).real),
        n_mean=float(expect(op.num, rho).real), push_rate=float(push_rate))


def correlation_integrals_time_domain(params: SystemParams, local: LocalCouplings,
                                      cfg: HilbertConfig, tau_max: float | None = None,
                                      n_steps: int = 4000) -> tuple[float, float]:
    """Reference (xi, chi) from explicit propagation exp(L tau) and
    composite Simpson quadrature.  Only used for cross-checks."""
    op = Operators.get(cfg)
    H = build_interaction_hamiltonian(params, local, cfg)
    L = build_liouvillian(H, params, cfg)
    rho = steady_state(L)
    phi_mean, x_sym, x_comm = _regression_inputs(rho, op)
    if tau_max is None:
        ev = np.linalg.eigvals(L).real
        slowest = np.min(np.abs(ev[np.abs(ev) > 1e-6 * np.abs(ev).max()]))
        tau_max = 30.0 / slowest
    if n_steps % 2:
        n_steps += 1
    h = tau_max / n_steps
    prop = linalg.expm(L * h)
    phi_row = op.phi.T.reshape(-1)  # Tr(Phi Y) = sum_ij Phi_ji Y_ij
    vs = x_sym.reshape(-1).astype(complex)
    vc = x_comm.reshape(-1).astype(complex)
    fs = np.empty(n_steps + 1, dtype=complex)
    fc = np.empty(n_steps + 1, dtype=complex)
    for i in range(n_steps + 1):
        fs[i] = phi_row @ vs
        fc[i] = phi_row @ vc
        vs = prop @ vs
        vc = prop @ vc
    tau = np.arange(n_steps + 1) * h
    w = np.ones(n_steps + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w *= h / 3.0
    xi = np.sum(w * fs)
    chi = 1j * np.sum(w * tau * fc)
    return float(xi.real), float(chi.real)
