"""Lagrangian compressible Navier-Stokes: linear parabolic solves and Picard map.

The unknowns are the Lagrangian velocity ``u`` and the total energy along
the flow ``K``; the density is recovered afterwards as ``rho0 / J``.  One
application of the map ``Phi`` freezes the nonlinear fluxes at a given pair
``(v, psi)`` and solves the linear system

    L_rho0 u + rho0^-1 grad(rho0^-1 pi1(rho0) K) = rho0^-1 div(I1 + I2 + I3 + I4)
    H_rho0 K                                      = div(I5 + I6 + I7 + I8)

energy first, then velocity.  Time stepping is Crank-Nicolson on a
constant-coefficient principal part, Adams-Bashforth 2 on the
variable-coefficient remainder, and the trapezoidal rule on the frozen
sources.  The velocity equation is advanced in the momentum variable
``m = rho0 u`` so that every term is a divergence and the integrals of
``rho0 u`` and ``K`` are preserved to rounding.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import flow as fl
from .constitutive import (
    ConstitutiveLaw,
    VacuumError,
    check_vacuum,
    coefficient_array,
    cutoff_admissible,
    ellipticity_constants,
    pressure_lagrangian_array,
)
from .littlewood_paley import (
    DyadicFilterBank,
    besov_norm_array,
    besov_norm_hat,
    build_filter_bank,
    ep_norm,
    trapezoid,
)
from .spectral import (
    GridField,
    TorusGrid,
    dealias_array,
    divergence_array,
    fft,
    gradient_array,
    ifft,
    integrate_array,
    mul,
    transpose_gradient,
)

log = logging.getLogger(__name__)


class StepSizeError(RuntimeError):
    """Time step too large: the explicit part blew up."""


class NoConvergenceError(RuntimeError):
    """Picard iteration failed even after shrinking the horizon."""

    def __init__(self, message: str, report: ConvergenceReport | None = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 2.5e-3
    T: float = 0.1
    picard_tol: float = 1e-8
    max_picard: int = 30
    smallness_c: float = 0.1
    cutoff_m: int | None = None
    eta: float = 1e-2
    p: float = 2.0
    vacuum_floor: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.T < self.dt * (1 - 1e-12):
            raise ValueError("T must be at least dt")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")

    @property
    def steps(self) -> int:
        return max(1, int(round(self.T / self.dt)))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


@dataclass
class LagrangianState:
    """Initial data and (optionally) a solution trajectory in Lagrangian form."""

    rho0: GridField
    u0: GridField
    K0: GridField

    @property
    def a0(self) -> GridField:
        return self.rho0 - 1.0

    @classmethod
    def from_temperature(cls, rho0: GridField, u0: GridField, theta0: GridField) -> LagrangianState:
        """``K0 = rho0 (theta0 + |u0|^2 / 2)``."""
        r, u, th = rho0.array(), u0.array(), theta0.array()
        return cls(rho0, u0, GridField(rho0.grid, r * (th + 0.5 * np.sum(u * u, axis=0))))


@dataclass
class ConvergenceReport:
    ep_diffs: list[float] = field(default_factory=list)
    rel_diffs: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    smallness: list[float] = field(default_factory=list)
    mass_drift: list[float] = field(default_factory=list)
    momentum_drift: list[float] = field(default_factory=list)
    energy_drift: list[float] = field(default_factory=list)
    horizon: float = 0.0
    restarts: int = 0
    converged: bool = False
    cutoff_m: int | None = None
    multiplier_sample: float = float("nan")

    @property
    def iterations(self) -> int:
        return len(self.ep_diffs)

    def csv_rows(self) -> list[tuple]:
        return [
            (k + 1, self.ep_diffs[k], self.ratios[k], self.smallness[k], self.mass_drift[k], self.energy_drift[k])
            for k in range(self.iterations)
        ]


@dataclass
class LagrangianSolution:
    times: np.ndarray
    u: np.ndarray
    K: np.ndarray
    rho_bar: np.ndarray
    report: ConvergenceReport


# --------------------------------------------------------------------------
# problem container
# --------------------------------------------------------------------------


class LagrangianProblem:
    """Coefficient fields and operators attached to a reference density."""

    def __init__(self, grid: TorusGrid, rho0: np.ndarray, law: ConstitutiveLaw, bank: DyadicFilterBank | None = None):
        check_vacuum(rho0)
        self.grid = grid
        self.law = law
        self.rho0 = np.asarray(rho0, dtype=float)
        self.inv_rho0 = 1.0 / self.rho0
        self.bank = bank or build_filter_bank(grid)
        self.mu0 = coefficient_array(law, "mu", self.rho0, grid)
        self.lam0 = coefficient_array(law, "lambda", self.rho0, grid)
        self.k0 = coefficient_array(law, "k", self.rho0, grid)
        self.q0 = dealias_array(grid, law.pi1(self.rho0) * self.inv_rho0)
        mean_inv = float(np.mean(self.inv_rho0))
        self.mu_bar = float(np.mean(self.mu0)) * mean_inv
        self.lam_bar = float(np.mean(self.lam0)) * mean_inv
        self.kappa_bar = float(np.mean(self.k0)) * mean_inv
        self.eye = fl.identity_field(grid)

    # ---- spatial operators ------------------------------------------------

    def stress0(self, u: np.ndarray, Du: np.ndarray | None = None) -> np.ndarray:
        if Du is None:
            Du = gradient_array(self.grid, u)
        D = 0.5 * (Du + transpose_gradient(Du))
        div = np.trace(Du)
        return dealias_array(self.grid, 2 * self.mu0 * D + self.lam0 * div * self.eye)

    def viscous_momentum(self, u: np.ndarray) -> np.ndarray:
        """``div(2 mu(rho0) D(u) + lambda(rho0) div u Id)``."""
        return divergence_array(self.grid, self.stress0(u))

    def heat_flux_div(self, K: np.ndarray) -> np.ndarray:
        """``div(k(rho0) grad(K / rho0))``."""
        g = self.grid
        Kr = dealias_array(g, K * self.inv_rho0)
        return divergence_array(g, mul(g, self.k0, gradient_array(g, Kr)))

    def apply_L(self, u: np.ndarray) -> np.ndarray:
        """Spatial part of ``L_rho0``: ``-rho0^-1 div(2 mu D(u) + lambda div u Id)``."""
        return -mul(self.grid, self.inv_rho0, self.viscous_momentum(u))

    def apply_H(self, K: np.ndarray) -> np.ndarray:
        """Spatial part of ``H_rho0``: ``-div(k grad(K / rho0))``."""
        return -self.heat_flux_div(K)

    def pressure_coupling(self, K: np.ndarray) -> np.ndarray:
        """``grad(rho0^-1 pi1(rho0) K)`` (momentum form)."""
        g = self.grid
        return gradient_array(g, mul(g, self.q0, K))

    # ---- implicit symbols ---------------------------------------------------

    def _lame_hat(self, m: np.ndarray) -> np.ndarray:
        """Constant-coefficient Lame operator ``mu Lap m + (mu + lambda) grad div m`` in spectral space."""
        g = self.grid
        k = g.derivative_wavenumbers
        kdot = sum(k[i] * m[i] for i in range(g.dim))
        return np.array([-self.mu_bar * g.k2 * m[i] - (self.mu_bar + self.lam_bar) * k[i] * kdot for i in range(g.dim)])

    def _solve_lame(self, rhs_hat: np.ndarray, a: float) -> np.ndarray:
        """Invert ``I - a * Lame`` mode by mode."""
        g = self.grid
        k = g.derivative_wavenumbers
        c = 1.0 + a * self.mu_bar * g.k2
        b = a * (self.mu_bar + self.lam_bar)
        kdot = sum(k[i] * rhs_hat[i] for i in range(g.dim))
        denom = c + b * sum(k[i] ** 2 for i in range(g.dim))
        return np.array([(rhs_hat[i] - b * k[i] * kdot / denom) / c for i in range(g.dim)])

    # ---- I-terms ----------------------------------------------------------

    def nonlinear_fluxes(self, v: np.ndarray, psi: np.ndarray, X: fl.FlowMap) -> tuple[np.ndarray, np.ndarray, dict]:
        """Momentum flux ``I1+I2+I3+I4`` and energy flux ``I5+I6+I7+I8``."""
        g = self.grid
        law = self.law
        eye = self.eye
        rho_bar = self.rho0 / X.J
        mu_b = coefficient_array(law, "mu", rho_bar, g)
        lam_b = coefficient_array(law, "lambda", rho_bar, g)
        k_b = coefficient_array(law, "k", rho_bar, g)
        A, adj = X.A, X.adjDX

        Dv = gradient_array(g, v)
        DA = fl.twisted_deformation_array(g, v, A, Dv)
        divA = fl.twisted_divergence_array(g, v, A, Dv)
        D0 = 0.5 * (Dv + transpose_gradient(Dv))
        div0 = np.trace(Dv)

        tau_b = dealias_array(g, 2 * mu_b * DA + lam_b * divA * eye)
        I1 = dealias_array(g, fl.matmul(adj - eye, tau_b))
        I2 = dealias_array(g, 2 * (mu_b - self.mu0) * DA + (lam_b - self.lam0) * divA * eye)
        I3 = dealias_array(g, 2 * self.mu0 * (DA - D0) + self.lam0 * (divA - div0) * eye)
        P_bar = pressure_lagrangian_array(law, rho_bar, psi, self.rho0, v, g)
        I4 = dealias_array(g, -adj * P_bar + self.q0 * psi * eye)

        adjAt = dealias_array(g, fl.matmul(adj, transpose_gradient(A)))
        grad_Kr = gradient_array(g, dealias_array(g, psi * self.inv_rho0))
        kin = 0.5 * sum(mul(g, c, c) for c in v)
        I5 = dealias_array(g, fl.matvec(mul(g, k_b, adjAt) - self.k0 * eye, grad_Kr))
        I6 = -dealias_array(g, fl.matvec(mul(g, k_b, adjAt), gradient_array(g, kin)))
        I7 = -dealias_array(g, P_bar * fl.matvec(adj, v))
        I8 = dealias_array(g, fl.matvec(fl.matmul(adj, tau_b), v))
        terms = dict(I1=I1, I2=I2, I3=I3, I4=I4, I5=I5, I6=I6, I7=I7, I8=I8)
        return I1 + I2 + I3 + I4, I5 + I6 + I7 + I8, terms

    # ---- time integration ---------------------------------------------------

    def explicit_parts(self, u: np.ndarray, K: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Variable-coefficient remainders left after the implicit symbols."""
        grid = self.grid
        RK = self.heat_flux_div(K) + self.kappa_bar * ifft(grid, grid.k2 * fft(grid, K))
        Rm = self.viscous_momentum(u) - ifft(grid, self._lame_hat(fft(grid, self.rho0 * u)))
        return RK, Rm

    def _advance(self, K_n, m_n, EK, Em, g_half, mom_half, dt):
        grid = self.grid
        a = 0.5 * dt
        k2 = grid.k2
        K_hat = fft(grid, K_n)
        rhs = (1 - a * self.kappa_bar * k2) * K_hat + dt * fft(grid, EK if g_half is None else EK + g_half)
        K_new = ifft(grid, rhs / (1 + a * self.kappa_bar * k2))
        m_hat = fft(grid, m_n)
        src = Em - self.pressure_coupling(0.5 * (K_n + K_new))
        if mom_half is not None:
            src = src + mom_half
        rhs = m_hat + a * self._lame_hat(m_hat) + dt * fft(grid, src)
        return K_new, ifft(grid, self._solve_lame(rhs, a))

    @staticmethod
    def _half(src, n):
        return None if src is None else 0.5 * (src[n] + src[n + 1])

    def _explicit_terms(self, n, u_n, K_n, prev, mom_src, g_src, dt):
        """Explicit terms for step ``n``: Heun start, then Adams-Bashforth 2."""
        RK, Rm = self.explicit_parts(u_n, K_n)
        if prev is None:
            K1, m1 = self._advance(K_n, self.rho0 * u_n, RK, Rm, self._half(g_src, n), self._half(mom_src, n), dt)
            RK1, Rm1 = self.explicit_parts(m1 * self.inv_rho0, K1)
            return (RK, Rm), 0.5 * (RK + RK1), 0.5 * (Rm + Rm1)
        return (RK, Rm), 1.5 * RK - 0.5 * prev[0], 1.5 * Rm - 0.5 * prev[1]

    def integrate(self, u0, K0, mom_src, g_src, times) -> tuple[np.ndarray, np.ndarray]:
        """Advance ``m = rho0 u`` and ``K`` with the IMEX scheme, energy first.

        ``mom_src`` is ``rho0 f`` and ``g_src`` is ``g`` at every time level
        (``None`` for no forcing).
        """
        nt = len(times) - 1
        u = np.empty((nt + 1,) + np.shape(u0))
        K = np.empty((nt + 1,) + np.shape(K0))
        u[0], K[0] = u0, K0
        m = self.rho0 * u0
        prev = None
        for n in range(nt):
            dt = float(times[n + 1] - times[n])
            prev, EK, Em = self._explicit_terms(n, u[n], K[n], prev, mom_src, g_src, dt)
            K_new, m_new = self._advance(K[n], m, EK, Em, self._half(g_src, n), self._half(mom_src, n), dt)
            for name, new, old in (("momentum", m_new, m), ("energy", K_new, K[n])):
                scale = float(np.max(np.abs(old - np.mean(old))))
                if scale > 1e-300 and float(np.max(np.abs(new - np.mean(new)))) > 10 * scale + 1e-12:
                    raise StepSizeError(
                        f"{name} grew more than tenfold in one step at t={times[n + 1]:.4g}; reduce dt"
                    )
            K[n + 1] = K_new
            m = m_new
            u[n + 1] = m * self.inv_rho0
        return u, K

    def discrete_residual(self, u, K, mom_src, g_src, times) -> tuple[np.ndarray, np.ndarray]:
        """Per-step defects of the scheme in time-derivative units.

        Returns velocity-form and energy-form residual arrays indexed by step.
        """
        grid = self.grid
        nt = len(times) - 1
        k2 = grid.k2
        Ru = np.empty((nt,) + u.shape[1:])
        RKr = np.empty((nt,) + K.shape[1:])
        prev = None
        for n in range(nt):
            dt = float(times[n + 1] - times[n])
            prev, EK, Em = self._explicit_terms(n, u[n], K[n], prev, mom_src, g_src, dt)
            implicit = -0.5 * self.kappa_bar * ifft(grid, k2 * (fft(grid, K[n]) + fft(grid, K[n + 1])))
            g_half = self._half(g_src, n)
            RKr[n] = (K[n + 1] - K[n]) / dt - implicit - EK - (0.0 if g_half is None else g_half)

            m0, m1 = self.rho0 * u[n], self.rho0 * u[n + 1]
            lame = ifft(grid, self._lame_hat(fft(grid, m0) + fft(grid, m1)))
            src = Em - self.pressure_coupling(0.5 * (K[n] + K[n + 1]))
            mom_half = self._half(mom_src, n)
            if mom_half is not None:
                src = src + mom_half
            Ru[n] = ((m1 - m0) / dt - 0.5 * lame - src) * self.inv_rho0
        return Ru, RKr


# --------------------------------------------------------------------------
# public operations
# --------------------------------------------------------------------------


def _arr(f) -> np.ndarray:
    return f.array() if isinstance(f, GridField) else np.asarray(f, dtype=float)


def apply_L(u: GridField, rho0: GridField, law: ConstitutiveLaw) -> GridField:
    prob = LagrangianProblem(u.grid, rho0.array(), law)
    return GridField(u.grid, prob.apply_L(u.array()))


def apply_H(K: GridField, rho0: GridField, law: ConstitutiveLaw) -> GridField:
    prob = LagrangianProblem(K.grid, rho0.array(), law)
    return GridField(K.grid, prob.apply_H(K.array()))


def solve_linear_LMK(u0, K0, f_traj, g_traj, rho0, law: ConstitutiveLaw, config: SolverConfig,
                     problem: LagrangianProblem | None = None):
    """Solve the linear velocity/energy system on ``config.times``.

    ``f_traj`` and ``g_traj`` are velocity and energy right-hand sides sampled
    at every time level, or ``None``.  Returns ``(times, u_traj, K_traj)``.
    """
    u0a, K0a, rho0a = _arr(u0), _arr(K0), _arr(rho0)
    grid = u0.grid if isinstance(u0, GridField) else rho0.grid
    prob = problem or LagrangianProblem(grid, rho0a, law)
    ell = ellipticity_constants(law, GridField(grid, rho0a))
    if ell.alpha <= 0 or ell.beta <= 0:
        raise ValueError(f"ellipticity constants must be positive, got {ell}")
    times = config.times
    mom = None if f_traj is None else prob.rho0 * np.asarray(f_traj)
    g = None if g_traj is None else np.asarray(g_traj)
    u, K = prob.integrate(u0a, K0a, mom, g, times)
    return times, u, K


def compute_I_terms(v: np.ndarray, psi: np.ndarray, X: fl.FlowMap, problem: LagrangianProblem) -> dict[str, np.ndarray]:
    """The eight flux terms at one time level, keyed ``I1``..``I8``."""
    return problem.nonlinear_fluxes(v, psi, X)[2]


def _sources(problem: LagrangianProblem, v_traj, psi_traj, times):
    grid = problem.grid
    timeline = fl.VelocityTimeline(grid, times, v_traj)
    disp = fl.displacement_history(timeline)
    mom = np.empty_like(v_traj)
    g = np.empty_like(psi_traj)
    for n in range(len(times)):
        X = fl.flow_from_displacement(grid, disp[n], float(times[n]))
        F, G, _ = problem.nonlinear_fluxes(v_traj[n], psi_traj[n], X)
        mom[n] = divergence_array(grid, F)
        g[n] = divergence_array(grid, G)
    return mom, g


def apply_Phi(v_traj, psi_traj, u0, K0, problem: LagrangianProblem, times) -> tuple[np.ndarray, np.ndarray]:
    """One application of the fixed-point map: frozen fluxes, linear solve."""
    mom, g = _sources(problem, v_traj, psi_traj, times)
    return problem.integrate(u0, K0, mom, g, times)


def linear_base_point(u0, K0, law: ConstitutiveLaw, grid: TorusGrid, times) -> tuple[np.ndarray, np.ndarray]:
    """``(u_L, K_L)``: the constant-density linear flow from the data."""
    prob = LagrangianProblem(grid, np.ones(grid.shape), law)
    return prob.integrate(u0, K0, None, None, times)


def smallness_monitor(problem: LagrangianProblem, v_traj, times, p: float) -> float:
    """``int_0^T ||Dv||_{B^{n/p}_{p,1}} dt``."""
    g = problem.grid
    s = g.dim / p
    vals = [besov_norm_array(problem.bank, gradient_array(g, v), s, p) for v in v_traj]
    return trapezoid(vals, times)


def reconstruct_density(u_traj, rho0, times, tol: float = 1e-10):
    """``rho_bar = rho0 / J`` along the flow of ``u`` and ``a = rho_bar - 1``."""
    rho0a = _arr(rho0)
    grid = rho0.grid if isinstance(rho0, GridField) else None
    if grid is None:
        raise TypeError("rho0 must be a GridField")
    u = np.asarray(u_traj)
    timeline = fl.VelocityTimeline(grid, np.asarray(times, dtype=float), u)
    disp = fl.displacement_history(timeline)
    rho = np.empty((len(times),) + grid.shape)
    for n, t in enumerate(times):
        X = fl.flow_from_displacement(grid, disp[n], float(t))
        rho[n] = rho0a / X.J
        if float(np.min(rho[n])) <= 0:
            raise VacuumError(f"vacuum forms at t={t:.6g}")
        if float(np.max(np.abs(X.J * rho[n] - rho0a))) > tol:
            raise RuntimeError(f"mass identity violated at t={t:.6g}")
    return rho, rho - 1.0


def _drift(series: list[float], scale: float) -> float:
    return float(max(abs(s - series[0]) for s in series) / scale) if scale > 0 else 0.0


def conservation_drifts(problem: LagrangianProblem, u, K, times) -> tuple[float, float, float]:
    """Mass identity defect and relative drifts of momentum and total energy."""
    grid = problem.grid
    rho0 = problem.rho0
    timeline = fl.VelocityTimeline(grid, times, u)
    disp = fl.displacement_history(timeline)
    mass = 0.0
    for n in range(len(times)):
        DX = fl.identity_field(grid) + gradient_array(grid, disp[n])
        J, _ = fl.det_adj(DX)
        mass = max(mass, float(np.max(np.abs(J * (rho0 / J) - rho0))))
    mom = [integrate_array(grid, rho0 * un) for un in u]
    mom_scale = float(np.sum(integrate_array(grid, np.abs(rho0 * u[0]))))
    mom_drift = max(float(np.max(np.abs(mm - mom[0]))) for mm in mom) / mom_scale if mom_scale > 0 else 0.0
    energy = [float(integrate_array(grid, Kn)) for Kn in K]
    e_scale = max(abs(energy[0]), float(integrate_array(grid, np.abs(K[0]))))
    return mass, mom_drift, _drift(energy, e_scale)


def multiplier_norm_sample(problem: LagrangianProblem, s: float, p: float, trials: int, seed: int) -> float:
    """Sampled lower bound of the multiplier norm of ``1/rho0`` on ``B^s_{p,1}``."""
    grid = problem.grid
    rng = np.random.default_rng(seed)
    kmax = grid.N // 6
    low = np.all(np.abs(np.array(np.meshgrid(*([grid.k1d] * grid.dim), indexing="ij"))) <= kmax, axis=0)
    best = 0.0
    for _ in range(trials):
        h_hat = (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)) * low
        h = ifft(grid, h_hat)
        den = besov_norm_array(problem.bank, h, s, p)
        if den > 0:
            best = max(best, besov_norm_array(problem.bank, mul(grid, problem.inv_rho0, h), s, p) / den)
    return best


def _ep_pair(u, K, times, bank, p):
    return ep_norm(u, K, times, bank, p)


def picard_solve(state: LagrangianState, law: ConstitutiveLaw, config: SolverConfig,
                 bank: DyadicFilterBank | None = None) -> LagrangianSolution:
    """Fixed-point iteration of ``Phi`` started from the linear base point.

    Stops once the E_p norm of successive differences, relative to the
    current iterate, drops below ``picard_tol``.  When successive
    differences stop shrinking the horizon is halved and the iteration
    restarts.
    """
    grid = state.rho0.grid
    rho0 = state.rho0.array()
    check_vacuum(rho0, config.vacuum_floor)
    bank = bank or build_filter_bank(grid)
    problem = LagrangianProblem(grid, rho0, law, bank)
    u0, K0 = state.u0.array(), state.K0.array()
    p = config.p
    cfg = config
    report = ConvergenceReport()

    if cfg.cutoff_m is None:
        report.cutoff_m = cutoff_admissible(law, state.rho0, bank.j_max, cfg.eta, bank, p).smallest_m
    else:
        report.cutoff_m = cfg.cutoff_m
    report.multiplier_sample = multiplier_norm_sample(problem, grid.dim / p - 1.0, p, 8, cfg.seed)

    while True:
        times = cfg.times
        report = replace(report, ep_diffs=[], rel_diffs=[], ratios=[], smallness=[], mass_drift=[],
                         momentum_drift=[], energy_drift=[], horizon=float(times[-1]))
        u, K = linear_base_point(u0, K0, law, grid, times)
        stagnated = False
        for k in range(cfg.max_picard):
            small = smallness_monitor(problem, u, times, p)
            if small > cfg.smallness_c:
                log.info("smallness monitor %.3g exceeds %.3g at iteration %d", small, cfg.smallness_c, k + 1)
            u_new, K_new = apply_Phi(u, K, u0, K0, problem, times)
            diff = _ep_pair(u_new - u, K_new - K, times, bank, p)
            size = _ep_pair(u_new, K_new, times, bank, p)
            mass, mom_drift, e_drift = conservation_drifts(problem, u_new, K_new, times)
            ratio = diff / report.ep_diffs[-1] if report.ep_diffs and report.ep_diffs[-1] > 0 else float("nan")
            report.ep_diffs.append(diff)
            report.rel_diffs.append(diff / size if size > 0 else 0.0)
            report.ratios.append(ratio)
            report.smallness.append(small)
            report.mass_drift.append(mass)
            report.momentum_drift.append(mom_drift)
            report.energy_drift.append(e_drift)
            u, K = u_new, K_new
            if diff == 0.0 or report.rel_diffs[-1] <= cfg.picard_tol:
                report.converged = True
                break
            if not math.isnan(ratio) and ratio >= 1.0:
                stagnated = True
                break
        if report.converged:
            rho_bar, _ = reconstruct_density(u, state.rho0, times)
            return LagrangianSolution(times, u, K, rho_bar, report)
        new_T = 0.5 * float(times[-1])
        if new_T < 4 * cfg.dt:
            raise NoConvergenceError(
                f"Picard iteration {'stagnated' if stagnated else 'did not converge'}; "
                f"horizon would drop below 4*dt", report
            )
        log.warning("Picard %s on T=%.4g; retrying with T=%.4g",
                    "stagnated" if stagnated else "hit max_picard", float(times[-1]), new_T)
        cfg = replace(cfg, T=new_T)
        report.restarts += 1


def fixed_point_residual(solution: LagrangianSolution, state: LagrangianState, law: ConstitutiveLaw,
                         config: SolverConfig, bank: DyadicFilterBank | None = None) -> float:
    """Relative E_p-type norm of the discrete-equation defect of a trajectory.

    The fluxes are evaluated on the trajectory itself, so a true fixed point
    of ``Phi`` has zero defect.
    """
    grid = state.rho0.grid
    bank = bank or build_filter_bank(grid)
    problem = LagrangianProblem(grid, state.rho0.array(), law, bank)
    times = solution.times
    mom, g = _sources(problem, solution.u, solution.K, times)
    Ru, RK = problem.discrete_residual(solution.u, solution.K, mom, g, times)
    p = config.p
    s_u, s_K = grid.dim / p - 1.0, grid.dim / p - 2.0
    dts = np.diff(times)
    res = sum(dts[n] * (besov_norm_array(bank, Ru[n], s_u, p) + besov_norm_array(bank, RK[n], s_K, p))
              for n in range(len(dts)))
    # the initial-data mismatch belongs to the defect too
    res += besov_norm_array(bank, solution.u[0] - state.u0.array(), s_u, p)
    res += besov_norm_array(bank, solution.K[0] - state.K0.array(), s_K, p)
    size = ep_norm(solution.u, solution.K, times, bank, p)
    return float(res / size) if size > 0 else float(res)
