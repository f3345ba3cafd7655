"""Eulerian reference solver in conserved variables and the equivalence experiment.

Evolved unknowns are the density ``rho``, the momentum ``m = rho u`` and the
total energy ``E = rho (theta + |u|^2 / 2)``.  Every right-hand side is a
divergence, so ``int rho``, ``int m`` and ``int E`` are preserved to rounding.
The time integrator matches the Lagrangian one: Crank-Nicolson on a
constant-coefficient diffusion built from the mean density, Adams-Bashforth 2
on the rest.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import flow as fl
from .constitutive import ConstitutiveLaw, VacuumError, coefficient_array
from .lagrangian import LagrangianSolution, LagrangianState, SolverConfig, StepSizeError, picard_solve
from .littlewood_paley import build_filter_bank, besov_norm_array
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


@dataclass(frozen=True)
class EulerianState:
    rho: GridField
    u: GridField
    E: GridField
    t: float = 0.0

    def __post_init__(self):
        if float(np.min(self.rho.array())) <= 0:
            raise VacuumError(f"non-positive density at t={self.t:.6g}")

    @classmethod
    def from_temperature(cls, rho: GridField, u: GridField, theta: GridField, t: float = 0.0) -> EulerianState:
        r, v = rho.array(), u.array()
        E = r * (theta.array() + 0.5 * np.sum(v * v, axis=0))
        return cls(rho, u, GridField(rho.grid, E), t)

    @classmethod
    def from_conserved(cls, grid: TorusGrid, rho: np.ndarray, m: np.ndarray, E: np.ndarray, t: float = 0.0):
        return cls(GridField(grid, rho), GridField(grid, m / rho), GridField(grid, E), t)

    @property
    def theta(self) -> GridField:
        g = self.rho.grid
        r, v = self.rho.array(), self.u.array()
        return GridField(g, dealias_array(g, self.E.array() / r) - 0.5 * sum(mul(g, c, c) for c in v))

    def conserved(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        r = self.rho.array()
        return r, r * self.u.array(), self.E.array()


@dataclass(frozen=True)
class EulerianRates:
    rho: GridField
    momentum: GridField
    E: GridField


# --------------------------------------------------------------------------
# right-hand sides
# --------------------------------------------------------------------------


def _stress(grid, law, rho, u):
    Du = gradient_array(grid, u)
    D = 0.5 * (Du + transpose_gradient(Du))
    mu = coefficient_array(law, "mu", rho, grid)
    lam = coefficient_array(law, "lambda", rho, grid)
    eye = fl.identity_field(grid)
    return dealias_array(grid, 2 * mu * D + lam * np.trace(Du) * eye)


def _pressure(grid, law, rho, theta):
    return coefficient_array(law, "pi0", rho, grid) + mul(grid, theta, coefficient_array(law, "pi1", rho, grid))


def _outer(grid, a, b):
    """``M_ij = a_i b_j``, dealiased."""
    return dealias_array(grid, a[:, None] * b[None, :])


def _rhs_conserved(grid: TorusGrid, law: ConstitutiveLaw, rho, m, E):
    if float(np.min(rho)) <= 0:
        raise VacuumError("non-positive density in Eulerian state")
    u = dealias_array(grid, m / rho)
    theta = dealias_array(grid, E / rho) - 0.5 * sum(mul(grid, c, c) for c in u)
    tau = _stress(grid, law, rho, u)
    P = _pressure(grid, law, rho, theta)
    k = coefficient_array(law, "k", rho, grid)
    drho = -divergence_array(grid, m)
    dm = divergence_array(grid, tau - _outer(grid, u, m)) - gradient_array(grid, P)
    flux = (
        -mul(grid, u, E + P)
        + fl.matvec(tau, u)
        + mul(grid, k, gradient_array(grid, theta))
    )
    dE = divergence_array(grid, dealias_array(grid, flux))
    return drho, dm, dE


def eulerian_rhs(state: EulerianState, law: ConstitutiveLaw) -> EulerianRates:
    """Time derivatives of ``rho``, ``rho u`` and ``E`` for the total-energy system."""
    g = state.rho.grid
    drho, dm, dE = _rhs_conserved(g, law, *state.conserved())
    return EulerianRates(GridField(g, drho), GridField(g, dm), GridField(g, dE))


def temperature_form_rhs(rho: GridField, u: GridField, theta: GridField, law: ConstitutiveLaw) -> EulerianRates:
    """Same rates written with the temperature as unknown.

    The energy flux is ``u (rho (|u|^2/2 + theta) + P) - tau u + k grad theta``
    with the heat flux ``q = -k grad theta``.
    """
    g = rho.grid
    r, v, th = rho.array(), u.array(), theta.array()
    if float(np.min(r)) <= 0:
        raise VacuumError("non-positive density in Eulerian state")
    m = mul(g, r, v)
    kin = 0.5 * sum(mul(g, c, c) for c in v)
    tau = _stress(g, law, r, v)
    P = _pressure(g, law, r, th)
    k = coefficient_array(law, "k", r, g)
    drho = -divergence_array(g, m)
    dm = divergence_array(g, tau - _outer(g, m, v)) - gradient_array(g, P)
    energy_flux = mul(g, v, mul(g, r, kin + th) + P) - fl.matvec(tau, v) - mul(g, k, gradient_array(g, th))
    dE = -divergence_array(g, dealias_array(g, energy_flux))
    return EulerianRates(GridField(g, drho), GridField(g, dm), GridField(g, dE))


# --------------------------------------------------------------------------
# integrator
# --------------------------------------------------------------------------


@dataclass
class EulerianTrajectory:
    grid: TorusGrid
    times: np.ndarray
    rho: np.ndarray
    m: np.ndarray
    E: np.ndarray

    @property
    def u(self) -> np.ndarray:
        return self.m / self.rho[:, None]

    def state(self, n: int) -> EulerianState:
        return EulerianState.from_conserved(self.grid, self.rho[n], self.m[n], self.E[n], float(self.times[n]))

    def drifts(self) -> dict[str, float]:
        """Relative drift of ``int rho``, ``int rho u`` and ``int E``."""
        g = self.grid
        out = {}
        for name, traj in (("mass", self.rho), ("momentum", self.m), ("energy", self.E)):
            ints = np.array([np.atleast_1d(integrate_array(g, a)) for a in traj])
            scale = float(np.max(np.atleast_1d(integrate_array(g, np.abs(traj[0])))))
            scale = max(scale, float(np.max(np.abs(ints[0]))))
            out[name] = float(np.max(np.abs(ints - ints[0]))) / scale if scale > 0 else 0.0
        return out


def integrate_eulerian(state: EulerianState, law: ConstitutiveLaw, T: float, dt: float) -> EulerianTrajectory:
    """IMEX integration of the conserved variables on ``[0, T]``."""
    grid = state.rho.grid
    steps = max(1, int(round(T / dt)))
    times = state.t + np.arange(steps + 1) * dt
    rho0, m0, E0 = state.conserved()
    rho = np.empty((steps + 1,) + rho0.shape)
    m = np.empty((steps + 1,) + m0.shape)
    E = np.empty((steps + 1,) + E0.shape)
    rho[0], m[0], E[0] = rho0, m0, E0

    rho_mean = np.array(float(np.mean(rho0)))
    mu_h = float(law.mu(rho_mean)) / float(rho_mean)
    lam_h = float(law.lam(rho_mean)) / float(rho_mean)
    kap_h = float(law.k(rho_mean)) / float(rho_mean)
    k = grid.derivative_wavenumbers
    k2 = grid.k2
    a = 0.5 * dt

    def lame_hat(mh):
        kdot = sum(k[i] * mh[i] for i in range(grid.dim))
        return np.array([-mu_h * k2 * mh[i] - (mu_h + lam_h) * k[i] * kdot for i in range(grid.dim)])

    def solve_lame(rh):
        c = 1.0 + a * mu_h * k2
        b = a * (mu_h + lam_h)
        kdot = sum(k[i] * rh[i] for i in range(grid.dim))
        denom = c + b * sum(k[i] ** 2 for i in range(grid.dim))
        return np.array([(rh[i] - b * k[i] * kdot / denom) / c for i in range(grid.dim)])

    prev = None
    for n in range(steps):
        drho, dm, dE = _rhs_conserved(grid, law, rho[n], m[n], E[n])
        m_hat, E_hat = fft(grid, m[n]), fft(grid, E[n])
        lm = lame_hat(m_hat)
        lE = -kap_h * k2 * E_hat
        exp_m = dm - ifft(grid, lm)
        exp_E = dE - ifft(grid, lE)
        cur = (drho, exp_m, exp_E)

        def advance(ex):
            return (
                rho[n] + dt * ex[0],
                ifft(grid, solve_lame(m_hat + a * lm + dt * fft(grid, ex[1]))),
                ifft(grid, (E_hat + a * lE + dt * fft(grid, ex[2])) / (1 + a * kap_h * k2)),
            )

        if prev is None:
            # Heun start keeps the first step second order
            r1, m1, E1 = advance(cur)
            d1 = _rhs_conserved(grid, law, r1, m1, E1)
            trial = (d1[0], d1[1] - ifft(grid, lame_hat(fft(grid, m1))), d1[2] + kap_h * ifft(grid, k2 * fft(grid, E1)))
            ex = tuple(0.5 * (c + q) for c, q in zip(cur, trial))
        else:
            ex = tuple(1.5 * c - 0.5 * p for c, p in zip(cur, prev))
        rho[n + 1], m[n + 1], E[n + 1] = advance(ex)
        for name, new, old in (("momentum", m[n + 1], m[n]), ("energy", E[n + 1], E[n])):
            scale = float(np.max(np.abs(old - np.mean(old))))
            if scale > 1e-300 and float(np.max(np.abs(new - np.mean(new)))) > 10 * scale + 1e-12:
                raise StepSizeError(f"{name} grew more than tenfold in one step at t={times[n + 1]:.4g}; reduce dt")
        if float(np.min(rho[n + 1])) <= 0:
            raise VacuumError(f"vacuum forms at t={times[n + 1]:.6g}")
        prev = cur
    return EulerianTrajectory(grid, times, rho, m, E)


# --------------------------------------------------------------------------
# equivalence experiment
# --------------------------------------------------------------------------


@dataclass
class ComparisonReport:
    resolution: int
    dt: float
    rows: list[tuple[float, str, float, float, int]] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    lagrangian: LagrangianSolution | None = None
    eulerian: EulerianTrajectory | None = None
    note: str = ""

    @property
    def max_discrepancy(self) -> float:
        return max((r[2] for r in self.rows), default=float("nan"))

    def field_max(self, name: str) -> float:
        return max((r[2] for r in self.rows if r[1] == name), default=float("nan"))

    @property
    def ok(self) -> bool:
        return not self.errors


def output_indices(steps: int, count: int = 4) -> list[int]:
    return sorted({int(round(i * steps / count)) for i in range(1, count + 1)})


def equivalence_experiment(
    rho0: GridField,
    u0: GridField,
    theta0: GridField,
    law: ConstitutiveLaw,
    config: SolverConfig,
    outputs: int = 4,
    lagrangian: LagrangianSolution | None = None,
    eulerian: EulerianTrajectory | None = None,
) -> ComparisonReport:
    """Run both formulations from the same data and compare on the Eulerian grid.

    The Lagrangian solution is pushed forward with the inverse flow map:
    ``rho = rho_bar o X^-1``, ``u = u_bar o X^-1`` and ``E = (K_bar / J) o X^-1``.
    Solutions already computed from the same data may be passed in.
    """
    grid = rho0.grid
    p = config.p
    report = ComparisonReport(grid.N, config.dt)
    if not (1 < p < grid.dim and grid.dim >= 3):
        report.note = f"(p={p:g}, n={grid.dim}) lies outside the functional-equivalence range; compared numerically only"
    state = LagrangianState.from_temperature(rho0, u0, theta0)
    lag = lagrangian
    if lag is None:
        try:
            lag = picard_solve(state, law, config)
        except Exception as exc:  # partial report
            report.errors.append(f"lagrangian: {exc}")
    report.lagrangian = lag
    horizon = float(lag.times[-1]) if lag is not None else config.T
    eul = eulerian
    if eul is not None and not np.isclose(float(eul.times[-1]), horizon):
        eul = None
    if eul is None:
        try:
            eul = integrate_eulerian(EulerianState.from_temperature(rho0, u0, theta0), law, horizon, config.dt)
        except Exception as exc:
            report.errors.append(f"eulerian: {exc}")
    report.eulerian = eul
    if lag is None or eul is None:
        return report

    bank = build_filter_bank(grid)
    s_rho, s_u, s_E = grid.dim / p, grid.dim / p - 1.0, grid.dim / p - 2.0
    timeline = fl.VelocityTimeline(grid, lag.times, lag.u)
    disp = fl.displacement_history(timeline)
    steps = len(lag.times) - 1
    for n in output_indices(steps, outputs):
        t = float(lag.times[n])
        X = fl.flow_from_displacement(grid, disp[n], t)
        rho_l = fl.pushforward_array(grid, lag.rho_bar[n], X)
        u_l = fl.pushforward_array(grid, lag.u[n], X)
        E_l = fl.pushforward_array(grid, lag.K[n] / X.J, X)
        u_e = eul.m[n] / eul.rho[n]
        for name, a, b, s in (("rho", rho_l, eul.rho[n], s_rho), ("u", u_l, u_e, s_u), ("E", E_l, eul.E[n], s_E)):
            d = a - b
            report.rows.append((t, name, float(np.max(np.abs(d))), besov_norm_array(bank, d, s, p), grid.N))
    return report


@dataclass(frozen=True)
class RefinementResult:
    coarse: ComparisonReport
    fine: ComparisonReport

    @property
    def factor(self) -> float:
        return self.coarse.max_discrepancy / self.fine.max_discrepancy


def refinement_study(
    data: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]],
    dim: int,
    N: int,
    law: ConstitutiveLaw,
    config: SolverConfig,
) -> RefinementResult:
    """Equivalence discrepancy at ``(N, dt)`` and ``(2N, dt/2)``.

    ``data`` maps grid coordinates to ``(rho0, u0, theta0)`` arrays.
    """
    out = []
    for res, dt in ((N, config.dt), (2 * N, 0.5 * config.dt)):
        grid = TorusGrid(dim, res)
        r, u, th = data(grid.coords)
        cfg = SolverConfig(**{**config.__dict__, "dt": dt})
        out.append(equivalence_experiment(GridField(grid, r), GridField(grid, u), GridField(grid, th), law, cfg))
    return RefinementResult(*out)
