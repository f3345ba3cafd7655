"""Density-dependent coefficients and the two-part pressure law.

Pressure is ``P(rho, theta) = pi0(rho) + theta * pi1(rho)`` with the
normalisation ``pi0(1) = 0``; viscosities ``mu``, ``lambda`` and the heat
conductivity ``k`` depend on density only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .littlewood_paley import DyadicFilterBank, besov_norm_hat
from .spectral import GridField, dealias_array, fft, gradient_array, ifft, mul

Scalar = Callable[[np.ndarray], np.ndarray]

COEFFICIENTS = ("mu", "lambda", "k", "pi0", "pi1")


class DensityRangeError(ValueError):
    """Density left the admissible interval of a constitutive law."""


class VacuumError(DensityRangeError):
    """Reference density is not bounded away from zero."""


def _const(c: float) -> Scalar:
    return lambda rho: np.full_like(np.asarray(rho, dtype=float), c)


@dataclass(frozen=True)
class ConstitutiveLaw:
    name: str
    mu: Scalar
    lam: Scalar
    k: Scalar
    pi0: Scalar
    pi1: Scalar
    dmu: Scalar
    dlam: Scalar
    dk: Scalar
    dpi0: Scalar
    dpi1: Scalar
    density_range: tuple[float, float] = (1e-3, 1e3)
    params: dict = field(default_factory=dict)

    def coefficient(self, which: str) -> Scalar:
        table = {"mu": self.mu, "lambda": self.lam, "k": self.k, "pi0": self.pi0, "pi1": self.pi1}
        try:
            return table[which]
        except KeyError:
            raise ValueError(f"unknown coefficient {which!r}; expected one of {COEFFICIENTS}") from None

    def derivative(self, which: str) -> Scalar:
        table = {"mu": self.dmu, "lambda": self.dlam, "k": self.dk, "pi0": self.dpi0, "pi1": self.dpi1}
        return table[which]

    def check_density(self, rho: np.ndarray) -> None:
        lo, hi = self.density_range
        rmin, rmax = float(np.min(rho)), float(np.max(rho))
        if rmin <= lo or rmax >= hi:
            raise DensityRangeError(
                f"density range [{rmin:.6g}, {rmax:.6g}] leaves the admissible interval "
                f"({lo:g}, {hi:g}) of law {self.name!r}"
            )

    def pressure(self, rho, theta):
        """Pointwise ``pi0(rho) + theta*pi1(rho)`` without dealiasing."""
        return self.pi0(rho) + theta * self.pi1(rho)


def builtin_law(
    name: str,
    *,
    R: float = 1.0,
    alpha: float = 1.0,
    beta: float = 1.0,
    gamma: float = 3.0,
    mu: float = 0.5,
    lam: float = 0.0,
    k: float = 0.5,
    density_range: tuple[float, float] | None = None,
) -> ConstitutiveLaw:
    """One of ``ideal``, ``barotropic`` or ``van_der_waals`` with constant viscosities.

    The barotropic law uses ``pi0(rho) = alpha*(rho**gamma - 1)``.  The van der
    Waals attraction ``-alpha*rho**2`` is shifted by ``alpha`` so that
    ``pi0(1) = 0``.
    """
    if mu <= 0 or lam + 2 * mu <= 0:
        raise ValueError(f"viscosities must satisfy mu>0 and lambda+2mu>0 (mu={mu}, lambda={lam})")
    if k <= 0:
        raise ValueError(f"heat conductivity must be positive, got {k}")
    common = dict(
        mu=_const(mu), lam=_const(lam), k=_const(k),
        dmu=_const(0.0), dlam=_const(0.0), dk=_const(0.0),
    )
    params = dict(R=R, alpha=alpha, beta=beta, gamma=gamma, mu=mu, **{"lambda": lam}, k=k)
    if name == "ideal":
        return ConstitutiveLaw(
            "ideal",
            pi0=_const(0.0), dpi0=_const(0.0),
            pi1=lambda rho: R * np.asarray(rho, dtype=float), dpi1=_const(R),
            density_range=density_range or (1e-3, 1e3),
            params=params,
            **common,
        )
    if name == "barotropic":
        return ConstitutiveLaw(
            "barotropic",
            pi0=lambda rho: alpha * (np.asarray(rho, dtype=float) ** gamma - 1.0),
            dpi0=lambda rho: alpha * gamma * np.asarray(rho, dtype=float) ** (gamma - 1.0),
            pi1=_const(0.0), dpi1=_const(0.0),
            density_range=density_range or (1e-3, 1e3),
            params=params,
            **common,
        )
    if name == "van_der_waals":
        rng = density_range or (1e-3, 0.95 * gamma)
        if rng[1] >= gamma:
            raise DensityRangeError(
                f"van der Waals density range {rng} touches the pole at gamma={gamma}"
            )
        return ConstitutiveLaw(
            "van_der_waals",
            pi0=lambda rho: -alpha * (np.asarray(rho, dtype=float) ** 2 - 1.0),
            dpi0=lambda rho: -2.0 * alpha * np.asarray(rho, dtype=float),
            pi1=lambda rho: beta * rho / (gamma - np.asarray(rho, dtype=float)),
            dpi1=lambda rho: beta * gamma / (gamma - np.asarray(rho, dtype=float)) ** 2,
            density_range=rng,
            params=params,
            **common,
        )
    raise ValueError(f"unknown law {name!r}")


def law_from_config(cfg: dict) -> ConstitutiveLaw:
    """Build a law from flat ``law.*`` keys."""
    kwargs = {}
    for key, target in [
        ("law.R", "R"), ("law.alpha", "alpha"), ("law.beta", "beta"), ("law.gamma", "gamma"),
        ("law.mu", "mu"), ("law.lambda", "lam"), ("law.k", "k"),
    ]:
        if key in cfg:
            kwargs[target] = float(cfg[key])
    return builtin_law(str(cfg.get("law.name", "ideal")), **kwargs)


# --------------------------------------------------------------------------
# grid evaluations
# --------------------------------------------------------------------------


def coefficient_array(law: ConstitutiveLaw, which: str, rho: np.ndarray, grid) -> np.ndarray:
    law.check_density(rho)
    return dealias_array(grid, np.asarray(law.coefficient(which)(rho), dtype=float))


def evaluate_coefficient(law: ConstitutiveLaw, which: str, rho: GridField) -> GridField:
    """Pointwise composition ``F(rho)`` followed by dealiasing."""
    return GridField(rho.grid, coefficient_array(law, which, rho.array(), rho.grid))


def pressure_eulerian(law: ConstitutiveLaw, rho: GridField, theta: GridField) -> GridField:
    g = rho.grid
    r = rho.array()
    p0 = coefficient_array(law, "pi0", r, g)
    p1 = coefficient_array(law, "pi1", r, g)
    return GridField(g, p0 + mul(g, theta.array(), p1))


def lagrangian_temperature(K_bar: np.ndarray, rho0: np.ndarray, u_bar: np.ndarray, grid) -> np.ndarray:
    """``K/rho0 - |u|^2/2`` with dealiased products."""
    return dealias_array(grid, K_bar / rho0) - 0.5 * sum(mul(grid, c, c) for c in u_bar)


def check_vacuum(rho0: np.ndarray, floor: float = 0.0) -> None:
    if float(np.min(rho0)) <= floor:
        raise VacuumError(f"reference density reaches {float(np.min(rho0)):.3g} <= {floor:g}")


def pressure_lagrangian_array(law, rho_bar, K_bar, rho0, u_bar, grid) -> np.ndarray:
    check_vacuum(rho0)
    theta = lagrangian_temperature(K_bar, rho0, u_bar, grid)
    return coefficient_array(law, "pi0", rho_bar, grid) + mul(
        grid, theta, coefficient_array(law, "pi1", rho_bar, grid)
    )


def pressure_lagrangian(law, rho_bar: GridField, K_bar: GridField, rho0: GridField, u_bar: GridField) -> GridField:
    """``pi0(rho_bar) + (K_bar/rho0 - |u_bar|^2/2) pi1(rho_bar)``."""
    g = rho0.grid
    return GridField(
        g, pressure_lagrangian_array(law, rho_bar.array(), K_bar.array(), rho0.array(), u_bar.array(), g)
    )


# --------------------------------------------------------------------------
# ellipticity and frequency cut-offs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EllipticityConstants:
    alpha: float
    beta: float


def _viscous_fields(law: ConstitutiveLaw, rho0: np.ndarray, grid):
    inv = 1.0 / rho0
    mu = coefficient_array(law, "mu", rho0, grid)
    lam = coefficient_array(law, "lambda", rho0, grid)
    k = coefficient_array(law, "k", rho0, grid)
    return mu * inv, (2 * mu + lam) * inv, k * inv


def ellipticity_constants(law: ConstitutiveLaw, rho0: GridField | np.ndarray) -> EllipticityConstants:
    """Grid infima of ``a*mu``, ``2a*mu + b*lambda`` (a=b=1/rho0) and ``k/rho0``."""
    r = rho0.array() if isinstance(rho0, GridField) else np.asarray(rho0)
    grid = rho0.grid if isinstance(rho0, GridField) else None
    if grid is None:
        raise TypeError("ellipticity_constants needs a GridField")
    check_vacuum(r)
    amu, lame, kc = _viscous_fields(law, r, grid)
    return EllipticityConstants(
        alpha=float(min(np.min(amu), np.min(lame))),
        beta=float(np.min(kc)),
    )


@dataclass(frozen=True)
class CutoffReport:
    m: int
    admissible: bool
    smoothed_infima: tuple[float, float, float]
    high_frequency_mass: float
    threshold: float
    smallest_m: int | None


def _gradient_products(law: ConstitutiveLaw, rho0: np.ndarray, grid) -> list[np.ndarray]:
    """Coefficient-gradient products whose high-frequency part must be small."""
    g = gradient_array(grid, rho0)
    r2 = rho0 * rho0
    factors = [
        law.mu(rho0) / r2,
        law.dmu(rho0) / rho0,
        law.lam(rho0) / r2,
        law.dlam(rho0) / rho0,
        law.k(rho0) / rho0,
    ]
    return [dealias_array(grid, np.asarray(f, dtype=float) * g) for f in factors]


def _cutoff_state(law, rho0, m, eta, bank: DyadicFilterBank, p, ell, fields, products):
    grid = bank.grid
    Phi = bank.Phi_hat(m)
    infima = tuple(float(np.min(ifft(grid, fft(grid, f) * Phi))) for f in fields)
    s = grid.dim / p - 1.0
    hf = 0.0
    for prod in products:
        hf = max(hf, besov_norm_hat(bank, fft(grid, prod) * (1.0 - Phi), s, p))
    threshold = eta * min(ell.alpha, ell.beta)
    ok = (
        infima[0] >= 0.5 * ell.alpha
        and infima[1] >= 0.5 * ell.alpha
        and infima[2] >= 0.5 * ell.beta
        and hf <= threshold
    )
    return ok, infima, hf, threshold


def cutoff_admissible(
    law: ConstitutiveLaw,
    rho0: GridField,
    m: int,
    eta: float,
    bank: DyadicFilterBank,
    p: float = 2.0,
) -> CutoffReport:
    """Check the smoothed-coefficient conditions for cut-off ``m``.

    Also scans the bank range for the smallest admissible ``m``; ``None``
    when no ``m`` in range passes.
    """
    r = rho0.array()
    grid = rho0.grid
    ell = ellipticity_constants(law, rho0)
    fields = _viscous_fields(law, r, grid)
    products = _gradient_products(law, r, grid)
    ok, infima, hf, threshold = _cutoff_state(law, r, m, eta, bank, p, ell, fields, products)
    smallest = None
    for mm in range(bank.j_min - 1, bank.j_max + 2):
        if _cutoff_state(law, r, mm, eta, bank, p, ell, fields, products)[0]:
            smallest = mm
            break
    return CutoffReport(m, ok, infima, hf, threshold, smallest)
