"""Discrete Littlewood-Paley decomposition and homogeneous Besov norms.

The radial profile is built from a C-infinity low-pass ``chi`` that equals 1
on ``|xi| <= 1/2`` and vanishes for ``|xi| >= 1``.  Setting
``phi(xi) = chi(xi/2) - chi(xi)`` makes the dyadic sum telescope, so on any
lattice frequency with ``2**j_min <= |xi| <= 2**j_max`` the block weights add
up to one to rounding error.  The low-pass used by ``S_m`` is
``Phi(xi) = chi(xi/2)``, which gives ``S_m = sum_{j <= m} Delta_j`` plus the
mean.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import GridField, TorusGrid, fft, ifft, lp_norm_array

log = logging.getLogger(__name__)


def _smooth_step(x: np.ndarray) -> np.ndarray:
    """0 for x <= 0, 1 for x >= 1, C-infinity in between."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


def low_pass_profile(r: np.ndarray) -> np.ndarray:
    """``chi(r)``: 1 for r <= 1/2, 0 for r >= 1."""
    return 1.0 - _smooth_step(2.0 * np.asarray(r, dtype=float) - 1.0)


def annulus_profile(r: np.ndarray) -> np.ndarray:
    """``phi(r) = chi(r/2) - chi(r)``, supported in ``1/2 < r < 2``."""
    r = np.asarray(r, dtype=float)
    return low_pass_profile(0.5 * r) - low_pass_profile(r)


def cutoff_profile(r: np.ndarray) -> np.ndarray:
    """``Phi(r) = 1 - sum_{j>=1} phi(2**-j r) = chi(r/2)``."""
    return low_pass_profile(0.5 * np.asarray(r, dtype=float))


@dataclass(frozen=True)
class BesovIndex:
    """Regularity ``s`` and integrability ``p`` of ``B^s_{p,1}``."""

    s: float
    p: float = 2.0

    def __post_init__(self):
        if not 1 < self.p < np.inf:
            raise ValueError(f"p must lie in (1, inf), got {self.p}")

    def admissible(self, dim: int) -> bool:
        return self.s <= dim / self.p + 1e-14


@dataclass(frozen=True)
class DyadicFilterBank:
    grid: TorusGrid
    j_min: int
    j_max: int
    phi_hat: dict[int, np.ndarray] = field(repr=False)

    @property
    def blocks(self) -> range:
        return range(self.j_min, self.j_max + 1)

    def Phi_hat(self, m: int) -> np.ndarray:
        """Multiplier of ``S_m`` on the grid lattice."""
        return cutoff_profile(2.0 ** (-m) * self.grid.kmag)

    @property
    def resolved_mask(self) -> np.ndarray:
        k = self.grid.kmag
        return (k >= 2.0**self.j_min) & (k <= 2.0**self.j_max) & (k > 0)

    def weight_sum(self) -> np.ndarray:
        return sum(self.phi_hat[j] for j in self.blocks)


def default_band(grid: TorusGrid) -> tuple[int, int]:
    kmin = 2 * np.pi / grid.period
    return math.floor(math.log2(kmin)), math.ceil(math.log2(grid.max_lattice_radius))


def build_filter_bank(grid: TorusGrid, j_min: int | None = None, j_max: int | None = None) -> DyadicFilterBank:
    """Dyadic blocks ``j_min..j_max`` evaluated on the grid's frequency lattice.

    The default band covers every nonzero lattice frequency.  Requesting a
    top block that lies entirely beyond the lattice corner raises.
    """
    d_min, d_max = default_band(grid)
    j_min = d_min if j_min is None else int(j_min)
    j_max = d_max if j_max is None else int(j_max)
    if j_min > j_max:
        raise ValueError(f"empty band: j_min={j_min} > j_max={j_max}")
    if 2.0 ** (j_max - 1) >= grid.max_lattice_radius:
        raise ValueError(
            f"band exceeds grid: block {j_max} starts at |xi|={2.0 ** (j_max - 1):g} "
            f"beyond the lattice radius {grid.max_lattice_radius:g}"
        )
    phi = {j: annulus_profile(2.0 ** (-j) * grid.kmag) for j in range(j_min, j_max + 1)}
    return DyadicFilterBank(grid, j_min, j_max, phi)


def _check_block(bank: DyadicFilterBank, j: int) -> None:
    if j not in bank.blocks:
        raise ValueError(f"block {j} outside bank range [{bank.j_min}, {bank.j_max}]")


def dyadic_block(f: GridField, j: int, bank: DyadicFilterBank) -> GridField:
    _check_block(bank, j)
    return GridField(f.grid, ifft(f.grid, f.spectral().values * bank.phi_hat[j]))


def low_freq_cutoff(f: GridField, m: int, bank: DyadicFilterBank) -> GridField:
    return GridField(f.grid, ifft(f.grid, f.spectral().values * bank.Phi_hat(m)))


def truncation_remainder(f: GridField, bank: DyadicFilterBank) -> GridField:
    """Part of ``f`` not captured by the resolved blocks (mean included)."""
    f_hat = f.spectral().values
    return GridField(f.grid, ifft(f.grid, f_hat * (1.0 - bank.weight_sum())))


# --------------------------------------------------------------------------
# Besov norms
# --------------------------------------------------------------------------


def block_norms_hat(bank: DyadicFilterBank, a_hat: np.ndarray, p: float) -> np.ndarray:
    """``||Delta_j a||_{L^p}`` for every block, from spectral coefficients."""
    grid = bank.grid
    lead = a_hat.ndim - grid.dim
    out = np.empty(len(bank.blocks))
    if p == 2:
        # Parseval with the forward-normalised DFT
        power = np.abs(a_hat) ** 2
        if lead:
            power = power.sum(axis=tuple(range(lead)))
        for i, j in enumerate(bank.blocks):
            out[i] = math.sqrt(grid.volume * float(np.sum(power * bank.phi_hat[j] ** 2)))
        return out
    for i, j in enumerate(bank.blocks):
        out[i] = lp_norm_array(grid, ifft(grid, a_hat * bank.phi_hat[j]), p)
    return out


def besov_norm_hat(bank: DyadicFilterBank, a_hat: np.ndarray, s: float, p: float) -> float:
    weights = 2.0 ** (s * np.asarray(list(bank.blocks), dtype=float))
    return float(np.sum(weights * block_norms_hat(bank, a_hat, p)))


def besov_norm_array(bank: DyadicFilterBank, a: np.ndarray, s: float, p: float) -> float:
    return besov_norm_hat(bank, fft(bank.grid, a), s, p)


@dataclass(frozen=True)
class BesovReport:
    norm: float
    block_norms: dict[int, float]
    truncation_mass: float


def besov_report(f: GridField, idx: BesovIndex, bank: DyadicFilterBank) -> BesovReport:
    f_hat = f.spectral().values
    blocks = block_norms_hat(bank, f_hat, idx.p)
    weights = 2.0 ** (idx.s * np.asarray(list(bank.blocks), dtype=float))
    remainder = ifft(f.grid, f_hat * (1.0 - bank.weight_sum()))
    trunc = lp_norm_array(f.grid, remainder, idx.p)
    if trunc > 0:
        log.debug("Besov truncation mass %.3e outside blocks [%d, %d]", trunc, bank.j_min, bank.j_max)
    return BesovReport(
        float(np.sum(weights * blocks)),
        {j: float(b) for j, b in zip(bank.blocks, blocks)},
        trunc,
    )


def besov_norm(f: GridField, idx: BesovIndex, bank: DyadicFilterBank) -> float:
    return besov_norm_hat(bank, f.spectral().values, idx.s, idx.p)


# --------------------------------------------------------------------------
# E_p(T) norm
# --------------------------------------------------------------------------


def _hessian_norms(bank: DyadicFilterBank, a_hat: np.ndarray, s: float, p: float) -> float:
    grid = bank.grid
    if p == 2:
        # |grad^2 a|_F^2 has symbol |xi|^4
        return besov_norm_hat(bank, a_hat * grid.k2, s, p)
    k = grid.wavenumbers
    lead = a_hat.ndim - grid.dim
    hess = np.empty(a_hat.shape[:lead] + (grid.dim, grid.dim) + grid.shape, dtype=complex)
    for i in range(grid.dim):
        for j in range(grid.dim):
            hess[(slice(None),) * lead + (i, j)] = -k[i] * k[j] * a_hat
    return besov_norm_hat(bank, hess, s, p)


def trapezoid(values: np.ndarray, times: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return 0.0
    return float(np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(times)))


def time_derivative(traj: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Second-order finite differences along the leading (time) axis."""
    if len(times) < 3:
        return np.gradient(traj, times, axis=0)
    return np.gradient(traj, times, axis=0, edge_order=2)


@dataclass(frozen=True)
class EpNormParts:
    u_sup: float
    u_dt: float
    u_hess: float
    K_sup: float
    K_dt: float
    K_hess: float

    @property
    def total(self) -> float:
        return self.u_sup + self.u_dt + self.u_hess + self.K_sup + self.K_dt + self.K_hess


def _as_traj(traj) -> np.ndarray:
    if isinstance(traj, np.ndarray):
        return traj
    return np.array([f.array() if isinstance(f, GridField) else f for f in traj])


def ep_norm_parts(u_traj, K_traj, times, bank: DyadicFilterBank, p: float = 2.0) -> EpNormParts:
    u = _as_traj(u_traj)
    K = _as_traj(K_traj)
    times = np.asarray(times, dtype=float)
    if len(u) != len(times) or len(K) != len(times):
        raise ValueError(
            f"mismatched time grids: {len(u)} velocity and {len(K)} energy samples for {len(times)} times"
        )
    grid = bank.grid
    s_u = grid.dim / p - 1.0
    s_K = grid.dim / p - 2.0

    def pieces(traj, s):
        hat = fft(grid, traj)
        dt_hat = fft(grid, time_derivative(traj, times)) if len(times) > 1 else np.zeros_like(hat)
        sup = max(besov_norm_hat(bank, h, s, p) for h in hat)
        d = [besov_norm_hat(bank, h, s, p) for h in dt_hat]
        h2 = [_hessian_norms(bank, h, s, p) for h in hat]
        return sup, trapezoid(d, times), trapezoid(h2, times)

    return EpNormParts(*pieces(u, s_u), *pieces(K, s_K))


def ep_norm(u_traj, K_traj, times, bank: DyadicFilterBank, p: float = 2.0) -> float:
    """Discrete ``E_p(T)`` norm of a velocity/energy trajectory pair."""
    return ep_norm_parts(u_traj, K_traj, times, bank, p).total
