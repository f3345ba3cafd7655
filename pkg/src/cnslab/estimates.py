"""Randomised ratio checks for product, composition, commutator and Bernstein bounds.

Each check draws seeded band-limited fields, evaluates the left and right
sides of an inequality in homogeneous Besov norms and records their ratio.
Nothing here asserts a particular constant: callers compare the largest
observed ratio across trials and resolutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .littlewood_paley import DyadicFilterBank, besov_norm_array, build_filter_bank
from .spectral import TorusGrid, fft, gradient_array, ifft, lp_norm_array, mul

KINDS = ("product", "composition", "commutator_comm1", "commutator_comm2", "bernstein")
DEFAULT_BAND = 5


@dataclass(frozen=True)
class EstimateParams:
    p: float = 2.0
    sigma: float = 0.0
    nu: float = 0.0
    s: float | None = None
    band: int = DEFAULT_BAND
    amplitude: float = 0.5


@dataclass
class EstimateReport:
    kind: str
    resolution: int
    params: EstimateParams
    rows: list[tuple[str, int, int, float, float, float]] = field(default_factory=list)

    @property
    def ratios(self) -> np.ndarray:
        return np.array([r[5] for r in self.rows])

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios)) if self.rows else float("nan")

    @property
    def min_ratio(self) -> float:
        return float(np.min(self.ratios)) if self.rows else float("nan")

    @property
    def finite(self) -> bool:
        return bool(self.rows) and bool(np.all(np.isfinite(self.ratios)))


def _conj_exponent(p: float) -> float:
    return p / (p - 1.0)


def check_indices(kind: str, dim: int, prm: EstimateParams) -> None:
    """Raise ``ValueError`` when the indices fall outside the estimate's range."""
    p, sigma, nu = prm.p, prm.sigma, prm.nu
    if not p > 1:
        raise ValueError(f"p must exceed 1, got {p}")
    lower = -min(dim / p, dim / _conj_exponent(p))
    if kind == "product":
        if nu < 0 or not (lower < sigma <= dim / p - nu):
            raise ValueError(f"product law needs nu>=0 and {lower:g} < sigma <= {dim / p - nu:g}")
    elif kind == "commutator_comm1":
        if not (0 <= nu <= dim / p) or not (lower - 1 < sigma <= dim / p - nu):
            raise ValueError(f"commutator needs 0<=nu<=n/p and {lower - 1:g} < sigma <= {dim / p - nu:g}")
    elif kind == "commutator_comm2":
        if nu < 0 or not (lower - 1 < sigma <= dim / p - nu):
            raise ValueError(f"commutator needs nu>=0 and {lower - 1:g} < sigma <= {dim / p - nu:g}")
    elif kind == "composition":
        s = dim / p if prm.s is None else prm.s
        if not s > 0:
            raise ValueError(f"composition needs s>0, got {s}")
        if not 0 < prm.amplitude:
            raise ValueError("composition amplitude must be positive")
    elif kind != "bernstein":
        raise ValueError(f"unknown estimate kind {kind!r}; expected one of {KINDS}")


def random_band_field(grid: TorusGrid, rng: np.random.Generator, band: int | None = None, decay: float = 2.0) -> np.ndarray:
    """Zero-mean real field with modes ``|k_i| <= band`` and algebraically decaying amplitudes.

    The draw depends only on ``band`` and the generator, so the same
    continuous field is sampled on every grid that resolves the band.
    ``band=None`` fills the whole dealiased band of the grid.
    """
    if band is None:
        band = int(np.floor(grid.N / 3))
    if band > grid.N // 2 - 1:
        raise ValueError(f"band {band} not resolved on a grid with N={grid.N}")
    size = 2 * band + 1
    shape = (size,) * grid.dim
    coeff = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    ks = np.meshgrid(*([np.arange(-band, band + 1)] * grid.dim), indexing="ij")
    kmag = np.sqrt(sum(k.astype(float) ** 2 for k in ks))
    coeff = coeff * (1.0 + kmag) ** (-decay)
    coeff[(band,) * grid.dim] = 0.0
    a_hat = np.zeros(grid.shape, dtype=complex)
    idx = tuple(np.mod(k, grid.N) for k in ks)
    a_hat[idx] = coeff
    return ifft(grid, a_hat)


def _normalise(a: np.ndarray, amplitude: float) -> np.ndarray:
    return a * (amplitude / float(np.max(np.abs(a))))


def _product(bank, grid, rng, prm):
    n, p = grid.dim, prm.p
    u = random_band_field(grid, rng, prm.band)
    v = random_band_field(grid, rng, prm.band)
    lhs = besov_norm_array(bank, mul(grid, u, v), prm.sigma, p)
    rhs = besov_norm_array(bank, u, n / p - prm.nu, p) * besov_norm_array(bank, v, prm.sigma + prm.nu, p)
    return lhs, rhs


def _composition(bank, grid, rng, prm):
    s = grid.dim / prm.p if prm.s is None else prm.s
    a = _normalise(random_band_field(grid, rng, prm.band), prm.amplitude)
    Fa = mul(grid, a, a)  # F(a) = a^2 vanishes at 0
    return besov_norm_array(bank, Fa, s, prm.p), besov_norm_array(bank, a, s, prm.p)


def _commutator1(bank, grid, rng, prm):
    n, p = grid.dim, prm.p
    a = random_band_field(grid, rng, prm.band)
    w = random_band_field(grid, rng, prm.band)
    w_hat = fft(grid, w)
    aw_hat = fft(grid, mul(grid, a, w))
    lhs = 0.0
    for j in bank.blocks:
        phi = bank.phi_hat[j]
        comm = mul(grid, a, ifft(grid, w_hat * phi)) - ifft(grid, aw_hat * phi)
        dcomm = gradient_array(grid, comm)
        lhs += 2.0 ** (j * prm.sigma) * max(lp_norm_array(grid, dcomm[k], p) for k in range(n))
    rhs = besov_norm_array(bank, gradient_array(grid, a), n / p - prm.nu, p) * besov_norm_array(
        bank, w, prm.sigma + prm.nu, p
    )
    return lhs, rhs


def riesz_product_symbol(grid: TorusGrid) -> np.ndarray:
    """``xi_1 xi_2 / |xi|^2``: a degree-0 multiplier, zero at the origin."""
    k = grid.wavenumbers
    k2 = grid.k2
    with np.errstate(invalid="ignore", divide="ignore"):
        sym = np.where(k2 > 0, k[0] * k[1] / np.where(k2 > 0, k2, 1.0), 0.0)
    return sym


def _commutator2(bank, grid, rng, prm):
    n, p = grid.dim, prm.p
    q = random_band_field(grid, rng, prm.band)
    w = random_band_field(grid, rng, prm.band)
    sym = riesz_product_symbol(grid)
    Aw = ifft(grid, fft(grid, w) * sym)
    comm = ifft(grid, fft(grid, mul(grid, q, w)) * sym) - mul(grid, q, Aw)
    lhs = besov_norm_array(bank, comm, prm.sigma + 1.0, p)
    rhs = besov_norm_array(bank, gradient_array(grid, q), n / p - prm.nu, p) * besov_norm_array(
        bank, w, prm.sigma + prm.nu, p
    )
    return lhs, rhs


def bernstein_terms(bank: DyadicFilterBank, u: np.ndarray, p: float = 2.0, floor: float = 1e-13) -> dict[int, tuple[float, float]]:
    """``(||grad Delta_j u||_p, 2^j ||Delta_j u||_p)`` for every non-negligible block."""
    grid = bank.grid
    u_hat = fft(grid, u)
    total = lp_norm_array(grid, u, p)
    out = {}
    for j in bank.blocks:
        block = ifft(grid, u_hat * bank.phi_hat[j])
        den = lp_norm_array(grid, block, p)
        if den <= floor * max(total, 1e-300):
            continue
        out[j] = (lp_norm_array(grid, gradient_array(grid, block), p), 2.0**j * den)
    return out


_CHECKS = {
    "product": _product,
    "composition": _composition,
    "commutator_comm1": _commutator1,
    "commutator_comm2": _commutator2,
}


def verify_estimates(
    kind: str,
    trials: int,
    grid: TorusGrid,
    params: EstimateParams | None = None,
    seed: int = 0,
    bank: DyadicFilterBank | None = None,
) -> EstimateReport:
    """Largest observed left/right ratio of one estimate over seeded trials.

    Trial ``t`` draws from ``default_rng([seed, t])``.  For ``bernstein`` one
    row is written per (trial, block), so the quotient is taken block by block
    rather than the whole field.
    """
    prm = params or EstimateParams()
    check_indices(kind, grid.dim, prm)
    bank = bank or build_filter_bank(grid)
    report = EstimateReport(kind, grid.N, prm)
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        if kind == "bernstein":
            u = random_band_field(grid, rng, None)
            for lhs, rhs in bernstein_terms(bank, u, prm.p).values():
                report.rows.append((kind, t, grid.N, lhs, rhs, lhs / rhs))
            continue
        lhs, rhs = _CHECKS[kind](bank, grid, rng, prm)
        ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else float("inf"))
        report.rows.append((kind, t, grid.N, lhs, rhs, ratio))
    return report
