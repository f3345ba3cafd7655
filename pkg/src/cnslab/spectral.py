"""Periodic grids, tensor fields and Fourier machinery on the torus.

Fields are stored component-first: a scalar on an ``n``-dimensional grid has
shape ``(N,)*n``, a vector ``(n, N, ..., N)`` and a matrix
``(n, n, N, ..., N)``.  Spectral coefficients use the forward-normalised DFT,
so a constant field ``c`` has zero-mode coefficient ``c`` and ``cos(x1)`` has
coefficient ``1/2`` at ``+e1`` and ``-e1``.

Matrix conventions follow the usual fluid-mechanics layout:
``(Du)[i, j] = d_j u^i``, ``(grad u)[i, j] = d_i u^j`` and the divergence of a
matrix contracts its first index, ``(div M)^j = sum_i d_i M[i, j]``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np

Rank = Literal["scalar", "vector", "matrix"]
Representation = Literal["physical", "spectral"]

_OFFGRID_CHUNK = 4096


@dataclass(frozen=True)
class TorusGrid:
    """Isotropic uniform collocation grid on ``[0, period)^dim``."""

    dim: int
    points_per_axis: int
    period: float = 2 * np.pi

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        N = self.points_per_axis
        if N < 16 or N & (N - 1):
            raise ValueError(f"points_per_axis must be a power of two >= 16, got {N}")
        if not self.period > 0:
            raise ValueError("period must be positive")

    @property
    def N(self) -> int:
        return self.points_per_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.dim

    @property
    def volume(self) -> float:
        return float(self.period**self.dim)

    @property
    def cell_volume(self) -> float:
        return self.volume / self.N**self.dim

    @cached_property
    def x1d(self) -> np.ndarray:
        return np.arange(self.N) * (self.period / self.N)

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(dim, N, ..., N)``."""
        return np.array(np.meshgrid(*([self.x1d] * self.dim), indexing="ij"))

    @cached_property
    def k1d(self) -> np.ndarray:
        """Integer frequency indices in FFT order."""
        return np.fft.fftfreq(self.N, 1.0 / self.N)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers per axis, shape ``(dim, N, ..., N)``."""
        k = self.k1d * (2 * np.pi / self.period)
        return np.array(np.meshgrid(*([k] * self.dim), indexing="ij"))

    @cached_property
    def derivative_wavenumbers(self) -> np.ndarray:
        """Wavenumbers with the Nyquist index zeroed (odd-derivative symbol)."""
        k = self.k1d * (2 * np.pi / self.period)
        k = np.where(np.abs(self.k1d) == self.N // 2, 0.0, k)
        return np.array(np.meshgrid(*([k] * self.dim), indexing="ij"))

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(np.sum(self.wavenumbers**2, axis=0))

    @cached_property
    def k2(self) -> np.ndarray:
        return np.sum(self.wavenumbers**2, axis=0)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """True on modes kept by the two-thirds rule."""
        cutoff = (2.0 / 3.0) * (self.N // 2)
        idx = np.array(np.meshgrid(*([np.abs(self.k1d)] * self.dim), indexing="ij"))
        return np.all(idx <= cutoff, axis=0)

    @property
    def max_lattice_radius(self) -> float:
        return float(np.sqrt(self.dim) * (self.N // 2) * 2 * np.pi / self.period)

    def rank_shape(self, rank: Rank) -> tuple[int, ...]:
        return {"scalar": (), "vector": (self.dim,), "matrix": (self.dim, self.dim)}[rank]


def rank_of(values: np.ndarray, grid: TorusGrid) -> Rank:
    extra = values.ndim - grid.dim
    if values.shape[extra:] != grid.shape:
        raise ValueError(f"array of shape {values.shape} does not live on grid {grid.shape}")
    if extra == 0:
        return "scalar"
    if extra == 1 and values.shape[0] == grid.dim:
        return "vector"
    if extra == 2 and values.shape[:2] == (grid.dim, grid.dim):
        return "matrix"
    raise ValueError(f"unsupported tensor shape {values.shape[:extra]}")


# --------------------------------------------------------------------------
# array-level transforms (used by the solvers directly)
# --------------------------------------------------------------------------


def _axes(grid: TorusGrid) -> tuple[int, ...]:
    return tuple(range(-grid.dim, 0))


def fft(grid: TorusGrid, a: np.ndarray) -> np.ndarray:
    return np.fft.fftn(a, axes=_axes(grid), norm="forward")


def ifft(grid: TorusGrid, a_hat: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(a_hat, axes=_axes(grid), norm="forward").real


def dealias_array(grid: TorusGrid, a: np.ndarray) -> np.ndarray:
    """Two-thirds-rule projection of a physical-space array."""
    return ifft(grid, fft(grid, a) * grid.dealias_mask)


def mul(grid: TorusGrid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pointwise product followed by dealiasing."""
    return dealias_array(grid, a * b)


def gradient_array(grid: TorusGrid, a: np.ndarray) -> np.ndarray:
    """Spectral gradient; appends a trailing derivative index.

    For a scalar the result is ``g[i] = d_i a``; for a vector it is
    ``Du[i, j] = d_j u^i``.
    """
    a_hat = fft(grid, a)
    k = grid.derivative_wavenumbers
    lead = a.ndim - grid.dim
    out = np.empty(a.shape[:lead] + (grid.dim,) + grid.shape)
    for j in range(grid.dim):
        out[(slice(None),) * lead + (j,)] = ifft(grid, 1j * k[j] * a_hat)
    return out


def transpose_gradient(Du: np.ndarray) -> np.ndarray:
    return np.swapaxes(Du, 0, 1)


def divergence_array(grid: TorusGrid, a: np.ndarray) -> np.ndarray:
    """Divergence contracting the first tensor index."""
    a_hat = fft(grid, a)
    k = grid.derivative_wavenumbers
    out_hat = sum(1j * k[i] * a_hat[i] for i in range(grid.dim))
    return ifft(grid, out_hat)


def laplacian_array(grid: TorusGrid, a: np.ndarray) -> np.ndarray:
    return ifft(grid, -grid.k2 * fft(grid, a))


def hessian_array(grid: TorusGrid, a: np.ndarray) -> np.ndarray:
    """Second derivatives ``H[..., i, j] = d_i d_j a`` (two trailing indices)."""
    a_hat = fft(grid, a)
    k = grid.wavenumbers
    lead = a.ndim - grid.dim
    out = np.empty(a.shape[:lead] + (grid.dim, grid.dim) + grid.shape)
    for i in range(grid.dim):
        for j in range(grid.dim):
            out[(slice(None),) * lead + (i, j)] = ifft(grid, -k[i] * k[j] * a_hat)
    return out


def deformation_array(grid: TorusGrid, u: np.ndarray) -> np.ndarray:
    Du = gradient_array(grid, u)
    return 0.5 * (Du + transpose_gradient(Du))


def integrate_array(grid: TorusGrid, a: np.ndarray) -> np.ndarray | float:
    """Uniform-weight quadrature over the torus (per component)."""
    return np.sum(a, axis=_axes(grid)) * grid.cell_volume


def lp_norm_array(grid: TorusGrid, a: np.ndarray, p: float) -> float:
    """L^p norm of the pointwise Euclidean (Frobenius) magnitude."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    lead = a.ndim - grid.dim
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    if scale == 0.0 or not np.isfinite(scale):
        return scale
    # rescale so powers of tiny or huge values neither underflow nor overflow
    b = a / scale
    mag = np.abs(b) if lead == 0 else np.sqrt(np.sum(b**2, axis=tuple(range(lead))))
    if np.isinf(p):
        return scale * float(np.max(mag))
    if p == 2:
        return scale * float(np.sqrt(np.sum(mag**2) * grid.cell_volume))
    return scale * float((np.sum(mag**p) * grid.cell_volume) ** (1.0 / p))


def evaluate_offgrid_array(grid: TorusGrid, a: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate the trigonometric interpolant of ``a`` at arbitrary points.

    ``points`` has shape ``(dim, M)`` (or ``(dim, *grid.shape)``); the result
    has shape ``a.shape[:lead] + points.shape[1:]``.
    """
    return evaluate_offgrid_hat(grid, fft(grid, a), points)


def _exp_table(x: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """``exp(i k x)`` for every point and FFT-ordered index ``k``."""
    N, half = grid.N, grid.N // 2
    base = np.exp(1j * x * (2 * np.pi / grid.period))
    pos = np.cumprod(np.broadcast_to(base[:, None], (len(x), half)), axis=1)
    table = np.empty((len(x), N), dtype=complex)
    table[:, 0] = 1.0
    table[:, 1:half] = pos[:, : half - 1]
    table[:, half] = pos[:, half - 1].conj()
    table[:, half + 1 :] = pos[:, half - 2 :: -1].conj()
    return table


def evaluate_offgrid_hat(grid: TorusGrid, a_hat: np.ndarray, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    out_pts_shape = points.shape[1:]
    pts = points.reshape(grid.dim, -1)
    lead_shape = a_hat.shape[: a_hat.ndim - grid.dim]
    coeffs = a_hat.reshape((-1,) + grid.shape)
    n_comp = coeffs.shape[0]
    M = pts.shape[1]
    N = grid.N
    result = np.empty((n_comp, M))
    for start in range(0, M, _OFFGRID_CHUNK):
        sl = slice(start, min(start + _OFFGRID_CHUNK, M))
        E = [_exp_table(pts[d, sl], grid) for d in range(grid.dim)]
        for c in range(n_comp):
            # contract the first axis, then the remaining ones pointwise
            T = E[0] @ coeffs[c].reshape(N, -1)
            if grid.dim == 2:
                vals = np.sum(T * E[1], axis=1)
            else:
                T = T.reshape(-1, N, N)
                T = np.einsum("mab,ma->mb", T, E[1])
                vals = np.sum(T * E[2], axis=1)
            result[c, sl] = vals.real
    return result.reshape(lead_shape + out_pts_shape)


# --------------------------------------------------------------------------
# GridField value type
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GridField:
    """A scalar, vector or matrix field on a :class:`TorusGrid`."""

    grid: TorusGrid
    values: np.ndarray = field(repr=False)
    representation: Representation = "physical"

    def __post_init__(self):
        if self.representation not in ("physical", "spectral"):
            raise ValueError(f"unknown representation {self.representation!r}")
        values = np.asarray(self.values).view()
        rank_of(values, self.grid)
        if self.representation == "physical" and np.iscomplexobj(values):
            raise ValueError("physical values must be real")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: TorusGrid, func) -> GridField:
        return cls(grid, np.asarray(func(*grid.coords), dtype=float))

    @property
    def rank(self) -> Rank:
        return rank_of(self.values, self.grid)

    @property
    def component_count(self) -> int:
        return int(np.prod(self.grid.rank_shape(self.rank), dtype=int))

    def physical(self) -> GridField:
        return self if self.representation == "physical" else inverse_transform(self)

    def spectral(self) -> GridField:
        return self if self.representation == "spectral" else forward_transform(self)

    def array(self) -> np.ndarray:
        """Physical-space values as a plain array."""
        return self.physical().values

    def _binary(self, other, op):
        a = self.array()
        b = other.array() if isinstance(other, GridField) else other
        return GridField(self.grid, op(a, b))

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return GridField(self.grid, -self.array())

    # ---- snapshot format -------------------------------------------------

    def to_bytes(self) -> bytes:
        """Text header ``dim N rank repr component_count`` then LE float64 data."""
        header = (
            f"{self.grid.dim} {self.grid.N} {self.rank} {self.representation} "
            f"{self.component_count}\n"
        )
        dtype = "<c16" if self.representation == "spectral" else "<f8"
        data = np.ascontiguousarray(self.values, dtype=dtype).tobytes(order="C")
        return header.encode("ascii") + data

    @classmethod
    def read_from(cls, stream: io.BufferedIOBase, period: float = 2 * np.pi) -> GridField:
        line = stream.readline().decode("ascii").split()
        if len(line) != 5:
            raise ValueError(f"malformed snapshot header: {line}")
        dim, N, rank, repr_, count = int(line[0]), int(line[1]), line[2], line[3], int(line[4])
        grid = TorusGrid(dim, N, period)
        shape = grid.rank_shape(rank) + grid.shape
        if int(np.prod(grid.rank_shape(rank), dtype=int)) != count:
            raise ValueError("component count does not match rank")
        dtype = np.dtype("<c16" if repr_ == "spectral" else "<f8")
        nbytes = int(np.prod(shape)) * dtype.itemsize
        buf = stream.read(nbytes)
        if len(buf) != nbytes:
            raise ValueError("truncated snapshot payload")
        values = np.frombuffer(buf, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
        return cls(grid, values, repr_)

    @classmethod
    def from_bytes(cls, data: bytes, period: float = 2 * np.pi) -> GridField:
        return cls.read_from(io.BytesIO(data), period)


def _require(f: GridField, representation: Representation) -> None:
    if f.representation != representation:
        raise ValueError(f"expected a {representation} field, got {f.representation}")


def forward_transform(f: GridField) -> GridField:
    _require(f, "physical")
    return GridField(f.grid, fft(f.grid, f.values), "spectral")


def inverse_transform(f: GridField) -> GridField:
    _require(f, "spectral")
    return GridField(f.grid, ifft(f.grid, f.values), "physical")


def spectral_gradient(f: GridField, ordering: Literal["D", "nabla"] = "D") -> GridField:
    """Gradient raising the rank by one.

    ``ordering="D"`` gives ``(Du)[i, j] = d_j u^i``; ``"nabla"`` its transpose.
    Scalars get the ordinary gradient either way.
    """
    if f.rank == "matrix":
        raise ValueError("gradient of a matrix field is not supported")
    g = gradient_array(f.grid, f.array())
    if f.rank == "vector" and ordering == "nabla":
        g = transpose_gradient(g)
    out = GridField(f.grid, np.ascontiguousarray(g))
    return out if f.representation == "physical" else out.spectral()


def divergence(f: GridField) -> GridField:
    if f.rank == "scalar":
        raise ValueError("divergence needs a vector or matrix field")
    return GridField(f.grid, divergence_array(f.grid, f.array()))


def deformation(u: GridField) -> GridField:
    if u.rank != "vector":
        raise ValueError("deformation tensor needs a vector field")
    return GridField(u.grid, deformation_array(u.grid, u.array()))


def dealias(f: GridField) -> GridField:
    _require(f, "spectral")
    return GridField(f.grid, f.values * f.grid.dealias_mask, "spectral")


def evaluate_offgrid(f: GridField, points) -> np.ndarray:
    """Band-limited interpolant of ``f`` at ``points`` (shape ``(dim, M)``)."""
    pts = np.mod(np.asarray(points, dtype=float), f.grid.period)
    return evaluate_offgrid_hat(f.grid, f.spectral().values, pts)


def lp_norm(f: GridField, p: float) -> float:
    _require(f, "physical")
    return lp_norm_array(f.grid, f.values, p)


def integrate(f: GridField):
    return integrate_array(f.grid, f.array())
