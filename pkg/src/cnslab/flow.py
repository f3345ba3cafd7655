"""Flow maps of Lagrangian velocity fields and the algebra around them.

The flow is ``X(t, y) = y + int_0^t v(tau, y) dtau`` (trapezoidal rule on the
timeline).  From the displacement ``X - y`` we build ``DX``, its determinant
``J``, inverse ``A`` and adjugate ``adj(DX) = J A`` with closed-form 2x2 and
3x3 formulas.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .littlewood_paley import DyadicFilterBank, besov_norm_array, trapezoid
from .spectral import (
    GridField,
    TorusGrid,
    dealias_array,
    divergence_array,
    evaluate_offgrid_array,
    evaluate_offgrid_hat,
    fft,
    gradient_array,
    transpose_gradient,
)

J_FLOOR = 0.1


class DiffeomorphismError(RuntimeError):
    """The flow map stopped being a (well-conditioned) diffeomorphism."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class VelocityTimeline:
    """Lagrangian velocity samples on a uniform time grid."""

    grid: TorusGrid
    times: np.ndarray
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or len(times) < 1:
            raise ValueError("times must be a non-empty 1-D array")
        if len(times) > 1:
            steps = np.diff(times)
            if np.any(steps <= 0):
                raise ValueError("times must be strictly increasing")
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
                raise ValueError("time step must be uniform")
        if self.samples.shape != (len(times), self.grid.dim) + self.grid.shape:
            raise ValueError(f"samples shape {self.samples.shape} does not match times/grid")
        object.__setattr__(self, "times", times)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def index_of(self, t: float) -> int:
        i = int(round((t - self.times[0]) / self.dt)) if self.dt else 0
        if i < 0 or i >= len(self.times) or abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a sample of the timeline [{self.times[0]}, {self.times[-1]}]")
        return i

    @classmethod
    def from_fields(cls, times, fields) -> VelocityTimeline:
        fields = list(fields)
        grid = fields[0].grid
        return cls(grid, np.asarray(times, dtype=float), np.array([f.array() for f in fields]))


# --------------------------------------------------------------------------
# pointwise matrix algebra
# --------------------------------------------------------------------------


def det_adj(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Determinant and adjugate of a field of 2x2 or 3x3 matrices."""
    n = M.shape[0]
    if n == 2:
        a, b, c, d = M[0, 0], M[0, 1], M[1, 0], M[1, 1]
        adj = np.array([[d, -b], [-c, a]])
        return a * d - b * c, adj
    if n == 3:
        adj = np.empty_like(M)
        for i in range(3):
            for j in range(3):
                # adj[i, j] = cofactor[j, i]
                r = [x for x in range(3) if x != j]
                c = [x for x in range(3) if x != i]
                minor = M[r[0], c[0]] * M[r[1], c[1]] - M[r[0], c[1]] * M[r[1], c[0]]
                adj[i, j] = minor if (i + j) % 2 == 0 else -minor
        det = sum(M[0, k] * adj[k, 0] for k in range(3))
        return det, adj
    raise ValueError(f"matrix dimension {n} not supported")


def matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.einsum("ik...,kj...->ij...", A, B)


def matvec(A: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("ik...,k...->i...", A, v)


def identity_field(grid: TorusGrid) -> np.ndarray:
    return np.broadcast_to(np.eye(grid.dim).reshape((grid.dim, grid.dim) + (1,) * grid.dim),
                           (grid.dim, grid.dim) + grid.shape).copy()


@dataclass(frozen=True)
class FlowMap:
    grid: TorusGrid
    t: float
    displacement: np.ndarray = field(repr=False)
    DX: np.ndarray = field(repr=False)
    J: np.ndarray = field(repr=False)
    A: np.ndarray = field(repr=False)
    adjDX: np.ndarray = field(repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def positions(self) -> np.ndarray:
        """``X(y)`` at the grid nodes (not wrapped)."""
        return self.grid.coords + self.displacement

    def as_fields(self) -> dict[str, GridField]:
        g = self.grid
        return {
            "displacement": GridField(g, self.displacement),
            "DX": GridField(g, self.DX),
            "J": GridField(g, self.J),
            "A": GridField(g, self.A),
            "adjDX": GridField(g, self.adjDX),
        }


def flow_from_displacement(grid: TorusGrid, displacement: np.ndarray, t: float = 0.0,
                           j_floor: float = J_FLOOR) -> FlowMap:
    DX = identity_field(grid) + gradient_array(grid, displacement)
    J, adj = det_adj(DX)
    jmin = float(np.min(J))
    if jmin < j_floor:
        raise DiffeomorphismError(
            f"flow lost invertibility at t={t:.6g}: min J = {jmin:.4g} < {j_floor:g}", time=t
        )
    return FlowMap(grid, float(t), displacement, DX, J, adj / J, adj)


def displacement_history(v: VelocityTimeline) -> np.ndarray:
    """Cumulative trapezoidal displacement at every timeline sample."""
    disp = np.zeros_like(v.samples)
    if len(v.times) > 1:
        incr = 0.5 * (v.samples[1:] + v.samples[:-1]) * np.diff(v.times).reshape((-1,) + (1,) * (v.samples.ndim - 1))
        disp[1:] = np.cumsum(incr, axis=0)
    return disp


def integrate_flow(v: VelocityTimeline, t: float, j_floor: float = J_FLOOR) -> FlowMap:
    """Flow map at sample time ``t``; raises on loss of invertibility."""
    i = v.index_of(t)
    disp = displacement_history(VelocityTimeline(v.grid, v.times[: i + 1], v.samples[: i + 1]))
    # check earlier times too so the error names the first offending one
    for n in range(1, i + 1):
        DX = identity_field(v.grid) + gradient_array(v.grid, disp[n])
        J, _ = det_adj(DX)
        if float(np.min(J)) < j_floor:
            raise DiffeomorphismError(
                f"flow lost invertibility at t={v.times[n]:.6g}: min J = {float(np.min(J)):.4g}",
                time=float(v.times[n]),
            )
    return flow_from_displacement(v.grid, disp[i], float(v.times[i]), j_floor)


def flow_sequence(v: VelocityTimeline, j_floor: float = J_FLOOR) -> list[FlowMap]:
    disp = displacement_history(v)
    return [flow_from_displacement(v.grid, disp[n], float(v.times[n]), j_floor) for n in range(len(v.times))]


# --------------------------------------------------------------------------
# twisted operators
# --------------------------------------------------------------------------


def twisted_deformation_array(grid: TorusGrid, w: np.ndarray, A: np.ndarray, Dw: np.ndarray | None = None) -> np.ndarray:
    if Dw is None:
        Dw = gradient_array(grid, w)
    M = matmul(Dw, A)
    return dealias_array(grid, 0.5 * (M + transpose_gradient(M)))


def twisted_divergence_array(grid: TorusGrid, w: np.ndarray, A: np.ndarray, Dw: np.ndarray | None = None) -> np.ndarray:
    if Dw is None:
        Dw = gradient_array(grid, w)
    return dealias_array(grid, np.einsum("ij...,ji...->...", Dw, A))


def twisted_deformation(w: GridField, A: GridField) -> GridField:
    """``D_A(w) = (Dw A + A^T grad w)/2``."""
    return GridField(w.grid, twisted_deformation_array(w.grid, w.array(), A.array()))


def twisted_divergence(w: GridField, A: GridField) -> GridField:
    """``div_A w = Dw : A``."""
    return GridField(w.grid, twisted_divergence_array(w.grid, w.array(), A.array()))


# --------------------------------------------------------------------------
# inverse map and compositions
# --------------------------------------------------------------------------


def invert_flow(X: FlowMap, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Inverse displacement ``e(x) = X^{-1}(x) - x`` at the grid nodes.

    Damped fixed-point iteration ``y <- x - d(y)``; switches to Newton when
    the observed contraction factor reaches 0.9.
    """
    if "inverse" in X._cache:
        return X._cache["inverse"]
    grid = X.grid
    if float(np.min(X.J)) <= 0:
        raise DiffeomorphismError("cannot invert a flow with non-positive Jacobian", time=X.t)
    if float(np.max(np.abs(X.displacement))) >= grid.period / 4:
        raise DiffeomorphismError("displacement exceeds a quarter period", time=X.t)
    d_hat = fft(grid, X.displacement)
    x = grid.coords.reshape(grid.dim, -1)
    y = x - X.displacement.reshape(grid.dim, -1)
    prev = np.inf
    newton = False
    Dd_hat = None
    for _ in range(max_iter):
        r = y + evaluate_offgrid_hat(grid, d_hat, y) - x
        res = float(np.max(np.abs(r)))
        if res <= tol:
            break
        if not newton and prev < np.inf and res > 0.9 * prev:
            newton = True
            Dd_hat = fft(grid, gradient_array(grid, X.displacement))
        if newton:
            M = evaluate_offgrid_hat(grid, Dd_hat, y) + np.eye(grid.dim)[:, :, None]
            det, adj = det_adj(M)
            y = y - matvec(adj, r) / det
        else:
            y = y - r
        prev = res
    else:
        raise DiffeomorphismError(f"inverse map did not converge (residual {res:.3e})", time=X.t)
    e = (y - x).reshape((grid.dim,) + grid.shape)
    X._cache["inverse"] = e
    return e


def inverse_residual(X: FlowMap, e: np.ndarray) -> float:
    """``max |X(X^{-1}(x)) - x|`` at the grid nodes."""
    grid = X.grid
    y = grid.coords + e
    Xy = y + evaluate_offgrid_array(grid, X.displacement, y)
    return float(np.max(np.abs(Xy - grid.coords)))


def pullback_array(grid: TorusGrid, f: np.ndarray, X: FlowMap) -> np.ndarray:
    return evaluate_offgrid_array(grid, f, np.mod(X.positions, grid.period))


def pushforward_array(grid: TorusGrid, f: np.ndarray, X: FlowMap) -> np.ndarray:
    e = invert_flow(X)
    return evaluate_offgrid_array(grid, f, np.mod(grid.coords + e, grid.period))


def pullback(f: GridField, X: FlowMap) -> GridField:
    """``f o X`` sampled on the Lagrangian grid."""
    return GridField(f.grid, pullback_array(f.grid, f.array(), X))


def pushforward(f: GridField, X: FlowMap) -> GridField:
    """``f o X^{-1}`` sampled on the Eulerian grid."""
    return GridField(f.grid, pushforward_array(f.grid, f.array(), X))


# --------------------------------------------------------------------------
# identity checks
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ResidualReport:
    resolution: int
    dt: float
    residuals: dict[str, float]

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values()) if self.residuals else 0.0

    def rows(self) -> list[tuple[str, int, float, float]]:
        return [(k, self.resolution, self.dt, v) for k, v in self.residuals.items()]


def algebra_residuals(X: FlowMap) -> dict[str, float]:
    """``A DX = Id`` and ``adj(DX) = J A`` defects in max norm."""
    I = identity_field(X.grid)
    return {
        "inverse": float(np.max(np.abs(matmul(X.A, X.DX) - I))),
        "adjugate": float(np.max(np.abs(X.adjDX - X.J * X.A))),
    }


def check_div_identity(H: GridField, X: FlowMap) -> ResidualReport:
    """Change-of-variables identities for gradients, divergences and Laplacians.

    For a scalar ``K``: ``grad_x K o X = J^-1 div_y(adj(DX) K o X)``.
    For a vector ``H``: the divergence identity plus the derived Laplacian
    and grad-div identities.  Products are taken pointwise without
    dealiasing; the compositions are not band-limited anyway.
    """
    grid = H.grid
    h = H.array()
    hbar = pullback_array(grid, h, X)
    invJ = 1.0 / X.J
    res = {}
    if H.rank == "scalar":
        lhs = pullback_array(grid, gradient_array(grid, h), X)
        rhs = invJ * divergence_array(grid, X.adjDX * hbar)
        res["gradient"] = float(np.max(np.abs(lhs - rhs)))
    elif H.rank == "vector":
        lhs = pullback_array(grid, divergence_array(grid, h), X)
        rhs = invJ * divergence_array(grid, matvec(X.adjDX, hbar))
        res["divergence"] = float(np.max(np.abs(lhs - rhs)))

        grad_h = transpose_gradient(gradient_array(grid, h))
        lap = divergence_array(grid, grad_h)
        lhs = pullback_array(grid, lap, X)
        nabla_bar = transpose_gradient(gradient_array(grid, hbar))
        M = matmul(X.adjDX, matmul(transpose_gradient(X.A), nabla_bar))
        rhs = invJ * divergence_array(grid, M)
        res["laplacian"] = float(np.max(np.abs(lhs - rhs)))

        lhs = pullback_array(grid, gradient_array(grid, divergence_array(grid, h)), X)
        divA = np.einsum("ij...,ji...->...", gradient_array(grid, hbar), X.A)
        rhs = invJ * divergence_array(grid, X.adjDX * divA)
        res["grad_div"] = float(np.max(np.abs(lhs - rhs)))
    else:
        raise ValueError("identity check needs a scalar or vector field")
    return ResidualReport(grid.N, 0.0, res)


@dataclass(frozen=True)
class JacobiReport:
    time: float
    dt: float
    resolution: int
    residual: float
    lhs_norm: float


def _flux(z: np.ndarray, u: np.ndarray, dim: int) -> np.ndarray:
    # scalar z: z u ; vector z: M[i, j] = u_i z_j
    if z.ndim == dim:
        return z * u
    return np.einsum("i...,j...->ij...", u, z)


def check_jacobi(z_traj, v: VelocityTimeline, t: float) -> JacobiReport:
    """Compare ``d/dt (J z o X)`` with ``J (dz/dt + div(z u)) o X`` at time ``t``.

    ``z_traj`` holds Eulerian samples of ``z`` on the timeline's times and
    ``v`` is the Lagrangian velocity generating the flow.  Time derivatives
    are central differences; ``t`` must be an interior sample.
    """
    grid = v.grid
    z = np.asarray([f.array() if isinstance(f, GridField) else f for f in z_traj])
    if len(z) != len(v.times):
        raise ValueError("z trajectory and velocity timeline have different lengths")
    n = v.index_of(t)
    if n == 0 or n == len(v.times) - 1:
        raise ValueError("jacobi check needs an interior time sample")
    dt = v.dt
    disp = displacement_history(VelocityTimeline(grid, v.times[: n + 2], v.samples[: n + 2]))
    flows = {m: flow_from_displacement(grid, disp[m], float(v.times[m])) for m in (n - 1, n, n + 1)}
    Jz = {m: flows[m].J * pullback_array(grid, z[m], flows[m]) for m in (n - 1, n + 1)}
    lhs = (Jz[n + 1] - Jz[n - 1]) / (2 * dt)
    X = flows[n]
    u_euler = pushforward_array(grid, v.samples[n], X)
    dz = (z[n + 1] - z[n - 1]) / (2 * dt)
    rhs_euler = dz + divergence_array(grid, _flux(z[n], u_euler, grid.dim))
    rhs = X.J * pullback_array(grid, rhs_euler, X)
    return JacobiReport(float(v.times[n]), dt, grid.N, float(np.max(np.abs(lhs - rhs))),
                        float(np.max(np.abs(lhs))))


# --------------------------------------------------------------------------
# flow estimates
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FlowEstimateReport:
    ratios: dict[str, float]
    numerators: dict[str, float]
    denominator: float
    smallness: float
    smallness_violated: bool
    exact_zero: bool


def _l1_besov_gradient(v: VelocityTimeline, bank: DyadicFilterBank, s: float, p: float) -> float:
    norms = [besov_norm_array(bank, gradient_array(v.grid, v.samples[n]), s, p) for n in range(len(v.times))]
    return trapezoid(norms, v.times)


def flow_estimate_report(
    v: VelocityTimeline,
    bank: DyadicFilterBank,
    p: float = 2.0,
    smallness_c: float = 0.1,
    v2: VelocityTimeline | None = None,
) -> FlowEstimateReport:
    """Sup-in-time ratios of flow perturbations to ``||Dv||_{L^1_T(B^{n/p})}``.

    With ``v2`` given, reports difference ratios of the two flows against
    ``||D(v2 - v)||_{L^1_T(B^{n/p})}`` instead.
    """
    grid = v.grid
    s = grid.dim / p
    smallness = _l1_besov_gradient(v, bank, s, p)
    I = identity_field(grid)
    flows = flow_sequence(v)
    num = {"A": 0.0, "adj": 0.0, "J": 0.0, "Jinv": 0.0}
    if v2 is None:
        denom = smallness
        for X in flows:
            num["A"] = max(num["A"], besov_norm_array(bank, I - X.A, s, p))
            num["adj"] = max(num["adj"], besov_norm_array(bank, I - X.adjDX, s, p))
            num["J"] = max(num["J"], besov_norm_array(bank, X.J - 1.0, s, p))
            num["Jinv"] = max(num["Jinv"], besov_norm_array(bank, 1.0 / X.J - 1.0, s, p))
    else:
        smallness = max(smallness, _l1_besov_gradient(v2, bank, s, p))
        diff = VelocityTimeline(grid, v.times, v2.samples - v.samples)
        denom = _l1_besov_gradient(diff, bank, s, p)
        for X1, X2 in zip(flows, flow_sequence(v2)):
            num["A"] = max(num["A"], besov_norm_array(bank, X2.A - X1.A, s, p))
            num["adj"] = max(num["adj"], besov_norm_array(bank, X2.adjDX - X1.adjDX, s, p))
            num["J"] = max(num["J"], besov_norm_array(bank, X2.J - X1.J, s, p))
            num["Jinv"] = max(num["Jinv"], besov_norm_array(bank, 1.0 / X2.J - 1.0 / X1.J, s, p))
    exact_zero = denom == 0.0
    if exact_zero:
        ratios = {k: 0.0 if val == 0.0 else np.inf for k, val in num.items()}
    else:
        ratios = {k: val / denom for k, val in num.items()}
    return FlowEstimateReport(ratios, num, denom, smallness, smallness > smallness_c, exact_zero)
