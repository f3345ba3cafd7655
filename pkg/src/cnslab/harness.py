"""Scenario files, batch pipelines and run manifests."""

from __future__ import annotations

import ast
import json
import logging
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import flow as fl
from .constitutive import ConstitutiveLaw, check_vacuum, law_from_config
from .estimates import KINDS, random_band_field, verify_estimates
from .eulerian import (
    EulerianState,
    equivalence_experiment,
    integrate_eulerian,
    refinement_study,
)
from .lagrangian import LagrangianState, SolverConfig, fixed_point_residual, picard_solve
from .littlewood_paley import besov_norm_array, build_filter_bank
from .reports import (
    COMPARISON_HEADER,
    CONVERGENCE_HEADER,
    ESTIMATE_HEADER,
    NORMS_HEADER,
    RESIDUAL_HEADER,
    read_checkpoint,
    write_checkpoint,
    write_csv,
)
from .spectral import GridField, TorusGrid, fft, ifft

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "CNSLAB_OUTPUT_ROOT"
PIPELINES = ("lagrangian", "eulerian", "equivalence", "kinematics", "estimates")
BUILTIN = ("quiescent", "heat-mode", "smallwave")

DEFAULT_TOLERANCES = {
    "mass": 1e-10,
    "momentum": 1e-8,
    "energy": 1e-8,
    "residual_factor": 10.0,
    "eulerian_drift": 1e-8,
    "algebra": 1e-10,
    "refinement": 4.0,
}


# --------------------------------------------------------------------------
# expressions
# --------------------------------------------------------------------------

_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "tanh": np.tanh, "sinh": np.sinh, "cosh": np.cosh, "abs": np.abs,
}
_CONSTS = {"pi": np.pi, "e": np.e}
_ALLOWED = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Mod,
)


def _compile(expr: str, names: set[str]):
    tree = ast.parse(expr, mode="eval")
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ValueError(f"disallowed syntax {type(node).__name__} in expression {expr!r}")
        if isinstance(node, ast.Name) and node.id not in names:
            raise ValueError(f"unknown name {node.id!r} in expression {expr!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ValueError(f"unknown function in expression {expr!r}")
    return compile(tree, "<scenario>", "eval")


def evaluate_expression(expr: str, coords: np.ndarray) -> np.ndarray:
    """Evaluate a closed-form expression in ``x1..xn`` on grid coordinates."""
    env = dict(_FUNCS, **_CONSTS, **{f"x{i + 1}": c for i, c in enumerate(coords)})
    code = _compile(expr, set(env))
    value = eval(code, {"__builtins__": {}}, env)
    return np.broadcast_to(np.asarray(value, dtype=float), coords.shape[1:]).copy()


# --------------------------------------------------------------------------
# scenarios
# --------------------------------------------------------------------------


def parse_config(text: str) -> dict[str, str]:
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        cfg[key.strip()] = value.strip()
    return cfg


def _bool(v: str) -> bool:
    return v.strip().lower() in ("1", "true", "yes", "on")


@dataclass
class Scenario:
    name: str
    dim: int
    resolution: int
    law: ConstitutiveLaw
    rho0: str
    u0: tuple[str, ...]
    theta0: str
    solver: SolverConfig
    pipeline: tuple[str, ...]
    tolerances: dict[str, float]
    options: dict[str, str] = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def from_config(cls, cfg: dict[str, str]) -> Scenario:
        dim = int(cfg.get("dim", 2))
        solver_kwargs = {}
        for key, conv in (
            ("dt", float), ("T", float), ("picard_tol", float), ("max_picard", int),
            ("smallness_c", float), ("eta", float), ("p", float), ("vacuum_floor", float),
        ):
            if f"solver.{key}" in cfg:
                solver_kwargs[key] = conv(cfg[f"solver.{key}"])
        cut = cfg.get("solver.cutoff_m", "auto")
        solver_kwargs["cutoff_m"] = None if cut == "auto" else int(cut)
        seed = int(cfg.get("seed", 0))
        solver_kwargs["seed"] = seed
        pipeline = tuple(p.strip() for p in cfg.get("pipeline", "lagrangian").split(",") if p.strip())
        unknown = set(pipeline) - set(PIPELINES)
        if unknown:
            raise ValueError(f"unknown pipeline stages {sorted(unknown)}; expected {PIPELINES}")
        tols = dict(DEFAULT_TOLERANCES)
        tols.update({k[4:]: float(v) for k, v in cfg.items() if k.startswith("tol.")})
        u0 = tuple(cfg.get(f"u0.{i + 1}", "0") for i in range(dim))
        scen = cls(
            name=cfg.get("name", "scenario"),
            dim=dim,
            resolution=int(cfg.get("resolution", 32)),
            law=law_from_config(cfg),
            rho0=cfg.get("rho0", "1"),
            u0=u0,
            theta0=cfg.get("theta0", "1"),
            solver=SolverConfig(**solver_kwargs),
            pipeline=pipeline,
            tolerances=tols,
            options={k: v for k, v in cfg.items() if k.split(".")[0] in ("equivalence", "estimates", "output")},
            seed=seed,
        )
        scen.validate()
        return scen

    @property
    def grid(self) -> TorusGrid:
        return TorusGrid(self.dim, self.resolution)

    def data(self, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rho = evaluate_expression(self.rho0, coords)
        u = np.array([evaluate_expression(e, coords) for e in self.u0])
        theta = evaluate_expression(self.theta0, coords)
        return rho, u, theta

    def fields(self, grid: TorusGrid | None = None) -> tuple[GridField, GridField, GridField]:
        grid = grid or self.grid
        return tuple(GridField(grid, a) for a in self.data(grid.coords))

    def validate(self, tol: float = 1e-10) -> None:
        grid = self.grid
        rho, u, theta = self.data(grid.coords)
        check_vacuum(rho, self.solver.vacuum_floor)
        for name, a in (("rho0", rho), ("u0", u), ("theta0", theta)):
            a_hat = fft(grid, a)
            total = float(np.max(np.abs(a_hat)))
            tail = float(np.max(np.abs(a_hat * ~grid.dealias_mask)))
            if total > 0 and tail > tol * total:
                raise ValueError(f"{name} is not band-limited at N={grid.N} (tail {tail / total:.2e})")

    def option(self, key: str, default: str) -> str:
        return self.options.get(key, default)


def load_scenario(ref: str | Path) -> Scenario:
    """Load a scenario file, or one of the builtin scenarios by name."""
    path = Path(ref)
    if path.is_file():
        text = path.read_text()
    elif str(ref) in BUILTIN:
        text = resources.files("cnslab").joinpath("scenarios", f"{ref}.cfg").read_text()
    else:
        raise FileNotFoundError(f"no scenario file or builtin named {ref!r}; builtins: {', '.join(BUILTIN)}")
    return Scenario.from_config(parse_config(text))


# --------------------------------------------------------------------------
# manifest
# --------------------------------------------------------------------------


@dataclass
class RunManifest:
    scenario: str
    seed: int
    output_dir: Path
    artifacts: list[str] = field(default_factory=list)
    checks: dict[str, dict] = field(default_factory=dict)
    diagnostics: dict[str, float | int | str | None] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    MANIFEST = "manifest.json"

    @property
    def passed(self) -> bool:
        return not self.errors and all(c["passed"] for c in self.checks.values())

    def add_artifact(self, path: Path) -> None:
        name = Path(path).relative_to(self.output_dir).as_posix()
        if name not in self.artifacts:
            self.artifacts.append(name)

    def check(self, name: str, value: float, tolerance: float, passed: bool | None = None, relation: str = "<=") -> bool:
        if passed is None:
            passed = bool(value <= tolerance) if relation == "<=" else bool(value >= tolerance)
        self.checks[name] = {"value": float(value), "tolerance": float(tolerance), "relation": relation,
                             "passed": bool(passed)}
        log.info("%-28s %-4s value=%.3e tol%s%.3e", name, "PASS" if passed else "FAIL", value, relation, tolerance)
        return bool(passed)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "artifacts": sorted(self.artifacts),
            "checks": self.checks,
            "diagnostics": self.diagnostics,
            "errors": self.errors,
            "passed": self.passed,
        }

    def write(self) -> Path:
        path = self.output_dir / self.MANIFEST
        if self.MANIFEST not in self.artifacts:
            self.artifacts.append(self.MANIFEST)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, run_dir: Path) -> RunManifest:
        d = json.loads((Path(run_dir) / cls.MANIFEST).read_text())
        m = cls(d["scenario"], d["seed"], Path(run_dir), list(d["artifacts"]), d["checks"], d["diagnostics"], d["errors"])
        return m

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1


def output_root(override: str | Path | None = None) -> Path:
    return Path(override or os.environ.get(OUTPUT_ROOT_ENV, "runs"))


# --------------------------------------------------------------------------
# run
# --------------------------------------------------------------------------


def _finite_max(values) -> float:
    vals = [v for v in values if np.isfinite(v)]
    return max(vals) if vals else 0.0


def run(scenario: Scenario, out_root: str | Path | None = None) -> RunManifest:
    """Execute the scenario's pipeline stages and write reports under ``out_root/<name>``."""
    out = output_root(out_root) / scenario.name
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(scenario.name, scenario.seed, out)
    tol = scenario.tolerances
    grid = scenario.grid
    rho0, u0, theta0 = scenario.fields(grid)
    cfg = scenario.solver
    law = scenario.law
    lag = eul = None

    def stage(name, fn):
        if name not in scenario.pipeline:
            return None
        try:
            return fn()
        except Exception as exc:
            log.exception("stage %s failed", name)
            man.errors.append(f"{name}: {type(exc).__name__}: {exc}")
            return None

    def lagrangian_stage():
        state = LagrangianState.from_temperature(rho0, u0, theta0)
        sol = picard_solve(state, law, cfg)
        rep = sol.report
        man.add_artifact(write_csv(out / "convergence.csv", CONVERGENCE_HEADER, rep.csv_rows()))
        man.add_artifact(write_checkpoint(out / "lagrangian.chk", grid, sol.times,
                                          {"u": sol.u, "K": sol.K, "rho_bar": sol.rho_bar}))
        man.diagnostics.update(
            picard_iterations=rep.iterations, horizon=rep.horizon, restarts=rep.restarts,
            cutoff_m=rep.cutoff_m, multiplier_sample=rep.multiplier_sample,
        )
        man.check("picard_converged", rep.iterations, cfg.max_picard, passed=rep.converged)
        man.check("contraction_ratio", _finite_max(rep.ratios), 1.0, passed=_finite_max(rep.ratios) < 1.0,
                  relation="<")
        man.check("smallness", rep.smallness[-1], cfg.smallness_c)
        man.check("mass_identity", rep.mass_drift[-1], tol["mass"])
        man.check("momentum_drift", rep.momentum_drift[-1], tol["momentum"])
        man.check("energy_drift", rep.energy_drift[-1], tol["energy"])
        res = fixed_point_residual(sol, state, law, cfg)
        man.check("fixed_point_residual", res, tol["residual_factor"] * cfg.picard_tol)
        return sol

    def eulerian_stage():
        horizon = float(lag.times[-1]) if lag is not None else cfg.T
        traj = integrate_eulerian(EulerianState.from_temperature(rho0, u0, theta0), law, horizon, cfg.dt)
        man.add_artifact(write_checkpoint(out / "eulerian.chk", grid, traj.times,
                                          {"rho": traj.rho, "m": traj.m, "E": traj.E}))
        for key, value in traj.drifts().items():
            man.check(f"eulerian_{key}_drift", value, tol["eulerian_drift"])
        return traj

    def equivalence_stage():
        rep = equivalence_experiment(rho0, u0, theta0, law, cfg, lagrangian=lag, eulerian=eul)
        if rep.errors:
            raise RuntimeError("; ".join(rep.errors))
        rows = list(rep.rows)
        if rep.note:
            man.diagnostics["equivalence_note"] = rep.note
        if "equivalence" in tol:
            man.check("equivalence_discrepancy", rep.max_discrepancy, tol["equivalence"])
        else:
            man.diagnostics["equivalence_discrepancy"] = rep.max_discrepancy
        if _bool(scenario.option("equivalence.refine", "false")):
            study = refinement_study(scenario.data, scenario.dim, scenario.resolution // 2, law, cfg)
            rows = study.coarse.rows + study.fine.rows
            man.check("equivalence_refinement", study.factor, tol["refinement"], relation=">=")
        man.add_artifact(write_csv(out / "comparison.csv", COMPARISON_HEADER, rows))

    def kinematics_stage():
        if lag is None:
            raise RuntimeError("kinematics needs the lagrangian stage")
        timeline = fl.VelocityTimeline(grid, lag.times, lag.u)
        X = fl.integrate_flow(timeline, float(lag.times[-1]))
        alg = fl.algebra_residuals(X)
        rep = fl.check_div_identity(u0, X)
        rows = [(k, grid.N, cfg.dt, v) for k, v in alg.items()] + [(k, grid.N, cfg.dt, v) for k, v in rep.residuals.items()]
        man.add_artifact(write_csv(out / "kinematics.csv", RESIDUAL_HEADER, rows))
        man.check("flow_algebra", max(alg.values()), tol["algebra"])

    def estimates_stage():
        trials = int(scenario.option("estimates.trials", "20"))
        rows = []
        for kind in KINDS:
            r = verify_estimates(kind, trials, grid, seed=scenario.seed)
            rows.extend(r.rows)
            if kind == "bernstein":
                ok = r.min_ratio >= 0.5 * (1 - 1e-9) and r.max_ratio <= 2.0 * (1 + 1e-9)
                man.check("bernstein_range", r.max_ratio, 2.0 * (1 + 1e-9), passed=ok)
            else:
                man.check(f"estimate_{kind}_finite", r.max_ratio, float("inf"), passed=r.finite, relation="<")
        man.add_artifact(write_csv(out / "estimates.csv", ESTIMATE_HEADER, rows))

    lag = stage("lagrangian", lagrangian_stage)
    eul = stage("eulerian", eulerian_stage)
    stage("equivalence", equivalence_stage)
    stage("kinematics", kinematics_stage)
    stage("estimates", estimates_stage)
    man.write()
    return man


# --------------------------------------------------------------------------
# verify
# --------------------------------------------------------------------------


def sample_flow(grid: TorusGrid, eps: float = 1.0) -> fl.FlowMap:
    """Analytic displacement used for identity checks (min J well above 1/2 for eps <= 1)."""
    x, y = grid.coords[0], grid.coords[1]
    d = np.zeros((grid.dim,) + grid.shape)
    d[0] = eps * (0.15 * np.sin(3 * y) + 0.05 * np.cos(x))
    d[1] = eps * (0.12 * np.cos(3 * x + 1) + 0.03 * np.sin(y))
    if grid.dim == 3:
        z = grid.coords[2]
        d[2] = eps * 0.1 * np.sin(x + z)
    return fl.flow_from_displacement(grid, d)


def _identity_fields(grid: TorusGrid) -> tuple[GridField, GridField]:
    x, y = grid.coords[0], grid.coords[1]
    H = np.zeros((grid.dim,) + grid.shape)
    H[0] = np.sin(4 * x) * np.cos(y)
    H[1] = np.cos(4 * y + x)
    return GridField(grid, np.sin(4 * x + 2 * y)), GridField(grid, H)


def verify_all(
    resolutions=(32, 64),
    trials: int = 100,
    seed: int = 0,
    dim: int = 2,
    out_root: str | Path | None = None,
) -> RunManifest:
    """Module invariants at each resolution plus cross-resolution trends."""
    out = output_root(out_root) / "verify"
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest("verify", seed, out)
    resolutions = sorted(int(r) for r in resolutions)
    identity_rows, estimate_rows = [], []
    identities: dict[int, dict[str, float]] = {}
    ratios: dict[str, dict[int, float]] = {k: {} for k in KINDS}
    for N in resolutions:
        grid = TorusGrid(dim, N)
        bank = build_filter_bank(grid)
        mask = bank.resolved_mask
        pou = float(np.max(np.abs(bank.weight_sum()[mask] - 1.0)))
        man.check(f"partition_of_unity_N{N}", pou, 1e-12)

        f = random_band_field(grid, np.random.default_rng([seed, 10_000 + N]), None)
        f_hat = fft(grid, f)
        recon = ifft(grid, f_hat * bank.weight_sum())
        man.check(f"reconstruction_N{N}", float(np.max(np.abs(f - np.mean(f) - recon))), 1e-12)

        X = sample_flow(grid)
        alg = fl.algebra_residuals(X)
        man.check(f"flow_algebra_N{N}", max(alg.values()), 1e-10)
        scalar, vector = _identity_fields(grid)
        res = dict(alg)
        res.update(fl.check_div_identity(scalar, X).residuals)
        res.update(fl.check_div_identity(vector, X).residuals)
        identities[N] = res
        identity_rows.extend((k, N, 0.0, v) for k, v in res.items())

        for kind in KINDS:
            r = verify_estimates(kind, trials, grid, seed=seed, bank=bank)
            estimate_rows.extend(r.rows)
            ratios[kind][N] = r.max_ratio
            if kind == "bernstein":
                ok = r.min_ratio >= 0.5 * (1 - 1e-9) and r.max_ratio <= 2.0 * (1 + 1e-9)
                man.check(f"bernstein_range_N{N}", r.max_ratio, 2.0 * (1 + 1e-9), passed=ok)

    if len(resolutions) > 1:
        for name in ("gradient", "divergence", "laplacian", "grad_div"):
            seq = [identities[N][name] for N in resolutions]
            decreasing = all(b < a for a, b in zip(seq, seq[1:]))
            man.check(f"identity_{name}_refines", seq[-1], seq[0], passed=decreasing)
        for kind in ("product", "composition", "commutator_comm1", "commutator_comm2"):
            vals = list(ratios[kind].values())
            spread = max(vals) / min(vals)
            man.check(f"estimate_{kind}_stability", spread, 2.0)
    man.add_artifact(write_csv(out / "identities.csv", RESIDUAL_HEADER, identity_rows))
    man.add_artifact(write_csv(out / "estimates.csv", ESTIMATE_HEADER, estimate_rows))
    man.write()
    return man


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

_SOBOLEV_SHIFT = {"u": -1.0, "K": -2.0, "rho_bar": 0.0, "rho": 0.0, "m": -1.0, "E": -2.0}


def report(run_dir: str | Path, p: float = 2.0) -> Path:
    """Besov and max norms versus time for every checkpoint in a run directory."""
    run_dir = Path(run_dir)
    man = RunManifest.load(run_dir)
    rows = []
    for chk, prefix in (("lagrangian.chk", "lagrangian"), ("eulerian.chk", "eulerian")):
        path = run_dir / chk
        if not path.exists():
            continue
        grid, times, fields = read_checkpoint(path)
        bank = build_filter_bank(grid)
        for n, t in enumerate(times):
            for name, traj in fields.items():
                s = grid.dim / p + _SOBOLEV_SHIFT.get(name, 0.0)
                a = traj[n]
                rows.append((float(t), f"{prefix}.{name}", besov_norm_array(bank, a, s, p), float(np.max(np.abs(a)))))
    out = write_csv(run_dir / "norms.csv", NORMS_HEADER, rows)
    man.add_artifact(out)
    man.write()
    return out
