"""Time stepping of the two-phase flow: initialization, steps, energy, runs."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .assembly import (
    DiscreteState,
    PhaseParams,
    StepGeometry,
    assemble_coupled_system,
    assemble_phase_block,
    build_geometry,
    curvature_from_y,
    explicit_forcing,
)
from .mesh import (
    MeshError,
    TwoPhaseSurfaceMesh,
    enclosed_volume,
    euler_characteristic,
    interface_length,
    surface_area,
    validate,
    weak_conormal_init,
)
from .multipliers import explicit_multipliers, implicit_multiplier_step
from .solver import CoupledSolver, SolverConfig

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "step", "time", "energy", "area1", "area2", "gamma_length", "volume",
    "lambdaV", "lambdaA1", "lambdaA2", "krylov_iters", "fp_passes",
)


class DegenerationError(RuntimeError):
    """The mesh violates the non-degeneracy assumptions after a step."""

    def __init__(self, message, state=None, mesh=None):
        super().__init__(message)
        self.state = state
        self.mesh = mesh


@dataclass
class DiagnosticsRecord:
    step: int
    time: float
    energy: float
    area1: float
    area2: float
    gamma_length: float
    volume: float
    lambdaV: float
    lambdaA1: float
    lambdaA2: float
    krylov_iters: int
    fp_passes: int
    conformality: float = 0.0
    solver_method: str = ""
    residual: float = 0.0
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in CSV_COLUMNS}

    def is_finite(self) -> bool:
        return all(np.isfinite(float(v)) for v in self.row().values())


# -- initialization -----------------------------------------------------------------
def sphere_radius(x: np.ndarray, rtol: float = 1e-10) -> float | None:
    """Radius R if all points lie on the origin-centred sphere of radius R."""
    r = np.linalg.norm(x, axis=1)
    R = float(r.mean())
    if R > 0 and np.max(np.abs(r - R)) <= rtol * R:
        return R
    return None


def initialize_state(mesh: TwoPhaseSurfaceMesh, params: PhaseParams,
                     geom: StepGeometry | None = None) -> DiscreteState:
    """Initial curvatures, conormals and curve curvature from the initial mesh."""
    geom = build_geometry(mesh, params.theta) if geom is None else geom
    curve = geom.curve
    ng = 0 if curve is None else curve.x.shape[0]
    Y, kappa, m = {}, {}, {}
    for i in mesh.phases:
        pg = geom.phases[i]
        x = mesh.vertices[pg.vertices]
        m[i] = weak_conormal_init(mesh, i) if ng else np.zeros((0, 3))
        R = sphere_radius(x)
        if R is not None:
            k = -(2.0 / R) * pg.omega
        else:
            rhs = -(pg.stiffness @ x)
            if ng:
                rhs[pg.gamma_local] += curve.mass[:, None] * m[i]
            k = rhs / pg.mass[:, None]
        kappa[i] = k
        Y[i] = params.a(i) * (k - params.kb(i) * pg.omega)
    if ng:
        kg = -(curve.stiffness @ curve.x) / curve.mass[:, None]
    else:
        kg = np.zeros((0, 3))
    phi = np.zeros((ng, 3)) if (params.c1 and ng) else None
    return DiscreteState(mesh.vertices.copy(), Y, kappa, m, kg, phi)


# -- diagnostics -----------------------------------------------------------------------
def discrete_energy(mesh: TwoPhaseSurfaceMesh, kappa: dict, kappa_gamma: np.ndarray, m: dict,
                    params: PhaseParams, geom: StepGeometry | None = None) -> float:
    """Bending, Gaussian and line energy of new curvatures on the mesh ``mesh``."""
    geom = build_geometry(mesh, params.theta) if geom is None else geom
    E = 0.0
    for i in mesh.phases:
        pg = geom.phases[i]
        ed = pg.elem
        d = kappa[i][ed.faces] - params.kb(i) * ed.normals[:, None, :]
        E += 0.5 * params.a(i) * float(np.sum(ed.areas / 3.0 * np.sum(d * d, axis=(1, 2))))
        ag = params.ag(i)
        if ag != 0.0:
            gauss = 2.0 * np.pi * euler_characteristic(mesh, i)
            if geom.curve is not None:
                gauss += float(geom.curve.mass @ np.sum(kappa_gamma * m[i], axis=1))
            E += ag * gauss
    if geom.curve is not None:
        E += params.sigma * float(geom.curve.lengths.sum())
    return E


def state_energy(state: DiscreteState, mesh: TwoPhaseSurfaceMesh, params: PhaseParams) -> float:
    return discrete_energy(mesh, state.kappa, state.kappa_gamma, state.m, params)


def conformality_residual(geom: StepGeometry, X_new: np.ndarray) -> float:
    """Largest tangential part of the discrete Laplacian of the new positions.

    Evaluated at interior phase nodes, relative to the H1 norm of the positions.
    """
    worst = 0.0
    for i, pg in geom.phases.items():
        x = X_new[pg.vertices]
        ax = pg.stiffness @ x
        w = pg.omega
        tang = ax - w * (np.sum(ax * w, axis=1) / np.sum(w * w, axis=1))[:, None]
        tang[pg.gamma_local] = 0.0
        h1 = np.sqrt(float(np.sum(pg.mass[:, None] * x * x) + np.sum(x * ax)))
        worst = max(worst, float(np.max(np.linalg.norm(tang, axis=1))) / h1)
    return worst


def _record(step, time, energy, mesh, lambdas, its, passes, **kw) -> DiagnosticsRecord:
    areas = [surface_area(mesh, i) if i in mesh.phases else 0.0 for i in (1, 2)]
    return DiagnosticsRecord(
        step, time, energy, areas[0], areas[1], interface_length(mesh), enclosed_volume(mesh),
        float(lambdas[0]), float(lambdas[1]), float(lambdas[2]), int(its), int(passes), **kw,
    )


def initial_record(state: DiscreteState, mesh: TwoPhaseSurfaceMesh, params: PhaseParams) -> DiagnosticsRecord:
    return _record(state.step, state.time, state_energy(state, mesh, params), mesh, state.lambdas, 0, 0)


def _warm_start(system, state: DiscreteState) -> np.ndarray:
    """Level-m fields as the Krylov initial guess."""
    dX = None if state.X_prev is None else state.X - state.X_prev
    return system.pack({"Y": state.Y, "m": state.m, "dX": dX,
                        "kappa_gamma": state.kappa_gamma, "Phi": state.Phi})


# -- one step -----------------------------------------------------------------------------
@dataclass
class StepOutput:
    state: DiscreteState
    mesh: TwoPhaseSurfaceMesh
    record: DiagnosticsRecord
    geometry: StepGeometry


def time_step(state: DiscreteState, mesh: TwoPhaseSurfaceMesh, params: PhaseParams,
              solver_config: SolverConfig | None = None, check_mesh: bool = True) -> StepOutput:
    """Advance one time step; returns the new state, mesh and diagnostics."""
    if state.X.shape != mesh.vertices.shape:
        raise ValueError(f"state has {state.X.shape[0]} vertices, mesh has {mesh.n_vertices}")
    geom = build_geometry(mesh, params.theta)
    labels = geom.labels
    forcing = {i: explicit_forcing(geom, state, params, i) for i in labels}
    passes = 0
    if params.conserve != "none" and params.multiplier_mode == "implicit":
        blocks = {i: assemble_phase_block(geom, params, state, i, forcing=forcing[i]) for i in labels}
        system = assemble_coupled_system(blocks, mesh, params)
        solver = CoupledSolver(system, solver_config)
        res = implicit_multiplier_step(mesh, params, state, geom=geom, system=system,
                                       solver=solver, forcing=forcing, x0=_warm_start(system, state))
        fields, kappa, lambdas = res.fields, res.kappa, res.lambdas
        its, passes = res.krylov_iterations, res.passes
        method, resid = solver.method, 0.0
    else:
        if params.conserve == "none":
            lambdas = np.zeros(3)
        else:
            lambdas = explicit_multipliers(geom, state, params, forcing).solution
        blocks = {i: assemble_phase_block(geom, params, state, i, lambdas=lambdas, forcing=forcing[i])
                  for i in labels}
        system = assemble_coupled_system(blocks, mesh, params)
        sol = CoupledSolver(system, solver_config).solve(system.reduced_rhs(), _warm_start(system, state))
        fields = sol.fields
        kappa = {i: curvature_from_y(geom.phases[i], fields["Y"][i], params) for i in labels}
        its, method, resid = sol.iterations, sol.method, sol.residual

    X_new = state.X + fields["dX"]
    new_state = DiscreteState(
        X_new, fields["Y"], kappa, fields["m"] if geom.curve is not None else dict(state.m),
        fields["kappa_gamma"], fields["Phi"], np.asarray(lambdas, float).copy(),
        state.time + params.dt, state.step + 1, state.X.copy(),
    )
    if not new_state.is_finite():
        raise DegenerationError("non-finite values after solve", new_state, mesh)
    energy = discrete_energy(mesh, kappa, new_state.kappa_gamma, new_state.m, params, geom)
    conf = conformality_residual(geom, X_new)
    new_mesh = mesh.with_vertices(X_new)
    if check_mesh:
        rep = validate(new_mesh, bool(params.c1), params.theta)
        if not rep.ok:
            raise DegenerationError("; ".join(rep.issues), new_state, new_mesh)
    rec = _record(new_state.step, new_state.time, energy, new_mesh, lambdas, its, passes,
                  conformality=conf, solver_method=method, residual=resid)
    return StepOutput(new_state, new_mesh, rec, geom)


# -- runs ------------------------------------------------------------------------------------
@dataclass
class RunResult:
    records: list
    state: DiscreteState
    mesh: TwoPhaseSurfaceMesh
    error: Exception | None = None


def integrate(mesh: TwoPhaseSurfaceMesh, params: PhaseParams, steps: int,
              solver_config: SolverConfig | None = None, state: DiscreteState | None = None,
              callback=None, stop_velocity: float = 0.0) -> RunResult:
    """Run ``steps`` time steps in memory.

    ``callback(step_output)`` is called after every step.  Errors stop the run and
    are returned in the result with everything computed so far.
    """
    if state is None:
        state = initialize_state(mesh, params)
    records = [initial_record(state, mesh, params)]
    for _ in range(steps):
        try:
            out = time_step(state, mesh, params, solver_config)
        except (DegenerationError, MeshError, RuntimeError) as exc:
            log.error("run stopped at step %d: %s", state.step + 1, exc)
            return RunResult(records, state, mesh, exc)
        state, mesh = out.state, out.mesh
        records.append(out.record)
        if callback is not None:
            callback(out)
        if stop_velocity > 0:
            vel = np.max(np.linalg.norm(state.X - state.X_prev, axis=1)) / params.dt
            if vel < stop_velocity:
                break
    return RunResult(records, state, mesh)


def run(config, out_dir: str | Path | None = None) -> RunResult:
    """Execute a configured simulation and write VTK snapshots and the CSV log."""
    from .io import build_mesh, write_csv, write_vtk

    mesh = build_mesh(config)
    params = config.params
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = config.run_name
    state = initialize_state(mesh, params)
    write_vtk(mesh, state, out / f"{name}_{0}.vtk")
    every = max(1, config.output_every)

    def snap(o: StepOutput):
        if o.state.step % every == 0:
            write_vtk(o.mesh, o.state, out / f"{name}_{o.state.step}.vtk")

    res = integrate(mesh, params, config.steps, config.solver, state, snap, config.stop_velocity)
    if res.state.step % every != 0 or res.error is not None:
        write_vtk(res.mesh, res.state, out / f"{name}_{res.state.step}.vtk")
    write_csv(res.records, out / f"{name}.csv")
    return res
