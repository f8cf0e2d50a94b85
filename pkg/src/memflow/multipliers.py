"""Lagrange multipliers for volume and phase-area conservation.

The unknown vector is ``(-lambda_V, lambda_A_1, ..., lambda_A_p)`` for the
phases present; results are always returned as a length-3 array
``(lambda_V, lambda_A_1, lambda_A_2)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    BlockSystem,
    DiscreteState,
    PhaseGeometry,
    PhaseParams,
    StepGeometry,
    assemble_coupled_system,
    assemble_phase_block,
    build_geometry,
    curvature_from_y,
    explicit_forcing,
)
from .mesh import TwoPhaseSurfaceMesh
from .solver import CoupledSolver, SolverConfig

log = logging.getLogger(__name__)


class MultiplierError(RuntimeError):
    """The multiplier system is singular or the fixed point failed."""


def interior_projection(field: np.ndarray, gamma_local: np.ndarray) -> np.ndarray:
    """Zero the interface nodal values of a phase field."""
    out = np.array(field, dtype=float, copy=True)
    out[np.asarray(gamma_local, dtype=int)] = 0.0
    return out


def a_form(pg: PhaseGeometry, zeta: np.ndarray, eta: np.ndarray) -> float:
    """Lumped pairing of Q zeta with the interior projection of eta."""
    qz = pg.q.apply(zeta)
    pe = interior_projection(eta, pg.gamma_local)
    return float(pg.mass @ np.einsum("ij,ij->i", qz, pe))


@dataclass
class MultiplierSystem:
    matrix: np.ndarray  # full (1 + p) x (1 + p) matrix
    rhs: np.ndarray
    labels: tuple
    mode: str
    solution: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def active(self) -> np.ndarray:
        """Indices of the rows kept by the conservation mode."""
        n = len(self.labels) + 1
        if self.mode == "volume":
            return np.array([0])
        if self.mode == "area":
            return np.arange(1, n)
        return np.arange(n)


def multiplier_matrix(geom: StepGeometry, kappa: dict) -> np.ndarray:
    labels = geom.labels
    n = len(labels) + 1
    M = np.zeros((n, n))
    for r, i in enumerate(labels, start=1):
        pg = geom.phases[i]
        M[0, 0] += a_form(pg, pg.omega, pg.omega)
        M[0, r] = M[r, 0] = a_form(pg, kappa[i], pg.omega)
        M[r, r] = a_form(pg, kappa[i], kappa[i])
    return M


def multiplier_rhs(geom: StepGeometry, Y: dict, kappa: dict, m: dict, forcing: dict,
                   velocity: np.ndarray | None) -> np.ndarray:
    """Right-hand sides b_0, b_i.

    ``velocity`` is a global (K, 3) nodal field or None for zero.
    """
    labels = geom.labels
    b = np.zeros(len(labels) + 1)
    curve = geom.curve
    for r, i in enumerate(labels, start=1):
        pg = geom.phases[i]
        gl = pg.gamma_local
        p_omega = interior_projection(pg.omega, gl)
        qk = pg.q.apply(kappa[i])
        p_kappa = interior_projection(kappa[i], gl)
        AY = pg.stiffness @ Y[i]
        F = interior_projection(forcing[i], gl)
        b[0] -= np.sum(AY * p_omega) + np.sum(F * pg.omega)
        b[r] -= np.sum(AY * p_kappa) + np.sum(F * kappa[i])
        if velocity is not None and gl.size:
            v = velocity[pg.vertices][gl]
            w = pg.mass[gl][:, None] * v
            b[0] -= np.sum(w * pg.omega[gl])
            b[r] -= np.sum(w * qk[gl])
            b[r] += np.sum(curve.mass[:, None] * m[i] * v)
    return b


def solve_multiplier_system(ms: MultiplierSystem) -> np.ndarray:
    """Solve for (lambda_V, lambda_A_1, lambda_A_2) on the active rows."""
    out = np.zeros(3)
    if ms.mode == "none":
        ms.solution = out
        return out
    idx = ms.active()
    A = ms.matrix[np.ix_(idx, idx)]
    b = ms.rhs[idx]
    scale = np.max(np.abs(np.diag(A))) if A.size else 0.0
    try:
        ev = np.linalg.eigvalsh(A)
    except np.linalg.LinAlgError as exc:
        raise MultiplierError(str(exc)) from exc
    if scale <= 0 or ev.min() <= 1e-10 * scale:
        raise MultiplierError(
            "multiplier matrix is singular: the projected vertex normals and projected "
            "curvature fields are linearly dependent in some phase"
        )
    x = np.linalg.solve(A, b)
    full = np.zeros(len(ms.labels) + 1)
    full[idx] = x
    out[0] = -full[0]
    for r, i in enumerate(ms.labels, start=1):
        out[i] = full[r]
    ms.solution = out
    return out


def explicit_multipliers(geom: StepGeometry, state: DiscreteState, params: PhaseParams,
                         forcing: dict) -> MultiplierSystem:
    """Multipliers from level-m data with the lagged velocity."""
    velocity = None
    if state.X_prev is not None:
        velocity = (state.X - state.X_prev) / params.dt
    ms = MultiplierSystem(
        multiplier_matrix(geom, state.kappa),
        multiplier_rhs(geom, state.Y, state.kappa, state.m, forcing, velocity),
        geom.labels,
        params.conserve,
    )
    solve_multiplier_system(ms)
    return ms


def volume_multiplier_shortcut(geom: StepGeometry, state: DiscreteState, params: PhaseParams,
                               forcing: dict) -> float:
    """Closed-form volume-only multiplier (first row of the system alone)."""
    ms = MultiplierSystem(
        multiplier_matrix(geom, state.kappa),
        multiplier_rhs(geom, state.Y, state.kappa, state.m, forcing,
                       None if state.X_prev is None else (state.X - state.X_prev) / params.dt),
        geom.labels,
        "volume",
    )
    return float(-ms.rhs[0] / ms.matrix[0, 0])


@dataclass
class ImplicitResult:
    fields: dict  # unpacked solution of the last linear solve
    kappa: dict
    lambdas: np.ndarray
    passes: int
    krylov_iterations: int
    history: list


def implicit_multiplier_step(mesh: TwoPhaseSurfaceMesh, params: PhaseParams, state: DiscreteState,
                             solver_config: SolverConfig | None = None, *,
                             geom: StepGeometry | None = None, system: BlockSystem | None = None,
                             solver: CoupledSolver | None = None,
                             forcing: dict | None = None,
                             x0: np.ndarray | None = None) -> ImplicitResult:
    """Fixed-point iteration for implicit multipliers on frozen level-m geometry.

    Each pass reuses the assembled matrices and starts Krylov solves from the
    previous pass (or ``x0`` on the first pass).
    """
    if params.conserve == "none":
        raise ValueError("implicit multipliers need a conservation mode")
    if geom is None:
        geom = build_geometry(mesh, params.theta)
    if forcing is None:
        forcing = {i: explicit_forcing(geom, state, params, i) for i in geom.labels}
    if system is None:
        blocks = {i: assemble_phase_block(geom, params, state, i, forcing=forcing[i])
                  for i in geom.labels}
        system = assemble_coupled_system(blocks, mesh, params)
    if solver is None:
        solver = CoupledSolver(system, solver_config)

    lam = np.array(state.lambdas, float)
    X0 = state.X
    x_ref = X0.copy()
    history = []
    grow = 0
    prev_diff = np.inf
    its = 0
    for it in range(1, params.fixedpoint_maxit + 1):
        res = solver.solve(system.reduced_rhs(lam, x_ref), x0)
        x0 = res.z
        its += res.iterations
        fields = res.fields
        x_new = X0 + fields["dX"]
        kappa = {i: curvature_from_y(geom.phases[i], fields["Y"][i], params) for i in geom.labels}
        ms = MultiplierSystem(
            multiplier_matrix(geom, kappa),
            multiplier_rhs(geom, fields["Y"], kappa, fields["m"], forcing, (x_new - X0) / params.dt),
            geom.labels,
            params.conserve,
        )
        new = solve_multiplier_system(ms)
        diff = float(np.sum(np.abs(new - lam)))
        history.append((new.copy(), diff))
        lam = new
        x_ref = x_new
        if diff < params.fixedpoint_tol:
            return ImplicitResult(fields, kappa, lam, it, its, history)
        grow = grow + 1 if diff > prev_diff else 0
        prev_diff = diff
        if grow >= 5:
            raise MultiplierError(f"fixed-point iteration diverging after {it} passes: {history}")
    raise MultiplierError(
        f"fixed-point iteration did not converge in {params.fixedpoint_maxit} passes; "
        f"last difference {history[-1][1]:.3e}"
    )
