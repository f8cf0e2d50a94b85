"""Per-phase block systems and their coupling across the interface.

Each phase ``i`` owns the unknowns ``Z_i = (Y_i, dX_i, kappa_gamma, m_i)``
(only ``(Y_i, dX_i)`` when the surface has no interface).  Row slots carry, in
the same order: the curvature relation, the motion law, the curve curvature
relation and the nodal junction relation.  The coupled system identifies the
interface copies of ``dX`` and ``kappa_gamma`` through a 0/1 prolongation
``E`` from the reduced unknowns to the product space.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .calculus import (
    ElementData,
    ThetaFields,
    VertexQOperator,
    block_diagonal,
    build_q_operators,
    build_theta_fields,
    curve_mass_diagonal,
    curve_projector,
    curve_stiffness_matrix,
    element_data,
    g_operator,
    lumped_mass_diagonal,
    stiffness_matrix,
    vec,
)
from .mesh import MeshError, TwoPhaseSurfaceMesh, VertexNormalField, vertex_normals

CONSERVE_MODES = ("none", "volume", "area", "volume+area")
MULTIPLIER_MODES = ("explicit", "implicit")


@dataclass(frozen=True)
class PhaseParams:
    """Physical and numerical constants of a run.

    Tuples are indexed by phase label minus one.
    """

    alpha: tuple = (1.0, 1.0)
    kappa_bar: tuple = (0.0, 0.0)
    alpha_g: tuple = (0.0, 0.0)
    sigma: float = 0.0
    rho: float = 0.0
    theta: float = 0.0
    c1: int = 0
    dt: float = 1e-3
    conserve: str = "none"
    multiplier_mode: str = "explicit"
    fixedpoint_tol: float = 1e-8
    fixedpoint_maxit: int = 100

    def __post_init__(self):
        for name in ("alpha", "kappa_bar", "alpha_g"):
            val = getattr(self, name)
            if np.isscalar(val):
                val = (float(val), float(val))
            val = tuple(float(v) for v in val)
            if len(val) != 2:
                raise ValueError(f"{name} needs one value per phase")
            object.__setattr__(self, name, val)
        if min(self.alpha) <= 0:
            raise ValueError("bending rigidities must be positive")
        if self.sigma < 0 or self.rho < 0:
            raise ValueError("line tension and interface weight must be non-negative")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if self.c1 not in (0, 1):
            raise ValueError("c1 must be 0 or 1")
        if self.dt <= 0:
            raise ValueError("time step must be positive")
        if self.conserve not in CONSERVE_MODES:
            raise ValueError(f"conserve must be one of {CONSERVE_MODES}")
        if self.multiplier_mode not in MULTIPLIER_MODES:
            raise ValueError(f"multiplier_mode must be one of {MULTIPLIER_MODES}")
        if self.fixedpoint_tol <= 0 or self.fixedpoint_maxit < 1:
            raise ValueError("invalid fixed-point settings")

    def a(self, i: int) -> float:
        return self.alpha[i - 1]

    def kb(self, i: int) -> float:
        return self.kappa_bar[i - 1]

    def ag(self, i: int) -> float:
        return self.alpha_g[i - 1]

    def with_(self, **kw) -> "PhaseParams":
        return replace(self, **kw)


@dataclass
class DiscreteState:
    """Nodal unknowns at one time level.

    Per-phase fields are dicts keyed by phase label, indexed phase-locally.
    Curve fields are indexed by interface-local vertex numbers.
    """

    X: np.ndarray
    Y: dict
    kappa: dict
    m: dict
    kappa_gamma: np.ndarray
    Phi: np.ndarray | None = None
    lambdas: np.ndarray = field(default_factory=lambda: np.zeros(3))
    time: float = 0.0
    step: int = 0
    X_prev: np.ndarray | None = None

    def copy(self) -> "DiscreteState":
        cp = lambda d: {k: v.copy() for k, v in d.items()}
        return DiscreteState(
            self.X.copy(), cp(self.Y), cp(self.kappa), cp(self.m), self.kappa_gamma.copy(),
            None if self.Phi is None else self.Phi.copy(), self.lambdas.copy(), self.time,
            self.step, None if self.X_prev is None else self.X_prev.copy(),
        )

    def is_finite(self) -> bool:
        arrays = [self.X, self.kappa_gamma, self.lambdas]
        arrays += list(self.Y.values()) + list(self.kappa.values()) + list(self.m.values())
        if self.Phi is not None:
            arrays.append(self.Phi)
        return all(np.all(np.isfinite(a)) for a in arrays)


# -- geometry cache ------------------------------------------------------------
@dataclass(frozen=True)
class CurveData:
    x: np.ndarray  # (K_gamma, 3)
    edges: np.ndarray  # (E, 2) curve-local
    lengths: np.ndarray  # (E,)
    tangents: np.ndarray  # (E, 3)
    mass: np.ndarray  # lumped diagonal (K_gamma,)
    stiffness: sp.csr_matrix  # scalar (K_gamma, K_gamma)


@dataclass(frozen=True)
class PhaseGeometry:
    phase: int
    vertices: np.ndarray  # global ids
    gamma_local: np.ndarray
    elem: ElementData
    mass: np.ndarray  # lumped diagonal
    stiffness: sp.csr_matrix  # scalar
    omega: np.ndarray  # (K_i, 3)
    q: VertexQOperator
    theta_h: np.ndarray

    @property
    def n(self) -> int:
        return int(self.vertices.size)


@dataclass(frozen=True)
class StepGeometry:
    """Everything assembled from the positions of one time level."""

    mesh: TwoPhaseSurfaceMesh
    normals: VertexNormalField
    theta: ThetaFields
    phases: dict
    curve: CurveData | None

    @property
    def labels(self) -> tuple:
        return self.mesh.phases


def build_geometry(mesh: TwoPhaseSurfaceMesh, theta: float) -> StepGeometry:
    normals = vertex_normals(mesh)
    tf = build_theta_fields(mesh, theta)
    qops = build_q_operators(normals, tf)
    phases = {}
    for i in mesh.phases:
        pt = mesh.phase_topology(i)
        ed = element_data(mesh.vertices[pt.vertices], pt.faces)
        phases[i] = PhaseGeometry(
            i, pt.vertices, pt.gamma_local, ed, lumped_mass_diagonal(ed), stiffness_matrix(ed),
            normals.phase[i], qops[i], tf.phase[i][0],
        )
    curve = None
    g = mesh.interface
    if not g.empty:
        x = mesh.gamma_positions()
        d = x[g.edges[:, 1]] - x[g.edges[:, 0]]
        lengths = np.linalg.norm(d, axis=1)
        if np.any(lengths <= 0):
            raise MeshError("zero-length interface edge")
        curve = CurveData(
            x, g.edges, lengths, d / lengths[:, None], curve_mass_diagonal(x, g.edges),
            curve_stiffness_matrix(x, g.edges),
        )
    return StepGeometry(mesh, normals, tf, phases, curve)


# -- explicit forcing ------------------------------------------------------------
def explicit_forcing(geom: StepGeometry, state: DiscreteState, params: PhaseParams, i: int) -> np.ndarray:
    """Assembled explicit right-hand side of the motion law for phase ``i``.

    Returns the (K_i, 3) array of functional values on the phase hat functions,
    without multiplier and line tension terms.
    """
    pg = geom.phases[i]
    ed = pg.elem
    f = ed.faces
    alpha, kb = params.a(i), params.kb(i)
    Y, kap = state.Y[i], state.kappa[i]
    A = ed.areas
    nu = ed.normals
    grads = ed.grads

    jac = np.einsum("jlk,jli->jki", Y[f], grads)  # (J, 3, 3)
    div = np.einsum("jkk->j", jac)

    # nodal-per-element scalars for the lumped terms
    kq = kap[f]  # (J, 3, 3): element, local vertex, component
    yq = Y[f]
    qk = pg.q.apply(kap)[f]
    w = alpha * np.sum((kq - kb * nu[:, None, :]) ** 2, axis=2) - 2.0 * np.sum(yq * qk, axis=2)
    wbar = w.mean(axis=1)
    kbar = kq.mean(axis=1)
    one_m = (1.0 - pg.theta_h)[f]  # (J, 3)
    G = g_operator(yq, kq, pg.omega[f])  # (J, 3, 3)
    gnu = (one_m * np.einsum("jqc,jc->jq", G, nu)).mean(axis=1)
    gbar = (one_m[:, :, None] * G).mean(axis=1)

    out = np.zeros((pg.n, 3))
    for l in range(3):
        g = grads[:, l]
        jg = np.einsum("jki,ji->jk", jac, g)
        jtg = np.einsum("jki,jk->ji", jac, g)
        pjg = jg - nu * np.sum(nu * jg, axis=1, keepdims=True)
        contrib = (div - 0.5 * wbar + gnu)[:, None] * g
        contrib -= jtg + pjg
        contrib -= (alpha * kb * np.sum(kbar * g, axis=1) + np.sum(gbar * g, axis=1))[:, None] * nu
        contrib *= A[:, None]
        np.add.at(out, f[:, l], contrib)

    ag = params.ag(i)
    if ag != 0.0 and geom.curve is not None:
        out[pg.gamma_local] += ag * curve_gaussian_forcing(geom.curve, state.kappa_gamma, state.m[i])
    return out


def curve_gaussian_forcing(curve: CurveData, kappa_gamma: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Explicit interface terms of the Gaussian curvature energy, per unit rigidity."""
    a, b = curve.edges[:, 0], curve.edges[:, 1]
    s = np.sum(kappa_gamma * m, axis=1)
    v = 0.5 * (s[a] + s[b])
    t = curve.tangents
    dm = (m[b] - m[a]) / curve.lengths[:, None]
    P = curve_projector(t)
    w = dm + np.einsum("eab,eb->ea", P, dm)
    edge_term = v[:, None] * t + w
    out = np.zeros_like(m)
    np.add.at(out, a, -edge_term)
    np.add.at(out, b, edge_term)
    return out


# -- phase blocks ----------------------------------------------------------------
@dataclass
class PhaseBlock:
    """Block matrix B_i with its right-hand side split into parts."""

    phase: int
    B: sp.csr_matrix
    g: np.ndarray
    g_base: np.ndarray  # rhs without multiplier terms
    slices: dict  # slot -> slice into Z_i
    n: int
    n_gamma: int
    mass_omega: np.ndarray  # (K_i, 3) lumped  M omega_i
    stiffness: sp.csr_matrix  # scalar A_i
    forcing: np.ndarray  # (K_i, 3) explicit forcing f_i

    def multiplier_rhs(self, lambdas, x_ref: np.ndarray) -> np.ndarray:
        """rhs with multiplier terms for the given (lambda_V, lambda_A1, lambda_A2)."""
        g = self.g_base.copy()
        lv = lambdas[0]
        la = lambdas[self.phase]
        sl = self.slices["dX"]
        g[sl] -= (lv * self.mass_omega + la * (self.stiffness @ x_ref)).ravel()
        return g


def _slices(n: int, ng: int) -> dict:
    out = {"Y": slice(0, 3 * n), "dX": slice(3 * n, 6 * n)}
    if ng:
        out["kg"] = slice(6 * n, 6 * n + 3 * ng)
        out["m"] = slice(6 * n + 3 * ng, 6 * n + 6 * ng)
    return out


def assemble_phase_block(geom: StepGeometry, params: PhaseParams, state: DiscreteState, i: int,
                         lambdas=None, x_ref: np.ndarray | None = None,
                         forcing: np.ndarray | None = None) -> PhaseBlock:
    """Assemble B_i and g_i for phase ``i`` on the geometry of level m."""
    pg = geom.phases[i]
    n = pg.n
    curve = geom.curve
    ng = 0 if curve is None else curve.x.shape[0]
    alpha, kb, ag = params.a(i), params.kb(i), params.ag(i)
    dt = params.dt
    Xm = state.X[pg.vertices]
    if Xm.shape != (n, 3) or state.Y[i].shape != (n, 3) or state.kappa[i].shape != (n, 3):
        raise ValueError(f"state dimensions do not match phase {i}")

    A3 = vec(pg.stiffness)
    q = pg.q.q
    mq2 = block_diagonal(pg.mass[:, None, None] * np.einsum("kab,kbc->kac", q, q) / alpha)
    mqs = block_diagonal(pg.mass[:, None, None] * pg.q.q_star / dt)

    if forcing is None:
        forcing = explicit_forcing(geom, state, params, i)
    mass_omega = pg.mass[:, None] * pg.omega

    sl = _slices(n, ng)
    size = 6 * n + 6 * ng
    rhs = np.zeros(size)
    rhs[sl["Y"]] = (-(pg.stiffness @ Xm) - kb * mass_omega).ravel()
    dx_rhs = forcing.copy()

    if ng:
        gl = pg.gamma_local
        # phase-local node <- curve-local node embedding
        emb = sp.csr_matrix((np.ones(ng), (gl, np.arange(ng))), shape=(n, ng))
        Mg = sp.diags(curve.mass)
        Ag = curve.stiffness
        Mg_pc = vec(emb @ Mg)  # (3n, 3ng)
        Ag_pc = vec(emb @ Ag)
        Ag_pp = vec(emb @ Ag @ emb.T)
        Mg_pp = vec(emb @ Mg @ emb.T)
        Mg3 = vec(Mg)
        dxdx = mqs + 0.5 * params.sigma * Ag_pp + 0.5 * params.rho / dt * Mg_pp
        B = sp.bmat(
            [
                [mq2, A3, None, -Mg_pc],
                [-A3, dxdx, None, ag * Ag_pc if ag != 0.0 else None],
                [None, Ag_pc.T, Mg3, None],
                [Mg_pc.T, None, ag * Mg3 if ag != 0.0 else None, None],
            ],
            format="csr",
        )
        xg = state.X[geom.mesh.interface.vertices]
        dx_rhs[gl] -= 0.5 * params.sigma * (Ag @ xg)
        rhs[sl["kg"]] = -(Ag @ xg).ravel()
    else:
        B = sp.bmat([[mq2, A3], [-A3, mqs]], format="csr")

    rhs[sl["dX"]] = dx_rhs.ravel()
    block = PhaseBlock(i, B, rhs, rhs.copy(), sl, n, ng, mass_omega, pg.stiffness, forcing)
    if lambdas is not None:
        block.g = block.multiplier_rhs(lambdas, Xm if x_ref is None else x_ref)
    return block


def curve_mass_matrix(mesh_or_curve) -> sp.csr_matrix:
    """Lumped mass matrix of the interface polygon (scalar, diagonal)."""
    if isinstance(mesh_or_curve, TwoPhaseSurfaceMesh):
        g = mesh_or_curve.interface
        if g.empty:
            raise MeshError("mesh has no interface")
        return sp.diags(curve_mass_diagonal(mesh_or_curve.gamma_positions(), g.edges)).tocsr()
    if isinstance(mesh_or_curve, CurveData):
        return sp.diags(mesh_or_curve.mass).tocsr()
    x, edges = mesh_or_curve
    return sp.diags(curve_mass_diagonal(np.asarray(x, float), np.asarray(edges))).tocsr()


# -- coupled system ---------------------------------------------------------------
@dataclass
class BlockSystem:
    """Product-space operator with prolongation from the reduced unknowns.

    Reduced layout: ``Y_i`` per phase, global ``dX``, shared ``kappa_gamma``,
    ``m_i`` per phase and, when C1 = 1, ``Phi``.
    """

    blocks: dict
    B: sp.csr_matrix  # product operator
    E: sp.csr_matrix  # prolongation reduced -> product
    c1: int
    layout: dict  # reduced slices
    product_offsets: dict  # phase -> offset of Z_i; "Phi" -> offset
    mesh: TwoPhaseSurfaceMesh
    _K: sp.csc_matrix | None = None

    @property
    def scale(self) -> np.ndarray:
        """Diagonal of S with S^2 = E^T E."""
        return np.sqrt(np.asarray(self.E.sum(axis=0)).ravel())

    @property
    def reduced_matrix(self) -> sp.csc_matrix:
        if self._K is None:
            self._K = (self.E.T @ self.B @ self.E).tocsc()
        return self._K

    def product_rhs(self, lambdas=None, x_ref=None) -> np.ndarray:
        """Stack phase rhs vectors, optionally recomputing the multiplier terms.

        ``x_ref`` is a global (K, 3) position array used by the area terms.
        """
        parts = []
        for i, blk in self.blocks.items():
            if lambdas is None:
                parts.append(blk.g)
            else:
                xr = x_ref[self.mesh.phase_topology(i).vertices]
                parts.append(blk.multiplier_rhs(lambdas, xr))
        if self.c1 and "Phi" in self.product_offsets:
            parts.append(np.zeros(self.layout["Phi"].stop - self.layout["Phi"].start))
        return np.concatenate(parts)

    def reduced_rhs(self, lambdas=None, x_ref=None) -> np.ndarray:
        return self.E.T @ self.product_rhs(lambdas, x_ref)

    @property
    def size(self) -> int:
        return self.E.shape[1]

    def unpack(self, z: np.ndarray) -> dict:
        """Split a reduced solution vector into named nodal fields."""
        lay = self.layout
        out = {
            "Y": {i: z[lay[("Y", i)]].reshape(-1, 3) for i in self.blocks},
            "dX": z[lay["dX"]].reshape(-1, 3),
            "m": {},
            "kappa_gamma": np.zeros((0, 3)),
            "Phi": None,
        }
        if "kg" in lay:
            out["kappa_gamma"] = z[lay["kg"]].reshape(-1, 3)
            out["m"] = {i: z[lay[("m", i)]].reshape(-1, 3) for i in self.blocks}
        if "Phi" in lay:
            out["Phi"] = z[lay["Phi"]].reshape(-1, 3)
        return out

    def pack(self, fields: dict) -> np.ndarray:
        """Inverse of :meth:`unpack`; missing or None entries are zero."""
        z = np.zeros(self.size)
        lay = self.layout

        def put(key, val):
            if key in lay and val is not None and np.size(val):
                z[lay[key]] = np.asarray(val, float).ravel()

        for i in self.blocks:
            put(("Y", i), fields.get("Y", {}).get(i))
            put(("m", i), fields.get("m", {}).get(i))
        put("dX", fields.get("dX"))
        put("kg", fields.get("kappa_gamma"))
        put("Phi", fields.get("Phi"))
        return z

    def phase_part(self, Z: np.ndarray, i: int) -> np.ndarray:
        off = self.product_offsets[i]
        return Z[off:off + self.blocks[i].B.shape[0]]


def assemble_coupled_system(blocks: dict, mesh: TwoPhaseSurfaceMesh, params: PhaseParams) -> BlockSystem:
    """Couple the phase blocks by identifying interface unknowns."""
    labels = tuple(sorted(blocks))
    g = mesh.interface
    ng = g.n_vertices
    K = mesh.n_vertices
    for i in labels:
        pt = mesh.phase_topology(i)
        if blocks[i].n != pt.n_vertices or blocks[i].n_gamma != ng:
            raise ValueError(f"phase {i} block does not match the mesh index maps")

    # reduced layout
    layout = {}
    pos = 0
    for i in labels:
        layout[("Y", i)] = slice(pos, pos + 3 * blocks[i].n)
        pos += 3 * blocks[i].n
    layout["dX"] = slice(pos, pos + 3 * K)
    pos += 3 * K
    if ng:
        layout["kg"] = slice(pos, pos + 3 * ng)
        pos += 3 * ng
        for i in labels:
            layout[("m", i)] = slice(pos, pos + 3 * ng)
            pos += 3 * ng
    c1 = int(params.c1) if ng else 0
    if c1:
        layout["Phi"] = slice(pos, pos + 3 * ng)
        pos += 3 * ng
    n_red = pos

    rows, cols = [], []
    offsets = {}
    off = 0

    def ident(prod_start, red_slice):
        n = red_slice.stop - red_slice.start
        rows.append(np.arange(prod_start, prod_start + n))
        cols.append(np.arange(red_slice.start, red_slice.stop))

    for i in labels:
        blk = blocks[i]
        offsets[i] = off
        sl = blk.slices
        ident(off + sl["Y"].start, layout[("Y", i)])
        verts = mesh.phase_topology(i).vertices
        dof = (3 * verts[:, None] + np.arange(3)).ravel()
        rows.append(off + sl["dX"].start + np.arange(3 * blk.n))
        cols.append(layout["dX"].start + dof)
        if ng:
            ident(off + sl["kg"].start, layout["kg"])
            ident(off + sl["m"].start, layout[("m", i)])
        off += blk.B.shape[0]
    n_prod = off
    mats = [blocks[i].B for i in labels]
    if c1:
        offsets["Phi"] = off
        ident(off, layout["Phi"])
        n_prod += 3 * ng
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    E = sp.csr_matrix((np.ones(r.size), (r, c)), shape=(n_prod, n_red))

    Bp = sp.block_diag(mats, format="csr")
    if c1:
        Mg3 = vec(curve_mass_matrix(mesh))
        # Phi column into the junction rows, Phi row onto the conormals
        extra_r, extra_c, extra_v = [], [], []
        Mc = Mg3.tocoo()
        for i in labels:
            start = offsets[i] + blocks[i].slices["m"].start
            extra_r += [start + Mc.row, off + Mc.row]
            extra_c += [off + Mc.col, start + Mc.col]
            extra_v += [Mc.data, Mc.data]
        coupling = sp.csr_matrix(
            (np.concatenate(extra_v), (np.concatenate(extra_r), np.concatenate(extra_c))),
            shape=(n_prod, n_prod),
        )
        Bp = sp.bmat([[Bp, None], [None, sp.csr_matrix((3 * ng, 3 * ng))]], format="csr") + coupling
    return BlockSystem(dict((i, blocks[i]) for i in labels), Bp.tocsr(), E, c1, layout, offsets, mesh)


def curvature_from_y(pg: PhaseGeometry, Y: np.ndarray, params: PhaseParams) -> np.ndarray:
    """kappa_i = alpha_i^-1 Q_theta Y_i + kappa_bar_i omega_i, nodewise."""
    return pg.q.apply(Y) / params.a(pg.phase) + params.kb(pg.phase) * pg.omega
