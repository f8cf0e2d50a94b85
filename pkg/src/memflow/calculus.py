"""Element kernels for piecewise linear fields on triangulated surfaces and curves.

Vector unknowns are stored node-major: entry ``3*k + c`` holds component ``c``
of node ``k``.  Gradients follow the Jacobian convention
``(grad f)[k, j] = d_j f_k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import MeshError, TwoPhaseSurfaceMesh, VertexNormalField


# -- element geometry -----------------------------------------------------------
def shape_gradients(triangle) -> np.ndarray:
    """Surface gradients of the three hat functions on one triangle.

    Parameters
    ----------
    triangle : (3, 3) array of vertex positions

    Returns
    -------
    (3, 3) array, row ``a`` is the gradient of the hat function of vertex ``a``.
    """
    x = np.asarray(triangle, dtype=float)
    g, area = element_gradients(x[None], np.array([[0, 1, 2]]))
    if area[0] <= 0:
        raise MeshError("zero-area triangle")
    return g[0]


def element_gradients(x, faces):
    """Vectorized hat-function gradients.

    Returns ``(grads, areas)`` with grads of shape (J, 3, 3) and areas (J,).
    Degenerate faces give zero area and non-finite gradients.
    """
    p = x[faces] if faces is not None and x.ndim == 2 else x
    e0 = p[:, 2] - p[:, 1]
    e1 = p[:, 0] - p[:, 2]
    e2 = p[:, 1] - p[:, 0]
    n = np.cross(e2, -e1)
    twice = np.linalg.norm(n, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        nu = n / twice[:, None]
        scale = 1.0 / twice[:, None]
        grads = np.stack(
            [np.cross(nu, e0) * scale, np.cross(nu, e1) * scale, np.cross(nu, e2) * scale],
            axis=1,
        )
    return grads, 0.5 * twice


@dataclass(frozen=True)
class ElementData:
    """Per-face geometry of one phase (or a whole surface)."""

    faces: np.ndarray  # local connectivity (J, 3)
    grads: np.ndarray  # (J, 3, 3)
    areas: np.ndarray  # (J,)
    normals: np.ndarray  # unit face normals (J, 3)
    n_nodes: int


def element_data(x: np.ndarray, faces: np.ndarray, n_nodes: int | None = None) -> ElementData:
    grads, areas = element_gradients(x, faces)
    if np.any(areas <= 0):
        raise MeshError("zero-area triangle")
    p = x[faces]
    nu = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]) / (2.0 * areas[:, None])
    return ElementData(faces, grads, areas, nu, x.shape[0] if n_nodes is None else n_nodes)


# -- scalar matrices ------------------------------------------------------------
def stiffness_matrix(ed: ElementData) -> sp.csr_matrix:
    """Scalar P1 stiffness matrix, entries  int grad phi_a . grad phi_b."""
    local = ed.areas[:, None, None] * np.einsum("jai,jbi->jab", ed.grads, ed.grads)
    rows = np.repeat(ed.faces, 3, axis=1).ravel()
    cols = np.tile(ed.faces, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(ed.n_nodes, ed.n_nodes))


def lumped_mass_diagonal(ed: ElementData) -> np.ndarray:
    return np.bincount(ed.faces.ravel(), np.repeat(ed.areas / 3.0, 3), minlength=ed.n_nodes)


def curve_lengths(x: np.ndarray, edges: np.ndarray) -> np.ndarray:
    lengths = np.linalg.norm(x[edges[:, 1]] - x[edges[:, 0]], axis=1)
    if np.any(lengths <= 0):
        raise MeshError("zero-length interface edge")
    return lengths


def curve_mass_diagonal(x: np.ndarray, edges: np.ndarray, n: int | None = None) -> np.ndarray:
    """Lumped curve mass: half the sum of the adjacent edge lengths."""
    n = x.shape[0] if n is None else n
    lengths = curve_lengths(x, edges)
    return np.bincount(edges.ravel(), np.repeat(0.5 * lengths, 2), minlength=n)


def curve_stiffness_matrix(x: np.ndarray, edges: np.ndarray, n: int | None = None) -> sp.csr_matrix:
    """Scalar P1 curve stiffness, entries  int (phi_a)_s (phi_b)_s ds."""
    n = x.shape[0] if n is None else n
    inv = 1.0 / curve_lengths(x, edges)
    a, b = edges[:, 0], edges[:, 1]
    rows = np.concatenate([a, b, a, b])
    cols = np.concatenate([a, b, b, a])
    vals = np.concatenate([inv, inv, -inv, -inv])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def vec(m: sp.spmatrix) -> sp.csr_matrix:
    """Lift a scalar matrix to node-major 3-vector unknowns."""
    return sp.kron(m, sp.identity(3), format="csr")


def block_diagonal(blocks: np.ndarray) -> sp.csr_matrix:
    """Sparse matrix with the given (n, 3, 3) blocks on the diagonal."""
    n = blocks.shape[0]
    return sp.bsr_matrix((blocks, np.arange(n), np.arange(n + 1)), shape=(3 * n, 3 * n)).tocsr()


# -- inner products -------------------------------------------------------------
def lumped_inner_product(mesh: TwoPhaseSurfaceMesh, f, g, domain: str | int = "surface") -> float:
    """Mass-lumped L2 product of nodal fields.

    ``domain`` is ``"surface"`` (whole surface, global nodes), a phase label
    (phase-local nodes) or ``"curve"`` (interface-local nodes).  Fields are
    scalar (n,) or vector (n, 3) arrays.
    """
    f = np.asarray(f, float)
    g = np.asarray(g, float)
    if domain == "curve":
        gi = mesh.interface
        if gi.empty:
            raise MeshError("mesh has no interface")
        w = curve_mass_diagonal(mesh.gamma_positions(), gi.edges)
    elif domain == "surface":
        w = lumped_mass_diagonal(element_data(mesh.vertices, mesh.faces))
    elif domain in mesh.phases:
        pt = mesh.phase_topology(domain)
        w = lumped_mass_diagonal(element_data(mesh.vertices[pt.vertices], pt.faces))
    else:
        raise ValueError(f"unknown domain {domain!r}")
    if f.shape != g.shape or f.shape[0] != w.size:
        raise ValueError("fields do not live on the requested domain")
    prod = f * g if f.ndim == 1 else np.einsum("ij,ij->i", f, g)
    return float(w @ prod)


# -- theta fields and Q operators -------------------------------------------------
@dataclass(frozen=True)
class ThetaFields:
    """Nodal theta values with the interface override, global and per phase."""

    theta: float
    theta_h: np.ndarray  # (K,)
    theta_star: np.ndarray  # (K,)
    phase: dict  # phase -> (theta_h_local, theta_star_local)


def build_theta_fields(mesh: TwoPhaseSurfaceMesh, theta: float) -> ThetaFields:
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    th = np.full(mesh.n_vertices, float(theta))
    ts = th.copy()
    gv = mesh.interface.vertices
    th[gv] = 0.0
    ts[gv] = 1.0
    per = {}
    for i in mesh.phases:
        v = mesh.phase_topology(i).vertices
        per[i] = (th[v], ts[v])
    return ThetaFields(float(theta), th, ts, per)


@dataclass(frozen=True)
class VertexQOperator:
    """Per-vertex 3x3 matrices of one phase."""

    q: np.ndarray  # (K_i, 3, 3) built from theta_h
    q_star: np.ndarray  # (K_i, 3, 3) built from theta_star

    def apply(self, z: np.ndarray, star: bool = False) -> np.ndarray:
        return np.einsum("kab,kb->ka", self.q_star if star else self.q, z)


def q_matrices(omega: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """theta Id + (1 - theta) omega omega^T / |omega|^2, vectorized."""
    n2 = np.einsum("ij,ij->i", omega, omega)
    if np.any(n2 <= 0):
        raise MeshError("zero vertex normal")
    outer = omega[:, :, None] * omega[:, None, :] / n2[:, None, None]
    t = np.asarray(theta, float)[:, None, None]
    return t * np.eye(3) + (1.0 - t) * outer


def build_q_operators(normals: VertexNormalField, fields: ThetaFields) -> dict:
    """Q and Q* operators per phase, keyed by phase label."""
    out = {}
    for i, omega in normals.phase.items():
        th, ts = fields.phase[i]
        out[i] = VertexQOperator(q_matrices(omega, th), q_matrices(omega, ts))
    return out


# -- pointwise operators ----------------------------------------------------------
def g_operator(xi, eta, omega) -> np.ndarray:
    """Variation operator of the vertex normals, vectorized over leading axes."""
    xi = np.asarray(xi, float)
    eta = np.asarray(eta, float)
    omega = np.asarray(omega, float)
    n2 = np.sum(omega * omega, axis=-1, keepdims=True)
    if np.any(n2 <= 0):
        raise MeshError("zero vertex normal")
    xo = np.sum(xi * omega, axis=-1, keepdims=True)
    eo = np.sum(eta * omega, axis=-1, keepdims=True)
    return (xo * eta + eo * xi - 2.0 * eo * xo * omega / n2) / n2


def curve_projector(tangent) -> np.ndarray:
    """Id - t t^T for unit tangents, vectorized over leading axes."""
    t = np.asarray(tangent, float)
    norm = np.linalg.norm(t, axis=-1)
    if np.any(norm <= 0):
        raise MeshError("zero tangent")
    return np.eye(3) - t[..., :, None] * t[..., None, :]
