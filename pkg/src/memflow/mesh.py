"""Two-phase closed triangulated surfaces.

A mesh is a closed, consistently oriented triangle surface whose faces carry a
phase label in {1, 2}.  The interface curve is the set of edges separating the
two phases; its vertices are shared by both phases (one global position,
membership in both phase vertex maps).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class MeshError(ValueError):
    """Raised for malformed or degenerate input meshes."""


@dataclass(frozen=True)
class PhaseTopology:
    """Local indexing of one phase submesh."""

    phase: int
    vertices: np.ndarray  # global indices, sorted, shape (K_i,)
    faces: np.ndarray  # local vertex indices, shape (J_i, 3)
    face_ids: np.ndarray  # global face indices, shape (J_i,)
    gamma_local: np.ndarray  # local index of every interface vertex, shape (K_gamma,)

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.size)

    @property
    def n_faces(self) -> int:
        return int(self.faces.shape[0])


@dataclass(frozen=True)
class InterfaceTopology:
    """Interface curve: vertex list, edges in curve-local indices, ordered loops."""

    vertices: np.ndarray  # global indices, shape (K_gamma,)
    edges: np.ndarray  # curve-local indices, shape (E_gamma, 2)
    loops: tuple = field(default_factory=tuple)  # tuples of curve-local indices
    edge_faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), int))

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.size)

    @property
    def empty(self) -> bool:
        return self.vertices.size == 0


def _edge_map(faces: np.ndarray):
    """Return unique undirected edges and, per edge, the faces using it."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    fid = np.tile(np.arange(faces.shape[0]), 3)
    key = np.sort(e, axis=1)
    uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return e, fid, uniq, inv.ravel(), counts


class TwoPhaseSurfaceMesh:
    """Closed oriented triangle mesh with per-face phase labels.

    Parameters
    ----------
    vertices : (K, 3) array
    faces : (J, 3) int array, counter-clockwise seen from outside
    phase : (J,) int array with values in {1, 2}
    """

    def __init__(self, vertices, faces, phase=None, *, _topology=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        if phase is None:
            phase = np.ones(self.faces.shape[0], dtype=np.int64)
        self.phase = np.ascontiguousarray(phase, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must have shape (K, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshError("faces must have shape (J, 3)")
        if self.phase.shape != (self.faces.shape[0],):
            raise MeshError("one phase label per face required")
        if _topology is None:
            _topology = _build_topology(self.vertices.shape[0], self.faces, self.phase)
        self._topo = _topology

    # -- topology -------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def phases(self) -> tuple[int, ...]:
        return self._topo["phases"]

    @property
    def interface(self) -> InterfaceTopology:
        return self._topo["interface"]

    def phase_topology(self, phase: int) -> PhaseTopology:
        return self._topo["phase"][phase]

    @property
    def edges(self) -> np.ndarray:
        return self._topo["edges"]

    def counts(self) -> dict:
        """(K, K_i, K_gamma, J, J_i) as a dict."""
        out = {"K": self.n_vertices, "J": self.n_faces, "K_gamma": self.interface.n_vertices}
        for i in self.phases:
            pt = self.phase_topology(i)
            out[f"K{i}"] = pt.n_vertices
            out[f"J{i}"] = pt.n_faces
        return out

    def with_vertices(self, vertices) -> "TwoPhaseSurfaceMesh":
        """Same topology, new positions."""
        return TwoPhaseSurfaceMesh(vertices, self.faces, self.phase, _topology=self._topo)

    def phase_positions(self, phase: int) -> np.ndarray:
        return self.vertices[self.phase_topology(phase).vertices]

    # -- geometry -------------------------------------------------------------
    @cached_property
    def face_vectors(self) -> np.ndarray:
        """Area-weighted face normals (cross products, length 2*area)."""
        x = self.vertices[self.faces]
        return np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_vectors, axis=1)

    def gamma_positions(self) -> np.ndarray:
        return self.vertices[self.interface.vertices]


def _build_topology(n_vertices: int, faces: np.ndarray, phase: np.ndarray) -> dict:
    if faces.size and (faces.min() < 0 or faces.max() >= n_vertices):
        raise MeshError("face index out of range")
    labels = set(np.unique(phase).tolist())
    if not labels <= {1, 2}:
        raise MeshError(f"phase labels must be 1 or 2, got {sorted(labels)}")
    if np.any(faces[:, 0] == faces[:, 1]) or np.any(faces[:, 1] == faces[:, 2]) or np.any(
        faces[:, 0] == faces[:, 2]
    ):
        raise MeshError("face with repeated vertex index")

    e, fid, uniq, inv, counts = _edge_map(faces)
    if np.any(counts > 2):
        raise MeshError("non-manifold edge shared by more than two triangles")
    if np.any(counts < 2):
        raise MeshError("open surface: boundary edge found")
    # consistent orientation: each directed edge appears once
    directed = np.unique(e, axis=0)
    if directed.shape[0] != e.shape[0]:
        raise MeshError("inconsistent face orientation")
    used = np.zeros(n_vertices, bool)
    used[faces.ravel()] = True
    if not used.all():
        raise MeshError("unreferenced vertex")

    # faces adjacent to each undirected edge
    order = np.argsort(inv, kind="stable")
    pair = fid[order].reshape(-1, 2)
    ephase = phase[pair]
    is_gamma = ephase[:, 0] != ephase[:, 1]
    gamma_edges_global = uniq[is_gamma]
    gamma_pairs = pair[is_gamma]
    # order each pair as (face of phase 1, face of phase 2)
    swap = phase[gamma_pairs[:, 0]] == 2
    gamma_pairs[swap] = gamma_pairs[swap][:, ::-1]

    gverts = np.unique(gamma_edges_global)
    gmap = -np.ones(n_vertices, np.int64)
    gmap[gverts] = np.arange(gverts.size)
    gedges = gmap[gamma_edges_global]
    loops = _trace_loops(gverts.size, gedges)
    interface = InterfaceTopology(gverts, gedges, loops, gamma_pairs)

    phases = tuple(sorted(labels))
    phase_topo = {}
    for i in phases:
        fids = np.nonzero(phase == i)[0]
        f = faces[fids]
        verts = np.unique(f)
        loc = -np.ones(n_vertices, np.int64)
        loc[verts] = np.arange(verts.size)
        gl = loc[gverts] if gverts.size else np.zeros(0, np.int64)
        if np.any(gl < 0):
            raise MeshError(f"interface vertex not in phase {i}")
        phase_topo[i] = PhaseTopology(i, verts, loc[f], fids, gl)
        # every phase must be a manifold with boundary gamma
        _check_phase_manifold(f, i)
    return {
        "phases": phases,
        "phase": phase_topo,
        "interface": interface,
        "edges": uniq,
    }


def _check_phase_manifold(faces: np.ndarray, phase: int) -> None:
    """Reject bow-tie vertices: the faces around a vertex must form one fan."""
    n = faces.max() + 1
    # count boundary edges incident on each vertex: a manifold-with-boundary
    # vertex has 0 or 2 of them
    e, _, uniq, inv, counts = _edge_map(faces)
    bnd = uniq[counts == 1]
    deg = np.bincount(bnd.ravel(), minlength=n)
    if np.any((deg != 0) & (deg != 2)):
        raise MeshError(f"phase {phase} is not a manifold with boundary (pinched vertex)")


def _trace_loops(n: int, edges: np.ndarray) -> tuple:
    """Order interface edges into closed loops (curve-local indices)."""
    if n == 0:
        return ()
    deg = np.bincount(edges.ravel(), minlength=n)
    if np.any(deg != 2):
        raise MeshError("interface is not a union of simple closed curves")
    nbr = [[] for _ in range(n)]
    for a, b in edges:
        nbr[a].append(b)
        nbr[b].append(a)
    seen = np.zeros(n, bool)
    loops = []
    for s in range(n):
        if seen[s]:
            continue
        loop = [s]
        seen[s] = True
        prev, cur = -1, s
        while True:
            a, b = nbr[cur]
            nxt = a if a != prev else b
            if nxt == s:
                break
            loop.append(nxt)
            seen[nxt] = True
            prev, cur = cur, nxt
        loops.append(tuple(loop))
    return tuple(loops)


# -- validation ----------------------------------------------------------------
@dataclass
class ValidationReport:
    ok: bool
    issues: list = field(default_factory=list)
    min_area: float = 0.0
    normal_rank: int | None = None

    def __bool__(self) -> bool:
        return self.ok


def validate(mesh: TwoPhaseSurfaceMesh, c1_mode: bool = False, theta: float = 0.0,
             area_tol: float = 1e-14) -> ValidationReport:
    """Check face areas, vertex normals and, for C1 with theta = 0, normal span."""
    issues = []
    areas = mesh.face_areas
    scale = max(float(np.mean(areas)), np.finfo(float).tiny) if areas.size else 1.0
    bad = np.nonzero(areas <= area_tol * scale)[0]
    if bad.size:
        issues.append(f"{bad.size} degenerate face(s), e.g. face {int(bad[0])}")
    rank = None
    try:
        normals = vertex_normals(mesh)
    except MeshError as exc:
        issues.append(str(exc))
        normals = None
    if normals is not None and c1_mode and theta == 0.0:
        stack = np.concatenate([normals.phase[i] for i in mesh.phases])
        unit = stack / np.linalg.norm(stack, axis=1, keepdims=True)
        sv = np.linalg.svd(unit, compute_uv=False)
        rank = int(np.sum(sv > 1e-8 * sv[0]))
        if rank < 3:
            issues.append(f"vertex normals span only {rank} dimension(s)")
    return ValidationReport(not issues, issues, float(areas.min()) if areas.size else 0.0, rank)


# -- normals --------------------------------------------------------------------
@dataclass(frozen=True)
class VertexNormalField:
    """Face unit normals, global and per-phase area-averaged vertex normals."""

    face: np.ndarray  # (J, 3)
    omega: np.ndarray  # (K, 3)
    phase: dict  # phase -> (K_i, 3)


def vertex_normals(mesh: TwoPhaseSurfaceMesh) -> VertexNormalField:
    fv = mesh.face_vectors
    areas = mesh.face_areas
    if np.any(areas <= 0):
        raise MeshError("zero-area face: normal undefined")
    nu = fv / (2.0 * areas[:, None])
    omega = _average(mesh.faces, fv, areas, mesh.n_vertices)
    per_phase = {}
    for i in mesh.phases:
        pt = mesh.phase_topology(i)
        per_phase[i] = _average(pt.faces, fv[pt.face_ids], areas[pt.face_ids], pt.n_vertices)
    return VertexNormalField(nu, omega, per_phase)


def _average(faces, fv, areas, n):
    num = np.zeros((n, 3))
    den = np.zeros(n)
    for a in range(3):
        np.add.at(num, faces[:, a], 0.5 * fv)
        np.add.at(den, faces[:, a], areas)
    omega = num / den[:, None]
    norm = np.linalg.norm(omega, axis=1)
    if np.any(norm <= 1e-12):
        raise MeshError(f"vanishing vertex normal at vertex {int(np.argmin(norm))}")
    return omega


# -- functionals ------------------------------------------------------------------
def euler_characteristic(mesh: TwoPhaseSurfaceMesh, phase: int | None = None) -> int:
    """V - E + F of a phase (or the whole surface when phase is None)."""
    if phase is None:
        f = mesh.faces
    else:
        f = mesh.phase_topology(phase).faces
    _, _, uniq, _, _ = _edge_map(f)
    return int(np.unique(f).size - uniq.shape[0] + f.shape[0])


def surface_area(mesh: TwoPhaseSurfaceMesh, phase: int | None = None) -> float:
    areas = mesh.face_areas
    if phase is None:
        return float(areas.sum())
    return float(areas[mesh.phase_topology(phase).face_ids].sum())


def enclosed_volume(mesh: TwoPhaseSurfaceMesh) -> float:
    """Divergence-theorem volume; positive for outward orientation."""
    x = mesh.vertices[mesh.faces]
    # translate to the centroid for round-off robustness
    c = mesh.vertices.mean(axis=0)
    x = x - c
    return float(np.einsum("ij,ij->i", x[:, 0], np.cross(x[:, 1], x[:, 2])).sum() / 6.0)


def interface_length(mesh: TwoPhaseSurfaceMesh) -> float:
    g = mesh.interface
    if g.empty:
        return 0.0
    x = mesh.gamma_positions()
    return float(np.linalg.norm(x[g.edges[:, 1]] - x[g.edges[:, 0]], axis=1).sum())


def reduced_volume(mesh: TwoPhaseSurfaceMesh) -> float:
    vol = enclosed_volume(mesh)
    if vol <= 0:
        raise MeshError("reduced volume needs a positive enclosed volume")
    return float(6.0 * np.sqrt(np.pi) * vol / surface_area(mesh) ** 1.5)


def interface_conormals(mesh: TwoPhaseSurfaceMesh, phase: int) -> np.ndarray:
    """Outer unit conormal of `phase` on every interface edge, shape (E_gamma, 3).

    The conormal lies in the plane of the adjacent phase face, is orthogonal to
    the edge and points away from that face.
    """
    g = mesh.interface
    col = 0 if phase == 1 else 1
    fids = g.edge_faces[:, col]
    gx = mesh.gamma_positions()
    a = gx[g.edges[:, 0]]
    b = gx[g.edges[:, 1]]
    t = b - a
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    fx = mesh.vertices[mesh.faces[fids]]
    # opposite vertex: the one not on the edge
    ga = g.vertices[g.edges[:, 0]]
    gb = g.vertices[g.edges[:, 1]]
    fv = mesh.faces[fids]
    opp_mask = (fv != ga[:, None]) & (fv != gb[:, None])
    opp = fx[opp_mask]
    d = opp - a
    d -= np.einsum("ij,ij->i", d, t)[:, None] * t
    return -d / np.linalg.norm(d, axis=1, keepdims=True)


def weak_conormal_init(mesh: TwoPhaseSurfaceMesh, phase: int) -> np.ndarray:
    """Nodal weak conormal from the lumped curve mass problem, shape (K_gamma, 3)."""
    g = mesh.interface
    if g.empty:
        raise MeshError("mesh has no interface")
    mu = interface_conormals(mesh, phase)
    gx = mesh.gamma_positions()
    length = np.linalg.norm(gx[g.edges[:, 1]] - gx[g.edges[:, 0]], axis=1)
    num = np.zeros((g.n_vertices, 3))
    den = np.zeros(g.n_vertices)
    for a in range(2):
        np.add.at(num, g.edges[:, a], 0.5 * length[:, None] * mu)
        np.add.at(den, g.edges[:, a], 0.5 * length)
    return num / den[:, None]
