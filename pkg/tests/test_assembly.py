from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

from memflow.assembly import (
    DiscreteState,
    PhaseParams,
    assemble_coupled_system,
    assemble_phase_block,
    build_geometry,
    curve_mass_matrix,
    explicit_forcing,
)
from memflow.calculus import shape_gradients
from memflow.flow import initialize_state
from memflow.generators import split_sphere, two_cap_sphere
from memflow.mesh import interface_length
from memflow.oracles import dense_reference_solve
from memflow.solver import SolverConfig, solve_coupled

from conftest import rotation

DIRECT = SolverConfig(method="direct")


def assemble(mesh, params, state=None, lambdas=None):
    geom = build_geometry(mesh, params.theta)
    state = initialize_state(mesh, params, geom) if state is None else state
    blocks = {i: assemble_phase_block(geom, params, state, i, lambdas=lambdas) for i in geom.labels}
    return assemble_coupled_system(blocks, mesh, params), geom, state


def test_params_validation():
    assert PhaseParams(alpha=2.0).alpha == (2.0, 2.0)
    for kw in ({"alpha": (1.0, 0.0)}, {"sigma": -1.0}, {"rho": -1.0}, {"theta": 1.5}, {"c1": 2},
               {"dt": 0.0}, {"conserve": "mass"}, {"multiplier_mode": "lagged"}, {"alpha": (1.0, 1.0, 1.0)}):
        with pytest.raises(ValueError):
            PhaseParams(**kw)


def test_curve_mass_matrix_examples(sphere6):
    x = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float)
    e = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
    assert np.allclose(curve_mass_matrix((x, e)).diagonal(), 1.0)
    x2 = np.array([[0, 0, 0], [2.0, 0, 0], [2, 3.0, 0]])
    M = curve_mass_matrix((x2, np.array([[0, 1], [1, 2], [2, 0]])))
    assert M.diagonal()[1] == pytest.approx((2.0 + 3.0) / 2)
    Mg = curve_mass_matrix(sphere6)
    assert sp.triu(Mg, 1).nnz == 0 and sp.tril(Mg, -1).nnz == 0
    assert Mg.sum() == pytest.approx(interface_length(sphere6), rel=1e-14)


def test_phase_blocks_are_square_with_expected_slots(sphere4):
    sys, _, _ = assemble(sphere4, PhaseParams(sigma=0.3, rho=1.0, alpha_g=(0.5, -0.2)))
    ng = sphere4.interface.n_vertices
    for i, blk in sys.blocks.items():
        n = sphere4.phase_topology(i).n_vertices
        assert blk.B.shape == (6 * n + 6 * ng,) * 2
        assert blk.slices["m"].stop == blk.B.shape[0]


def test_c0_product_operator_has_no_cross_phase_entries(sphere4):
    sys, _, _ = assemble(sphere4, PhaseParams(c1=0))
    n1 = sys.blocks[1].B.shape[0]
    B = sys.B.tocsr()
    assert B[:n1, n1:].nnz == 0 and B[n1:, :n1].nnz == 0
    assert "Phi" not in sys.layout


def test_c1_phi_coupling_is_transposed_pattern(sphere4):
    sys, _, _ = assemble(sphere4, PhaseParams(c1=1))
    off = sys.product_offsets["Phi"]
    B = sys.B.tocsr()
    col = (B[:, off:] != 0).astype(int)
    row = (B[off:, :] != 0).astype(int)
    assert (col - row.T).nnz == 0
    assert col.nnz == 2 * 3 * sphere4.interface.n_vertices


def test_c1_solution_has_opposite_conormals():
    mesh = two_cap_sphere(rings=6, equator=24)
    p = PhaseParams(c1=1, kappa_bar=(-0.5, 0.3), alpha=(1.0, 2.0), sigma=0.2)
    sys, _, _ = assemble(mesh, p)
    f = solve_coupled(sys, DIRECT).fields
    assert np.abs(f["m"][1] + f["m"][2]).max() < 1e-10
    assert f["Phi"] is not None


def test_pack_inverts_unpack(sphere4, rng):
    sys, _, _ = assemble(sphere4, PhaseParams(c1=1))
    z = rng.normal(size=sys.size)
    assert np.array_equal(sys.pack(sys.unpack(z)), z)


def test_homogeneous_system_has_zero_solution(sphere4):
    sys, _, _ = assemble(sphere4, PhaseParams(c1=1, theta=0.5))
    res = solve_coupled(sys, DIRECT, rhs=np.zeros(sys.size))
    assert np.all(res.z == 0)
    assert np.all(dense_reference_solve(sys, np.zeros(sys.size)) == 0)


def _solved(mesh, params):
    sys, geom, state = assemble(mesh, params)
    return solve_coupled(sys, DIRECT).fields, geom, state


@pytest.mark.parametrize("c1", [0, 1])
def test_rows_hold_after_solve(c1):
    """Curvature rows, curve row and nodal junction rows, re-assembled by element loops."""
    mesh = two_cap_sphere(ratio=0.6, rings=6, equator=24)
    mesh = mesh.with_vertices(mesh.vertices * [1.2, 1.0, 0.9])
    p = PhaseParams(c1=c1, alpha=(1.0, 1.5), kappa_bar=(-0.5, 0.5), alpha_g=(0.3, -0.1),
                    sigma=0.5, rho=1.0, theta=0.2)
    f, geom, state = _solved(mesh, p)
    X1 = state.X + f["dX"]
    curve = geom.curve
    for i in (1, 2):
        pg = geom.phases[i]
        x1 = X1[pg.vertices]
        # independent stiffness action, one element at a time
        ax = np.zeros_like(x1)
        for tri in pg.elem.faces:
            g = shape_gradients(mesh.vertices[pg.vertices][tri])
            area = 0.5 * np.linalg.norm(np.cross(*(mesh.vertices[pg.vertices][tri[1:]]
                                                  - mesh.vertices[pg.vertices][tri[0]])))
            ax[tri] += area * (g @ g.T) @ x1[tri]
        q = pg.q.q
        qqy = np.einsum("kab,kbc,kc->ka", q, q, f["Y"][i])
        r = pg.mass[:, None] * qqy / p.a(i) + ax + p.kb(i) * pg.mass[:, None] * pg.omega
        r[pg.gamma_local] -= curve.mass[:, None] * f["m"][i]
        assert np.abs(r).max() < 1e-10 * max(1.0, np.abs(ax).max())
        junction = p.ag(i) * f["kappa_gamma"] + f["Y"][i][pg.gamma_local]
        if c1:
            junction += f["Phi"]
        assert np.abs(junction).max() < 1e-10
    xg = X1[mesh.interface.vertices]
    rc = curve.mass[:, None] * f["kappa_gamma"] + curve.stiffness @ xg
    assert np.abs(rc).max() < 1e-10


def test_rigid_motion_equivariance(rng):
    mesh = two_cap_sphere(ratio=0.5, rings=6, equator=24)
    mesh = mesh.with_vertices(mesh.vertices * [1.3, 1.0, 0.8])
    p = PhaseParams(c1=1, kappa_bar=(-1.0, 0.5), sigma=0.3, rho=0.5, alpha_g=(0.2, 0.1))
    R = rotation(rng)
    f0, _, _ = _solved(mesh, p)
    f1, _, _ = _solved(mesh.with_vertices(mesh.vertices @ R.T + [0.5, -1.0, 2.0]), p)
    assert np.abs(f0["dX"] @ R.T - f1["dX"]).max() < 1e-9
    for i in (1, 2):
        assert np.abs(f0["m"][i] @ R.T - f1["m"][i]).max() < 1e-9
    assert np.abs(f0["kappa_gamma"] @ R.T - f1["kappa_gamma"]).max() < 1e-9


def _lumped_bending(x, faces, kappa, alpha, kb):
    p = x[faces]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    area = 0.5 * np.linalg.norm(n, axis=1)
    nu = n / (2 * area[:, None])
    d = kappa[faces] - kb * nu[:, None, :]
    return 0.5 * alpha * np.sum(area / 3 * np.sum(d * d, axis=(1, 2)))


def test_forcing_hemisphere_element_oracle():
    """Y = 0, kappa = -2 omega on the upper hemisphere: brute-force element loop."""
    mesh = split_sphere(6)
    alpha, kb = 1.3, -0.7
    p = PhaseParams(alpha=alpha, kappa_bar=kb)
    geom = build_geometry(mesh, 0.0)
    pg = geom.phases[1]
    kappa = -2.0 * pg.omega
    state = DiscreteState(mesh.vertices.copy(), {1: np.zeros((pg.n, 3)), 2: np.zeros((geom.phases[2].n, 3))},
                          {1: kappa, 2: -2.0 * geom.phases[2].omega}, {1: None, 2: None},
                          np.zeros((mesh.interface.n_vertices, 3)))
    f = explicit_forcing(geom, state, p, 1)

    x = mesh.vertices[pg.vertices]
    oracle = np.zeros_like(x)
    for tri in pg.elem.faces:
        pts = x[tri]
        n = np.cross(pts[1] - pts[0], pts[2] - pts[0])
        area = 0.5 * np.linalg.norm(n)
        nu = n / np.linalg.norm(n)
        g = shape_gradients(pts)
        w = np.mean([alpha * np.dot(kappa[q] - kb * nu, kappa[q] - kb * nu) for q in tri])
        kmean = kappa[tri].mean(axis=0)
        for a, q in enumerate(tri):
            oracle[q] += area * (-0.5 * w * g[a] - alpha * kb * np.dot(kmean, g[a]) * nu)
    assert np.abs(f - oracle).max() < 1e-12


def test_forcing_is_minus_energy_gradient():
    """With Y = 0 the forcing is the negative position gradient of the lumped energy at frozen kappa."""
    mesh = split_sphere(4)
    mesh = mesh.with_vertices(mesh.vertices * [1.2, 0.9, 1.0])
    alpha, kb = 1.0, -0.8
    p = PhaseParams(alpha=alpha, kappa_bar=kb)
    geom = build_geometry(mesh, 0.0)
    pg = geom.phases[1]
    kappa = np.random.default_rng(3).normal(size=(pg.n, 3))
    state = DiscreteState(mesh.vertices.copy(), {1: np.zeros((pg.n, 3)), 2: np.zeros((geom.phases[2].n, 3))},
                          {1: kappa, 2: np.zeros((geom.phases[2].n, 3))}, {1: None, 2: None},
                          np.zeros((mesh.interface.n_vertices, 3)))
    f = explicit_forcing(geom, state, p, 1)
    x = mesh.vertices[pg.vertices]
    faces = pg.elem.faces
    h = 1e-6
    fd = np.zeros_like(x)
    for k in range(x.shape[0]):
        for c in range(3):
            xp, xm = x.copy(), x.copy()
            xp[k, c] += h
            xm[k, c] -= h
            fd[k, c] = (_lumped_bending(xp, faces, kappa, alpha, kb)
                        - _lumped_bending(xm, faces, kappa, alpha, kb)) / (2 * h)
    assert np.abs(f + fd).max() < 1e-7 * max(1.0, np.abs(fd).max())


def test_state_dimension_mismatch_rejected(sphere4):
    p = PhaseParams()
    geom = build_geometry(sphere4, 0.0)
    state = initialize_state(sphere4, p, geom)
    state.Y[1] = state.Y[1][:-1]
    with pytest.raises(ValueError, match="dimensions"):
        assemble_phase_block(geom, p, state, 1)


def test_inconsistent_index_maps_rejected(sphere4, sphere6):
    p = PhaseParams()
    _, geom, state = assemble(sphere4, p)
    blocks = {i: assemble_phase_block(geom, p, state, i) for i in (1, 2)}
    with pytest.raises(ValueError, match="index maps"):
        assemble_coupled_system(blocks, sphere6, p)


def test_multiplier_terms_enter_motion_rows_only(sphere4):
    p = PhaseParams()
    geom = build_geometry(sphere4, 0.0)
    state = initialize_state(sphere4, p, geom)
    b0 = assemble_phase_block(geom, p, state, 1)
    b1 = assemble_phase_block(geom, p, state, 1, lambdas=np.array([0.7, -0.3, 0.0]))
    d = b1.g - b0.g
    sl = b0.slices["dX"]
    assert np.abs(np.delete(d, np.arange(sl.start, sl.stop))).max() == 0
    pg = geom.phases[1]
    x = sphere4.vertices[pg.vertices]
    expect = -(0.7 * pg.mass[:, None] * pg.omega - 0.3 * (pg.stiffness @ x))
    assert np.allclose(d[sl].reshape(-1, 3), expect, atol=1e-14)
