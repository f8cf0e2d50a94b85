from __future__ import annotations

import numpy as np
import pytest

from memflow.assembly import PhaseParams
from memflow.flow import (
    CSV_COLUMNS,
    DegenerationError,
    discrete_energy,
    initialize_state,
    integrate,
    run,
    sphere_radius,
    state_energy,
    time_step,
)
from memflow.generators import icosphere, split_sphere, torus_with_caps, two_cap_sphere
from memflow.io import SimulationConfig, read_csv
from memflow.mesh import TwoPhaseSurfaceMesh, surface_area
from memflow.oracles import sphere_radius_ode
from memflow.solver import SolverConfig

from conftest import cube_mesh

DIRECT = SolverConfig(method="direct")


def test_sphere_radius_detection():
    assert sphere_radius(icosphere(2, radius=2.5).vertices) == pytest.approx(2.5)
    assert sphere_radius(cube_mesh().vertices) is None


def test_initial_curvature_on_sphere_caps(sphere6):
    s = initialize_state(sphere6, PhaseParams(kappa_bar=(0.3, -0.2), alpha=(2.0, 1.0)))
    for i in (1, 2):
        v = sphere6.phase_topology(i).vertices
        from memflow.mesh import vertex_normals

        w = vertex_normals(sphere6).phase[i]
        assert np.allclose(np.linalg.norm(s.kappa[i], axis=1), 2 * np.linalg.norm(w, axis=1))
        assert np.allclose(s.Y[i], (2.0, 1.0)[i - 1] * (s.kappa[i] - (0.3, -0.2)[i - 1] * w))
        assert v.size == s.kappa[i].shape[0]


def test_initial_curve_curvature_regular_polygon():
    # a regular polygon on a circle of radius r: the lumped curvature is exactly 1/r
    for r in (1.0, 0.6):
        m = two_cap_sphere(rings=6, equator=24)
        m = m.with_vertices(m.vertices * [r, r, 1.0])
        kg = initialize_state(m, PhaseParams()).kappa_gamma
        x = m.gamma_positions()
        assert np.allclose(kg, -x / r ** 2, atol=1e-12)


def test_initial_curvature_from_weak_problem_on_cube():
    s = initialize_state(cube_mesh(), PhaseParams())
    # total mean curvature vector integrates to zero on a closed surface
    from memflow.assembly import build_geometry

    pg = build_geometry(cube_mesh(), 0.0).phases[1]
    assert np.allclose(pg.mass @ s.kappa[1], 0.0, atol=1e-13)


def test_energy_of_unit_sphere():
    m = icosphere(4)
    p = PhaseParams()
    assert state_energy(initialize_state(m, p), m, p) == pytest.approx(8 * np.pi, rel=2e-2)


def test_energy_of_zero_curvature_is_zero(sphere6):
    kappa = {i: np.zeros((sphere6.phase_topology(i).n_vertices, 3)) for i in (1, 2)}
    ng = sphere6.interface.n_vertices
    m = {i: np.zeros((ng, 3)) for i in (1, 2)}
    assert discrete_energy(sphere6, kappa, np.zeros((ng, 3)), m, PhaseParams()) == 0.0
    # line tension alone contributes its length
    e = discrete_energy(sphere6, kappa, np.zeros((ng, 3)), m, PhaseParams(sigma=2.0))
    from memflow.mesh import interface_length

    assert e == pytest.approx(2.0 * interface_length(sphere6), rel=1e-14)


def test_gaussian_energy_totals_four_pi_with_c1():
    mesh = split_sphere(6)
    g = 0.7
    p0 = PhaseParams(c1=1, kappa_bar=(-0.5, -0.5))
    p1 = p0.with_(alpha_g=(g, g))
    out = time_step(initialize_state(mesh, p1), mesh, p1, DIRECT)
    s = out.state
    e1 = discrete_energy(mesh, s.kappa, s.kappa_gamma, s.m, p1)
    e0 = discrete_energy(mesh, s.kappa, s.kappa_gamma, s.m, p0)
    assert e1 - e0 == pytest.approx(4 * np.pi * g, rel=1e-10)


def test_sphere_one_step_matches_ode():
    p = PhaseParams(kappa_bar=(-0.5, -0.5), c1=1, dt=1e-3)
    dR_ode = sphere_radius_ode(1.0, -0.5, 1.0, p.dt).R[-1] - 1.0
    errs = []
    for n in (4, 8, 16):
        m = split_sphere(n)
        out = time_step(initialize_state(m, p), m, p, DIRECT)
        dR = np.linalg.norm(out.state.X, axis=1).mean() - 1.0
        errs.append(abs(dR - dR_ode) / dR_ode)
    assert errs[0] > errs[1] > errs[2]
    assert errs[-1] < 0.1 and errs[1] / errs[2] > 3.5


@pytest.mark.parametrize("c1", [0, 1])
def test_step_invariants(c1):
    mesh = two_cap_sphere(ratio=0.5, rings=6, equator=24)
    mesh = mesh.with_vertices(mesh.vertices * [1.3, 1.0, 0.8])
    p = PhaseParams(c1=c1, kappa_bar=(-1.0, 0.5), sigma=0.2)
    state = initialize_state(mesh, p)
    for _ in range(3):
        out = time_step(state, mesh, p)
        for i in (1, 2):
            assert out.state.kappa[i].shape == state.kappa[i].shape
            assert out.state.m[i].shape == state.m[i].shape
        assert out.state.kappa_gamma.shape == state.kappa_gamma.shape
        if c1:
            assert np.abs(out.state.m[1] + out.state.m[2]).max() < 1e-10
        assert out.record.conformality < 1e-8
        assert out.record.is_finite()
        assert np.array_equal(out.state.X_prev, state.X)
        assert np.array_equal(out.mesh.faces, mesh.faces)
        state, mesh = out.state, out.mesh


def test_coarse_catenoid_energy_decreases():
    res = integrate(torus_with_caps(24), PhaseParams(sigma=0.1), 30)
    assert res.error is None
    e = np.array([r.energy for r in res.records[1:]])
    assert np.all(np.diff(e) <= 1e-6 * np.abs(e[:-1]))
    assert max(r.conformality for r in res.records[1:]) < 1e-8


def test_matching_spontaneous_curvature_sphere_is_stationary():
    # kappa = kappa_bar nu on a sphere of radius 2: the mean radial speed vanishes at O(h^2)
    speeds = []
    for level in (2, 3, 4):
        m = icosphere(level, radius=2.0)
        p = PhaseParams(kappa_bar=(-1.0, -1.0))
        out = time_step(initialize_state(m, p), m, p, DIRECT)
        speeds.append(abs(np.linalg.norm(out.state.X, axis=1).mean() - 2.0) / p.dt)
    assert speeds[0] > speeds[1] > speeds[2]
    assert np.log2(speeds[0] / speeds[2]) / 2 > 1.9 and speeds[2] < 5e-3


def _fail_after(monkeypatch, n_ok):
    import memflow.flow as flow
    from memflow.mesh import validate

    calls = {"n": 0}

    def fake(mesh, *a, **kw):
        rep = validate(mesh, *a, **kw)
        calls["n"] += 1
        if calls["n"] > n_ok:
            rep.issues.append("triangle 0 inverted")
            rep.ok = False
        return rep

    monkeypatch.setattr(flow, "validate", fake)


def test_degeneration_stops_run_and_keeps_records(monkeypatch):
    _fail_after(monkeypatch, 2)
    res = integrate(split_sphere(4), PhaseParams(kappa_bar=(-0.5, -0.5)), 5)
    assert isinstance(res.error, DegenerationError)
    assert "inverted" in str(res.error)
    assert len(res.records) == 3 and res.state.step == 2


def test_single_phase_surface(ico2):
    p = PhaseParams(kappa_bar=(-1.0, -1.0))
    res = integrate(ico2, p, 3)
    assert res.error is None and len(res.records) == 4
    assert res.records[-1].area2 == 0.0
    assert res.records[-1].area1 == pytest.approx(surface_area(res.mesh))


def test_stop_velocity_ends_run_early():
    m = icosphere(2)
    res = integrate(m, PhaseParams(), 50, stop_velocity=1e6)
    assert len(res.records) == 2


def test_run_zero_steps_writes_snapshot_and_one_row(tmp_path):
    cfg = SimulationConfig(shape="split-sphere", shape_args={"n": 4}, steps=0, run_name="z")
    res = run(cfg, tmp_path)
    assert (tmp_path / "z_0.vtk").exists()
    rows = read_csv(tmp_path / "z.csv")
    assert len(rows) == 1 and tuple(rows[0]) == CSV_COLUMNS
    assert res.state.step == 0


def test_run_writes_cadence_and_final_snapshot(tmp_path):
    cfg = SimulationConfig(shape="split-sphere", shape_args={"n": 4}, steps=5, output_every=2, run_name="c",
                           params=PhaseParams(kappa_bar=(-0.5, -0.5)))
    run(cfg, tmp_path)
    names = sorted(p.name for p in tmp_path.glob("*.vtk"))
    assert names == ["c_0.vtk", "c_2.vtk", "c_4.vtk", "c_5.vtk"]
    rows = read_csv(tmp_path / "c.csv")
    assert [r["step"] for r in rows] == list(range(6))
    assert all(np.isfinite(list(r.values())).all() for r in rows)


def test_run_failure_preserves_outputs(tmp_path, monkeypatch):
    _fail_after(monkeypatch, 3)
    cfg = SimulationConfig(shape="split-sphere", shape_args={"n": 4}, steps=10, output_every=100,
                           run_name="bad", params=PhaseParams(kappa_bar=(-0.5, -0.5)))
    res = run(cfg, tmp_path)
    assert isinstance(res.error, DegenerationError)
    assert len(read_csv(tmp_path / "bad.csv")) == 4
    assert (tmp_path / "bad_0.vtk").exists() and (tmp_path / "bad_3.vtk").exists()


def test_time_step_rejects_mismatched_state(sphere4, sphere6):
    p = PhaseParams()
    with pytest.raises(ValueError):
        time_step(initialize_state(sphere4, p), sphere6, p)


def test_mesh_without_interface_in_two_phase_params():
    m = TwoPhaseSurfaceMesh(icosphere(1).vertices, icosphere(1).faces)
    out = time_step(initialize_state(m, PhaseParams(c1=1)), m, PhaseParams(c1=1))
    assert out.state.Phi is None
