"""File formats and run configuration.

Meshes use ASCII OFF with a phase label appended to each face row
(``3 a b c phase``).  Snapshots are legacy ASCII VTK PolyData and diagnostics
are written as CSV.  Run configuration is an INI file read with
:mod:`configparser`.
"""

from __future__ import annotations

import configparser
import csv
import inspect
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import DiscreteState, PhaseParams
from .flow import CSV_COLUMNS, DiagnosticsRecord
from .generators import BUILDERS, SHAPES, generate_mesh
from .mesh import MeshError, TwoPhaseSurfaceMesh, vertex_normals
from .solver import SolverConfig


class ConfigError(ValueError):
    """Invalid run configuration."""


# -- OFF -----------------------------------------------------------------------------
def _tokens(text: str):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def read_off(path) -> TwoPhaseSurfaceMesh:
    """Read an OFF file whose face rows may carry a trailing phase label."""
    lines = list(_tokens(Path(path).read_text()))
    if not lines or not lines[0].startswith("OFF"):
        raise MeshError(f"{path}: missing OFF header")
    head = lines[0][3:].split()
    rest = lines[1:]
    if not head:
        head, rest = rest[0].split(), rest[1:]
    try:
        nv, nf = int(head[0]), int(head[1])
        verts = np.array([[float(t) for t in rest[k].split()[:3]] for k in range(nv)])
        faces, phase = [], []
        for k in range(nv, nv + nf):
            tok = rest[k].split()
            if int(tok[0]) != 3:
                raise MeshError(f"{path}: only triangles are supported")
            faces.append([int(t) for t in tok[1:4]])
            phase.append(int(tok[4]) if len(tok) > 4 else 1)
    except (IndexError, ValueError) as exc:
        raise MeshError(f"{path}: cannot parse OFF data ({exc})") from exc
    if verts.shape != (nv, 3):
        raise MeshError(f"{path}: malformed vertex rows")
    return TwoPhaseSurfaceMesh(verts, np.array(faces, dtype=int).reshape(-1, 3), np.array(phase))


def load_mesh(path) -> TwoPhaseSurfaceMesh:
    return read_off(path)


def write_off(mesh: TwoPhaseSurfaceMesh, path) -> None:
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_faces} 0\n")
        for x in mesh.vertices:
            fh.write(f"{x[0]:.17g} {x[1]:.17g} {x[2]:.17g}\n")
        for f, p in zip(mesh.faces, mesh.phase):
            fh.write(f"3 {f[0]} {f[1]} {f[2]} {p}\n")


# -- VTK ------------------------------------------------------------------------------
def _point_fields(mesh: TwoPhaseSurfaceMesh, state: DiscreteState | None):
    K = mesh.n_vertices
    ks = np.zeros(K)
    yn = np.zeros(K)
    cnt = np.zeros(K)
    ph = np.zeros(K, dtype=int)
    for i in mesh.phases:
        ph[mesh.phase_topology(i).vertices] = i
    ph[mesh.interface.vertices] = 0
    if state is not None:
        normals = vertex_normals(mesh)
        for i in mesh.phases:
            v = mesh.phase_topology(i).vertices
            w = normals.phase[i]
            w = w / np.linalg.norm(w, axis=1, keepdims=True)
            np.add.at(ks, v, np.sum(state.kappa[i] * w, axis=1))
            np.add.at(yn, v, np.linalg.norm(state.Y[i], axis=1))
            np.add.at(cnt, v, 1.0)
        ks /= np.maximum(cnt, 1)
        yn /= np.maximum(cnt, 1)
    return ks, yn, ph


def write_vtk(mesh: TwoPhaseSurfaceMesh, state: DiscreteState | None, path) -> None:
    """Legacy ASCII VTK PolyData snapshot.

    Point data: ``kappa_scalar`` (curvature vector dotted with the unit vertex
    normal, averaged over phases at interface vertices), ``Y_norm`` and
    ``phase`` (0 on the interface).  Cell data: ``phase``.
    """
    ks, yn, ph = _point_fields(mesh, state)
    K, J = mesh.n_vertices, mesh.n_faces
    out = ["# vtk DataFile Version 3.0", "memflow snapshot", "ASCII", "DATASET POLYDATA",
           f"POINTS {K} double"]
    out += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    out.append(f"POLYGONS {J} {4 * J}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
    out.append(f"POINT_DATA {K}")
    out += ["SCALARS kappa_scalar double 1", "LOOKUP_TABLE default"]
    out += [f"{v:.17g}" for v in ks]
    out += ["SCALARS Y_norm double 1", "LOOKUP_TABLE default"]
    out += [f"{v:.17g}" for v in yn]
    out += ["SCALARS phase int 1", "LOOKUP_TABLE default"]
    out += [str(int(v)) for v in ph]
    out.append(f"CELL_DATA {J}")
    out += ["SCALARS phase int 1", "LOOKUP_TABLE default"]
    out += [str(int(v)) for v in mesh.phase]
    Path(path).write_text("\n".join(out) + "\n")


# -- CSV ------------------------------------------------------------------------------
def write_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(CSV_COLUMNS))
        w.writeheader()
        for r in records:
            row = r.row() if isinstance(r, DiagnosticsRecord) else r
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k in ("step", "krylov_iters", "fp_passes") else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


# -- configuration ---------------------------------------------------------------------------
@dataclass
class SimulationConfig:
    mesh_file: str | None = None
    shape: str | None = "split-sphere"
    shape_args: dict = field(default_factory=dict)
    params: PhaseParams = field(default_factory=PhaseParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    steps: int = 0
    out_dir: str = "output"
    output_every: int = 1
    run_name: str = "run"
    stop_velocity: float = 0.0


_MODEL_KEYS = {
    "alpha1": ("alpha", 0), "alpha2": ("alpha", 1),
    "kappa_bar1": ("kappa_bar", 0), "kappa_bar2": ("kappa_bar", 1),
    "alpha_g1": ("alpha_g", 0), "alpha_g2": ("alpha_g", 1),
}
_SECTIONS = {
    "mesh": None,  # checked against the generator signature
    "model": set(_MODEL_KEYS) | {"alpha", "kappa_bar", "alpha_g", "sigma", "rho", "theta", "c1"},
    "time": {"dt", "steps"},
    "constraints": {"conserve", "multiplier_mode", "fixedpoint_tol", "fixedpoint_maxit"},
    "solver": {"method", "tol", "maxit", "restart"},
    "output": {"dir", "every", "name", "stop_velocity"},
}


def _shape_keys(shape: str) -> dict:
    fn = BUILDERS[shape]
    return {k: p.default for k, p in inspect.signature(fn).parameters.items()}


def _convert(value: str, default):
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(float(v) for v in value.replace(",", " ").split())
    if default is None:
        return int(value) if value.lstrip("-").isdigit() else float(value)
    return value


def parse_config_text(text: str, base_dir: str | Path = ".") -> SimulationConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        allowed = _SECTIONS[sec]
        if allowed is not None:
            bad = set(cp[sec]) - allowed
            if bad:
                raise ConfigError(f"unknown key(s) in [{sec}]: {sorted(bad)}")

    cfg = SimulationConfig()
    try:
        if cp.has_section("mesh"):
            ms = dict(cp["mesh"])
            if "file" in ms:
                f = Path(ms.pop("file"))
                if not f.is_absolute():
                    f = Path(base_dir) / f
                if not f.exists():
                    raise ConfigError(f"mesh file {f} does not exist")
                if ms:
                    raise ConfigError(f"[mesh] file cannot be combined with {sorted(ms)}")
                cfg.mesh_file, cfg.shape = str(f), None
            else:
                shape = ms.pop("shape", cfg.shape)
                if shape not in SHAPES:
                    raise ConfigError(f"unknown shape {shape!r}; choose from {SHAPES}")
                keys = _shape_keys(shape)
                bad = set(ms) - set(keys)
                if bad:
                    raise ConfigError(f"unknown key(s) for shape {shape}: {sorted(bad)}")
                cfg.shape = shape
                cfg.shape_args = {k: _convert(v, keys[k]) for k, v in ms.items()}

        pk = {}
        if cp.has_section("model"):
            md = cp["model"]
            per = {"alpha": [1.0, 1.0], "kappa_bar": [0.0, 0.0], "alpha_g": [0.0, 0.0]}
            for name in per:
                if name in md:
                    per[name] = [md.getfloat(name)] * 2
            for key, (name, idx) in _MODEL_KEYS.items():
                if key in md:
                    per[name][idx] = md.getfloat(key)
            pk.update({k: tuple(v) for k, v in per.items()})
            for key in ("sigma", "rho", "theta"):
                if key in md:
                    pk[key] = md.getfloat(key)
            if "c1" in md:
                pk["c1"] = md.getint("c1")
        if cp.has_section("time"):
            if "dt" in cp["time"]:
                pk["dt"] = cp["time"].getfloat("dt")
            if "steps" in cp["time"]:
                cfg.steps = cp["time"].getint("steps")
                if cfg.steps < 0:
                    raise ConfigError("steps must be non-negative")
        if cp.has_section("constraints"):
            cs = cp["constraints"]
            for key in ("conserve", "multiplier_mode"):
                if key in cs:
                    pk[key] = cs[key].strip()
            if "fixedpoint_tol" in cs:
                pk["fixedpoint_tol"] = cs.getfloat("fixedpoint_tol")
            if "fixedpoint_maxit" in cs:
                pk["fixedpoint_maxit"] = cs.getint("fixedpoint_maxit")
        cfg.params = PhaseParams(**pk)
        if cp.has_section("solver"):
            sv = cp["solver"]
            sk = {}
            if "method" in sv:
                sk["method"] = sv["method"].strip()
            if "tol" in sv:
                sk["tol"] = sv.getfloat("tol")
            for key in ("maxit", "restart"):
                if key in sv:
                    sk[key] = sv.getint(key)
            cfg.solver = SolverConfig(**sk)
        if cp.has_section("output"):
            out = cp["output"]
            cfg.out_dir = out.get("dir", cfg.out_dir)
            cfg.output_every = out.getint("every", cfg.output_every)
            cfg.run_name = out.get("name", cfg.run_name)
            cfg.stop_velocity = out.getfloat("stop_velocity", cfg.stop_velocity)
            if cfg.output_every < 1 or cfg.stop_velocity < 0:
                raise ConfigError("invalid output settings")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def parse_config(path) -> SimulationConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    return parse_config_text(p.read_text(), p.parent)


def serialize_config(cfg: SimulationConfig) -> str:
    """INI text that parses back to an equal configuration."""
    cp = configparser.ConfigParser(interpolation=None)
    if cfg.mesh_file is not None:
        cp["mesh"] = {"file": cfg.mesh_file}
    else:
        cp["mesh"] = {"shape": cfg.shape, **{k: _fmt(v) for k, v in cfg.shape_args.items()}}
    p = cfg.params
    cp["model"] = {
        "alpha1": _fmt(p.alpha[0]), "alpha2": _fmt(p.alpha[1]),
        "kappa_bar1": _fmt(p.kappa_bar[0]), "kappa_bar2": _fmt(p.kappa_bar[1]),
        "alpha_g1": _fmt(p.alpha_g[0]), "alpha_g2": _fmt(p.alpha_g[1]),
        "sigma": _fmt(p.sigma), "rho": _fmt(p.rho), "theta": _fmt(p.theta), "c1": str(p.c1),
    }
    cp["time"] = {"dt": _fmt(p.dt), "steps": str(cfg.steps)}
    cp["constraints"] = {
        "conserve": p.conserve, "multiplier_mode": p.multiplier_mode,
        "fixedpoint_tol": _fmt(p.fixedpoint_tol), "fixedpoint_maxit": str(p.fixedpoint_maxit),
    }
    s = cfg.solver
    cp["solver"] = {"method": s.method, "tol": _fmt(s.tol), "maxit": str(s.maxit), "restart": str(s.restart)}
    cp["output"] = {"dir": cfg.out_dir, "every": str(cfg.output_every), "name": cfg.run_name,
                    "stop_velocity": _fmt(cfg.stop_velocity)}
    lines = []
    for sec in cp.sections():
        lines.append(f"[{sec}]")
        lines += [f"{k} = {v}" for k, v in cp[sec].items()]
        lines.append("")
    return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return " ".join(repr(float(x)) for x in v)
    return str(v)


def build_mesh(cfg: SimulationConfig) -> TwoPhaseSurfaceMesh:
    if cfg.mesh_file is not None:
        return read_off(cfg.mesh_file)
    return generate_mesh(cfg.shape, **cfg.shape_args)


__all__ = [
    "ConfigError", "SimulationConfig", "build_mesh", "load_mesh", "parse_config",
    "parse_config_text", "read_csv", "read_off", "serialize_config", "write_csv", "write_off",
    "write_vtk",
]
