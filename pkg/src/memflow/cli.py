"""Command-line interface: ``memflow run``, ``memflow verify`` and ``memflow gen``."""

from __future__ import annotations

import dataclasses
import logging
import sys

import click
import numpy as np

from . import io as mio
from .generators import SHAPES, generate_mesh
from .mesh import MeshError, validate


def _parse_kv(pairs, shape):
    keys = mio._shape_keys(shape)
    out = {}
    for item in pairs:
        if "=" not in item:
            raise click.BadParameter(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        if k not in keys:
            raise click.BadParameter(f"unknown argument {k!r} for shape {shape}")
        out[k] = mio._convert(v, keys[k])
    return out


@click.group()
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def main(verbose):
    """Two-phase membrane flow simulations."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--solver", type=click.Choice(["auto", "direct", "bicgstab", "gmres"]))
@click.option("--solver-tol", type=float)
@click.option("--solver-maxit", type=int)
@click.option("--steps", type=int)
@click.option("--out", "out_dir", type=click.Path(file_okay=False))
@click.option("--dump-matrix", type=click.Path(dir_okay=False),
              help="Write the first-step coupled matrix in Matrix Market format and exit.")
def run(config_path, solver, solver_tol, solver_maxit, steps, out_dir, dump_matrix):
    """Run a simulation described by an INI config file."""
    try:
        cfg = mio.parse_config(config_path)
    except (mio.ConfigError, MeshError) as exc:
        raise click.ClickException(str(exc)) from exc
    sk = {}
    if solver:
        sk["method"] = solver
    if solver_tol is not None:
        sk["tol"] = solver_tol
    if solver_maxit is not None:
        sk["maxit"] = solver_maxit
    if sk:
        cfg.solver = dataclasses.replace(cfg.solver, **sk)
    if steps is not None:
        cfg.steps = steps
    if dump_matrix:
        _dump(cfg, dump_matrix)
        return
    from .flow import run as run_flow

    res = run_flow(cfg, out_dir)
    last = res.records[-1]
    click.echo(f"steps={res.state.step} time={res.state.time:.6g} energy={last.energy:.10g} "
               f"volume={last.volume:.10g} area1={last.area1:.10g} area2={last.area2:.10g}")
    if res.error is not None:
        raise click.ClickException(f"run stopped early: {res.error}")


def _dump(cfg, path):
    from scipy.io import mmwrite

    from .assembly import assemble_coupled_system, assemble_phase_block, build_geometry
    from .flow import initialize_state

    mesh = mio.build_mesh(cfg)
    p = cfg.params
    geom = build_geometry(mesh, p.theta)
    state = initialize_state(mesh, p, geom)
    blocks = {i: assemble_phase_block(geom, p, state, i) for i in geom.labels}
    system = assemble_coupled_system(blocks, mesh, p)
    mmwrite(path, system.reduced_matrix)
    click.echo(f"wrote {system.size}x{system.size} matrix to {path}")


@main.group()
def verify():
    """Reference computations."""


@verify.command("sphere-ode")
@click.option("--alpha", type=float, default=1.0, show_default=True)
@click.option("--kappa-bar", type=float, default=-0.5, show_default=True)
@click.option("--r0", type=float, default=1.0, show_default=True)
@click.option("--t-end", type=float, default=0.1, show_default=True)
@click.option("--dt-ode", type=float, default=1e-5, show_default=True)
@click.option("--samples", type=int, default=11, show_default=True)
@click.option("--conserve", type=click.Choice(["none", "volume", "area", "volume+area"]), default="none")
def sphere_ode(alpha, kappa_bar, r0, t_end, dt_ode, samples, conserve):
    """Sphere radius under the flow from two independent derivations."""
    from .oracles import sphere_radius_ode

    a = sphere_radius_ode(alpha, kappa_bar, r0, t_end, dt_ode, "velocity", conserve)
    b = sphere_radius_ode(alpha, kappa_bar, r0, t_end, dt_ode, "energy", conserve)
    n = min(a.t.size, b.t.size)
    idx = np.unique(np.linspace(0, n - 1, max(2, samples)).round().astype(int))
    click.echo("t,R_velocity,R_energy")
    for k in idx:
        click.echo(f"{a.t[k]:.10g},{a.R[k]:.15g},{b.R[k]:.15g}")
    gap = float(np.max(np.abs(a.R[:n] - b.R[:n])))
    click.echo(f"# max derivation gap {gap:.3e}")
    if a.truncated or b.truncated:
        click.echo("# radius reached zero: output truncated")


@verify.command("gauss-bonnet")
@click.argument("mesh_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--reference", type=float, help="Exact total Gaussian curvature per phase.")
@click.option("--c1", type=int, default=0, show_default=True)
def gauss_bonnet(mesh_path, reference, c1):
    """Discrete Gauss-Bonnet residual of each phase of an OFF mesh."""
    from .assembly import PhaseParams
    from .flow import initialize_state
    from .oracles import gauss_bonnet_residual

    try:
        mesh = mio.read_off(mesh_path)
    except MeshError as exc:
        raise click.ClickException(str(exc)) from exc
    state = initialize_state(mesh, PhaseParams(c1=c1))
    for i, r in gauss_bonnet_residual(mesh, state, reference).items():
        click.echo(f"phase {i}: residual {r:.6e}")


@main.command()
@click.argument("shape", type=click.Choice(SHAPES))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--arg", "args", multiple=True, metavar="KEY=VALUE", help="Generator argument.")
def gen(shape, out_path, args):
    """Generate an initial mesh and write it as OFF."""
    mesh = generate_mesh(shape, **_parse_kv(args, shape))
    rep = validate(mesh)
    if not rep.ok:
        raise click.ClickException("; ".join(rep.issues))
    mio.write_off(mesh, out_path)
    counts = ", ".join(f"{k}={v}" for k, v in mesh.counts().items())
    click.echo(f"wrote {out_path} ({counts})")


if __name__ == "__main__":
    sys.exit(main())
