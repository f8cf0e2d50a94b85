from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from memflow.generators import icosphere, octahedron, split_sphere
from memflow.mesh import TwoPhaseSurfaceMesh

settings.register_profile("memflow", deadline=None, max_examples=50)
settings.load_profile("memflow")


def cube_mesh(inward: bool = False) -> TwoPhaseSurfaceMesh:
    """Unit cube [0,1]^3, two triangles per face, one phase."""
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    f = []
    for a, b, c, d in quads:
        f += [(a, b, c), (a, c, d)]
    f = np.array(f)
    if inward:
        f = f[:, ::-1]
    return TwoPhaseSurfaceMesh(v, f)


def rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def octa():
    return octahedron()


@pytest.fixture
def sphere4():
    return split_sphere(4)


@pytest.fixture
def sphere6():
    return split_sphere(6)


@pytest.fixture
def ico2():
    return icosphere(2)


_ACCEPTANCE_LINES: list = []


@pytest.fixture
def report():
    """Record one summary line per acceptance criterion."""

    def add(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return add


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
