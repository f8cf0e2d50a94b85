"""Initial surfaces for the experiments.

Shapes:

``sphere``
    Icosahedral unit sphere, single phase.
``split-sphere``
    Octahedral unit sphere, upper half phase 1, lower half phase 2.  The
    equator is a union of mesh edges.
``two-cap-sphere``
    Ring-based unit sphere cut at a latitude chosen for a given phase-area
    ratio.  The default resolution reproduces the hemisphere counts
    (J_1, J_2) = (2274, 2274), (K_1, K_2) = (1188, 1188).
``dumbbell``
    Ring-based surface of revolution with a neck, split at the neck.
``torus-with-caps``
    Outer shell of a torus closed by two spherical caps (phase 1) with bounding
    box 6 x 6 x 6.  Ring size 64 gives (J_1, J_2) = (2048, 4096) and
    (K_1, K_2) = (1090, 2112).
``budding``
    Flattened octahedral sphere in a 4.2 x 4.2 x 1.1 box with four phase-1
    patches on the rim.
"""

from __future__ import annotations

import numpy as np

from .mesh import TwoPhaseSurfaceMesh

SHAPES = ("sphere", "split-sphere", "two-cap-sphere", "dumbbell", "torus-with-caps", "budding")


# -- polyhedral spheres ----------------------------------------------------------
def icosphere(level: int = 3, radius: float = 1.0) -> TwoPhaseSurfaceMesh:
    """Icosahedron refined ``level`` times by midpoint subdivision."""
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t), (0, -1, -t),
         (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    faces = [tuple(x) for x in f]
    for _ in range(level):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                p = verts[a] + verts[b]
                verts.append(p / np.linalg.norm(p))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    x = radius * np.array(verts)
    return TwoPhaseSurfaceMesh(x, _orient(x, np.array(faces)), np.ones(len(faces), int))


def _octasphere_raw(n: int):
    """Lattice points of the subdivided octahedron, deduplicated, and faces."""
    if n < 1:
        raise ValueError("subdivision must be >= 1")
    index = {}
    pts = []
    faces = []
    for sx in (1, -1):
        for sy in (1, -1):
            for sz in (1, -1):
                A = np.array([sx, 0, 0]) * n
                B = np.array([0, sy, 0]) * n
                C = np.array([0, 0, sz]) * n

                def vid(i, j):
                    p = ((n - i - j) * A + i * B + j * C) // n
                    key = tuple(int(c) for c in p)
                    if key not in index:
                        index[key] = len(pts)
                        pts.append(key)
                    return index[key]

                for i in range(n):
                    for j in range(n - i):
                        faces.append((vid(i, j), vid(i + 1, j), vid(i, j + 1)))
                        if i + j < n - 1:
                            faces.append((vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)))
    lattice = np.array(pts, float) / n
    return lattice, np.array(faces)


def _orient(x: np.ndarray, faces: np.ndarray, center=None) -> np.ndarray:
    """Flip faces of a star-shaped surface so normals point away from ``center``."""
    c = x.mean(axis=0) if center is None else np.asarray(center)
    p = x[faces]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    flip = np.einsum("ij,ij->i", n, p.mean(axis=1) - c) < 0
    faces = faces.copy()
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


def split_sphere(n: int = 8, radius: float = 1.0) -> TwoPhaseSurfaceMesh:
    """Octahedral sphere with 8 n^2 faces split at the equator (upper = phase 1)."""
    lat, faces = _octasphere_raw(n)
    x = radius * lat / np.linalg.norm(lat, axis=1, keepdims=True)
    faces = _orient(x, faces, np.zeros(3))
    phase = np.where(lat[faces].mean(axis=1)[:, 2] > 0, 1, 2)
    return TwoPhaseSurfaceMesh(x, faces, phase)


def octahedron() -> TwoPhaseSurfaceMesh:
    """Regular octahedron, upper four faces phase 1."""
    return split_sphere(1)


def budding(n: int = 28, cut: int | None = None, size=(4.2, 4.2, 1.1)) -> TwoPhaseSurfaceMesh:
    """Flattened sphere with four phase-1 patches around the +-x and +-y directions."""
    lat, faces = _octasphere_raw(n)
    x = lat / np.linalg.norm(lat, axis=1, keepdims=True)
    faces = _orient(x, faces, np.zeros(3))
    x = x * (0.5 * np.asarray(size, float))
    m = max(1, round(0.39 * n)) if cut is None else cut
    c = lat[faces].mean(axis=1)
    thr = 1.0 - m / n
    patch = (np.abs(c[:, 0]) > thr) | (np.abs(c[:, 1]) > thr)
    return TwoPhaseSurfaceMesh(x, faces, np.where(patch, 1, 2))


# -- surfaces of revolution --------------------------------------------------------
def _merge_rings(upper, lower, ua, la):
    """Triangulate the band between two rings ordered by azimuth."""
    a, b = len(upper), len(lower)
    tris = []
    if a == 1:
        for j in range(b):
            tris.append((upper[0], lower[j], lower[(j + 1) % b]))
        return tris
    if b == 1:
        for i in range(a):
            tris.append((upper[i], lower[0], upper[(i + 1) % a]))
        return tris
    i = j = 0
    while i < a or j < b:
        nu = ua[i + 1] if i + 1 < a else ua[0] + 2 * np.pi
        nl = la[j + 1] if j + 1 < b else la[0] + 2 * np.pi
        if j == b or (i < a and nu < nl):
            tris.append((upper[i % a], lower[j % b], upper[(i + 1) % a]))
            i += 1
        else:
            tris.append((upper[i % a], lower[j % b], lower[(j + 1) % b]))
            j += 1
    return tris


def surface_of_revolution(rings, band_phases) -> TwoPhaseSurfaceMesh:
    """Build a closed surface from rings ordered top to bottom.

    Parameters
    ----------
    rings : list of (z, r, count) tuples; count 1 denotes a pole (r ignored)
    band_phases : phase label of each band between consecutive rings
    """
    if len(band_phases) != len(rings) - 1:
        raise ValueError("one phase label per band required")
    pts, ids, angs = [], [], []
    for k, (z, r, cnt) in enumerate(rings):
        if cnt == 1:
            ids.append([len(pts)])
            angs.append(np.zeros(1))
            pts.append((0.0, 0.0, z))
            continue
        off = 0.5 * (k % 2)
        th = 2 * np.pi * (np.arange(cnt) + off) / cnt
        ids.append(list(range(len(pts), len(pts) + cnt)))
        angs.append(th)
        pts += [(r * np.cos(t), r * np.sin(t), z) for t in th]
    faces, phase = [], []
    for k in range(len(rings) - 1):
        tris = _merge_rings(ids[k], ids[k + 1], angs[k], angs[k + 1])
        faces += tris
        phase += [band_phases[k]] * len(tris)
    return TwoPhaseSurfaceMesh(np.array(pts), np.array(faces), np.array(phase))


def _ring_sizes(rings: int, equator: int, total: int | None = None) -> list:
    """Ring sizes growing like sin from a pole to the equator ring."""
    j = np.arange(1, rings)
    raw = equator * np.sin(j * np.pi / (2 * rings))
    if total is not None:
        raw *= (total - equator) / raw.sum()
    sizes = np.maximum(3, np.round(raw)).astype(int)
    if total is not None:
        diff = total - equator - sizes.sum()
        k = len(sizes) - 1
        while diff != 0:
            step = 1 if diff > 0 else -1
            sizes[k] += step
            diff -= step
            k = k - 1 if k > 0 else len(sizes) - 1
    return list(sizes) + [equator]


def two_cap_sphere(ratio: float = 1.0, rings: int = 19, equator: int = 100,
                   radius: float = 1.0) -> TwoPhaseSurfaceMesh:
    """Unit sphere cut at the latitude giving area(phase 1) / area(phase 2) = ratio.

    ``rings=19, equator=100`` gives 1188 vertices and 2274 triangles per phase.
    """
    if ratio <= 0:
        raise ValueError("area ratio must be positive")
    total = 1187 if (rings, equator) == (19, 100) else None
    sizes = _ring_sizes(rings, equator, total)
    cos_c = (1.0 - ratio) / (1.0 + ratio)
    phi_c = np.arccos(cos_c)
    ring_list = [(radius, 0.0, 1)]
    for j, cnt in enumerate(sizes, start=1):
        phi = j * phi_c / rings
        ring_list.append((radius * np.cos(phi), radius * np.sin(phi), cnt))
    for j, cnt in enumerate(reversed(sizes[:-1]), start=1):
        phi = phi_c + j * (np.pi - phi_c) / rings
        ring_list.append((radius * np.cos(phi), radius * np.sin(phi), cnt))
    ring_list.append((-radius, 0.0, 1))
    phases = [1] * rings + [2] * rings
    return surface_of_revolution(ring_list, phases)


def dumbbell(rings: int = 19, equator: int = 100, width: float = 1.5, height: float = 2.8,
             neck: float = 0.45, split: float = 0.5) -> TwoPhaseSurfaceMesh:
    """Surface of revolution with a waist, split at polar fraction ``split``.

    The profile is r = a sin(phi) (1 - neck sin(phi)^8), z = c cos(phi).
    """
    total = 2 * rings
    sizes = _ring_sizes(rings, equator)
    sizes = sizes + list(reversed(sizes[:-1]))
    s = np.linspace(0.0, 1.0, 2001)
    a, c = 0.5 * width / np.max(s * (1.0 - neck * s ** 8)), 0.5 * height
    ring_list = [(c, 0.0, 1)]
    for j, cnt in enumerate(sizes, start=1):
        phi = j * np.pi / total
        s = np.sin(phi)
        ring_list.append((c * np.cos(phi), a * s * (1.0 - neck * s ** 8), cnt))
    ring_list.append((-c, 0.0, 1))
    cut = int(round(split * total))
    phases = [1] * cut + [2] * (total - cut)
    return surface_of_revolution(ring_list, phases)


def torus_with_caps(n: int = 64) -> TwoPhaseSurfaceMesh:
    """Barrel r = 1 + 2 cos(psi), |psi| <= 60 deg, closed by two spherical caps.

    ``n`` is the azimuthal ring size (multiple of 8, at least 24).
    """
    if n % 8 or n < 24:
        raise ValueError("ring size must be a multiple of 8 and at least 24")
    step = n // 8
    extra = max(1, round(n / 16))
    cap_sizes = [step * j for j in range(1, 9)] + [n] * extra
    band = n // 2 + 1
    z0 = np.sqrt(3.0)
    # cap sphere through (r=2, z=sqrt 3) with apex at z = 3
    zc = 2.0 / (6.0 - 2.0 * z0)
    rc = 3.0 - zc
    phi_b = np.arctan2(2.0, z0 - zc)
    nc = len(cap_sizes)
    top = [(3.0, 0.0, 1)]
    for j, cnt in enumerate(cap_sizes[:-1], start=1):
        phi = j * phi_b / nc
        top.append((zc + rc * np.cos(phi), rc * np.sin(phi), cnt))
    mid = []
    for k in range(band):
        psi = np.pi / 3 - k * (2 * np.pi / 3) / (band - 1)
        mid.append((2.0 * np.sin(psi), 1.0 + 2.0 * np.cos(psi), n))
    bottom = [(-z, r, cnt) for z, r, cnt in reversed(top)]
    rings = top + mid + bottom
    phases = [1] * (len(top)) + [2] * (band - 1) + [1] * len(bottom)
    return surface_of_revolution(rings, phases)


BUILDERS = {
    "sphere": icosphere,
    "split-sphere": split_sphere,
    "two-cap-sphere": two_cap_sphere,
    "dumbbell": dumbbell,
    "torus-with-caps": torus_with_caps,
    "budding": budding,
}


def generate_mesh(shape: str, **kw) -> TwoPhaseSurfaceMesh:
    """Dispatch by shape name (see module docstring)."""
    if shape not in BUILDERS:
        raise ValueError(f"unsupported shape {shape!r}; choose from {SHAPES}")
    return BUILDERS[shape](**kw)
