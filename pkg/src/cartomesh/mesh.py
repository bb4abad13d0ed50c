"""Octahedral sphere meshes: construction, adaptive subdivision, and the
planar initial layout used by plane-mode cartograms.

A mesh is an immutable pair of arrays: unit-vector vertices and index
triples. Triangles are positively oriented (anticlockwise seen from outside
the sphere). The octahedron is oriented with two vertices at the poles and
one equatorial vertex on the antimeridian, so the map can be interrupted
along that meridian.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .geom import GeometryError, nzd, triangle_solid_angles

MAX_AREA_FRACTION = 1.0 / 2048.0
POLAR_CAP_DEG = 80.0
MAX_SUBDIVISION_DEPTH = 8

__all__ = [
    "Mesh",
    "BoundaryQuadrants",
    "MeshError",
    "CoverageInfo",
    "SubdivisionRules",
    "build_octahedral_mesh",
    "subdivide",
    "refine",
    "project_initial_to_plane",
    "mesh_to_dict",
    "mesh_from_dict",
    "save_mesh",
    "load_mesh",
    "chord_areas",
    "edge_set",
]


class MeshError(ValueError):
    """Invalid mesh input or unsatisfiable subdivision request."""


@dataclass(frozen=True)
class BoundaryQuadrants:
    """Boundary vertex groups of a planar layout, split at the poles.

    q0: right edge, northern half; q1: left edge, northern half;
    q2: left edge, southern half; q3: right edge, southern half.
    Equatorial boundary vertices belong to the southern sets.
    """

    q0: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    q3: np.ndarray
    north_pole: int
    south_pole: int


@dataclass(frozen=True)
class Mesh:
    """Shared-vertex triangle mesh on the unit sphere.

    ``plane_vertices``/``quadrants`` are populated only for the planar
    layout produced by :func:`project_initial_to_plane`; there the sphere
    ``vertices`` array contains duplicated rows for the interrupted
    antimeridian (identical 3-D positions, distinct indices).
    """

    vertices: np.ndarray  # (N, 3) float, unit rows
    triangles: np.ndarray  # (T, 3) int
    antimeridian: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    north_pole: int = -1
    south_pole: int = -1
    plane_vertices: np.ndarray | None = None  # (N, 2) planar layout
    quadrants: BoundaryQuadrants | None = None

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)

    def solid_angles(self) -> np.ndarray:
        return triangle_solid_angles(self.vertices, self.triangles)


def chord_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Flat areas of the straight-edged triangles through the vertices."""
    p = np.asarray(vertices, dtype=float)[np.asarray(triangles)]
    cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def edge_set(triangles: np.ndarray) -> set[tuple[int, int]]:
    edges = set()
    for i, j, k in np.asarray(triangles):
        for a, b in ((i, j), (j, k), (k, i)):
            edges.add((min(a, b), max(a, b)))
    return edges


# -- construction -----------------------------------------------------------

_OCTA_CORNERS = np.array(
    [
        [0.0, 0.0, 1.0],  # north pole
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [-1.0, 0.0, 0.0],  # on the antimeridian
        [0.0, -1.0, 0.0],
        [0.0, 0.0, -1.0],  # south pole
    ]
)

# (corner, corner, corner), anticlockwise from outside
_OCTA_FACES = [
    (0, 1, 2),
    (0, 2, 3),
    (0, 3, 4),
    (0, 4, 1),
    (5, 2, 1),
    (5, 3, 2),
    (5, 4, 3),
    (5, 1, 4),
]


def build_octahedral_mesh(frequency: int) -> Mesh:
    """Regular octahedron with each face split into ``frequency**2``
    triangles, all vertices pushed onto the sphere.

    Yields ``8 n**2`` triangles and ``4 n**2 + 2`` vertices; the poles and an
    antimeridian vertex chain are hit exactly.
    """
    n = int(frequency)
    if n < 1:
        raise MeshError("frequency must be >= 1")

    # Lattice points are keyed by their exact barycentric weights on the
    # octahedron corners so shared edge/corner points dedupe across faces.
    index_of: dict[tuple, int] = {}
    positions: list[np.ndarray] = []

    def vertex(weights: dict[int, int]) -> int:
        g = math.gcd(*weights.values()) if len(weights) > 1 else next(iter(weights.values()))
        key = tuple(sorted((c, w // g) for c, w in weights.items()))
        idx = index_of.get(key)
        if idx is None:
            p = np.zeros(3)
            for c, w in key:
                p += w * _OCTA_CORNERS[c]
            idx = len(positions)
            positions.append(nzd(p))
            index_of[key] = idx
        return idx

    triangles = []
    for ca, cb, cc in _OCTA_FACES:
        # grid[i][j]: i steps toward cb, j toward cc, i + j <= n
        grid = {}
        for i in range(n + 1):
            for j in range(n + 1 - i):
                w = {}
                if n - i - j:
                    w[ca] = n - i - j
                if i:
                    w[cb] = i
                if j:
                    w[cc] = j
                grid[(i, j)] = vertex(w)
        for i in range(n):
            for j in range(n - i):
                triangles.append((grid[(i, j)], grid[(i + 1, j)], grid[(i, j + 1)]))
                if i + j < n - 1:
                    triangles.append(
                        (grid[(i + 1, j)], grid[(i + 1, j + 1)], grid[(i, j + 1)])
                    )

    vertices = np.array(positions)
    tri = np.array(triangles, dtype=int)
    return Mesh(
        vertices=vertices,
        triangles=tri,
        antimeridian=_antimeridian_indices(vertices),
        north_pole=int(np.argmax(vertices[:, 2])),
        south_pole=int(np.argmin(vertices[:, 2])),
    )


def _antimeridian_indices(vertices: np.ndarray) -> np.ndarray:
    """Non-pole vertices lying exactly on the antimeridian (y=0, x<0)."""
    on = (np.abs(vertices[:, 1]) <= 1e-15) & (vertices[:, 0] < -1e-15)
    return np.flatnonzero(on)


# -- refinement -------------------------------------------------------------


def refine(mesh: Mesh, marked: np.ndarray) -> tuple[Mesh, np.ndarray]:
    """Split every marked triangle into four; keep the triangulation
    conforming by promoting neighbors with two or more split edges and
    bisecting neighbors with exactly one.

    Returns the refined mesh and the parent triangle index of every new
    triangle.
    """
    tri = mesh.triangles
    marked = np.asarray(marked, dtype=bool).copy()
    if marked.shape != (len(tri),):
        raise MeshError("marker array does not match triangle count")
    if not marked.any():
        return mesh, np.arange(len(tri))

    def edges_of(t):
        i, j, k = tri[t]
        return ((i, j), (j, k), (k, i))

    def canon(e):
        return (min(e), max(e))

    # Promote until no unmarked triangle has 2+ split edges.
    while True:
        split_edges = {canon(e) for t in np.flatnonzero(marked) for e in edges_of(t)}
        changed = False
        for t in np.flatnonzero(~marked):
            cnt = sum(canon(e) in split_edges for e in edges_of(t))
            if cnt >= 2:
                marked[t] = True
                changed = True
        if not changed:
            break

    vertices = list(mesh.vertices)
    midpoint_of: dict[tuple[int, int], int] = {}
    anti = set(mesh.antimeridian.tolist())
    anti_or_pole = anti | {mesh.north_pole, mesh.south_pole}

    def midpoint(e) -> int:
        e = canon(e)
        idx = midpoint_of.get(e)
        if idx is None:
            idx = len(vertices)
            vertices.append(nzd(mesh.vertices[e[0]] + mesh.vertices[e[1]]))
            midpoint_of[e] = idx
            if e[0] in anti_or_pole and e[1] in anti_or_pole:
                anti.add(idx)
        return idx

    new_tris: list[tuple[int, int, int]] = []
    parents: list[int] = []

    def emit(t, *children):
        for ch in children:
            new_tris.append(ch)
            parents.append(t)

    for t in range(len(tri)):
        i, j, k = tri[t]
        if marked[t]:
            mij, mjk, mki = midpoint((i, j)), midpoint((j, k)), midpoint((k, i))
            emit(t, (i, mij, mki), (j, mjk, mij), (k, mki, mjk), (mij, mjk, mki))
        else:
            split = [e for e in edges_of(t) if canon(e) in midpoint_of]
            if not split:
                emit(t, (i, j, k))
            else:
                # exactly one split edge: bisect toward the opposite vertex
                (a, b) = split[0]
                c = ({i, j, k} - {a, b}).pop()
                m = midpoint((a, b))
                emit(t, (a, m, c), (m, b, c))

    refined = Mesh(
        vertices=np.array(vertices),
        triangles=np.array(new_tris, dtype=int),
        antimeridian=np.array(sorted(anti), dtype=int),
        north_pole=mesh.north_pole,
        south_pole=mesh.south_pole,
    )
    return refined, np.array(parents, dtype=int)


@dataclass(frozen=True)
class CoverageInfo:
    """Per-mesh region coverage snapshot consumed by the subdivision rules.

    ``covering``: for each region, indices of triangles it overlaps.
    ``border``: triangles overlapped by two or more distinct regions.
    ``target_scale``: intended per-triangle area scaling.
    """

    covering: list[np.ndarray]
    border: np.ndarray
    target_scale: np.ndarray


@dataclass(frozen=True)
class SubdivisionRules:
    min_region_cover: int = 4
    max_area_fraction: float = MAX_AREA_FRACTION
    polar_cap_deg: float = POLAR_CAP_DEG
    max_depth: int = MAX_SUBDIVISION_DEPTH


def subdivide(
    mesh: Mesh,
    coverage_fn: Callable[[Mesh], CoverageInfo],
    rules: SubdivisionRules = SubdivisionRules(),
) -> Mesh:
    """Adaptively refine until every region overlaps enough triangles and no
    triangle is set to grow beyond the area budget; triangles holding a
    border between two regions and triangles in the polar caps are split
    once."""
    area_budget = rules.max_area_fraction * 4.0 * math.pi
    cap_z = math.sin(math.radians(rules.polar_cap_deg))

    border_done = np.zeros(mesh.triangle_count, dtype=bool)
    polar_done = np.zeros(mesh.triangle_count, dtype=bool)

    for _ in range(rules.max_depth):
        info = coverage_fn(mesh)
        areas = chord_areas(mesh.vertices, mesh.triangles)
        marked = np.zeros(mesh.triangle_count, dtype=bool)

        for tris in info.covering:
            if 0 < len(tris) < rules.min_region_cover:
                marked[tris] = True
        marked |= info.target_scale * areas > area_budget

        border_fire = np.zeros_like(marked)
        border_fire[info.border] = True
        border_fire &= ~border_done
        marked |= border_fire

        tri_z = mesh.vertices[mesh.triangles][:, :, 2]
        polar_fire = (np.abs(tri_z) > cap_z).any(axis=1) & ~polar_done
        marked |= polar_fire

        if not marked.any():
            return mesh

        mesh, parents = refine(mesh, marked)
        border_done = (border_done | border_fire)[parents]
        polar_done = (polar_done | polar_fire)[parents]

    # One final check: rules may have converged exactly at the last round.
    info = coverage_fn(mesh)
    areas = chord_areas(mesh.vertices, mesh.triangles)
    ok = all(
        len(t) == 0 or len(t) >= rules.min_region_cover for t in info.covering
    ) and not (info.target_scale * areas > area_budget).any()
    if not ok:
        raise MeshError(f"subdivision rules unsatisfied after {rules.max_depth} rounds")
    return mesh


# -- planar initial layout --------------------------------------------------


def project_initial_to_plane(mesh: Mesh, projection) -> Mesh:
    """Cut the mesh along the antimeridian, duplicate the cut vertices, and
    lay the mesh out in the plane with ``projection``.

    Triangles east of the cut are rebound to the duplicated (right-edge)
    copies. The returned mesh carries both the extended sphere vertex array
    (frames stay valid) and the planar layout plus boundary quadrant sets.
    """
    if not getattr(projection, "interrupts_antimeridian", False):
        raise MeshError(
            f"projection {getattr(projection, 'name', projection)!r} does not "
            "interrupt the antimeridian; plane layout is undefined"
        )
    if len(mesh.antimeridian) == 0:
        raise MeshError("mesh has no antimeridian vertex chain")

    verts3 = list(mesh.vertices)
    tri = mesh.triangles.copy()
    anti = mesh.antimeridian.tolist()
    east_copy: dict[int, int] = {}
    for v in anti:
        east_copy[v] = len(verts3)
        verts3.append(mesh.vertices[v].copy())

    anti_set = set(anti)
    for t in range(len(tri)):
        ids = tri[t]
        on_cut = [v for v in ids if v in anti_set]
        if not on_cut:
            continue
        off = [v for v in ids if v not in anti_set and v not in (mesh.north_pole, mesh.south_pole)]
        # side decided by the off-meridian vertices: y > 0 is the east side
        side_y = float(np.mean([mesh.vertices[v][1] for v in off])) if off else 0.0
        if side_y > 0:
            for v in on_cut:
                tri[t] = np.where(tri[t] == v, east_copy[v], tri[t])

    verts3 = np.array(verts3)
    lon = np.arctan2(verts3[:, 1], verts3[:, 0])
    lat = np.arcsin(np.clip(verts3[:, 2], -1.0, 1.0))
    # pin the cut copies to the exact map edges and the poles to lon 0
    lon[np.array(anti, dtype=int)] = -math.pi
    lon[np.array(list(east_copy.values()), dtype=int)] = math.pi
    lon[[mesh.north_pole, mesh.south_pole]] = 0.0
    xy = np.stack(projection.forward(lon, lat), axis=-1)

    west = np.array(anti, dtype=int)
    east = np.array([east_copy[v] for v in anti], dtype=int)
    north = verts3[:, 2] > 1e-15
    quadrants = BoundaryQuadrants(
        q0=east[north[east]],
        q1=west[north[west]],
        q2=west[~north[west]],
        q3=east[~north[east]],
        north_pole=mesh.north_pole,
        south_pole=mesh.south_pole,
    )

    return Mesh(
        vertices=verts3,
        triangles=tri,
        antimeridian=np.array(sorted(anti_set | set(east_copy.values())), dtype=int),
        north_pole=mesh.north_pole,
        south_pole=mesh.south_pole,
        plane_vertices=xy,
        quadrants=quadrants,
    )


# -- serialization ----------------------------------------------------------


def mesh_to_dict(mesh: Mesh) -> dict:
    doc = {
        "vertices": mesh.vertices.tolist(),
        "triangles": mesh.triangles.tolist(),
        "tags": {
            "antimeridian": mesh.antimeridian.tolist(),
            "north_pole": mesh.north_pole,
            "south_pole": mesh.south_pole,
        },
    }
    if mesh.plane_vertices is not None:
        doc["plane_vertices"] = mesh.plane_vertices.tolist()
    if mesh.quadrants is not None:
        q = mesh.quadrants
        doc["tags"]["quadrants"] = {
            "q0": q.q0.tolist(),
            "q1": q.q1.tolist(),
            "q2": q.q2.tolist(),
            "q3": q.q3.tolist(),
        }
    return doc


def mesh_from_dict(doc: dict) -> Mesh:
    tags = doc.get("tags", {})
    quadrants = None
    if "quadrants" in tags:
        q = tags["quadrants"]
        quadrants = BoundaryQuadrants(
            q0=np.array(q["q0"], dtype=int),
            q1=np.array(q["q1"], dtype=int),
            q2=np.array(q["q2"], dtype=int),
            q3=np.array(q["q3"], dtype=int),
            north_pole=int(tags["north_pole"]),
            south_pole=int(tags["south_pole"]),
        )
    plane = doc.get("plane_vertices")
    return Mesh(
        vertices=np.array(doc["vertices"], dtype=float),
        triangles=np.array(doc["triangles"], dtype=int),
        antimeridian=np.array(tags.get("antimeridian", []), dtype=int),
        north_pole=int(tags.get("north_pole", -1)),
        south_pole=int(tags.get("south_pole", -1)),
        plane_vertices=None if plane is None else np.array(plane, dtype=float),
        quadrants=quadrants,
    )


def save_mesh(mesh: Mesh, path: str | Path) -> None:
    Path(path).write_text(json.dumps(mesh_to_dict(mesh)))


def load_mesh(path: str | Path) -> Mesh:
    return mesh_from_dict(json.loads(Path(path).read_text()))
