"""Spherical geometry primitives: normalization, tangent bases, areas.

All points live on the unit sphere embedded in R^3, north pole at (0, 0, 1).
Longitudes/latitudes are radians. Functions accept plain sequences or numpy
arrays; vectorized variants take arrays of row vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ABS_TOL = 1e-12

__all__ = [
    "ABS_TOL",
    "GeometryError",
    "TangentBasis",
    "nzd",
    "nzd_rows",
    "lonlat_to_point",
    "point_to_lonlat",
    "graticule_basis",
    "graticule_basis_rows",
    "tangent_project",
    "spherical_triangle_area",
    "triangle_solid_angles",
    "spherical_polygon_area",
    "point_in_spherical_triangle",
    "points_in_spherical_triangle",
]


class GeometryError(ValueError):
    """Raised for degenerate or inconsistent geometric input."""


def nzd(v) -> np.ndarray:
    """Scale a 3-vector to unit length; zero-length input is an error."""
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm <= ABS_TOL:
        raise GeometryError("cannot normalize a zero-length vector")
    return v / norm


def nzd_rows(vs: np.ndarray) -> np.ndarray:
    """Row-wise unit normalization of an (N, 3) array."""
    vs = np.asarray(vs, dtype=float)
    norms = np.linalg.norm(vs, axis=-1, keepdims=True)
    if np.any(norms <= ABS_TOL):
        raise GeometryError("cannot normalize a zero-length vector")
    return vs / norms


def lonlat_to_point(lon, lat) -> np.ndarray:
    """Unit vector(s) for longitude/latitude in radians."""
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    cl = np.cos(lat)
    return np.stack([cl * np.cos(lon), cl * np.sin(lon), np.sin(lat)], axis=-1)


def point_to_lonlat(p) -> tuple[np.ndarray, np.ndarray]:
    """Longitude in [-pi, pi] and latitude in [-pi/2, pi/2] of point(s)."""
    p = np.asarray(p, dtype=float)
    lon = np.arctan2(p[..., 1], p[..., 0])
    lat = np.arcsin(np.clip(p[..., 2], -1.0, 1.0))
    return lon, lat


@dataclass(frozen=True)
class TangentBasis:
    """Orthonormal tangent basis: ``east`` then ``north``, right-handed with
    the base point."""

    east: np.ndarray
    north: np.ndarray


# Fixed arbitrary bases used where east/north is undefined.
_NORTH_POLE_BASIS = (np.array([0.0, 1.0, 0.0]), np.array([-1.0, 0.0, 0.0]))
_SOUTH_POLE_BASIS = (np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0]))


def graticule_basis(p) -> TangentBasis:
    """Tangent basis aligned with the lon/lat graticule at unit vector p.

    At the poles east/north is undefined; a fixed, documented pair is
    returned instead (still orthonormal and right-handed).
    """
    p = np.asarray(p, dtype=float)
    r = math.hypot(p[0], p[1])
    if r <= ABS_TOL:
        east, north = _NORTH_POLE_BASIS if p[2] > 0 else _SOUTH_POLE_BASIS
        return TangentBasis(east.copy(), north.copy())
    east = np.array([-p[1] / r, p[0] / r, 0.0])
    north = np.cross(p, east)
    return TangentBasis(east, north)


def graticule_basis_rows(ps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized graticule bases for an (N, 3) array of unit vectors."""
    ps = np.asarray(ps, dtype=float)
    r = np.hypot(ps[:, 0], ps[:, 1])
    safe = np.maximum(r, ABS_TOL)
    east = np.stack([-ps[:, 1] / safe, ps[:, 0] / safe, np.zeros(len(ps))], axis=1)
    polar = r <= ABS_TOL
    if np.any(polar):
        east[polar] = _NORTH_POLE_BASIS[0]
    north = np.cross(ps, east)
    if np.any(polar):
        north[polar & (ps[:, 2] > 0)] = _NORTH_POLE_BASIS[1]
        north[polar & (ps[:, 2] <= 0)] = _SOUTH_POLE_BASIS[1]
    return east, north


def tangent_project(v, n) -> np.ndarray:
    """Perpendicular projection of v onto the plane tangent to the sphere
    at n, i.e. the plane {w : w . n = 1}."""
    v = np.asarray(v, dtype=float)
    n = np.asarray(n, dtype=float)
    return v + (1.0 - v @ n) * n


def spherical_triangle_area(a, b, c) -> float:
    """Signed spherical area (steradians); positive when a, b, c run
    anticlockwise seen from outside the sphere."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    triple = float(a @ np.cross(b, c))
    denom = 1.0 + float(a @ b) + float(b @ c) + float(c @ a)
    return 2.0 * math.atan2(triple, denom)


def triangle_solid_angles(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Signed spherical areas for every triangle of an indexed mesh."""
    p = np.asarray(vertices, dtype=float)[np.asarray(triangles)]
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    triple = np.einsum("ij,ij->i", a, np.cross(b, c))
    denom = (
        1.0
        + np.einsum("ij,ij->i", a, b)
        + np.einsum("ij,ij->i", b, c)
        + np.einsum("ij,ij->i", c, a)
    )
    return 2.0 * np.arctan2(triple, denom)


def _arc_tangent_at(base: np.ndarray, toward: np.ndarray) -> np.ndarray:
    """Unit tangent at ``base`` of the great-circle arc toward ``toward``."""
    t = toward - (toward @ base) * base
    norm = float(np.linalg.norm(t))
    if norm <= ABS_TOL:
        raise GeometryError("degenerate arc: endpoints equal or antipodal")
    return t / norm


def _turning_sum(points: np.ndarray) -> float:
    """Sum of signed exterior turning angles around a closed vertex loop."""
    n = len(points)
    total = 0.0
    for i in range(n):
        v = points[i]
        arrive = -_arc_tangent_at(v, points[i - 1])
        depart = _arc_tangent_at(v, points[(i + 1) % n])
        total += math.atan2(float(np.cross(arrive, depart) @ v), float(arrive @ depart))
    return total


def _arcs_cross(a, b, c, d) -> bool:
    """True if the open great-circle arcs a-b and c-d properly intersect."""
    n1 = np.cross(a, b)
    n2 = np.cross(c, d)
    x = np.cross(n1, n2)
    nx = float(np.linalg.norm(x))
    if nx <= ABS_TOL:
        return False
    x = x / nx
    for cand in (x, -x):
        if (
            float(np.cross(a, cand) @ n1) > ABS_TOL
            and float(np.cross(cand, b) @ n1) > ABS_TOL
            and float(np.cross(c, cand) @ n2) > ABS_TOL
            and float(np.cross(cand, d) @ n2) > ABS_TOL
        ):
            return True
    return False


def _check_simple(points: np.ndarray) -> None:
    n = len(points)
    for i in range(n):
        a, b = points[i], points[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            c, d = points[j], points[(j + 1) % n]
            if _arcs_cross(a, b, c, d):
                raise GeometryError(f"polygon edges {i} and {j} intersect")


def spherical_polygon_area(vertices, *, validate: bool = True) -> float:
    """Spherical area (steradians) enclosed to the left of the vertex loop.

    Edges are minor great-circle arcs between consecutive vertices (no edge
    may span pi or more). A positively oriented (anticlockwise) simple
    polygon yields its enclosed area in (0, 4*pi); Gauss-Bonnet over the
    turning angles, so arbitrarily thin or large polygons are handled.
    """
    points = nzd_rows(np.asarray(vertices, dtype=float))
    if len(points) < 3:
        raise GeometryError("polygon needs at least 3 vertices")
    if validate:
        _check_simple(points)
    return 2.0 * math.pi - _turning_sum(points)


def signed_loop_area(vertices) -> float:
    """Signed area of a small loop: positive anticlockwise, negative
    clockwise; assumes the enclosed patch is smaller than a hemisphere."""
    area = spherical_polygon_area(vertices, validate=False)
    return area - 4.0 * math.pi if area > 2.0 * math.pi else area


def point_in_spherical_triangle(p, a, b, c, tol: float = ABS_TOL) -> bool:
    """Containment test against an anticlockwise spherical triangle."""
    p = np.asarray(p, dtype=float)
    return (
        float(p @ np.cross(a, b)) >= -tol
        and float(p @ np.cross(b, c)) >= -tol
        and float(p @ np.cross(c, a)) >= -tol
    )


def points_in_spherical_triangle(ps: np.ndarray, a, b, c, tol: float = ABS_TOL) -> np.ndarray:
    """Vectorized containment of (N, 3) points in one spherical triangle."""
    ps = np.asarray(ps, dtype=float)
    return (
        (ps @ np.cross(a, b) >= -tol)
        & (ps @ np.cross(b, c) >= -tol)
        & (ps @ np.cross(c, a) >= -tol)
    )
