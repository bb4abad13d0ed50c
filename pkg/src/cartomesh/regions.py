"""Region ingestion and the derived constants the solver needs: coverage
portions per (region, triangle), target areas, and intended scales.

Regions are named sets of disjoint spherical polygons (great-circle edges)
with a positive data value each. All coverage constants depend only on the
initial mesh, never on transformed vertices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import mesh as meshmod
from .geom import GeometryError, nzd, nzd_rows, signed_loop_area

PORTION_EPS = 1e-12
BLUR_TOL = 1e-10

__all__ = [
    "Region",
    "RegionSet",
    "PortionTable",
    "RegionError",
    "load_geojson",
    "scale_populations",
    "compute_portions",
    "initial_region_areas",
    "intended_scales",
    "region_coverage_fn",
    "portions_to_dict",
    "portions_from_dict",
]


class RegionError(ValueError):
    """Invalid region data."""


@dataclass(frozen=True)
class Region:
    """One named region: outer rings anticlockwise, holes clockwise."""

    id: str
    value: float
    rings: tuple[np.ndarray, ...]  # each (k, 3) unit vectors


@dataclass(frozen=True)
class RegionSet:
    regions: tuple[Region, ...]

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.regions]

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.regions])

    def __len__(self) -> int:
        return len(self.regions)


def _ring_from_lonlat_deg(coords, lon_offset_deg: float) -> np.ndarray:
    pts = np.asarray(coords, dtype=float)
    if pts.ndim != 2 or pts.shape[1] < 2:
        raise RegionError("ring coordinates must be [lon, lat] pairs")
    if np.allclose(pts[0, :2], pts[-1, :2]):
        pts = pts[:-1]
    if len(pts) < 3:
        raise RegionError("ring needs at least 3 distinct vertices")
    lon = np.radians(pts[:, 0] + lon_offset_deg)
    lat = np.radians(pts[:, 1])
    cl = np.cos(lat)
    return np.stack([cl * np.cos(lon), cl * np.sin(lon), np.sin(lat)], axis=1)


def load_geojson(source, lon_offset_deg: float = 0.0) -> RegionSet:
    """Read a FeatureCollection of Polygon/MultiPolygon features.

    Coordinates are lon/lat degrees on the unit sphere; ``lon_offset_deg``
    rotates everything eastward (used to move the interruption meridian onto
    the map antimeridian). Feature properties must carry ``id`` and a
    positive ``value``.
    """
    if isinstance(source, (str, Path)):
        doc = json.loads(Path(source).read_text())
    else:
        doc = source
    if doc.get("type") != "FeatureCollection":
        raise RegionError("expected a GeoJSON FeatureCollection")

    regions = []
    for feat in doc.get("features", []):
        props = feat.get("properties") or {}
        rid = props.get("id")
        value = props.get("value")
        if rid is None or value is None:
            raise RegionError("feature properties need 'id' and 'value'")
        value = float(value)
        if value <= 0:
            raise RegionError(f"region {rid!r} has nonpositive value {value}")
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        if gtype == "Polygon":
            polys = [geom["coordinates"]]
        elif gtype == "MultiPolygon":
            polys = geom["coordinates"]
        else:
            raise RegionError(f"region {rid!r}: unsupported geometry {gtype!r}")
        rings = []
        for poly in polys:
            for k, ring_coords in enumerate(poly):
                ring = _ring_from_lonlat_deg(ring_coords, lon_offset_deg)
                area = signed_loop_area(ring)
                # exterior rings anticlockwise, holes clockwise
                want_ccw = k == 0
                if (area > 0) != want_ccw:
                    ring = ring[::-1].copy()
                rings.append(ring)
        regions.append(Region(id=str(rid), value=value, rings=tuple(rings)))
    if not regions:
        raise RegionError("no regions in input")
    ids = [r.id for r in regions]
    if len(set(ids)) != len(ids):
        raise RegionError("duplicate region ids")
    return RegionSet(tuple(regions))


# -- portions ---------------------------------------------------------------


@dataclass(frozen=True)
class PortionTable:
    """Sparse coverage constants: the fraction of each triangle's area taken
    by each region, plus the per-triangle land fraction."""

    region_ids: tuple[str, ...]
    triangle_count: int
    rows: np.ndarray  # region indices
    cols: np.ndarray  # triangle indices
    vals: np.ndarray  # portions in (0, 1]
    land_fraction: np.ndarray = field(repr=False)  # (T,)

    def matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.vals, (self.rows, self.cols)),
            shape=(len(self.region_ids), self.triangle_count),
        )

    def covering(self) -> list[np.ndarray]:
        return [np.sort(self.cols[self.rows == r]) for r in range(len(self.region_ids))]


def _clip_ring_to_triangle(ring: np.ndarray, planes: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman on the sphere: clip a polygon (great-circle edges)
    against the three half-spaces bounding a spherical triangle."""
    out = ring
    for n in planes:
        if len(out) < 3:
            return out[:0]
        dots = out @ n
        res = []
        for i in range(len(out)):
            j = (i + 1) % len(out)
            si, sj = dots[i], dots[j]
            if si >= 0:
                res.append(out[i])
                if sj < 0:
                    res.append(nzd(si * out[j] - sj * out[i]))
            elif sj >= 0:
                res.append(nzd(si * out[j] - sj * out[i]))
        out = np.array(res) if res else ring[:0]
    return out


def _dedupe_loop(points: np.ndarray) -> np.ndarray:
    if len(points) == 0:
        return points
    keep = [points[0]]
    for p in points[1:]:
        if np.linalg.norm(p - keep[-1]) > 1e-9:
            keep.append(p)
    if len(keep) > 1 and np.linalg.norm(keep[0] - keep[-1]) <= 1e-9:
        keep.pop()
    return np.array(keep)


def compute_portions(mesh: meshmod.Mesh, region_set: RegionSet) -> PortionTable:
    """Exact clipping of every region ring against every nearby triangle.

    Portions are ratios of spherical areas; hole rings contribute negative
    area so punctured regions come out right.
    """
    tri_pts = mesh.vertices[mesh.triangles]
    centers = nzd_rows(tri_pts.sum(axis=1))
    circum = np.arccos(
        np.clip(np.einsum("tij,tj->ti", tri_pts, centers).min(axis=1), -1.0, 1.0)
    )
    tri_area = mesh.solid_angles()
    planes_all = np.stack(
        [
            np.cross(tri_pts[:, 0], tri_pts[:, 1]),
            np.cross(tri_pts[:, 1], tri_pts[:, 2]),
            np.cross(tri_pts[:, 2], tri_pts[:, 0]),
        ],
        axis=1,
    )

    acc: dict[tuple[int, int], float] = {}
    for r, region in enumerate(region_set.regions):
        for ring in region.rings:
            cap_center = nzd(ring.sum(axis=0)) if np.linalg.norm(ring.sum(axis=0)) > 1e-12 else ring[0]
            cap_radius = float(np.arccos(np.clip(ring @ cap_center, -1.0, 1.0).min()))
            sep = np.arccos(np.clip(centers @ cap_center, -1.0, 1.0))
            candidates = np.flatnonzero(sep <= cap_radius + circum + 1e-9)
            for t in candidates:
                piece = _dedupe_loop(_clip_ring_to_triangle(ring, planes_all[t]))
                if len(piece) < 3:
                    continue
                area = signed_loop_area(piece)
                if abs(area) > PORTION_EPS * tri_area[t]:
                    acc[(r, int(t))] = acc.get((r, int(t)), 0.0) + area

    rows, cols, vals = [], [], []
    for (r, t), area in sorted(acc.items()):
        frac = area / tri_area[t]
        if frac <= PORTION_EPS:
            continue
        if frac > 1.0 + 1e-9:
            raise GeometryError(
                f"portion {frac} > 1 for region {region_set.regions[r].id!r}, triangle {t}"
            )
        rows.append(r)
        cols.append(t)
        vals.append(min(frac, 1.0))

    rows_a = np.array(rows, dtype=int)
    cols_a = np.array(cols, dtype=int)
    vals_a = np.array(vals, dtype=float)
    land = np.zeros(mesh.triangle_count)
    np.add.at(land, cols_a, vals_a)
    if np.any(land > 1.0 + 1e-9):
        raise GeometryError("region polygons overlap: land fraction exceeds 1")
    np.minimum(land, 1.0, out=land)
    return PortionTable(
        region_ids=tuple(region_set.ids),
        triangle_count=mesh.triangle_count,
        rows=rows_a,
        cols=cols_a,
        vals=vals_a,
        land_fraction=land,
    )


# -- derived quantities ------------------------------------------------------


def scale_populations(values: np.ndarray, initial_areas: np.ndarray) -> np.ndarray:
    """Desired areas: data values scaled so their total matches the total of
    the initial areas."""
    values = np.asarray(values, dtype=float)
    initial_areas = np.asarray(initial_areas, dtype=float)
    if np.any(values <= 0):
        raise RegionError("all region values must be positive")
    if np.any(initial_areas <= 0):
        raise RegionError("all initial region areas must be positive")
    return values * (initial_areas.sum() / values.sum())


def initial_region_areas(portions: PortionTable, tri_areas: np.ndarray) -> np.ndarray:
    """Per-region area implied by the coverage table and triangle areas."""
    out = np.zeros(len(portions.region_ids))
    np.add.at(out, portions.rows, portions.vals * np.asarray(tri_areas)[portions.cols])
    return out


def _edge_neighbors(triangles: np.ndarray) -> list[list[int]]:
    by_edge: dict[tuple[int, int], list[int]] = {}
    for t, (i, j, k) in enumerate(np.asarray(triangles)):
        for a, b in ((i, j), (j, k), (k, i)):
            by_edge.setdefault((min(a, b), max(a, b)), []).append(t)
    nbrs: list[list[int]] = [[] for _ in range(len(triangles))]
    for ts in by_edge.values():
        for t in ts:
            nbrs[t].extend(u for u in ts if u != t)
    return nbrs


def intended_scales(
    portions: PortionTable,
    populations: np.ndarray,
    initial_areas: np.ndarray,
    mesh: meshmod.Mesh,
    tri_areas: np.ndarray | None = None,
) -> np.ndarray:
    """Target area scaling per triangle: coverage-weighted average of the
    regions' desired scalings, diffused across all-water triangles.

    The diffusion is a Jacobi sweep where each all-water triangle takes the
    area-weighted mean of its edge neighbors, land triangles held fixed,
    iterated to a fixed point (max change < 1e-10).
    """
    ratio = np.asarray(populations, dtype=float) / np.asarray(initial_areas, dtype=float)
    num = np.zeros(portions.triangle_count)
    np.add.at(num, portions.cols, portions.vals * ratio[portions.rows])
    land = portions.land_fraction > 0
    scales = np.zeros(portions.triangle_count)
    scales[land] = num[land] / portions.land_fraction[land]

    water = ~land
    if not water.any():
        return scales
    if not land.any():
        raise RegionError("cannot diffuse intended scales: no land triangles")

    if tri_areas is None:
        tri_areas = meshmod.chord_areas(mesh.vertices, mesh.triangles)
    nbrs = _edge_neighbors(mesh.triangles)
    nbr_idx = np.full((portions.triangle_count, 3), -1, dtype=int)
    for t, ns in enumerate(nbrs):
        nbr_idx[t, : len(ns)] = ns[:3]
    valid = nbr_idx >= 0
    w = np.where(valid, np.asarray(tri_areas)[np.maximum(nbr_idx, 0)], 0.0)
    wsum = w.sum(axis=1)

    scales[water] = scales[land].mean()
    water_ids = np.flatnonzero(water)
    for _ in range(200_000):
        neigh_vals = np.where(valid, scales[np.maximum(nbr_idx, 0)], 0.0)
        new_vals = (w * neigh_vals).sum(axis=1)[water_ids] / wsum[water_ids]
        delta = np.abs(new_vals - scales[water_ids]).max()
        scales[water_ids] = new_vals
        if delta < BLUR_TOL:
            return scales
    raise RegionError("intended-scale diffusion did not converge")


def region_coverage_fn(region_set: RegionSet):
    """Coverage callback for mesh subdivision: recompute portions and
    intended scales on each candidate mesh."""

    def coverage(mesh: meshmod.Mesh) -> meshmod.CoverageInfo:
        portions = compute_portions(mesh, region_set)
        areas = meshmod.chord_areas(mesh.vertices, mesh.triangles)
        mu0 = initial_region_areas(portions, areas)
        pops = scale_populations(region_set.values, mu0)
        scales = intended_scales(portions, pops, mu0, mesh, tri_areas=areas)
        counts = np.zeros(mesh.triangle_count, dtype=int)
        seen = set(zip(portions.rows.tolist(), portions.cols.tolist()))
        for r, t in seen:
            counts[t] += 1
        return meshmod.CoverageInfo(
            covering=portions.covering(),
            border=np.flatnonzero(counts >= 2),
            target_scale=scales,
        )

    return coverage


# -- serialization -----------------------------------------------------------


def portions_to_dict(portions: PortionTable, mesh_hash: str, regions_hash: str) -> dict:
    return {
        "mesh_hash": mesh_hash,
        "regions_hash": regions_hash,
        "region_ids": list(portions.region_ids),
        "triangle_count": portions.triangle_count,
        "entries": [
            [int(r), int(t), float(v)]
            for r, t, v in zip(portions.rows, portions.cols, portions.vals)
        ],
        "land_fraction": portions.land_fraction.tolist(),
    }


def portions_from_dict(doc: dict) -> PortionTable:
    entries = doc.get("entries", [])
    rows = np.array([e[0] for e in entries], dtype=int)
    cols = np.array([e[1] for e in entries], dtype=int)
    vals = np.array([e[2] for e in entries], dtype=float)
    return PortionTable(
        region_ids=tuple(doc["region_ids"]),
        triangle_count=int(doc["triangle_count"]),
        rows=rows,
        cols=cols,
        vals=vals,
        land_fraction=np.array(doc["land_fraction"], dtype=float),
    )
