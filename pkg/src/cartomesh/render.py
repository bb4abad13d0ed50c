"""Map region borders through the optimized mesh and emit planar output.

Each border point is located in its containing initial triangle once, with
barycentric coordinates; the output point is the same barycentric
combination of the transformed vertices. In sphere and hybrid modes that
combination is renormalized onto the sphere and then pushed through the
target projection. Borders are densified first so no segment spans more
than a quarter of a triangle diameter, keeping the polyline faithful to the
piecewise-affine image.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .geom import nzd_rows, points_in_spherical_triangle
from .mesh import Mesh
from .optimizer import SolveResult
from .regions import RegionSet

__all__ = [
    "MappedBorders",
    "ErrorReport",
    "RenderError",
    "map_borders",
    "emit_geojson",
    "emit_svg",
    "error_report",
    "report_to_csv",
    "graticule_rings",
]


class RenderError(ValueError):
    """Bad input to the rendering pipeline."""


@dataclass(frozen=True)
class MappedBorders:
    """Planar polylines per region after the cartogram transform."""

    region_ids: tuple[str, ...]
    rings: dict[str, list[np.ndarray]]  # region id -> list of (k, 2) loops
    mode: str
    projection: str


def densify_ring(ring: np.ndarray, max_arc: float) -> np.ndarray:
    """Insert intermediate points along each great-circle edge so no segment
    exceeds ``max_arc`` radians."""
    out = []
    n = len(ring)
    for i in range(n):
        a, b = ring[i], ring[(i + 1) % n]
        ang = math.acos(min(1.0, max(-1.0, float(a @ b))))
        steps = max(1, int(math.ceil(ang / max_arc)))
        for k in range(steps):
            t = k / steps
            out.append(a * (1 - t) + b * t)
    return nzd_rows(np.array(out))


def assign_barycentric(mesh: Mesh, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Containing initial triangle and radial barycentric coordinates for
    each unit-vector point."""
    tri_pts = mesh.vertices[mesh.triangles]
    remaining = np.arange(len(points))
    tri_idx = np.full(len(points), -1, dtype=int)
    bary = np.zeros((len(points), 3))
    for t in range(len(mesh.triangles)):
        if remaining.size == 0:
            break
        a, b, c = tri_pts[t]
        hit = points_in_spherical_triangle(points[remaining], a, b, c, tol=1e-9)
        if not hit.any():
            continue
        sel = remaining[hit]
        # barycentric of the radial projection onto the flat triangle:
        # solve p ~ alpha a + beta b + gamma c up to scale, then normalize
        m = np.column_stack([a, b, c])
        coeff = np.linalg.solve(m, points[sel].T).T
        coeff = np.clip(coeff, 0.0, None)
        coeff /= coeff.sum(axis=1, keepdims=True)
        tri_idx[sel] = t
        bary[sel] = coeff
        remaining = remaining[~hit]
    if remaining.size:
        raise RenderError(f"{remaining.size} border points not inside any triangle")
    return tri_idx, bary


def map_borders(
    mesh: Mesh,
    final_vertices: np.ndarray,
    region_set: RegionSet,
    mode: str,
    projection=None,
    extra_loops: dict[str, list[np.ndarray]] | None = None,
) -> MappedBorders:
    """Push every region ring (and optional extra loops, e.g. a graticule)
    through the per-triangle affine maps of the solved mesh."""
    edge_arcs = _min_edge_arc(mesh)
    max_arc = edge_arcs / 4.0
    out: dict[str, list[np.ndarray]] = {}
    sources: list[tuple[str, np.ndarray]] = []
    for region in region_set.regions:
        for ring in region.rings:
            sources.append((region.id, densify_ring(ring, max_arc)))
    for name, loops in (extra_loops or {}).items():
        for ring in loops:
            sources.append((name, densify_ring(ring, max_arc)))

    for name, ring in sources:
        tri_idx, bary = assign_barycentric(mesh, ring)
        corners = final_vertices[mesh.triangles[tri_idx]]  # (k, 3, d)
        mapped = np.einsum("ki,kid->kd", bary, corners)
        if mode in ("sphere", "hybrid", "projection"):
            if projection is None:
                raise RenderError(f"{mode} mode needs a target projection to render")
            mapped = nzd_rows(mapped)
            lon = np.arctan2(mapped[:, 1], mapped[:, 0])
            lat = np.arcsin(np.clip(mapped[:, 2], -1.0, 1.0))
            x, y = projection.forward(lon, lat)
            mapped = np.stack([x, y], axis=-1)
        if not np.all(np.isfinite(mapped)):
            raise RenderError("non-finite coordinates in mapped borders")
        out.setdefault(name, []).append(mapped)

    return MappedBorders(
        region_ids=tuple(region_set.ids),
        rings=out,
        mode=mode,
        projection=getattr(projection, "name", "none"),
    )


def _min_edge_arc(mesh: Mesh) -> float:
    p = mesh.vertices[mesh.triangles]
    arcs = []
    for i, j in ((0, 1), (1, 2), (2, 0)):
        dots = np.clip(np.einsum("td,td->t", p[:, i], p[:, j]), -1.0, 1.0)
        arcs.append(np.arccos(dots).min())
    return float(min(arcs))


def graticule_rings(spacing_deg: float = 15.0, samples: int = 73) -> dict[str, list[np.ndarray]]:
    """Open polylines along meridians and parallels, as unit-vector chains."""
    loops: list[np.ndarray] = []
    lat_line = np.linspace(-math.pi / 2 * 0.999, math.pi / 2 * 0.999, samples)
    for lon_deg in np.arange(-180.0, 180.0, spacing_deg):
        lon = math.radians(lon_deg)
        pts = np.stack(
            [
                np.cos(lat_line) * math.cos(lon),
                np.cos(lat_line) * math.sin(lon),
                np.sin(lat_line),
            ],
            axis=1,
        )
        loops.append(pts)
    lon_line = np.linspace(-math.pi * 0.999, math.pi * 0.999, samples)
    for lat_deg in np.arange(-75.0, 76.0, spacing_deg):
        lat = math.radians(lat_deg)
        pts = np.stack(
            [
                np.cos(lat) * np.cos(lon_line),
                np.cos(lat) * np.sin(lon_line),
                np.full(samples, math.sin(lat)),
            ],
            axis=1,
        )
        loops.append(pts)
    return {"graticule": loops}


# -- output documents --------------------------------------------------------


def emit_geojson(mapped: MappedBorders) -> dict:
    """FeatureCollection with planar polygon coordinates; the coordinates
    are map-plane values, flagged as such at the top level."""
    features = []
    for rid in mapped.region_ids:
        loops = mapped.rings.get(rid, [])
        coords = [[[float(x), float(y)] for x, y in loop] + [[float(loop[0][0]), float(loop[0][1])]] for loop in loops]
        features.append(
            {
                "type": "Feature",
                "properties": {"id": rid},
                "geometry": {"type": "MultiPolygon", "coordinates": [[c] for c in coords]},
            }
        )
    return {
        "type": "FeatureCollection",
        "planar_coordinates": True,
        "mode": mapped.mode,
        "projection": mapped.projection,
        "features": features,
    }


def _svg_path(loop: np.ndarray, close: bool = True) -> str:
    cmds = [f"M {loop[0][0]:.6f} {-loop[0][1]:.6f}"]
    cmds.extend(f"L {x:.6f} {-y:.6f}" for x, y in loop[1:])
    if close:
        cmds.append("Z")
    return " ".join(cmds)


def emit_svg(
    mapped: MappedBorders,
    mesh_overlay: tuple[np.ndarray, np.ndarray] | None = None,
    graticule: dict[str, list[np.ndarray]] | None = None,
) -> str:
    """SVG document: one path per region, plus optional mesh wireframe and
    graticule layers. The y axis is flipped so map north points up."""
    all_pts = [loop for loops in mapped.rings.values() for loop in loops]
    if not all_pts:
        box = (-1.0, -1.0, 2.0, 2.0)
    else:
        stacked = np.vstack(all_pts)
        x0, y0 = stacked.min(axis=0)
        x1, y1 = stacked.max(axis=0)
        pad = 0.05 * max(x1 - x0, y1 - y0, 1e-9)
        box = (x0 - pad, -(y1 + pad), (x1 - x0) + 2 * pad, (y1 - y0) + 2 * pad)

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        "<!-- y axis flipped: map north is up -->",
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{box[0]:.6f} {box[1]:.6f} {box[2]:.6f} {box[3]:.6f}">',
    ]
    if mesh_overlay is not None:
        verts, tris = mesh_overlay
        lines = []
        for i, j, k in tris:
            for a, b in ((i, j), (j, k), (k, i)):
                if a < b:
                    lines.append(
                        f"M {verts[a][0]:.6f} {-verts[a][1]:.6f} L {verts[b][0]:.6f} {-verts[b][1]:.6f}"
                    )
        parts.append(
            f'<path class="mesh" fill="none" stroke="#bbbbbb" stroke-width="0.2%" d="{" ".join(lines)}"/>'
        )
    if graticule:
        lines = [_svg_path(loop, close=False) for loops in graticule.values() for loop in loops]
        parts.append(
            f'<path class="graticule" fill="none" stroke="#8888cc" stroke-width="0.2%" d="{" ".join(lines)}"/>'
        )
    for rid in mapped.region_ids:
        d = " ".join(_svg_path(loop) for loop in mapped.rings.get(rid, []))
        parts.append(
            f'<path class="region" data-id="{rid}" fill="#d0c090" stroke="#333333" '
            f'stroke-width="0.3%" fill-rule="evenodd" d="{d}"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


# -- error report -------------------------------------------------------------


@dataclass(frozen=True)
class ErrorReport:
    region_ids: tuple[str, ...]
    populations: np.ndarray
    areas: np.ndarray
    rel_errors: np.ndarray
    median_abs_rel: float
    max_abs_rel: float
    stage_rows: list[dict]


def error_report(result: SolveResult) -> ErrorReport:
    """Per-region relative errors plus the per-stage summary table."""
    pops = np.asarray(result.populations, dtype=float)
    areas = np.asarray(result.region_areas, dtype=float)
    rel = (areas - pops) / pops if pops.size else np.array([])
    stage_rows = [
        {
            "stage": st.index,
            "steps": st.steps,
            "wall_time_s": st.wall_time_s,
            "median_rel_error": st.median_rel_error,
            "max_rel_error": st.max_rel_error,
            "converged": st.converged,
        }
        for st in result.stages
    ]
    abs_rel = np.abs(rel)
    return ErrorReport(
        region_ids=tuple(result.region_ids),
        populations=pops,
        areas=areas,
        rel_errors=rel,
        median_abs_rel=float(np.median(abs_rel)) if abs_rel.size else 0.0,
        max_abs_rel=float(abs_rel.max()) if abs_rel.size else 0.0,
        stage_rows=stage_rows,
    )


def report_to_csv(report: ErrorReport, include_timings: bool = False) -> str:
    """CSV with one region per row, then a per-stage summary block."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["region_id", "population", "area", "rel_error"])
    for rid, p, a, r in zip(report.region_ids, report.populations, report.areas, report.rel_errors):
        w.writerow([rid, repr(float(p)), repr(float(a)), repr(float(r))])
    w.writerow([])
    header = ["stage", "steps", "median_rel_error", "max_rel_error"]
    if include_timings:
        header.append("wall_time_s")
    w.writerow(header)
    for row in report.stage_rows:
        out = [row["stage"], row["steps"], repr(row["median_rel_error"]), repr(row["max_rel_error"])]
        if include_timings:
            out.append(repr(row["wall_time_s"]))
        w.writerow(out)
    return buf.getvalue()


def report_to_dict(report: ErrorReport, include_timings: bool = False) -> dict:
    doc = {
        "regions": [
            {"id": rid, "population": float(p), "area": float(a), "rel_error": float(r)}
            for rid, p, a, r in zip(
                report.region_ids, report.populations, report.areas, report.rel_errors
            )
        ],
        "median_abs_rel_error": report.median_abs_rel,
        "max_abs_rel_error": report.max_abs_rel,
        "stages": [
            {
                k: v
                for k, v in row.items()
                if include_timings or k != "wall_time_s"
            }
            for row in report.stage_rows
        ],
    }
    return doc
