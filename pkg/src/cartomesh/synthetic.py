"""Synthetic region fixtures for tests, demos, and desk-scale runs.

Regions are geodesic quadrilaterals (great-circle edges through the four
corners of a lon/lat box). Data values are chosen relative to the quads'
spherical areas so the desired area scalings take prescribed ratios.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .geom import lonlat_to_point, spherical_polygon_area

__all__ = [
    "geodesic_quad",
    "quad_feature",
    "three_region_collection",
    "two_continent_collection",
    "random_quad_collection",
    "write_geojson",
]


def geodesic_quad(lon0: float, lon1: float, lat0: float, lat1: float) -> np.ndarray:
    """Anticlockwise geodesic quadrilateral through the box corners
    (degrees in, unit vectors out)."""
    corners_deg = [(lon0, lat0), (lon1, lat0), (lon1, lat1), (lon0, lat1)]
    return np.array(
        [lonlat_to_point(math.radians(lon), math.radians(lat)) for lon, lat in corners_deg]
    )


def quad_feature(rid: str, value: float, lon0, lon1, lat0, lat1) -> dict:
    coords = [[lon0, lat0], [lon1, lat0], [lon1, lat1], [lon0, lat1], [lon0, lat0]]
    return {
        "type": "Feature",
        "properties": {"id": rid, "value": value},
        "geometry": {"type": "Polygon", "coordinates": [coords]},
    }


def _quad_area(lon0, lon1, lat0, lat1) -> float:
    return spherical_polygon_area(geodesic_quad(lon0, lon1, lat0, lat1))


def three_region_collection(scale_ratios=(5.0, 3.0, 1.0)) -> dict:
    """Three well-separated quads whose desired area scalings take the given
    ratios (region value = ratio times its own initial area)."""
    boxes = [
        ("alpha", -60.0, -20.0, 0.0, 35.0),
        ("beta", 0.0, 40.0, -32.0, 3.0),
        ("gamma", 60.0, 100.0, 8.0, 43.0),
    ]
    features = []
    for (rid, lon0, lon1, lat0, lat1), ratio in zip(boxes, scale_ratios):
        value = ratio * _quad_area(lon0, lon1, lat0, lat1)
        features.append(quad_feature(rid, value, lon0, lon1, lat0, lat1))
    return {"type": "FeatureCollection", "features": features}


def two_continent_collection() -> dict:
    """Two large landmasses for projection-only (distortion) runs; values do
    not matter there beyond marking land."""
    features = [
        quad_feature("west", -120.0, -40.0, -25.0, 45.0),
        quad_feature("east", 10.0, 110.0, -35.0, 50.0),
    ]
    for f in features:
        f["properties"]["value"] = 1.0
    return {"type": "FeatureCollection", "features": features}


def random_quad_collection(count: int, rng: np.random.Generator) -> dict:
    """Random non-overlapping-ish quads in a lon/lat grid layout."""
    features = []
    cells = []
    for i in range(count):
        lon_c = -160.0 + (i % 8) * 42.0
        lat_c = -45.0 + (i // 8) * 36.0
        cells.append((lon_c, lat_c))
    for i, (lon_c, lat_c) in enumerate(cells):
        w = float(rng.uniform(10.0, 30.0))
        h = float(rng.uniform(10.0, 26.0))
        lon0, lon1 = lon_c - w / 2, lon_c + w / 2
        lat0, lat1 = lat_c - h / 2, lat_c + h / 2
        value = float(rng.uniform(0.5, 3.0)) * _quad_area(lon0, lon1, lat0, lat1)
        features.append(quad_feature(f"r{i:02d}", value, lon0, lon1, lat0, lat1))
    return {"type": "FeatureCollection", "features": features}


def write_geojson(doc: dict, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(doc, indent=1))
    return path
