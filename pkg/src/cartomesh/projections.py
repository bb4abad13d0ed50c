"""Target equal-area projections, their graticule-basis Jacobians, and the
blurred Jacobian field used when optimizing on the sphere while anticipating
the final projection.

The Jacobian at (lon, lat) maps graticule-basis tangent displacements
(east, north) to map-plane displacements:

    [ (1/cos lat) dx/dlon   dx/dlat ]
    [ (1/cos lat) dy/dlon   dy/dlat ]

Pseudocylindrical projections are discontinuous across the antimeridian and
their graticule basis is singular at the poles, so the raw Jacobian cannot
feed a continuously differentiable cost. The blurred field blends the two
one-sided limits across the interruption with a quintic smoothstep in
longitude and blends to the identity near the poles, giving an entrywise C^1
(indeed C^2) field that equals the true Jacobian elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom import point_to_lonlat

__all__ = [
    "ProjectionError",
    "TargetProjection",
    "Mollweide",
    "EqualEarth",
    "EquirectangularTest",
    "get_projection",
    "BlurredJacobianField",
]

POLE_GUARD = 1e-9


class ProjectionError(ValueError):
    """Projection domain or convergence failure."""


class TargetProjection:
    """Base class: subclasses fill in ``_forward`` and ``_entries``."""

    name = "abstract"
    equal_area = True
    interrupts_antimeridian = True

    def forward(self, lon, lat):
        """Map-plane coordinates (x, y); accepts scalars or arrays."""
        lon = np.asarray(lon, dtype=float)
        lat = np.asarray(lat, dtype=float)
        return self._forward(lon, lat)

    def jacobian(self, lon, lat) -> np.ndarray:
        """Graticule-basis Jacobian; (..., 2, 2). Poles are out of domain."""
        j, _, _ = self.jacobian_bundle(lon, lat)
        return j

    def jacobian_bundle(self, lon, lat):
        """Jacobian plus its partials with respect to lon and lat."""
        lon = np.asarray(lon, dtype=float)
        lat = np.asarray(lat, dtype=float)
        if np.any(np.abs(lat) >= math.pi / 2 - POLE_GUARD):
            raise ProjectionError(f"{self.name}: Jacobian undefined at the poles")
        e = self._entries(lon, lat)
        shape = np.broadcast(lon, lat).shape
        j = np.zeros(shape + (2, 2))
        dlon = np.zeros(shape + (2, 2))
        dlat = np.zeros(shape + (2, 2))
        j[..., 0, 0], j[..., 0, 1], j[..., 1, 0], j[..., 1, 1] = e[0]
        dlon[..., 0, 0], dlon[..., 0, 1], dlon[..., 1, 0], dlon[..., 1, 1] = e[1]
        dlat[..., 0, 0], dlat[..., 0, 1], dlat[..., 1, 0], dlat[..., 1, 1] = e[2]
        return j, dlon, dlat


class Mollweide(TargetProjection):
    """The classic equal-area pseudocylindrical projection with an
    elliptical outline."""

    name = "mollweide"
    _K = 2.0 * math.sqrt(2.0) / math.pi

    @staticmethod
    def _aux_angle(lat: np.ndarray) -> np.ndarray:
        """Solve 2t + sin 2t = pi sin(lat) by Newton iteration to 1e-13."""
        lat = np.asarray(lat, dtype=float)
        target = math.pi * np.sin(lat)
        t = np.array(lat, dtype=float, copy=True)
        polar = np.abs(lat) >= math.pi / 2 - POLE_GUARD
        t = np.where(polar, np.sign(lat) * math.pi / 2, t)
        active = ~polar
        for _ in range(200):
            if not np.any(active):
                break
            f = 2.0 * t + np.sin(2.0 * t) - target
            df = 2.0 + 2.0 * np.cos(2.0 * t)
            step = np.where(active & (df > 1e-16), f / np.maximum(df, 1e-16), 0.0)
            t = t - step
            active = active & (np.abs(step) > 1e-13)
        resid = np.abs(2.0 * t + np.sin(2.0 * t) - target)
        if np.any(resid[~polar] > 1e-10):
            raise ProjectionError("mollweide auxiliary angle did not converge")
        return t

    def _forward(self, lon, lat):
        t = self._aux_angle(lat)
        return self._K * lon * np.cos(t), math.sqrt(2.0) * np.sin(t)

    def _entries(self, lon, lat):
        t = self._aux_angle(lat)
        ct, st = np.cos(t), np.sin(t)
        cphi, sphi = np.cos(lat), np.sin(lat)
        tphi = (math.pi / 4.0) * cphi / ct**2
        tphi2 = (math.pi / 4.0) * (-sphi / ct**2 + cphi * 2.0 * st * tphi / ct**3)
        e00 = self._K * ct / cphi
        e01 = -self._K * lon * st * tphi
        e11 = math.sqrt(2.0) * ct * tphi
        zero = np.zeros_like(e00)
        d_e01_lon = -self._K * st * tphi
        d_e00_lat = self._K * (-st * tphi * cphi + ct * sphi) / cphi**2
        d_e01_lat = -self._K * lon * (ct * tphi**2 + st * tphi2)
        d_e11_lat = math.sqrt(2.0) * (-st * tphi**2 + ct * tphi2)
        return (
            (e00, e01, zero, e11),
            (zero, d_e01_lon, zero, zero),
            (d_e00_lat, d_e01_lat, zero, d_e11_lat),
        )


class EqualEarth(TargetProjection):
    """Equal Earth projection (Savric, Patterson & Jenny 2018 polynomial)."""

    name = "equal-earth"
    _A1 = 1.340264
    _A2 = -0.081106
    _A3 = 0.000893
    _A4 = 0.003796
    _M = math.sqrt(3.0) / 2.0

    def _theta(self, lat):
        return np.arcsin(np.clip(self._M * np.sin(lat), -1.0, 1.0))

    def _poly(self, t):
        t2 = t * t
        y = t * (self._A1 + self._A2 * t2 + t2**3 * (self._A3 + self._A4 * t2))
        dy = self._A1 + 3 * self._A2 * t2 + t2**3 * (7 * self._A3 + 9 * self._A4 * t2)
        d2y = 6 * self._A2 * t + t2**2 * t * (42 * self._A3 + 72 * self._A4 * t2)
        return y, dy, d2y

    def _forward(self, lon, lat):
        t = self._theta(lat)
        y, dy, _ = self._poly(t)
        return lon * np.cos(t) / (self._M * dy), y

    def _entries(self, lon, lat):
        t = self._theta(lat)
        _, dy, d2y = self._poly(t)
        d3y = 6 * self._A2 + t**4 * (210 * self._A3 + 504 * self._A4 * t * t)
        ct, st = np.cos(t), np.sin(t)
        cphi, sphi = np.cos(lat), np.sin(lat)
        tphi = self._M * cphi / ct
        tphi2 = self._M * (-sphi + cphi * (st / ct) * tphi) / ct
        xt = ct / (self._M * dy)  # x = lon * xt(theta)
        num = -st * dy - ct * d2y
        p = num / (self._M * dy**2)
        dnum = -ct * (dy + d3y)
        dp = (dnum * dy - 2.0 * num * d2y) / (self._M * dy**3)
        e00 = xt / cphi
        e01 = lon * p * tphi
        e11 = dy * tphi
        zero = np.zeros_like(e00)
        d_e01_lon = p * tphi
        d_e00_lat = (p * tphi * cphi + xt * sphi) / cphi**2
        d_e01_lat = lon * (dp * tphi**2 + p * tphi2)
        d_e11_lat = d2y * tphi**2 + dy * tphi2
        return (
            (e00, e01, zero, e11),
            (zero, d_e01_lon, zero, zero),
            (d_e00_lat, d_e01_lat, zero, d_e11_lat),
        )


class EquirectangularTest(TargetProjection):
    """x = lon, y = lat; not equal-area, kept for tests and debugging."""

    name = "equirectangular-test"
    equal_area = False

    def _forward(self, lon, lat):
        return lon + np.zeros_like(lat), lat + np.zeros_like(lon)

    def _entries(self, lon, lat):
        cphi = np.cos(lat)
        zero = np.zeros(np.broadcast(lon, lat).shape)
        one = np.ones_like(zero)
        return (
            (1.0 / cphi, zero, zero, one),
            (zero, zero, zero, zero),
            (np.sin(lat) / cphi**2, zero, zero, zero),
        )


_REGISTRY = {p.name: p for p in (Mollweide(), EqualEarth(), EquirectangularTest())}


def get_projection(name: str) -> TargetProjection:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ProjectionError(
            f"unknown projection {name!r}; choose from {sorted(_REGISTRY)}"
        ) from None


def _smoothstep(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Quintic smoothstep and its derivative on [0, 1] (C^2 at both ends)."""
    t = np.clip(t, 0.0, 1.0)
    s = t**3 * (10.0 + t * (-15.0 + 6.0 * t))
    ds = 30.0 * t**2 * (1.0 + t * (-2.0 + t))
    return s, ds


_ROT90_CW = np.array([[0.0, 1.0], [-1.0, 0.0]])


@dataclass(frozen=True)
class BlurredJacobianField:
    """Continuously differentiable stand-in for a projection's Jacobian.

    Equals the projection Jacobian wherever the arc distance to the
    interruption meridian exceeds the blur widths; blends entrywise to the
    symmetric one-sided limit across the interruption and to the identity at
    the poles. Only shape distortion may consume this field: its determinant
    is not area-faithful inside the blend bands.
    """

    projection: TargetProjection | None
    lon_width: float = math.radians(10.0)
    pole_width: float = math.radians(5.0)

    @classmethod
    def identity(cls) -> "BlurredJacobianField":
        """Constant identity field (zero partials everywhere)."""
        return cls(projection=None)

    def matrices_and_partials(self, points: np.ndarray):
        """H, dH/dlon, dH/dlat at unit vectors ``points`` ((N, 3) array).

        Returns three (N, 2, 2) arrays.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(points)
        eye = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
        zeros = np.zeros((n, 2, 2))
        if self.projection is None:
            return eye, zeros, zeros.copy()

        lon, lat = point_to_lonlat(points)
        polar = np.abs(lat) >= math.pi / 2 - POLE_GUARD
        lat_eval = np.clip(lat, -(math.pi / 2 - 1e-7), math.pi / 2 - 1e-7)

        j, djlon, djlat = self.projection.jacobian_bundle(lon, lat_eval)
        jmid, _, djlat_mid = self.projection.jacobian_bundle(
            np.full_like(lon, math.pi), lat_eval
        )
        # symmetric average of the two one-sided limits: the lon-odd entry dies
        jmid[..., 0, 1] = 0.0
        djlat_mid[..., 0, 1] = 0.0

        tau = (math.pi - np.abs(lon)) / self.lon_width
        q, dq = _smoothstep(tau)
        dq_dlon = np.where((tau > 0) & (tau < 1), dq * (-np.sign(lon)) / self.lon_width, 0.0)

        hlon = (1.0 - q)[:, None, None] * jmid + q[:, None, None] * j
        dhlon_dlon = dq_dlon[:, None, None] * (j - jmid) + q[:, None, None] * djlon
        dhlon_dlat = (1.0 - q)[:, None, None] * djlat_mid + q[:, None, None] * djlat

        rho = (math.pi / 2 - np.abs(lat)) / self.pole_width
        s, ds = _smoothstep(rho)
        ds_dlat = np.where((rho > 0) & (rho < 1), ds * (-np.sign(lat)) / self.pole_width, 0.0)

        h = (1.0 - s)[:, None, None] * eye + s[:, None, None] * hlon
        dh_dlon = s[:, None, None] * dhlon_dlon
        dh_dlat = ds_dlat[:, None, None] * (hlon - eye) + s[:, None, None] * dhlon_dlat

        if np.any(polar):
            h[polar] = np.eye(2)
            dh_dlon[polar] = 0.0
            dh_dlat[polar] = 0.0
        return h, dh_dlon, dh_dlat

    def matrix(self, point: np.ndarray) -> np.ndarray:
        h, _, _ = self.matrices_and_partials(np.asarray(point, dtype=float)[None, :])
        return h[0]

    def partials(self, point: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        _, dlon, dlat = self.matrices_and_partials(np.asarray(point, dtype=float)[None, :])
        return dlon[0], dlat[0]

    def rotation_corrected(self, points: np.ndarray):
        """Derivatives of H(n) R(u, v) with respect to tangent displacements
        u (east) and v (north) at each point.

        Moving east rotates the graticule basis at the rate of the latitude
        line's geodesic curvature, tan(lat); the composite derivative is

            d/du = (1/cos lat) dH/dlon + tan(lat) H [[0, 1], [-1, 0]]
            d/dv = dH/dlat.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        lon, lat = point_to_lonlat(points)
        h, dh_dlon, dh_dlat = self.matrices_and_partials(points)
        polar = np.abs(lat) >= math.pi / 2 - POLE_GUARD
        cphi = np.where(polar, 1.0, np.cos(lat))
        tphi = np.where(polar, 0.0, np.tan(lat))
        du = dh_dlon / cphi[:, None, None] + tphi[:, None, None] * (h @ _ROT90_CW)
        dv = dh_dlat.copy()
        if np.any(polar):
            # H is identity to third order at the poles; the limit vanishes
            du[polar] = 0.0
            dv[polar] = 0.0
        return du, dv
