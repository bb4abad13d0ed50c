"""Per-triangle 2x2 transformation matrices, shape/scale distortion values,
and their analytic derivatives with respect to vertex coordinates.

Each triangle's deformation is the 2x2 matrix taking the initial edge
vectors (expressed in an in-plane orthonormal basis) to the transformed edge
vectors. On the sphere the transformed triangle is first projected
perpendicularly onto the tangent plane at its midpoint and expressed in the
graticule-aligned basis there; tangent plane and basis are held fixed while
differentiating (distortion values are rotation invariant, so the basis
rotation has no first-order effect on them).

Determinant positivity checks use an absolute tolerance of 1e-12; distortion
of a (nearly) flipped matrix is +inf, which the line search rejects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import GeometryError, graticule_basis_rows, nzd_rows

DET_TOL = 1e-12

__all__ = [
    "DET_TOL",
    "TriangleFrame",
    "FrameSet",
    "initial_frame",
    "build_frames",
    "plane_deformation",
    "sphere_deformation",
    "shape_distortion",
    "scale_distortion",
    "plane_derivatives",
    "sphere_derivatives",
    "batch_plane_matrices",
    "batch_sphere_matrices",
]


@dataclass(frozen=True)
class TriangleFrame:
    """Constant per-triangle reference data: the initial edge matrix, its
    inverse, and the flat reference area (half its determinant)."""

    edge_matrix: np.ndarray  # 2x2
    inverse: np.ndarray  # 2x2
    ref_area: float


def initial_frame(a0, b0, c0) -> TriangleFrame:
    """Reference frame for the initial triangle with vertices in R^3.

    The in-plane basis comes from the triangle itself, oriented so the edge
    matrix has positive determinant; any other correctly oriented basis gives
    the same distortion values.
    """
    a0 = np.asarray(a0, dtype=float)
    e1 = np.asarray(b0, dtype=float) - a0
    e2 = np.asarray(c0, dtype=float) - a0
    normal = np.cross(e1, e2)
    nn = np.linalg.norm(normal)
    if nn <= DET_TOL:
        raise GeometryError("collinear triangle vertices")
    u = e1 / np.linalg.norm(e1)
    v = np.cross(normal / nn, u)
    g0 = np.array([[e1 @ u, e2 @ u], [e1 @ v, e2 @ v]])
    det = g0[0, 0] * g0[1, 1] - g0[0, 1] * g0[1, 0]
    return TriangleFrame(edge_matrix=g0, inverse=_inv2(g0, det), ref_area=0.5 * det)


def _inv2(m: np.ndarray, det: float) -> np.ndarray:
    return np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det


@dataclass(frozen=True)
class FrameSet:
    """Vectorized frames for a whole mesh."""

    inverse: np.ndarray  # (T, 2, 2)
    ref_area: np.ndarray  # (T,)


def build_frames(vertices: np.ndarray, triangles: np.ndarray) -> FrameSet:
    p = np.asarray(vertices, dtype=float)[np.asarray(triangles)]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    normal = np.cross(e1, e2)
    nn = np.linalg.norm(normal, axis=1)
    if np.any(nn <= DET_TOL):
        raise GeometryError("collinear triangle vertices in mesh")
    u = e1 / np.linalg.norm(e1, axis=1, keepdims=True)
    v = np.cross(normal / nn[:, None], u)
    g0 = np.empty((len(p), 2, 2))
    g0[:, 0, 0] = np.einsum("ij,ij->i", e1, u)
    g0[:, 0, 1] = np.einsum("ij,ij->i", e2, u)
    g0[:, 1, 0] = np.einsum("ij,ij->i", e1, v)
    g0[:, 1, 1] = np.einsum("ij,ij->i", e2, v)
    det = g0[:, 0, 0] * g0[:, 1, 1] - g0[:, 0, 1] * g0[:, 1, 0]
    inv = np.empty_like(g0)
    inv[:, 0, 0] = g0[:, 1, 1]
    inv[:, 0, 1] = -g0[:, 0, 1]
    inv[:, 1, 0] = -g0[:, 1, 0]
    inv[:, 1, 1] = g0[:, 0, 0]
    inv /= det[:, None, None]
    return FrameSet(inverse=inv, ref_area=0.5 * det)


# -- deformation matrices ----------------------------------------------------


def plane_deformation(a, b, c, frame: TriangleFrame) -> np.ndarray:
    """2x2 matrix taking initial edges to the transformed planar edges."""
    a = np.asarray(a, dtype=float)
    g = np.column_stack([np.asarray(b, dtype=float) - a, np.asarray(c, dtype=float) - a])
    return g @ frame.inverse


@dataclass(frozen=True)
class SphereContext:
    """Intermediate quantities of the tangent-plane construction, kept for
    derivative evaluation."""

    matrix: np.ndarray  # 2x2 deformation
    midpoint: np.ndarray  # unit vector n
    east: np.ndarray
    north: np.ndarray
    d: np.ndarray  # a + b + c (unnormalized midpoint)
    tp: np.ndarray  # (3, 3) tangent-plane images of a, b, c


def sphere_deformation(a, b, c, frame: TriangleFrame) -> SphereContext:
    """Deformation of a spherical triangle measured on the tangent plane at
    its midpoint, in the graticule-aligned basis."""
    P = np.array([a, b, c], dtype=float)
    d = P.sum(axis=0)
    nd = np.linalg.norm(d)
    if nd <= DET_TOL:
        raise GeometryError("triangle midpoint degenerate: a + b + c = 0")
    n = d / nd
    tp = P + (1.0 - P @ n)[:, None] * n
    east, north = graticule_basis_rows(n[None, :])
    east, north = east[0], north[0]
    e1 = tp[1] - tp[0]
    e2 = tp[2] - tp[0]
    g = np.array([[e1 @ east, e2 @ east], [e1 @ north, e2 @ north]])
    return SphereContext(
        matrix=g @ frame.inverse, midpoint=n, east=east, north=north, d=d, tp=tp
    )


# -- distortion values -------------------------------------------------------


def shape_distortion(m: np.ndarray) -> float:
    """Squared Frobenius norm over determinant, minus 2: zero exactly for
    positive multiples of rotations, +inf at nonpositive determinant."""
    m = np.asarray(m, dtype=float)
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if det <= DET_TOL:
        return float("inf")
    return float((m * m).sum() / det - 2.0)


def scale_distortion(det: float, intended: float) -> float:
    """det/s + s/det - 2: zero exactly when the area scaling hits the
    intended value, +inf at nonpositive determinant."""
    if intended <= 0:
        raise ValueError("intended scale must be positive")
    if det <= DET_TOL:
        return float("inf")
    return det / intended + intended / det - 2.0


# -- batched kernels (used by the cost assembly) ------------------------------


def batch_plane_matrices(xy: np.ndarray, triangles: np.ndarray, frames: FrameSet):
    """Deformation matrices and determinants for all triangles of a planar
    layout. Returns (K, detK) with shapes (T,2,2), (T,)."""
    p = xy[triangles]  # (T, 3, 2)
    g = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)  # columns
    k = g @ frames.inverse
    det = k[:, 0, 0] * k[:, 1, 1] - k[:, 0, 1] * k[:, 1, 0]
    return k, det


def batch_sphere_matrices(v: np.ndarray, triangles: np.ndarray, frames: FrameSet):
    """Tangent-plane deformation matrices for all triangles of a sphere
    state. Returns (K, detK, ctx) where ctx carries the batched chain-rule
    context."""
    p = v[triangles]  # (T, 3, 3)
    d = p.sum(axis=1)
    nd = np.linalg.norm(d, axis=1)
    if np.any(nd <= DET_TOL):
        raise GeometryError("degenerate triangle midpoint")
    n = d / nd[:, None]
    dots = np.einsum("tij,tj->ti", p, n)  # (T, 3)
    tp = p + (1.0 - dots)[:, :, None] * n[:, None, :]
    east, north = graticule_basis_rows(n)
    e1 = tp[:, 1] - tp[:, 0]
    e2 = tp[:, 2] - tp[:, 0]
    g = np.empty((len(p), 2, 2))
    g[:, 0, 0] = np.einsum("ij,ij->i", e1, east)
    g[:, 0, 1] = np.einsum("ij,ij->i", e2, east)
    g[:, 1, 0] = np.einsum("ij,ij->i", e1, north)
    g[:, 1, 1] = np.einsum("ij,ij->i", e2, north)
    k = g @ frames.inverse
    det = k[:, 0, 0] * k[:, 1, 1] - k[:, 0, 1] * k[:, 1, 0]
    ctx = {"p": p, "d": d, "nd": nd, "n": n, "dots": dots, "east": east, "north": north}
    return k, det, ctx


def adjugate_t(k: np.ndarray) -> np.ndarray:
    """d(det K)/dK for a batch of 2x2 matrices."""
    out = np.empty_like(k)
    out[..., 0, 0] = k[..., 1, 1]
    out[..., 0, 1] = -k[..., 1, 0]
    out[..., 1, 0] = -k[..., 0, 1]
    out[..., 1, 1] = k[..., 0, 0]
    return out


def shape_grad_wrt_matrix(k: np.ndarray, det: np.ndarray) -> np.ndarray:
    """d(shape distortion)/dK, batched; requires det > 0."""
    frob = (k * k).sum(axis=(-2, -1))
    return (2.0 * k) / det[..., None, None] - frob[..., None, None] * adjugate_t(k) / (
        det[..., None, None] ** 2
    )


def scale_grad_factor(det: np.ndarray, intended: np.ndarray) -> np.ndarray:
    """d(scale distortion)/d(det K), batched; requires det > 0."""
    return 1.0 / intended - intended / det**2


def matrix_grad_to_vertices_plane(m: np.ndarray, inv: np.ndarray):
    """Pull d(obj)/dK back to the six planar vertex coordinates.

    Returns (ga, gb, gc), each (T, 2): gradients with respect to the three
    transformed vertices.
    """
    n = m @ np.swapaxes(inv, -2, -1)  # d(obj)/dG
    gb = n[..., :, 0]
    gc = n[..., :, 1]
    return -(gb + gc), gb, gc


def tp_grads_to_vertices(ctx: dict, g_tp: np.ndarray) -> np.ndarray:
    """Chain tangent-plane point gradients back to the nine sphere vertex
    coordinates.

    ``g_tp``: (T, 3, 3) world-space gradients with respect to the three
    tangent-plane points. Returns (T, 3, 3) gradients with respect to the
    three vertices.
    """
    p, n, nd, dots = ctx["p"], ctx["n"], ctx["nd"], ctx["dots"]
    ng = np.einsum("tij,tj->ti", g_tp, n)  # n . g per tp-point
    # direct part: only the matching vertex moves the tp point linearly
    direct = g_tp - ng[:, :, None] * n[:, None, :]
    # shared part: every vertex moves the midpoint, hence all tp points
    p_tan = (p - dots[:, :, None] * n[:, None, :]) / nd[:, None, None]
    g_tan = (g_tp - ng[:, :, None] * n[:, None, :]) / nd[:, None, None]
    shared = ((-ng)[:, :, None] * p_tan + (1.0 - dots)[:, :, None] * g_tan).sum(axis=1)
    return direct + shared[:, None, :]


def matrix_grad_to_vertices_sphere(m: np.ndarray, inv: np.ndarray, ctx: dict) -> np.ndarray:
    """Pull d(obj)/dK back to the nine sphere vertex coordinates; (T, 3, 3)."""
    n2 = m @ np.swapaxes(inv, -2, -1)  # d(obj)/dG, columns pair with edges
    gb2 = n2[..., :, 0]
    gc2 = n2[..., :, 1]
    ga2 = -(gb2 + gc2)
    east, north = ctx["east"], ctx["north"]
    g_tp = (
        np.stack([ga2, gb2, gc2], axis=1)[:, :, 0:1] * east[:, None, :]
        + np.stack([ga2, gb2, gc2], axis=1)[:, :, 1:2] * north[:, None, :]
    )
    return tp_grads_to_vertices(ctx, g_tp)


# -- single-triangle derivative APIs (exercised by the oracle tests) ----------


def plane_derivatives(a, b, c, frame: TriangleFrame, intended: float):
    """Partials of det K, shape distortion, and scale distortion with respect
    to the six planar coordinates (ax, ay, bx, by, cx, cy)."""
    k = plane_deformation(a, b, c, frame)[None, :, :]
    det = k[:, 0, 0] * k[:, 1, 1] - k[:, 0, 1] * k[:, 1, 0]
    if det[0] <= DET_TOL:
        raise ValueError("derivatives undefined at nonpositive determinant")
    inv = frame.inverse[None, :, :]
    out = {}
    for name, m in (
        ("det", adjugate_t(k)),
        ("shape", shape_grad_wrt_matrix(k, det)),
        ("scale", scale_grad_factor(det, np.array([intended]))[:, None, None] * adjugate_t(k)),
    ):
        ga, gb, gc = matrix_grad_to_vertices_plane(m, inv)
        out[name] = np.concatenate([ga[0], gb[0], gc[0]])
    return out["det"], out["shape"], out["scale"]


def sphere_derivatives(a, b, c, frame: TriangleFrame, intended: float):
    """Partials of det K, shape distortion, and scale distortion with respect
    to the nine sphere coordinates (a, b, c each xyz)."""
    tris = np.array([[0, 1, 2]])
    v = np.array([a, b, c], dtype=float)
    frames = FrameSet(inverse=frame.inverse[None, :, :], ref_area=np.array([frame.ref_area]))
    k, det, ctx = batch_sphere_matrices(v, tris, frames)
    if det[0] <= DET_TOL:
        raise ValueError("derivatives undefined at nonpositive determinant")
    out = {}
    for name, m in (
        ("det", adjugate_t(k)),
        ("shape", shape_grad_wrt_matrix(k, det)),
        ("scale", scale_grad_factor(det, np.array([intended]))[:, None, None] * adjugate_t(k)),
    ):
        g = matrix_grad_to_vertices_sphere(m, frames.inverse, ctx)
        out[name] = g[0].reshape(9)
    return out["det"], out["shape"], out["scale"]
