"""Total cost assembly: weighted cartographic error plus weighted distortion,
with analytic gradients, for plane, sphere, hybrid, and projection-only
modes.

The cost of a vertex state V is

    C(V) = W_error * E(V) + W_dist * D(V)

where E sums weighted squared region area errors and D sums area-weighted
shape/scale distortion over triangles plus mode-specific penalty terms
(planar boundary quadrants; antimeridian and pole anchoring on the sphere).
Flipped or degenerate triangles make D infinite; the line search rejects
such states, and gradients are only defined at finite cost.

In hybrid mode shape distortion is computed from the projection-anticipating
matrix H(n) K while scale distortion and areas always use K itself. The
basis rotation induced by east-west midpoint motion enters the hybrid
gradient through the rotation-corrected derivatives of H.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .distortion import (
    DET_TOL,
    FrameSet,
    adjugate_t,
    batch_plane_matrices,
    batch_sphere_matrices,
    matrix_grad_to_vertices_plane,
    matrix_grad_to_vertices_sphere,
    scale_grad_factor,
    shape_grad_wrt_matrix,
)
from .mesh import BoundaryQuadrants
from .projections import BlurredJacobianField

MODES = ("plane", "sphere", "hybrid", "projection")

__all__ = [
    "MODES",
    "CostParams",
    "CostTables",
    "CostBreakdown",
    "PenaltyTerms",
    "make_weights",
    "error_weights",
    "evaluate",
    "cost_and_gradient",
    "project_gradient_to_sphere",
    "boundary_conditions_ok",
    "CartogramProblem",
]


def make_weights(
    land_fraction: np.ndarray,
    target_scale: np.ndarray,
    *,
    shape_weight: float = 0.5,
    scale_weight: float = 0.2,
    water_factor: float = 0.1,
    density_floor: float = 0.2,
    density_slope: float = 0.8,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-triangle shape/scale weights: overall shape-vs-scale weighting
    times a land factor (all-water triangles count much less) times a
    density factor that tracks the intended scale without vanishing."""
    land = np.where(np.asarray(land_fraction) > 0, 1.0, water_factor)
    density = density_floor + density_slope * np.asarray(target_scale, dtype=float)
    return shape_weight * land * density, scale_weight * land * density


def error_weights(populations: np.ndarray) -> np.ndarray:
    """Per-region error weights 1/p: a compromise between absolute and
    relative error that avoids the float extremes of 1/p^2."""
    return 1.0 / np.asarray(populations, dtype=float)


@dataclass(frozen=True)
class PenaltyTerms:
    """Mode-specific extra terms added to the distortion total."""

    boundary_weight: float = 0.0
    quadrants: BoundaryQuadrants | None = None
    pole_weight: float = 0.0
    pole_index: int = -1
    antimer_indices: np.ndarray | None = None
    antimer_weights: np.ndarray | None = None


@dataclass(frozen=True)
class CostTables:
    """All constants of one optimization problem."""

    mode: str
    triangles: np.ndarray
    frames: FrameSet
    w_shape: np.ndarray
    w_scale: np.ndarray
    target_scale: np.ndarray
    psi: sp.csr_matrix  # (regions, triangles) coverage portions
    populations: np.ndarray
    w_error: np.ndarray
    vertex_count: int
    penalties: PenaltyTerms = field(default_factory=PenaltyTerms)
    field_h: BlurredJacobianField | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode in ("hybrid", "projection") and self.field_h is None:
            raise ValueError(f"{self.mode} mode needs a blurred Jacobian field")

    @property
    def dim(self) -> int:
        return 2 if self.mode == "plane" else 3


@dataclass(frozen=True)
class CostParams:
    """Stage-level weights of the two cost groups."""

    weight_error: float
    weight_dist: float


@dataclass
class CostBreakdown:
    total: float
    error_term: float  # E
    distortion: float  # D
    shape_sub: float
    scale_sub: float
    penalty_sub: float
    region_errors: np.ndarray
    region_areas: np.ndarray
    min_det: float

    @property
    def finite(self) -> bool:
        return np.isfinite(self.total)


def _deformation(v: np.ndarray, tables: CostTables):
    if tables.mode == "plane":
        k, det = batch_plane_matrices(v, tables.triangles, tables.frames)
        return k, det, None
    return batch_sphere_matrices(v, tables.triangles, tables.frames)


def _penalty_value(v: np.ndarray, tables: CostTables) -> float:
    pen = tables.penalties
    total = 0.0
    if tables.mode == "plane" and pen.quadrants is not None and pen.boundary_weight > 0:
        deltas = _boundary_deltas(v, pen.quadrants)
        if any(d.size and d.min() <= DET_TOL for d in deltas):
            return float("inf")
        total += pen.boundary_weight * sum(float((1.0 / d).sum()) for d in deltas)
    if tables.mode in ("hybrid", "projection"):
        if pen.pole_weight > 0 and pen.pole_index >= 0:
            p = v[pen.pole_index]
            total += pen.pole_weight * float(p[0] ** 2 + p[1] ** 2)
        if pen.antimer_indices is not None and len(pen.antimer_indices):
            y = v[pen.antimer_indices, 1]
            total += float((pen.antimer_weights * y**2).sum())
    return total


def _boundary_deltas(v: np.ndarray, q: BoundaryQuadrants) -> list[np.ndarray]:
    pn_x = v[q.north_pole, 0]
    ps_x = v[q.south_pole, 0]
    return [
        v[q.q0, 0] - pn_x,
        pn_x - v[q.q1, 0],
        ps_x - v[q.q2, 0],
        v[q.q3, 0] - ps_x,
    ]


def boundary_conditions_ok(v: np.ndarray, q: BoundaryQuadrants) -> bool:
    """True when every boundary vertex sits on the correct side of its pole."""
    return all(d.size == 0 or d.min() > 0 for d in _boundary_deltas(v, q))


def _shape_terms(k, det, tables: CostTables, points=None, want_grad=False):
    """Shape distortion per triangle; hybrid mode anticipates the target
    projection by composing with the blurred Jacobian at each midpoint."""
    if tables.mode in ("hybrid", "projection"):
        h, _, _ = tables.field_h.matrices_and_partials(points)
        kt = h @ k
        det_kt = kt[:, 0, 0] * kt[:, 1, 1] - kt[:, 0, 1] * kt[:, 1, 0]
        if det_kt.min() <= DET_TOL:
            return None, None, None, None
        frob = (kt * kt).sum(axis=(1, 2))
        m_t = shape_grad_wrt_matrix(kt, det_kt) if want_grad else None
        return frob / det_kt - 2.0, m_t, h, kt
    frob = (k * k).sum(axis=(1, 2))
    m = shape_grad_wrt_matrix(k, det) if want_grad else None
    return frob / det - 2.0, m, None, None


def evaluate(v: np.ndarray, params: CostParams, tables: CostTables) -> CostBreakdown:
    """Cost breakdown at vertex state v ((N, 2) or (N, 3) by mode)."""
    k, det, ctx = _deformation(v, tables)
    min_det = float(det.min())
    areas = tables.frames.ref_area * det
    mu = tables.psi @ areas
    eps = mu - tables.populations
    e_val = float((tables.w_error * eps**2).sum())

    inf = CostBreakdown(
        total=float("inf"),
        error_term=e_val,
        distortion=float("inf"),
        shape_sub=float("inf"),
        scale_sub=float("inf"),
        penalty_sub=float("inf"),
        region_errors=eps,
        region_areas=mu,
        min_det=min_det,
    )
    if min_det <= DET_TOL:
        return inf
    penalty = _penalty_value(v, tables)
    if not np.isfinite(penalty):
        return inf
    points = ctx["n"] if ctx is not None else None
    d_shape, _, _, _ = _shape_terms(k, det, tables, points)
    if d_shape is None:
        return inf
    s = tables.target_scale
    d_scale = det / s + s / det - 2.0
    shape_sub = float((tables.frames.ref_area * tables.w_shape * d_shape).sum())
    scale_sub = float((tables.frames.ref_area * tables.w_scale * d_scale).sum())
    d_val = shape_sub + scale_sub + penalty
    total = params.weight_error * e_val + params.weight_dist * d_val
    return CostBreakdown(
        total=total,
        error_term=e_val,
        distortion=d_val,
        shape_sub=shape_sub,
        scale_sub=scale_sub,
        penalty_sub=penalty,
        region_errors=eps,
        region_areas=mu,
        min_det=min_det,
    )


def cost_and_gradient(
    v: np.ndarray, params: CostParams, tables: CostTables
) -> tuple[CostBreakdown, np.ndarray]:
    """Cost plus its gradient with respect to every vertex coordinate.

    Only defined at finite cost; gradient components accumulate per triangle
    into the referenced vertex slots in triangle-index order, so results are
    deterministic.
    """
    k, det, ctx = _deformation(v, tables)
    min_det = float(det.min())
    if min_det <= DET_TOL:
        raise ValueError("gradient requested at non-finite cost (flipped triangle)")

    areas = tables.frames.ref_area * det
    mu = tables.psi @ areas
    eps = mu - tables.populations
    e_val = float((tables.w_error * eps**2).sum())

    penalty = _penalty_value(v, tables)
    if not np.isfinite(penalty):
        raise ValueError("gradient requested at non-finite cost (boundary crossing)")

    points = ctx["n"] if ctx is not None else None
    d_shape, m_shape, h, kt = _shape_terms(k, det, tables, points, want_grad=True)
    if d_shape is None:
        raise ValueError("gradient requested at non-finite cost (projected flip)")
    s = tables.target_scale
    d_scale = det / s + s / det - 2.0
    shape_sub = float((tables.frames.ref_area * tables.w_shape * d_shape).sum())
    scale_sub = float((tables.frames.ref_area * tables.w_scale * d_scale).sum())
    d_val = shape_sub + scale_sub + penalty
    total = params.weight_error * e_val + params.weight_dist * d_val

    ref = tables.frames.ref_area
    # det-coefficient per triangle: cartographic error + scale distortion
    coef_err = 2.0 * params.weight_error * ref * (tables.psi.T @ (tables.w_error * eps))
    coef_scale = params.weight_dist * ref * tables.w_scale * scale_grad_factor(det, s)
    m_total = (coef_err + coef_scale)[:, None, None] * adjugate_t(k)

    w_sh = params.weight_dist * ref * tables.w_shape
    if tables.mode in ("hybrid", "projection"):
        # d(shape)/dK via the chain through H K, plus the basis-rotation terms
        m_total = m_total + w_sh[:, None, None] * (np.swapaxes(h, 1, 2) @ m_shape)
    else:
        m_total = m_total + w_sh[:, None, None] * m_shape

    grad = np.zeros_like(v)
    tri = tables.triangles
    if tables.mode == "plane":
        ga, gb, gc = matrix_grad_to_vertices_plane(m_total, tables.frames.inverse)
        np.add.at(grad, tri[:, 0], ga)
        np.add.at(grad, tri[:, 1], gb)
        np.add.at(grad, tri[:, 2], gc)
        _add_boundary_gradient(grad, v, params, tables)
    else:
        contrib = matrix_grad_to_vertices_sphere(m_total, tables.frames.inverse, ctx)
        if tables.mode in ("hybrid", "projection"):
            du, dv_mat = tables.field_h.rotation_corrected(points)
            cu = np.einsum("tij,tij->t", m_shape, du @ k)
            cv = np.einsum("tij,tij->t", m_shape, dv_mat @ k)
            coef = w_sh / ctx["nd"]
            move = (
                (coef * cu)[:, None] * ctx["east"] + (coef * cv)[:, None] * ctx["north"]
            )
            contrib = contrib + move[:, None, :]
        np.add.at(grad, tri[:, 0], contrib[:, 0])
        np.add.at(grad, tri[:, 1], contrib[:, 1])
        np.add.at(grad, tri[:, 2], contrib[:, 2])
        _add_sphere_penalty_gradient(grad, v, params, tables)

    breakdown = CostBreakdown(
        total=total,
        error_term=e_val,
        distortion=d_val,
        shape_sub=shape_sub,
        scale_sub=scale_sub,
        penalty_sub=penalty,
        region_errors=eps,
        region_areas=mu,
        min_det=min_det,
    )
    return breakdown, grad


def _add_boundary_gradient(grad, v, params: CostParams, tables: CostTables) -> None:
    pen = tables.penalties
    if pen.quadrants is None or pen.boundary_weight <= 0:
        return
    q = pen.quadrants
    w = params.weight_dist * pen.boundary_weight
    deltas = _boundary_deltas(v, q)
    for idx, delta, v_sign, pole in (
        (q.q0, deltas[0], -1.0, q.north_pole),
        (q.q1, deltas[1], +1.0, q.north_pole),
        (q.q2, deltas[2], +1.0, q.south_pole),
        (q.q3, deltas[3], -1.0, q.south_pole),
    ):
        if idx.size == 0:
            continue
        inv2 = w / delta**2
        np.add.at(grad, (idx, 0), v_sign * inv2)
        grad[pole, 0] += -v_sign * float(inv2.sum())


def _add_sphere_penalty_gradient(grad, v, params: CostParams, tables: CostTables) -> None:
    pen = tables.penalties
    w = params.weight_dist
    if pen.pole_weight > 0 and pen.pole_index >= 0:
        grad[pen.pole_index, 0] += w * pen.pole_weight * 2.0 * v[pen.pole_index, 0]
        grad[pen.pole_index, 1] += w * pen.pole_weight * 2.0 * v[pen.pole_index, 1]
    if pen.antimer_indices is not None and len(pen.antimer_indices):
        idx = pen.antimer_indices
        np.add.at(grad, (idx, 1), w * pen.antimer_weights * 2.0 * v[idx, 1])


def project_gradient_to_sphere(v: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Remove the off-sphere component of every per-vertex gradient."""
    radial = np.einsum("ij,ij->i", grad, v)
    return grad - radial[:, None] * v


class CartogramProblem:
    """Flat-vector view of a cost problem for the optimizer: evaluation,
    gradient projection, and the retraction applied after each step."""

    def __init__(self, params: CostParams, tables: CostTables, frozen=None):
        self.params = params
        self.tables = tables
        self.dim = tables.dim
        # boolean mask of vertex indices held exactly in place
        self.frozen = np.zeros(tables.vertex_count, dtype=bool) if frozen is None else frozen

    def _view(self, flat: np.ndarray) -> np.ndarray:
        return flat.reshape(self.tables.vertex_count, self.dim)

    def cost(self, flat: np.ndarray) -> tuple[float, CostBreakdown]:
        bd = evaluate(self._view(flat), self.params, self.tables)
        return bd.total, bd

    def cost_and_gradient(self, flat: np.ndarray):
        bd, grad = cost_and_gradient(self._view(flat), self.params, self.tables)
        return bd.total, grad.reshape(-1), bd

    def project_gradient(self, flat: np.ndarray, grad_flat: np.ndarray) -> np.ndarray:
        g = self._view(grad_flat.copy())
        if self.dim == 3:
            g = project_gradient_to_sphere(self._view(flat), g)
        g[self.frozen] = 0.0
        return g.reshape(-1)

    def retract(self, flat: np.ndarray, step_flat: np.ndarray) -> np.ndarray:
        v = self._view(flat)
        s = self._view(step_flat.copy())
        s[self.frozen] = 0.0
        out = v + s
        if self.dim == 3:
            out = out / np.linalg.norm(out, axis=1, keepdims=True)
            out[self.frozen] = v[self.frozen]
        return out.reshape(-1)
