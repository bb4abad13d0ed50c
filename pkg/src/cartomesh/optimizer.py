"""L-BFGS with backtracking line search, on-sphere step normalization, and
the staged weight/threshold schedule.

Each stage minimizes the cost until the infinity norm of the (projected)
gradient drops below the stage threshold; the next stage reuses the result
with the distortion weight and threshold both reduced tenfold. Steps on the
sphere are normalized back onto it before the cost is evaluated, and the
gradient handed to the optimizer has its off-sphere components removed so
the sufficient-decrease test stays satisfiable.
"""

from __future__ import annotations

import sys
import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .cost import CartogramProblem, CostParams, CostTables

ARMIJO_C = 0.1
SHRINK = 0.5
MAX_HALVINGS = 60
LBFGS_MEMORY = 10
MAX_STEPS_PER_STAGE = 200_000
CURVATURE_EPS = 1e-13

__all__ = [
    "SolverError",
    "LineSearchError",
    "Stage",
    "StageStats",
    "StepLogEntry",
    "SolveResult",
    "lbfgs_direction",
    "line_search",
    "run_stage",
    "make_stage_schedule",
    "run_cartogram",
    "run_projection",
]


class SolverError(RuntimeError):
    """Numeric failure inside the optimization loop."""


class LineSearchError(SolverError):
    """No acceptable step found within the halving budget."""


@dataclass(frozen=True)
class Stage:
    index: int
    weight_error: float
    weight_dist: float
    grad_tol: float
    max_steps: int = MAX_STEPS_PER_STAGE


@dataclass
class StepLogEntry:
    """Per-accepted-step record kept when step logging is on."""

    cost_drop: float
    armijo_rhs: float
    halvings: int
    min_det: float


@dataclass
class StageStats:
    index: int
    weight_error: float
    weight_dist: float
    grad_tol: float
    steps: int
    wall_time_s: float
    converged: bool
    cost: float
    error_term: float
    distortion: float
    grad_inf_norm: float
    median_rel_error: float
    max_rel_error: float
    min_det_accepted: float


@dataclass
class SolveResult:
    mode: str
    vertices: np.ndarray  # (N, d) final state
    stages: list[StageStats]
    region_ids: list[str]
    populations: np.ndarray
    region_areas: np.ndarray
    region_errors: np.ndarray
    step_log: list[StepLogEntry] = field(default_factory=list)


def lbfgs_direction(history: deque, grad: np.ndarray) -> np.ndarray:
    """Two-loop recursion over the stored (step, gradient-change) pairs;
    with no history, a steepest-descent proposal of at most unit length."""
    if not np.all(np.isfinite(grad)):
        raise SolverError("non-finite gradient")
    if not history:
        norm = float(np.linalg.norm(grad))
        return -grad if norm <= 1.0 else -grad / norm
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = history[-1]
    q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * float(y @ q)
        q += s * (a - b)
    return -q


def line_search(
    problem,
    x: np.ndarray,
    cost: float,
    grad_mod: np.ndarray,
    direction: np.ndarray,
    *,
    c: float = ARMIJO_C,
    shrink: float = SHRINK,
    max_halvings: int = MAX_HALVINGS,
):
    """Backtrack until the sufficient-decrease condition

        C(next) - C(x) <= c * (t * direction) . grad_mod

    holds; candidates are produced by the problem's retraction (plain
    addition in the plane, per-vertex renormalization on the sphere).
    Non-finite candidate costs are always rejected.
    """
    slope = float(direction @ grad_mod)
    if slope >= 0:
        raise SolverError("line search needs a descent direction")
    t = 1.0
    for halvings in range(max_halvings + 1):
        candidate = problem.retract(x, t * direction)
        cand_cost, aux = problem.cost(candidate)
        if np.isfinite(cand_cost) and cand_cost - cost <= c * t * slope:
            return candidate, cand_cost, aux, t, halvings
        t *= shrink
    raise LineSearchError(f"no acceptable step in {max_halvings} halvings")


def run_stage(
    problem,
    x0: np.ndarray,
    stage: Stage,
    *,
    memory: int = LBFGS_MEMORY,
    armijo_c: float = ARMIJO_C,
    verbose: bool = False,
    log_steps: bool = False,
    stream=None,
):
    """Minimize until the projected-gradient infinity norm drops below the
    stage threshold (or the step cap is hit). Returns the final state, the
    stage statistics, and the optional per-step log."""
    stream = stream if stream is not None else sys.stderr
    t_start = time.perf_counter()
    x = np.asarray(x0, dtype=float).copy()
    cost, grad, aux = problem.cost_and_gradient(x)
    if not np.isfinite(cost):
        raise SolverError("stage started at non-finite cost")
    g_mod = problem.project_gradient(x, grad)

    history: deque = deque(maxlen=memory)
    steps = 0
    min_det_seen = getattr(aux, "min_det", float("inf"))
    log: list[StepLogEntry] = []
    converged = False

    while True:
        g_norm = float(np.abs(g_mod).max()) if g_mod.size else 0.0
        if g_norm < stage.grad_tol:
            converged = True
            break
        if steps >= stage.max_steps:
            break

        direction = lbfgs_direction(history, g_mod)
        if float(direction @ g_mod) >= 0:
            history.clear()
            direction = lbfgs_direction(history, g_mod)
        try:
            x_new, cost_new, aux_new, t, halvings = line_search(
                problem, x, cost, g_mod, direction, c=armijo_c
            )
        except LineSearchError:
            if not history:
                raise
            # stale curvature can poison the direction; retry from scratch
            history.clear()
            direction = lbfgs_direction(history, g_mod)
            x_new, cost_new, aux_new, t, halvings = line_search(
                problem, x, cost, g_mod, direction, c=armijo_c
            )

        _, grad_new, aux_new = problem.cost_and_gradient(x_new)
        g_mod_new = problem.project_gradient(x_new, grad_new)
        s_vec = x_new - x
        y_vec = g_mod_new - g_mod
        sy = float(s_vec @ y_vec)
        if sy > CURVATURE_EPS * float(np.linalg.norm(s_vec)) * float(np.linalg.norm(y_vec)):
            history.append((s_vec, y_vec, 1.0 / sy))

        if log_steps:
            log.append(
                StepLogEntry(
                    cost_drop=cost_new - cost,
                    armijo_rhs=armijo_c * t * float(direction @ g_mod),
                    halvings=halvings,
                    min_det=getattr(aux_new, "min_det", float("inf")),
                )
            )
        min_det_seen = min(min_det_seen, getattr(aux_new, "min_det", float("inf")))
        x, cost, grad, g_mod, aux = x_new, cost_new, grad_new, g_mod_new, aux_new
        steps += 1
        if verbose:
            print(
                f"stage {stage.index} step {steps} C {cost:.9e} "
                f"E {getattr(aux, 'error_term', float('nan')):.6e} "
                f"D {getattr(aux, 'distortion', float('nan')):.6e} "
                f"g {float(np.abs(g_mod).max()):.3e}",
                file=stream,
            )

    rel = _relative_errors(aux)
    stats = StageStats(
        index=stage.index,
        weight_error=stage.weight_error,
        weight_dist=stage.weight_dist,
        grad_tol=stage.grad_tol,
        steps=steps,
        wall_time_s=time.perf_counter() - t_start,
        converged=converged,
        cost=cost,
        error_term=getattr(aux, "error_term", float("nan")),
        distortion=getattr(aux, "distortion", float("nan")),
        grad_inf_norm=float(np.abs(g_mod).max()) if g_mod.size else 0.0,
        median_rel_error=float(np.median(rel)) if rel.size else 0.0,
        max_rel_error=float(rel.max()) if rel.size else 0.0,
        min_det_accepted=min_det_seen,
    )
    return x, stats, log, aux


def _relative_errors(aux) -> np.ndarray:
    eps = getattr(aux, "region_errors", None)
    areas = getattr(aux, "region_areas", None)
    if eps is None or len(eps) == 0:
        return np.array([])
    pops = areas - eps
    return np.abs(eps) / pops


def make_stage_schedule(
    stages: int = 10,
    *,
    weight_error: float = 1.0,
    weight_dist_start: float = 0.1,
    grad_tol_start: float = 0.01,
    factor: float = 0.1,
    max_steps: int = MAX_STEPS_PER_STAGE,
) -> list[Stage]:
    """The staged schedule: stage k has distortion weight and stop threshold
    both scaled by ``factor**(k-1)`` from the stage-1 values."""
    return [
        Stage(
            index=k,
            weight_error=weight_error,
            weight_dist=weight_dist_start * factor ** (k - 1),
            grad_tol=grad_tol_start * factor ** (k - 1),
            max_steps=max_steps,
        )
        for k in range(1, stages + 1)
    ]


def run_cartogram(
    tables: CostTables,
    v0: np.ndarray,
    schedule: list[Stage],
    *,
    region_ids: list[str] | None = None,
    memory: int = LBFGS_MEMORY,
    armijo_c: float = ARMIJO_C,
    verbose: bool = False,
    log_steps: bool = False,
    frozen: np.ndarray | None = None,
    stream=None,
) -> SolveResult:
    """Chain the stages, each starting from the previous stage's output."""
    if tables.psi.shape[0] == 0:
        raise ValueError("cartogram run needs at least one region")
    x = np.asarray(v0, dtype=float).reshape(-1).copy()
    stats: list[StageStats] = []
    log: list[StepLogEntry] = []
    aux = None
    for stage in schedule:
        problem = CartogramProblem(
            CostParams(weight_error=stage.weight_error, weight_dist=stage.weight_dist),
            tables,
            frozen=frozen,
        )
        x, st, stage_log, aux = run_stage(
            problem,
            x,
            stage,
            memory=memory,
            armijo_c=armijo_c,
            verbose=verbose,
            log_steps=log_steps,
            stream=stream,
        )
        stats.append(st)
        log.extend(stage_log)
    vertices = x.reshape(tables.vertex_count, tables.dim)
    return SolveResult(
        mode=tables.mode,
        vertices=vertices,
        stages=stats,
        region_ids=list(region_ids) if region_ids else [],
        populations=tables.populations,
        region_areas=aux.region_areas if aux is not None else np.array([]),
        region_errors=aux.region_errors if aux is not None else np.array([]),
        step_log=log,
    )


def run_projection(
    tables: CostTables,
    v0: np.ndarray,
    *,
    ratios: tuple[float, ...] = (0.1, 1.0, 10.0, 100.0),
    land_factor: float = 100.0,
    grad_tol: float = 1e-3,
    max_steps: int = MAX_STEPS_PER_STAGE,
    memory: int = LBFGS_MEMORY,
    armijo_c: float = ARMIJO_C,
    verbose: bool = False,
    log_steps: bool = False,
    stream=None,
) -> SolveResult:
    """Projection-only (distortion-minimizing) run: uniform intended scale,
    land triangles weighted ``land_factor`` times more than water, and the
    scale-vs-shape ratio swept upward so an almost equal-area result keeps
    the low shape distortion found early. The vertex initially at the north
    pole is excluded from the optimized variables."""
    if tables.mode != "projection":
        raise ValueError("run_projection needs projection-mode tables")
    x = np.asarray(v0, dtype=float).reshape(-1).copy()
    base_shape = tables.w_shape  # carries the land/water factor already
    stats: list[StageStats] = []
    log: list[StepLogEntry] = []
    frozen = np.zeros(tables.vertex_count, dtype=bool)
    if tables.penalties.pole_index >= 0:
        frozen[tables.penalties.pole_index] = True
    aux = None
    for k, ratio in enumerate(ratios, start=1):
        ramp_tables = replace(tables, w_scale=base_shape * ratio)
        problem = CartogramProblem(
            CostParams(weight_error=0.0, weight_dist=1.0), ramp_tables, frozen=frozen
        )
        stage = Stage(
            index=k,
            weight_error=0.0,
            weight_dist=1.0,
            grad_tol=grad_tol * max(1.0, ratio),
            max_steps=max_steps,
        )
        x, st, stage_log, aux = run_stage(
            problem,
            x,
            stage,
            memory=memory,
            armijo_c=armijo_c,
            verbose=verbose,
            log_steps=log_steps,
            stream=stream,
        )
        stats.append(st)
        log.extend(stage_log)
    vertices = x.reshape(tables.vertex_count, tables.dim)
    return SolveResult(
        mode="projection",
        vertices=vertices,
        stages=stats,
        region_ids=[],
        populations=np.array([]),
        region_areas=np.array([]),
        region_errors=np.array([]),
        step_log=log,
    )
