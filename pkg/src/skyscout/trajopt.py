"""Gradient-based B-spline refinement against the local occupancy grid.

The planner minimizes a weighted sum of three penalties over the spline
control points: smoothness (squared acceleration and jerk differences),
collision (distance to per-point obstacle anchors below a safety
margin), and feasibility (per-axis derivative magnitudes over a soft
limit). Anchors pair an in-collision control point with a point on the
obstacle surface and a unit escape direction; the collision penalty then
works on the scalar d_i = (Q_i - p_i) . v_i without needing a distance
field.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .local_grid import LocalGridMap
from .spline import UniformBspline, control_point_derivatives

Vec3 = np.ndarray


class PlanningFailure(RuntimeError):
    """No valid escape direction or anchor could be constructed."""


@dataclass(frozen=True)
class AnchorPair:
    """Obstacle-surface point and escape direction for one control point."""

    index: int
    point: np.ndarray
    direction: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.point, dtype=float)
        v = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValueError("escape direction must be unit length")
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "direction", v)


@dataclass(frozen=True)
class CostWeights:
    """Penalty weights, margins, and per-order derivative limits.

    ``dead_band`` is the fraction of each limit below which the
    feasibility penalty vanishes; ``junction_scale`` places the
    cubic-to-quadratic handover at junction_scale * dead_band * limit.
    """

    lambda_smooth: float = 1.0
    lambda_collision: float = 10.0
    lambda_feasible: float = 1.0
    safe_dist: float = 0.3
    w_vel: float = 1.0
    w_acc: float = 1.0
    w_jerk: float = 1.0
    v_max: float = 2.0
    a_max: float = 3.0
    j_max: float = 4.0
    dead_band: float = 0.95
    junction_scale: float = 1.2
    multi_anchor: bool = False

    def __post_init__(self) -> None:
        non_negative = (
            self.lambda_smooth,
            self.lambda_collision,
            self.lambda_feasible,
            self.safe_dist,
            self.w_vel,
            self.w_acc,
            self.w_jerk,
        )
        if any(w < 0 for w in non_negative):
            raise ValueError("weights and margins must be non-negative")
        if not 0.0 < self.dead_band < 1.0:
            raise ValueError("dead_band must lie in (0, 1)")
        if self.junction_scale <= 1.0:
            raise ValueError("junction must lie beyond the dead band edge")
        if min(self.v_max, self.a_max, self.j_max) <= 0:
            raise ValueError("derivative limits must be positive")


def collision_penalty(d: float, safe_dist: float) -> tuple[float, float]:
    """Penalty and d-derivative for anchor distance d below the margin.

    Smooth through both junctions: zero beyond the margin, cubic just
    inside it, and a linear-growth tail deeper in.
    """
    c = safe_dist - d
    if c <= 0.0:
        return 0.0, 0.0
    if c <= safe_dist:
        return c**3, -3.0 * c**2
    val = 3.0 * safe_dist * c**2 - 3.0 * safe_dist**2 * c + safe_dist**3
    return val, -(6.0 * safe_dist * c - 3.0 * safe_dist**2)


def axis_penalty(c: float, limit: float, dead_band: float, junction: float) -> tuple[float, float]:
    """Even soft-limit penalty on one derivative component.

    Zero inside +/- dead_band*limit, cubic up to the junction, then a
    quadratic tail whose coefficients give matching value, slope, and
    curvature at the handover.
    """
    edge = dead_band * limit
    if junction <= edge:
        raise ValueError("junction must exceed the dead band edge")
    a = abs(c)
    sign = 1.0 if c >= 0 else -1.0
    if a <= edge:
        return 0.0, 0.0
    if a <= junction:
        e = a - edge
        return e**3, sign * 3.0 * e**2
    e = junction - edge
    a2 = 3.0 * e
    b2 = 3.0 * e**2 - 6.0 * e * junction
    c2 = e * (e**2 - 3.0 * e * junction + 3.0 * junction**2)
    return a2 * a**2 + b2 * a + c2, sign * (2.0 * a2 * a + b2)


def _axis_penalty_array(values: np.ndarray, limit: float, dead_band: float, junction: float):
    cost = 0.0
    grad = np.zeros_like(values)
    flat = values.ravel()
    gflat = grad.ravel()
    for k in range(flat.size):
        v, g = axis_penalty(float(flat[k]), limit, dead_band, junction)
        cost += v
        gflat[k] = g
    return cost, grad


def _accumulate_difference_grad(grad: np.ndarray, sens: np.ndarray, order: int, dt: float) -> None:
    """Push cost sensitivities on order-th differences back onto points.

    sens holds the cost derivative with respect to each difference row
    (already excluding the 1/dt^order scaling, which is applied here).
    """
    scale = dt**order
    if order == 1:
        grad[:-1] -= sens / scale
        grad[1:] += sens / scale
    elif order == 2:
        grad[:-2] += sens / scale
        grad[1:-1] -= 2.0 * sens / scale
        grad[2:] += sens / scale
    elif order == 3:
        grad[:-3] -= sens / scale
        grad[1:-2] += 3.0 * sens / scale
        grad[2:-1] -= 3.0 * sens / scale
        grad[3:] += sens / scale
    else:
        raise ValueError("order must be 1, 2, or 3")


def smoothness_cost(spline: UniformBspline) -> tuple[float, np.ndarray]:
    """Sum of squared acceleration and jerk control points, with gradient."""
    _, acc, jerk = control_point_derivatives(spline.control_points, spline.dt)
    cost = float(np.sum(acc**2) + np.sum(jerk**2))
    grad = np.zeros_like(spline.control_points)
    if len(acc):
        _accumulate_difference_grad(grad, 2.0 * acc, 2, spline.dt)
    if len(jerk):
        _accumulate_difference_grad(grad, 2.0 * jerk, 3, spline.dt)
    return cost, grad


def collision_cost(
    spline: UniformBspline,
    anchors: list[AnchorPair],
    weights: CostWeights,
) -> tuple[float, np.ndarray]:
    """Anchor-margin penalty summed over anchored control points."""
    cost = 0.0
    grad = np.zeros_like(spline.control_points)
    for pair in anchors:
        q = spline.control_points[pair.index]
        d = float(np.dot(q - pair.point, pair.direction))
        val, dval = collision_penalty(d, weights.safe_dist)
        cost += val
        grad[pair.index] += dval * pair.direction
    return cost, grad


def feasibility_cost(spline: UniformBspline, weights: CostWeights) -> tuple[float, np.ndarray]:
    """Soft per-axis limits on velocity, acceleration, and jerk points."""
    vel, acc, jerk = control_point_derivatives(spline.control_points, spline.dt)
    grad = np.zeros_like(spline.control_points)
    cost = 0.0
    for values, order, w, limit in (
        (vel, 1, weights.w_vel, weights.v_max),
        (acc, 2, weights.w_acc, weights.a_max),
        (jerk, 3, weights.w_jerk, weights.j_max),
    ):
        if len(values) == 0 or w == 0.0:
            continue
        junction = weights.junction_scale * weights.dead_band * limit
        c, sens = _axis_penalty_array(values, limit, weights.dead_band, junction)
        cost += w * c
        _accumulate_difference_grad(grad, w * sens, order, spline.dt)
    return cost, grad


def total_cost(
    spline: UniformBspline,
    anchors: list[AnchorPair],
    weights: CostWeights,
) -> tuple[float, np.ndarray]:
    js, gs = smoothness_cost(spline)
    jc, gc = collision_cost(spline, anchors, weights)
    jd, gd = feasibility_cost(spline, weights)
    cost = weights.lambda_smooth * js + weights.lambda_collision * jc + weights.lambda_feasible * jd
    grad = (
        weights.lambda_smooth * gs
        + weights.lambda_collision * gc
        + weights.lambda_feasible * gd
    )
    return cost, grad


def _bisect_surface(
    q: np.ndarray, direction: np.ndarray, t_free: float, grid: LocalGridMap
) -> np.ndarray:
    """Locate the occupied-to-free crossing between q and q + t_free*dir."""
    lo, hi = 0.0, t_free
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if grid.is_occupied(q + mid * direction):
            lo = mid
        else:
            hi = mid
    return q + 0.5 * (lo + hi) * direction


def _nearest_free_cell_direction(
    q: np.ndarray,
    grid: LocalGridMap,
    max_radius: float,
    avoid_axis: np.ndarray | None = None,
) -> np.ndarray | None:
    """Offset from q to the nearest free cell, by expanding search.

    Deterministic: candidates are ordered by squared distance, then by
    offset tuple. When avoid_axis is given, directions nearly parallel
    to it are skipped in a first pass so escape routes prefer stepping
    sideways off the travel direction; the filter is dropped if nothing
    qualifies.
    """
    size = grid.config.cell_size
    max_cells = int(math.ceil(max_radius / size))

    def scan(axis) -> np.ndarray | None:
        heap: list[tuple[float, tuple[int, int, int]]] = []
        for ring in range(1, max_cells + 1):
            for dx in range(-ring, ring + 1):
                for dy in range(-ring, ring + 1):
                    for dz in range(-ring, ring + 1):
                        if max(abs(dx), abs(dy), abs(dz)) != ring:
                            continue
                        heapq.heappush(
                            heap, (float(dx * dx + dy * dy + dz * dz), (dx, dy, dz))
                        )
            while heap and heap[0][0] <= ring * ring:
                _, off = heapq.heappop(heap)
                delta = size * np.array(off, dtype=float)
                if axis is not None:
                    norm = np.linalg.norm(delta)
                    if abs(float(delta @ axis)) > 0.866 * norm:
                        continue
                if not grid.is_occupied(q + delta):
                    return delta
        while heap:
            _, off = heapq.heappop(heap)
            delta = size * np.array(off, dtype=float)
            if axis is not None:
                norm = np.linalg.norm(delta)
                if abs(float(delta @ axis)) > 0.866 * norm:
                    continue
            if not grid.is_occupied(q + delta):
                return delta
        return None

    if avoid_axis is not None:
        found = scan(avoid_axis)
        if found is not None:
            return found
    return scan(None)


def find_anchor(
    q: Vec3,
    grid: LocalGridMap,
    guide: Vec3,
    max_dist: float = 4.0,
    avoid_axis: np.ndarray | None = None,
) -> AnchorPair | None:
    """Anchor for an in-collision point: surface crossing plus escape direction.

    Marches from q along the guide direction to the first free cell and
    bisects the crossing onto the obstacle surface. A degenerate or
    unusable guide falls back to the nearest free cell by expanding
    search (sideways-preferring when avoid_axis is given). Returns None
    when q is already free; raises PlanningFailure when no free space
    exists within max_dist.
    """
    q = np.asarray(q, dtype=float)
    if not grid.is_occupied(q):
        return None
    guide = np.asarray(guide, dtype=float)
    norm = np.linalg.norm(guide)
    direction = None
    t_free = 0.0
    if norm > 1e-9:
        u = guide / norm
        step = grid.config.cell_size * 0.5
        t = step
        while t <= max_dist:
            if not grid.is_occupied(q + t * u):
                direction, t_free = u, t
                break
            t += step
    if direction is None:
        delta = _nearest_free_cell_direction(q, grid, max_dist, avoid_axis)
        if delta is None:
            raise PlanningFailure("no free cell within anchor search radius")
        t_exact = float(np.linalg.norm(delta))
        u = delta / t_exact
        # prefer the first free sample on the way; q + delta itself is
        # free by construction, so the fallback always succeeds
        step = grid.config.cell_size * 0.25
        found = t_exact
        t = step
        while t < t_exact:
            if not grid.is_occupied(q + t * u):
                found = t
                break
            t += step
        direction, t_free = u, found
    surface = _bisect_surface(q, direction, t_free, grid)
    return AnchorPair(index=0, point=surface, direction=direction)


@dataclass
class OptimizeTrace:
    """Optimization diagnostics for tests and tuning.

    steps holds (cost before, cost after) per accepted line search;
    final_anchors holds the anchor set active at termination.
    """

    steps: list[tuple[float, float]] = field(default_factory=list)
    anchor_events: int = 0
    final_anchors: list[AnchorPair] = field(default_factory=list)


def _attach_anchor(
    i: int,
    points: np.ndarray,
    grid: LocalGridMap,
    anchors: dict[int, list[AnchorPair]],
    chord: np.ndarray,
    travel_axis: np.ndarray,
    multi: bool,
    search_radius: float,
) -> None:
    """Attach an anchor for an in-collision control point.

    The guide direction comes from, in order of preference: an anchored
    neighbor control point (keeps escape sides consistent along a
    colliding stretch), the point's station on the straight start-goal
    chord when that station is free, or the nearest free cell with a
    sideways preference relative to the travel axis. Single-anchor mode
    replaces any stale pair; multi-anchor mode accumulates.
    """
    guide = np.zeros(3)
    for j in (i - 1, i + 1):
        if anchors.get(j):
            guide = anchors[j][-1].direction
            break
    if not guide.any():
        if not grid.is_occupied(chord[i]):
            guide = chord[i] - points[i]
    pair = find_anchor(points[i], grid, guide, search_radius, avoid_axis=travel_axis)
    assert pair is not None
    pair = AnchorPair(index=i, point=pair.point, direction=pair.direction)
    if multi:
        anchors.setdefault(i, []).append(pair)
    else:
        anchors[i] = [pair]


def _flatten_anchors(anchors: dict[int, list[AnchorPair]]) -> list[AnchorPair]:
    out: list[AnchorPair] = []
    for i in sorted(anchors):
        out.extend(anchors[i])
    return out


def optimize(
    spline: UniformBspline,
    grid: LocalGridMap,
    weights: CostWeights | None = None,
    max_iters: int = 150,
    tol: float = 1e-6,
    freeze_start_velocity: bool = False,
    anchor_search_radius: float = 4.0,
    trace: OptimizeTrace | None = None,
) -> UniformBspline:
    """Refine control points by limited-memory quasi-Newton descent.

    Endpoints stay fixed (plus the second point when the start velocity
    is frozen). Anchors are created whenever a control point enters
    collision; each anchor change restarts the curvature memory since
    the objective changed. Accepted steps never increase the active
    objective. Raises PlanningFailure if an in-collision point has no
    reachable free space.
    """
    weights = weights or CostWeights()
    points = spline.control_points.copy()
    n = len(points)
    frozen = {0, n - 1}
    if freeze_start_velocity:
        frozen.add(1)
    free_idx = np.array([i for i in range(n) if i not in frozen], dtype=int)
    if len(free_idx) == 0:
        return spline

    alphas = np.linspace(0.0, 1.0, n)[:, None]
    chord = points[0] + alphas * (points[-1] - points[0])
    span = points[-1] - points[0]
    span_norm = np.linalg.norm(span)
    travel_axis = span / span_norm if span_norm > 1e-9 else np.array([1.0, 0.0, 0.0])

    anchors: dict[int, list[AnchorPair]] = {}
    occupied_state = np.array([grid.is_occupied(points[i]) for i in range(n)])
    for i in free_idx:
        if occupied_state[i]:
            _attach_anchor(
                i, points, grid, anchors, chord, travel_axis,
                weights.multi_anchor, anchor_search_radius,
            )

    def eval_cost(pts: np.ndarray) -> tuple[float, np.ndarray]:
        sp = spline.with_control_points(pts)
        cost, grad = total_cost(sp, _flatten_anchors(anchors), weights)
        return cost, grad[free_idx].ravel()

    x = points[free_idx].ravel().copy()
    cost, grad = eval_cost(points)

    mem_s: list[np.ndarray] = []
    mem_y: list[np.ndarray] = []
    memory = 8

    for _ in range(max_iters):
        if np.max(np.abs(grad)) < tol:
            break
        # two-loop recursion
        p = -grad.copy()
        alpha_hist = []
        for s, y in zip(reversed(mem_s), reversed(mem_y)):
            rho = 1.0 / float(np.dot(y, s))
            a = rho * float(np.dot(s, p))
            alpha_hist.append((rho, a, s, y))
            p -= a * y
        if mem_s:
            s, y = mem_s[-1], mem_y[-1]
            p *= float(np.dot(s, y)) / float(np.dot(y, y))
        for rho, a, s, y in reversed(alpha_hist):
            b = rho * float(np.dot(y, p))
            p += (a - b) * s
        if float(np.dot(grad, p)) >= 0.0:
            mem_s.clear()
            mem_y.clear()
            p = -grad.copy()

        direction_dot = float(np.dot(grad, p))
        # without curvature memory the raw gradient can be huge (stiff
        # collision weights); cap the first trial displacement
        step = 1.0 if mem_s else min(1.0, 1.0 / (1e-9 + float(np.max(np.abs(p)))))
        accepted = False
        for _ in range(40):
            x_new = x + step * p
            pts_new = points.copy()
            pts_new[free_idx] = x_new.reshape(-1, 3)
            cost_new, grad_new = eval_cost(pts_new)
            if cost_new <= cost + 1e-4 * step * direction_dot:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        if np.max(np.abs(step * p)) < tol:
            x, points = x_new, pts_new
            if trace is not None:
                trace.steps.append((cost, cost_new))
            break

        s_vec = x_new - x
        y_vec = grad_new - grad
        if float(np.dot(s_vec, y_vec)) > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            mem_s.append(s_vec)
            mem_y.append(y_vec)
            if len(mem_s) > memory:
                mem_s.pop(0)
                mem_y.pop(0)

        if trace is not None:
            trace.steps.append((cost, cost_new))
        x, points, cost, grad = x_new, pts_new, cost_new, grad_new

        new_state = np.array([grid.is_occupied(points[i]) for i in range(n)])
        entered = new_state & ~occupied_state
        occupied_state = new_state
        changed = False
        for i in free_idx:
            if entered[i]:
                _attach_anchor(
                    i, points, grid, anchors, chord, travel_axis,
                    weights.multi_anchor, anchor_search_radius,
                )
                changed = True
        if changed:
            mem_s.clear()
            mem_y.clear()
            cost, grad = eval_cost(points)
            if trace is not None:
                trace.anchor_events += 1

    if trace is not None:
        trace.final_anchors = _flatten_anchors(anchors)
    return spline.with_control_points(points)
