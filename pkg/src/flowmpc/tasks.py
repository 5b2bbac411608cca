"""Planar task environments: point-mass reach and block pushing (T / K shapes).

Dynamics are deterministic. The robot is a kinematic circle that servos toward
a commanded target position at a capped speed (for pushing tasks) or follows a
commanded velocity directly (point_mass). The block is a damped rigid body
driven by penalty contact forces (circle vs. convex polygon parts) with a
smoothed Coulomb friction model. Rollout evaluation is compiled with numba so
large candidate batches stay cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit

__all__ = [
    "COST_TERMS",
    "DEFAULT_COST_WEIGHTS",
    "InvalidInputError",
    "State",
    "TaskConfig",
    "RolloutResult",
    "make_task",
    "t_block_parts",
    "k_block_parts",
    "point_mass_parts",
    "block_inertia",
    "step",
    "stage_cost",
    "rollout_cost",
    "rollout_costs",
    "coverage",
    "is_success",
    "goal_distance",
    "wrap_angle",
]

# Physics and metric constants (declared defaults of this implementation).
ROBOT_MAX_SPEED = 300.0  # units/s, servo speed cap for pushing tasks
CONTACT_STIFFNESS = 1.0e4  # penalty spring stiffness
CONTACT_DAMPING = 1.0e2  # penalty damper along the contact normal
FRICTION_MU = 0.5  # Coulomb friction coefficient
FRICTION_VREF = 1.0  # tanh regularization speed for tangential friction
LIN_DAMPING = 8.0  # block linear damping, 1/s
ANG_DAMPING = 8.0  # block angular damping, 1/s
BLOCK_MASS = 1.0
COVERAGE_GRID = 128  # rasterization resolution over the goal bounding box
SUCCESS_COVERAGE = 0.9

COST_TERMS = ("proximity", "velocity", "goal_dist", "goal_yaw", "progress")

DEFAULT_COST_WEIGHTS = {
    "proximity": 0.1,
    "velocity": 0.001,
    "goal_dist": 1.0,
    "goal_yaw": 40.0,
    "progress": 5.0,
}

TASK_KINDS = ("point_mass", "push_t", "push_k")


class InvalidInputError(ValueError):
    """Raised when an operation receives non-finite or malformed inputs."""


def wrap_angle(angle: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    return math.pi - ((math.pi - float(angle)) % (2.0 * math.pi))


def _vec2(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64).reshape(-1)
    if arr.shape != (2,):
        raise InvalidInputError(f"{name} must be a 2-vector, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise InvalidInputError(f"non-finite {name}: {arr}")
    return arr.copy()


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class State:
    """Full simulator state: robot pose, block planar pose, and velocities."""

    robot_pos: np.ndarray
    block_pos: np.ndarray
    block_yaw: float
    robot_vel: np.ndarray
    block_vel: np.ndarray
    block_yaw_rate: float
    step_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "robot_pos", _vec2(self.robot_pos, "robot_pos"))
        object.__setattr__(self, "block_pos", _vec2(self.block_pos, "block_pos"))
        object.__setattr__(self, "robot_vel", _vec2(self.robot_vel, "robot_vel"))
        object.__setattr__(self, "block_vel", _vec2(self.block_vel, "block_vel"))
        yaw = float(self.block_yaw)
        rate = float(self.block_yaw_rate)
        if not (math.isfinite(yaw) and math.isfinite(rate)):
            raise InvalidInputError("non-finite yaw or yaw rate")
        object.__setattr__(self, "block_yaw", wrap_angle(yaw))
        object.__setattr__(self, "block_yaw_rate", rate)
        object.__setattr__(self, "step_index", int(self.step_index))

    def to_array(self) -> np.ndarray:
        """Pack into the flat layout [rx, ry, bx, by, yaw, vrx, vry, vbx, vby, wz]."""
        out = np.empty(10)
        out[0:2] = self.robot_pos
        out[2:4] = self.block_pos
        out[4] = self.block_yaw
        out[5:7] = self.robot_vel
        out[7:9] = self.block_vel
        out[9] = self.block_yaw_rate
        return out

    @staticmethod
    def from_array(arr: np.ndarray, step_index: int = 0) -> "State":
        arr = np.asarray(arr, dtype=np.float64).reshape(10)
        return State(
            robot_pos=arr[0:2],
            block_pos=arr[2:4],
            block_yaw=float(arr[4]),
            robot_vel=arr[5:7],
            block_vel=arr[7:9],
            block_yaw_rate=float(arr[9]),
            step_index=step_index,
        )


@dataclass(frozen=True, eq=False)
class TaskConfig:
    """Immutable description of one task instance."""

    task_kind: str
    block_polygon: tuple
    goal_pose: tuple
    workspace: tuple = (0.0, 512.0, 0.0, 512.0)
    dt: float = 0.01
    robot_radius: float = 15.0
    max_steps: int = 2500
    cost_weights: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"unknown task_kind {self.task_kind!r}")
        if not (float(self.dt) > 0.0):
            raise ValueError("dt must be positive")
        object.__setattr__(self, "dt", float(self.dt))
        if int(self.max_steps) <= 0:
            raise ValueError("max_steps must be positive")
        object.__setattr__(self, "max_steps", int(self.max_steps))
        if not (float(self.robot_radius) > 0.0):
            raise ValueError("robot_radius must be positive")
        object.__setattr__(self, "robot_radius", float(self.robot_radius))

        ws = tuple(float(v) for v in self.workspace)
        if len(ws) != 4 or not (ws[0] < ws[1] and ws[2] < ws[3]):
            raise ValueError("workspace must be (xmin, xmax, ymin, ymax)")
        object.__setattr__(self, "workspace", ws)

        parts = []
        for p in self.block_polygon:
            v = np.asarray(p, dtype=np.float64)
            if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
                raise ValueError("each polygon part needs >= 3 (x, y) vertices")
            if not np.isfinite(v).all():
                raise ValueError("polygon vertices must be finite")
            if _poly_area(v) < 0.0:
                v = v[::-1]  # normalize to counter-clockwise
            if _poly_area(v) <= 0.0:
                raise ValueError("polygon part is degenerate")
            edges = np.roll(v, -1, axis=0) - v
            cross = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
            tol = 1e-9 * float(np.max(edges[:, 0] ** 2 + edges[:, 1] ** 2))
            if np.any(cross < -tol):
                raise ValueError("polygon part is not convex")
            parts.append(np.ascontiguousarray(v))
        if not parts:
            raise ValueError("block_polygon must have at least one part")
        object.__setattr__(self, "block_polygon", tuple(parts))

        gpos, gyaw = self.goal_pose
        gpos = _vec2(gpos, "goal position")
        object.__setattr__(self, "goal_pose", (gpos, wrap_angle(float(gyaw))))

        w = {}
        for key, value in dict(self.cost_weights).items():
            if key not in COST_TERMS:
                raise ValueError(f"unknown cost term {key!r}; known: {COST_TERMS}")
            value = float(value)
            if not (math.isfinite(value) and value >= 0.0):
                raise ValueError(f"cost weight {key!r} must be finite and >= 0")
            w[key] = value
        object.__setattr__(self, "cost_weights", w)


@dataclass(frozen=True, eq=False)
class RolloutResult:
    """Outcome of simulating one control sequence from a start state."""

    total_cost: float
    states: list
    success_step: int | None


# ---------------------------------------------------------------------------
# canonical geometry
# ---------------------------------------------------------------------------


def _rect(cx: float, cy: float, w: float, h: float) -> np.ndarray:
    return np.array(
        [
            [cx - w / 2, cy - h / 2],
            [cx + w / 2, cy - h / 2],
            [cx + w / 2, cy + h / 2],
            [cx - w / 2, cy + h / 2],
        ]
    )


def _rot_rect(cx: float, cy: float, w: float, h: float, angle: float) -> np.ndarray:
    base = _rect(0.0, 0.0, w, h)
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return base @ rot.T + np.array([cx, cy])


def _poly_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return float((x * yn - xn * y).sum() / 2.0)


def _poly_centroid(v: np.ndarray) -> np.ndarray:
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2.0
    cx = ((x + xn) * cross).sum() / (6.0 * a)
    cy = ((y + yn) * cross).sum() / (6.0 * a)
    return np.array([cx, cy])


def _poly_second_moment_origin(v: np.ndarray) -> float:
    """Second moment of area about the origin (Ix + Iy) for a CCW polygon."""
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    return float(
        (cross * (x * x + x * xn + xn * xn + y * y + y * yn + yn * yn)).sum() / 12.0
    )


def _center_parts(parts) -> tuple:
    """Translate a multi-part shape so the area-weighted centroid sits at 0."""
    area = 0.0
    moment = np.zeros(2)
    for p in parts:
        a = _poly_area(p)
        area += a
        moment += a * _poly_centroid(p)
    com = moment / area
    return tuple(np.ascontiguousarray(p - com) for p in parts)


def t_block_parts() -> tuple:
    """T shape: a 120x30 horizontal bar sitting on a 30x90 vertical stem."""
    bar = _rect(0.0, 15.0, 120.0, 30.0)
    stem = _rect(0.0, -45.0, 30.0, 90.0)
    return _center_parts((bar, stem))


def k_block_parts() -> tuple:
    """K shape: a vertical spine plus two diagonal arms."""
    spine = _rect(-30.0, 0.0, 30.0, 120.0)
    angle = math.atan2(58.0, 60.0)
    length = math.hypot(60.0, 58.0)
    upper = _rot_rect(15.0, 29.0, length, 30.0, angle)
    lower = _rot_rect(15.0, -29.0, length, 30.0, -angle)
    return _center_parts((spine, upper, lower))


def point_mass_parts() -> tuple:
    """Small square marker; the point-mass task has no separate block body."""
    return (_rect(0.0, 0.0, 20.0, 20.0),)


def make_task(kind: str, *, goal_pose=None, cost_weights=None, dt: float = 0.01,
              max_steps: int = 2500, workspace=(0.0, 512.0, 0.0, 512.0),
              robot_radius: float = 15.0) -> TaskConfig:
    """Build a canonical task configuration for one of the known kinds."""
    builders = {
        "point_mass": point_mass_parts,
        "push_t": t_block_parts,
        "push_k": k_block_parts,
    }
    if kind not in builders:
        raise ValueError(f"unknown task kind {kind!r}; known: {sorted(builders)}")
    if goal_pose is None:
        goal_pose = (np.array([256.0, 256.0]), 0.0)
    merged = dict(DEFAULT_COST_WEIGHTS)
    if cost_weights:
        merged.update(cost_weights)
    return TaskConfig(
        task_kind=kind,
        block_polygon=builders[kind](),
        goal_pose=goal_pose,
        workspace=workspace,
        dt=dt,
        max_steps=max_steps,
        robot_radius=robot_radius,
        cost_weights=merged,
    )


def block_inertia(config: TaskConfig) -> float:
    """Mass moment of inertia of the block about its center of mass."""
    return _geom(config).inertia


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _wrap_nb(a):
    return math.pi - ((math.pi - a) % (2.0 * math.pi))


@njit(cache=True)
def _stage_terms_nb(rx, ry, bx, by, yaw, vrx, vry,
                    gx, gy, gyaw, w0, w1, w2, w3, w4, prev_gd):
    cost = w0 * math.hypot(bx - rx, by - ry) + w1 * math.hypot(vrx, vry)
    gd = math.hypot(bx - gx, by - gy)
    yerr = abs(_wrap_nb(yaw - gyaw))
    prog = gd - prev_gd
    if prog < 0.0:
        prog = 0.0
    return cost + w2 * gd + w3 * yerr + w4 * prog


@njit(cache=True)
def _goal_terms_nb(bx, by, yaw, gx, gy, gyaw, w2, w3, w4, prev_gd):
    gd = math.hypot(bx - gx, by - gy)
    yerr = abs(_wrap_nb(yaw - gyaw))
    prog = gd - prev_gd
    if prog < 0.0:
        prog = 0.0
    return w2 * gd + w3 * yerr + w4 * prog


@njit(cache=True)
def _part_contact_nb(cx, cy, rvx, rvy, bx, by, cos_y, sin_y, vbx, vby, wz,
                     verts, nv, radius, stiffness, damping, mu, vref):
    """Penalty contact of a circle against one convex CCW part.

    Returns the force on the block and the torque about its center of mass.
    """
    best_d2 = 1.0e300
    qx = 0.0
    qy = 0.0
    inward_nx = 0.0
    inward_ny = 0.0
    inside = True
    for i in range(nv):
        ax = bx + cos_y * verts[i, 0] - sin_y * verts[i, 1]
        ay = by + sin_y * verts[i, 0] + cos_y * verts[i, 1]
        j = i + 1
        if j == nv:
            j = 0
        ex = bx + cos_y * verts[j, 0] - sin_y * verts[j, 1] - ax
        ey = by + sin_y * verts[j, 0] + cos_y * verts[j, 1] - ay
        if ex * (cy - ay) - ey * (cx - ax) < 0.0:
            inside = False
        l2 = ex * ex + ey * ey
        t = ((cx - ax) * ex + (cy - ay) * ey) / l2
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        px = ax + t * ex
        py = ay + t * ey
        d2 = (cx - px) * (cx - px) + (cy - py) * (cy - py)
        if d2 < best_d2:
            best_d2 = d2
            qx = px
            qy = py
            el = math.sqrt(l2)
            inward_nx = -ey / el
            inward_ny = ex / el
    d = math.sqrt(best_d2)
    if inside:
        depth = radius + d
    else:
        depth = radius - d
        if depth <= 0.0:
            return 0.0, 0.0, 0.0
    # force direction on the block: away from the robot, into the shape
    if d < 1e-9:
        nx = inward_nx
        ny = inward_ny
    elif inside:
        nx = (cx - qx) / d
        ny = (cy - qy) / d
    else:
        nx = (qx - cx) / d
        ny = (qy - cy) / d
    rqx = qx - bx
    rqy = qy - by
    relx = vbx - wz * rqy - rvx
    rely = vby + wz * rqx - rvy
    vn = relx * nx + rely * ny
    fn = stiffness * depth - damping * vn
    if fn < 0.0:
        fn = 0.0
    tx = -ny
    ty = nx
    vt = relx * tx + rely * ty
    ft = -mu * fn * math.tanh(vt / vref)
    fx = fn * nx + ft * tx
    fy = fn * ny + ft * ty
    return fx, fy, rqx * fy - rqy * fx


@njit(cache=True)
def _rollout_nb(x0, controls, is_push, dt, radius, ws0, ws1, ws2, ws3,
                stiffness, damping, mu, vref, lin_decay, ang_decay,
                inv_mass, inv_inertia, max_speed,
                gx, gy, gyaw, w0, w1, w2, w3, w4, prev_gd,
                verts, nverts, states_out, costs_out):
    n_cand = controls.shape[0]
    horizon = controls.shape[1]
    n_parts = verts.shape[0]
    for n in range(n_cand):
        rx = x0[0]
        ry = x0[1]
        bx = x0[2]
        by = x0[3]
        yaw = x0[4]
        vrx = x0[5]
        vry = x0[6]
        vbx = x0[7]
        vby = x0[8]
        wz = x0[9]
        states_out[n, 0, 0] = rx
        states_out[n, 0, 1] = ry
        states_out[n, 0, 2] = bx
        states_out[n, 0, 3] = by
        states_out[n, 0, 4] = yaw
        states_out[n, 0, 5] = vrx
        states_out[n, 0, 6] = vry
        states_out[n, 0, 7] = vbx
        states_out[n, 0, 8] = vby
        states_out[n, 0, 9] = wz
        total = 0.0
        for h in range(horizon):
            total += _stage_terms_nb(rx, ry, bx, by, yaw, vrx, vry,
                                     gx, gy, gyaw, w0, w1, w2, w3, w4, prev_gd)
            ux = controls[n, h, 0]
            uy = controls[n, h, 1]
            if is_push:
                tx = ux
                if tx < ws0:
                    tx = ws0
                elif tx > ws1:
                    tx = ws1
                ty = uy
                if ty < ws2:
                    ty = ws2
                elif ty > ws3:
                    ty = ws3
                dx = tx - rx
                dy = ty - ry
                dist = math.hypot(dx, dy)
                max_move = max_speed * dt
                if dist > max_move:
                    sc = max_move / dist
                    dx *= sc
                    dy *= sc
                rx += dx
                ry += dy
                vrx = dx / dt
                vry = dy / dt
                cos_y = math.cos(yaw)
                sin_y = math.sin(yaw)
                fx = 0.0
                fy = 0.0
                tq = 0.0
                for p in range(n_parts):
                    pfx, pfy, ptq = _part_contact_nb(
                        rx, ry, vrx, vry, bx, by, cos_y, sin_y, vbx, vby, wz,
                        verts[p], nverts[p], radius, stiffness, damping, mu, vref)
                    fx += pfx
                    fy += pfy
                    tq += ptq
                vbx = (vbx + fx * inv_mass * dt) * lin_decay
                vby = (vby + fy * inv_mass * dt) * lin_decay
                wz = (wz + tq * inv_inertia * dt) * ang_decay
                bx += vbx * dt
                by += vby * dt
                yaw = _wrap_nb(yaw + wz * dt)
            else:
                vrx = ux
                vry = uy
                rx += ux * dt
                ry += uy * dt
                if rx < ws0:
                    rx = ws0
                elif rx > ws1:
                    rx = ws1
                if ry < ws2:
                    ry = ws2
                elif ry > ws3:
                    ry = ws3
                bx = rx
                by = ry
                yaw = 0.0
                vbx = vrx
                vby = vry
                wz = 0.0
            states_out[n, h + 1, 0] = rx
            states_out[n, h + 1, 1] = ry
            states_out[n, h + 1, 2] = bx
            states_out[n, h + 1, 3] = by
            states_out[n, h + 1, 4] = yaw
            states_out[n, h + 1, 5] = vrx
            states_out[n, h + 1, 6] = vry
            states_out[n, h + 1, 7] = vbx
            states_out[n, h + 1, 8] = vby
            states_out[n, h + 1, 9] = wz
        total += _goal_terms_nb(bx, by, yaw, gx, gy, gyaw, w2, w3, w4, prev_gd)
        costs_out[n] = total


# ---------------------------------------------------------------------------
# cached per-config geometry
# ---------------------------------------------------------------------------


class _Geom:
    __slots__ = ("verts", "nverts", "inertia", "area", "circumradius",
                 "normals", "offsets")

    def __init__(self, verts, nverts, inertia, area, circumradius, normals, offsets):
        self.verts = verts
        self.nverts = nverts
        self.inertia = inertia
        self.area = area
        self.circumradius = circumradius
        self.normals = normals
        self.offsets = offsets


@lru_cache(maxsize=256)
def _geom(config: TaskConfig) -> _Geom:
    parts = config.block_polygon
    vmax = max(len(p) for p in parts)
    verts = np.zeros((len(parts), vmax, 2))
    nverts = np.zeros(len(parts), dtype=np.int64)
    area = 0.0
    second = 0.0
    circum = 0.0
    normals = []
    offsets = []
    for i, p in enumerate(parts):
        verts[i, : len(p)] = p
        nverts[i] = len(p)
        area += _poly_area(p)
        second += _poly_second_moment_origin(p)
        circum = max(circum, float(np.hypot(p[:, 0], p[:, 1]).max()))
        e = np.roll(p, -1, axis=0) - p
        nrm = np.stack([-e[:, 1], e[:, 0]], axis=1)
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        normals.append(nrm)
        offsets.append(np.einsum("ij,ij->i", nrm, p))
    inertia = BLOCK_MASS * second / area
    return _Geom(verts, nverts, inertia, area, circum, tuple(normals), tuple(offsets))


def _points_in_footprint(points: np.ndarray, pos, yaw: float, geom: _Geom) -> np.ndarray:
    """Boolean mask over world points inside the block footprint at a pose."""
    rel = points - np.asarray(pos, dtype=np.float64)
    c, s = math.cos(yaw), math.sin(yaw)
    local = np.empty_like(rel)
    local[:, 0] = c * rel[:, 0] + s * rel[:, 1]
    local[:, 1] = -s * rel[:, 0] + c * rel[:, 1]
    mask = np.zeros(len(points), dtype=bool)
    for nrm, off in zip(geom.normals, geom.offsets):
        mask |= ((local @ nrm.T) >= (off - 1e-9)).all(axis=1)
    return mask


@lru_cache(maxsize=256)
def _goal_raster(config: TaskConfig):
    """Cell centers of the goal footprint on the fixed goal-bbox grid."""
    geom = _geom(config)
    gpos, gyaw = config.goal_pose
    c, s = math.cos(gyaw), math.sin(gyaw)
    rot = np.array([[c, -s], [s, c]])
    allv = np.vstack([p @ rot.T + gpos for p in config.block_polygon])
    x0, y0 = allv.min(axis=0)
    x1, y1 = allv.max(axis=0)
    n = COVERAGE_GRID
    xs = x0 + (np.arange(n) + 0.5) / n * (x1 - x0)
    ys = y0 + (np.arange(n) + 0.5) / n * (y1 - y0)
    pts = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    mask = _points_in_footprint(pts, gpos, gyaw, geom)
    cell_diag = math.hypot((x1 - x0) / n, (y1 - y0) / n)
    return np.ascontiguousarray(pts[mask]), int(mask.sum()), cell_diag


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def _weights5(config: TaskConfig) -> tuple:
    w = config.cost_weights
    return tuple(float(w.get(term, 0.0)) for term in COST_TERMS)


def _run_rollouts(config: TaskConfig, x0_arr: np.ndarray, controls: np.ndarray,
                  prev_gd: float):
    if not np.isfinite(controls).all():
        raise InvalidInputError("non-finite control sequence")
    geom = _geom(config)
    n, horizon = controls.shape[0], controls.shape[1]
    states = np.empty((n, horizon + 1, 10))
    costs = np.empty(n)
    ws = config.workspace
    w0, w1, w2, w3, w4 = _weights5(config)
    gpos, gyaw = config.goal_pose
    _rollout_nb(
        x0_arr, controls, config.task_kind != "point_mass", config.dt,
        config.robot_radius, ws[0], ws[1], ws[2], ws[3],
        CONTACT_STIFFNESS, CONTACT_DAMPING, FRICTION_MU, FRICTION_VREF,
        math.exp(-LIN_DAMPING * config.dt), math.exp(-ANG_DAMPING * config.dt),
        1.0 / BLOCK_MASS, 1.0 / geom.inertia, ROBOT_MAX_SPEED,
        gpos[0], gpos[1], gyaw, w0, w1, w2, w3, w4, prev_gd,
        geom.verts, geom.nverts, states, costs,
    )
    return costs, states


def step(config: TaskConfig, state: State, control) -> State:
    """Advance the simulator by one dt. Deterministic and pure."""
    u = _vec2(control, "control")
    _, states = _run_rollouts(config, state.to_array(),
                              u.reshape(1, 1, 2), math.inf)
    return State.from_array(states[0, 1], state.step_index + 1)


def stage_cost(config: TaskConfig, state: State, control=None,
               prev_goal_dist: float | None = None) -> float:
    """Weighted sum of proximity, velocity, and goal-reaching terms.

    The progress term compares the current block-to-goal distance against
    `prev_goal_dist` (the distance at the previous replanning step) and is
    inactive when no baseline is given.
    """
    if control is not None:
        _vec2(control, "control")
    prev_gd = math.inf if prev_goal_dist is None else float(prev_goal_dist)
    w0, w1, w2, w3, w4 = _weights5(config)
    gpos, gyaw = config.goal_pose
    arr = state.to_array()
    return float(
        _stage_terms_nb(arr[0], arr[1], arr[2], arr[3], arr[4], arr[5], arr[6],
                        gpos[0], gpos[1], gyaw, w0, w1, w2, w3, w4, prev_gd)
    )


def rollout_cost(config: TaskConfig, x0: State, controls,
                 prev_goal_dist: float | None = None) -> RolloutResult:
    """Accumulate stage costs plus a terminal goal term along one rollout."""
    arr = np.ascontiguousarray(np.asarray(controls, dtype=np.float64))
    if arr.size == 0:
        arr = arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidInputError(f"controls must be (H, 2), got {arr.shape}")
    if arr.shape[0] > config.max_steps:
        raise InvalidInputError(
            f"controls length {arr.shape[0]} exceeds max_steps {config.max_steps}")
    prev_gd = math.inf if prev_goal_dist is None else float(prev_goal_dist)
    costs, states = _run_rollouts(config, x0.to_array(), arr[None, :, :], prev_gd)
    state_list = [State.from_array(states[0, h], x0.step_index + h)
                  for h in range(arr.shape[0] + 1)]
    success_step = None
    for s in state_list:
        if s.step_index > config.max_steps:
            break
        if is_success(config, s):
            success_step = s.step_index
            break
    return RolloutResult(float(costs[0]), state_list, success_step)


def rollout_costs(config: TaskConfig, x0: State, controls,
                  prev_goal_dist: float | None = None):
    """Batched rollout evaluation.

    `controls` has shape (N, H, 2); returns (costs (N,), states (N, H+1, 10))
    as raw arrays with the State.to_array layout. This is the hot path used by
    the planners; `rollout_cost` is its single-sequence wrapper and produces
    identical numbers.
    """
    arr = np.ascontiguousarray(np.asarray(controls, dtype=np.float64))
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise InvalidInputError(f"controls must be (N, H, 2), got {arr.shape}")
    if arr.shape[1] > config.max_steps:
        raise InvalidInputError(
            f"horizon {arr.shape[1]} exceeds max_steps {config.max_steps}")
    prev_gd = math.inf if prev_goal_dist is None else float(prev_goal_dist)
    return _run_rollouts(config, x0.to_array(), arr, prev_gd)


def coverage(config: TaskConfig, block_pose) -> float:
    """Fraction of the goal footprint covered by the block at `block_pose`.

    Both footprints are rasterized on a fixed grid over the goal bounding box;
    the denominator is the goal-footprint cell count, so an exact pose match
    returns exactly 1.0.
    """
    pos, yaw = block_pose
    pos = np.asarray(pos, dtype=np.float64).reshape(2)
    yaw = float(yaw)
    geom = _geom(config)
    pts, n_goal, cell_diag = _goal_raster(config)
    if n_goal == 0:
        return 0.0
    gpos, _ = config.goal_pose
    if math.hypot(pos[0] - gpos[0], pos[1] - gpos[1]) > 2.0 * geom.circumradius + cell_diag:
        return 0.0
    inside = _points_in_footprint(pts, pos, yaw, geom)
    return float(inside.sum() / n_goal)


def is_success(config: TaskConfig, state: State) -> bool:
    """Coverage at or above the success threshold within the step budget."""
    if state.step_index > config.max_steps:
        return False
    return coverage(config, (state.block_pos, state.block_yaw)) >= SUCCESS_COVERAGE


def goal_distance(config: TaskConfig, state: State) -> float:
    """Euclidean distance from the block to the goal position."""
    gpos, _ = config.goal_pose
    return float(math.hypot(state.block_pos[0] - gpos[0],
                            state.block_pos[1] - gpos[1]))
