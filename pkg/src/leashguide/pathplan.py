"""Heading-augmented A* for the human, with a robot-corridor check per step."""

from __future__ import annotations

import csv
import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .world import GridMap, ObstacleSet, RobotGeometry, unit, wrap_angle


class UnreachableError(RuntimeError):
    def __init__(self, explored: int):
        super().__init__(f"target unreachable after expanding {explored} nodes")
        self.explored = explored


@dataclass(frozen=True)
class PathConfig:
    step: float = 0.3
    turn_steps: tuple[int, ...] = (-2, -1, 0, 1, 2)
    heading_bins: int = 24
    goal_tolerance: float = 0.3
    w_theta: float = 0.1          # m/rad, heading weight in the step cost
    d_s: float = 0.1
    rope_length: float = 1.4      # (l_min + l_max) / 2
    quantum: float = 0.1          # lattice spacing for node positions
    corridor_margin: float = 0.6  # BFS window padding around the two robot poses
    max_expansions: int = 200_000

    @property
    def bin_width(self) -> float:
        return 2.0 * math.pi / self.heading_bins


@dataclass(frozen=True)
class PathNode:
    x: float
    y: float
    theta: float
    g: float = 0.0
    parent: "PathNode | None" = field(default=None, repr=False, compare=False)


class PlanningField:
    """Clearance data for one map, obstacle set and geometry."""

    def __init__(self, grid: GridMap, geometry: RobotGeometry, config: PathConfig,
                 obstacles: ObstacleSet | None = None):
        self.grid = grid
        self.geometry = geometry
        self.config = config
        self.obstacles = obstacles if obstacles is not None else ObstacleSet.from_map(grid)
        jj, ii = np.mgrid[0:grid.height, 0:grid.width]
        cx, cy = grid.cell_center(ii.ravel(), jj.ravel())
        clear = self.obstacles.clearance(np.column_stack([cx, cy])).reshape(grid.height, grid.width)
        # cells where a robot-sized disc (plus margin) fits
        self.robot_free = clear >= config.d_s + geometry.r_d

    def human_clear(self, p) -> bool:
        return bool(self.obstacles.clearance(p)[0] >= self.config.d_s + self.geometry.r_h)

    def robot_pose_clear(self, pos, yaw: float) -> bool:
        centers = self.geometry.cover_centers(pos, yaw)
        return bool(np.all(self.obstacles.clearance(centers) >= self.config.d_s + self.geometry.r_d))


def robot_position(field_: PlanningField, x: float, y: float, heading: float) -> np.ndarray:
    """Robot centre for a human at (x, y) walking along ``heading`` on a nominal rope."""
    e = unit(heading)
    return np.array([x, y]) + (field_.config.rope_length + field_.geometry.d_cf) * e


def robot_feasible(grid: GridMap, start, end, geometry: RobotGeometry, config: PathConfig,
                   yaws: tuple[float, float] | None = None,
                   field_: PlanningField | None = None) -> bool:
    """BFS (8-connected) over map cells between two robot positions.

    A cell is passable when a disc of radius ``r_d`` at its centre keeps
    ``d_s`` clearance. The search starts from passable cells next to each
    exact end position. With ``yaws`` the two end poses are also checked with
    both cover circles.
    """
    f = field_ or PlanningField(grid, geometry, config)
    a = np.asarray(start, dtype=float)
    b = np.asarray(end, dtype=float)
    if not (grid.in_bounds(*a) and grid.in_bounds(*b)):
        return False
    if yaws is not None and not (f.robot_pose_clear(a, yaws[0]) and f.robot_pose_clear(b, yaws[1])):
        return False
    pad = int(math.ceil(config.corridor_margin / grid.resolution))
    ia, ja = grid.cell_of(*a)
    ib, jb = grid.cell_of(*b)
    i0, i1 = max(min(ia, ib) - pad, 0), min(max(ia, ib) + pad, grid.width - 1)
    j0, j1 = max(min(ja, jb) - pad, 0), min(max(ja, jb) + pad, grid.height - 1)
    seeds_a = _seed_cells(grid, f.robot_free, a)
    seeds_b = _seed_cells(grid, f.robot_free, b)
    if not seeds_a or not seeds_b:
        return False
    window = f.robot_free[j0:j1 + 1, i0:i1 + 1]
    labels, _ = ndimage.label(window, structure=np.ones((3, 3), dtype=int))
    la = {labels[j - j0, i - i0] for i, j in seeds_a}
    lb = {labels[j - j0, i - i0] for i, j in seeds_b}
    return bool(la & lb)


def _seed_cells(grid: GridMap, free: np.ndarray, p) -> list[tuple[int, int]]:
    """Passable cells adjacent to ``p`` whose centre lies within one cell width of it."""
    ic, jc = grid.cell_of(*p)
    out = []
    for j in range(jc - 1, jc + 2):
        for i in range(ic - 1, ic + 2):
            if 0 <= i < grid.width and 0 <= j < grid.height and free[j, i]:
                cx, cy = grid.cell_center(i, j)
                if math.hypot(cx - p[0], cy - p[1]) <= grid.resolution + 1e-9:
                    out.append((i, j))
    return out


class HeadingLattice:
    """Successor generator shared by the planner and by exhaustive reachability checks."""

    def __init__(self, field_: PlanningField, start_xy):
        self.field = field_
        self.cfg = field_.config
        self.origin = np.asarray(start_xy, dtype=float)

    def position(self, state) -> tuple[float, float]:
        ix, iy, _ = state
        q = self.cfg.quantum
        return self.origin[0] + ix * q, self.origin[1] + iy * q

    def heading(self, state) -> float:
        return wrap_angle(state[2] * self.cfg.bin_width)

    def state_of(self, x: float, y: float, theta: float):
        q = self.cfg.quantum
        hb = int(round(wrap_angle(theta) / self.cfg.bin_width)) % self.cfg.heading_bins
        return (int(round((x - self.origin[0]) / q)), int(round((y - self.origin[1]) / q)), hb)

    def successors(self, state):
        """Yield (next_state, step_cost) for every admissible transition."""
        cfg = self.cfg
        f = self.field
        x, y = self.position(state)
        h = self.heading(state)
        rob = robot_position(f, x, y, h)
        for dh in cfg.turn_steps:
            hb = (state[2] + dh) % cfg.heading_bins
            h2 = wrap_angle(hb * cfg.bin_width)
            tx = x + cfg.step * math.cos(h2)
            ty = y + cfg.step * math.sin(h2)
            nxt = self.state_of(tx, ty, h2)
            nx, ny = self.position(nxt)
            if not f.grid.in_bounds(nx, ny):
                continue
            if not f.human_clear((nx, ny)) or not f.human_clear(((x + nx) / 2, (y + ny) / 2)):
                continue
            rob2 = robot_position(f, nx, ny, h2)
            if not robot_feasible(f.grid, rob, rob2, f.geometry, cfg, yaws=(h, h2), field_=f):
                continue
            dth = wrap_angle(h2 - h)
            cost = math.sqrt((nx - x) ** 2 + (ny - y) ** 2 + (cfg.w_theta * dth) ** 2)
            yield nxt, cost

    def is_goal(self, state, target) -> bool:
        x, y = self.position(state)
        return math.hypot(x - target[0], y - target[1]) <= self.cfg.goal_tolerance


def plan_path(grid: GridMap, start: PathNode, target, geometry: RobotGeometry | None = None,
              config: PathConfig | None = None, field_: PlanningField | None = None) -> list[PathNode]:
    """A* from ``start`` to within the goal tolerance of ``target``.

    Heap entries are ordered by f, then h, then insertion order.
    """
    geometry = geometry or RobotGeometry()
    config = config or PathConfig()
    f = field_ or PlanningField(grid, geometry, config)
    lattice = HeadingLattice(f, (start.x, start.y))
    tx, ty = float(target[0]), float(target[1])
    s0 = lattice.state_of(start.x, start.y, start.theta)

    def h(state):
        x, y = lattice.position(state)
        return math.hypot(x - tx, y - ty)

    counter = itertools.count()
    best_g = {s0: 0.0}
    parent = {s0: None}
    heap = [(h(s0), h(s0), next(counter), s0, 0.0)]
    closed = set()
    while heap:
        _, _, _, state, g = heapq.heappop(heap)
        if state in closed:
            continue
        closed.add(state)
        if lattice.is_goal(state, (tx, ty)):
            return _unwind(lattice, state, parent, best_g)
        if len(closed) > config.max_expansions:
            break
        for nxt, cost in lattice.successors(state):
            if nxt in closed:
                continue
            g2 = g + cost
            if g2 < best_g.get(nxt, math.inf):
                best_g[nxt] = g2
                parent[nxt] = state
                hn = h(nxt)
                heapq.heappush(heap, (g2 + hn, hn, next(counter), nxt, g2))
    raise UnreachableError(len(closed))


def _unwind(lattice: HeadingLattice, state, parent, best_g) -> list[PathNode]:
    chain = []
    while state is not None:
        chain.append(state)
        state = parent[state]
    chain.reverse()
    nodes = []
    prev = None
    for s in chain:
        x, y = lattice.position(s)
        prev = PathNode(x, y, lattice.heading(s), best_g[s], prev)
        nodes.append(prev)
    return nodes


def path_cost(nodes, w_theta: float) -> float:
    total = 0.0
    for a, b in zip(nodes, nodes[1:]):
        total += math.sqrt((b.x - a.x) ** 2 + (b.y - a.y) ** 2 + (w_theta * wrap_angle(b.theta - a.theta)) ** 2)
    return total


def write_waypoints_csv(nodes, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "theta_h"])
        for n in nodes:
            w.writerow([repr(n.x), repr(n.y), repr(n.theta)])


def resample_path(nodes, spacing: float) -> np.ndarray:
    """Points every ``spacing`` metres of arc length along the waypoint polyline."""
    pts = np.array([[n.x, n.y] for n in nodes], dtype=float) if not isinstance(nodes, np.ndarray) else nodes
    if len(pts) == 1:
        return pts.copy()
    seg = np.hypot(*np.diff(pts, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    q = np.arange(0.0, s[-1], spacing)
    q = np.append(q, s[-1])
    return np.column_stack([np.interp(q, s, pts[:, 0]), np.interp(q, s, pts[:, 1])])
