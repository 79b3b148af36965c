"""Occupancy grids, shared state, robot geometry and clearance queries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree


class MapParseError(ValueError):
    """Malformed GMAP document; message carries the line (and column) at fault."""

    def __init__(self, message: str, line: int, column: int | None = None):
        where = f"line {line}" if column is None else f"line {line}, column {column}"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.column = column


def wrap_angle(a):
    """Wrap an angle (or array of angles) into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    w = np.where(w <= -math.pi, w + 2.0 * math.pi, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


def unit(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


@dataclass(frozen=True)
class GridMap:
    width: int
    height: int
    resolution: float
    origin: tuple[float, float]
    # occupancy[j, i]; j = 0 is the bottom (min-y) row
    occupancy: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("map must be at least 1x1")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.shape != (self.height, self.width):
            raise ValueError(f"occupancy shape {occ.shape} != ({self.height}, {self.width})")
        occ = occ.copy()
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    def is_occupied(self, i: int, j: int) -> bool:
        return bool(self.occupancy[j, i])

    def cell_center(self, i, j):
        ox, oy = self.origin
        return (ox + (np.asarray(i) + 0.5) * self.resolution,
                oy + (np.asarray(j) + 0.5) * self.resolution)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        ox, oy = self.origin
        return (int(math.floor((x - ox) / self.resolution)),
                int(math.floor((y - oy) / self.resolution)))

    def in_bounds(self, x: float, y: float) -> bool:
        i, j = self.cell_of(x, y)
        return 0 <= i < self.width and 0 <= j < self.height

    @property
    def extent(self) -> tuple[float, float, float, float]:
        ox, oy = self.origin
        return ox, oy, ox + self.width * self.resolution, oy + self.height * self.resolution


def load_map(text: str) -> GridMap:
    """Parse a GMAP v1 document."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MapParseError("empty document", 1)
    head = lines[0].split()
    if len(head) != 7 or head[0] != "GMAP" or head[1] != "v1":
        raise MapParseError("expected 'GMAP v1 <width> <height> <resolution> <origin_x> <origin_y>'", 1)
    try:
        width, height = int(head[2]), int(head[3])
        res, ox, oy = float(head[4]), float(head[5]), float(head[6])
    except ValueError as exc:
        raise MapParseError(f"bad header field ({exc})", 1) from None
    if width < 1 or height < 1:
        raise MapParseError("width and height must be >= 1", 1)
    if not (res > 0 and math.isfinite(res)):
        raise MapParseError("resolution must be a positive number", 1)
    rows = lines[1:]
    if len(rows) != height:
        bad_line = len(lines) + 1 if len(rows) < height else height + 2
        raise MapParseError(f"expected {height} data lines, found {len(rows)}", bad_line)
    occ = np.zeros((height, width), dtype=bool)
    for r, row in enumerate(rows):
        lineno = r + 2
        for c, ch in enumerate(row):
            if ch not in ".#":
                raise MapParseError(f"illegal character {ch!r}", lineno, c + 1)
        if len(row) != width:
            raise MapParseError(f"expected {width} characters, found {len(row)}", lineno, min(len(row), width) + 1)
        # first data line is the top row
        occ[height - 1 - r] = [ch == "#" for ch in row]
    return GridMap(width, height, res, (ox, oy), occ)


def dump_map(grid: GridMap) -> str:
    ox, oy = grid.origin
    out = [f"GMAP v1 {grid.width} {grid.height} {grid.resolution!r} {ox!r} {oy!r}"]
    for j in range(grid.height - 1, -1, -1):
        out.append("".join("#" if v else "." for v in grid.occupancy[j]))
    return "\n".join(out) + "\n"


def read_map(path) -> GridMap:
    with open(path, encoding="utf-8") as fh:
        return load_map(fh.read())


@dataclass(frozen=True)
class SystemState:
    """Human position, robot position and robot yaw (wrapped on construction)."""

    human: tuple[float, float]
    robot: tuple[float, float]
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "human", (float(self.human[0]), float(self.human[1])))
        object.__setattr__(self, "robot", (float(self.robot[0]), float(self.robot[1])))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def as_vector(self) -> np.ndarray:
        return np.array([*self.human, *self.robot, self.yaw])

    @classmethod
    def from_vector(cls, x) -> "SystemState":
        return cls((x[0], x[1]), (x[2], x[3]), x[4])


@dataclass(frozen=True)
class RobotGeometry:
    d_cf: float = 0.325
    cover_offsets: tuple[float, float] = (0.1625, -0.1625)
    r_d: float = 0.25
    r_h: float = 0.25

    def __post_init__(self):
        if not (self.d_cf > 0 and self.r_d > 0 and self.r_h > 0):
            raise ValueError("d_cf, r_d and r_h must be positive")

    def fixed_point(self, robot, yaw: float) -> np.ndarray:
        return np.asarray(robot, dtype=float) - self.d_cf * unit(yaw)

    def cover_centers(self, robot, yaw: float) -> np.ndarray:
        e = unit(yaw)
        p = np.asarray(robot, dtype=float)
        return np.array([p + o * e for o in self.cover_offsets])


# body footprint used to validate cover circles
BODY_LENGTH = 0.65
BODY_WIDTH = 0.35


def covers_footprint(geometry: RobotGeometry, samples: int = 41) -> bool:
    xs = np.linspace(-BODY_LENGTH / 2, BODY_LENGTH / 2, samples)
    ys = np.linspace(-BODY_WIDTH / 2, BODY_WIDTH / 2, samples)
    pts = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)
    inside = np.zeros(len(pts), dtype=bool)
    for o in geometry.cover_offsets:
        inside |= np.hypot(pts[:, 0] - o, pts[:, 1]) <= geometry.r_d + 1e-12
    return bool(inside.all())


@dataclass(frozen=True)
class Obstacle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("obstacle radius must be positive")


def obstacles_from_map(grid: GridMap) -> list[Obstacle]:
    """One circumscribed circle per occupied cell."""
    r = grid.resolution * math.sqrt(2.0) / 2.0
    jj, ii = np.nonzero(grid.occupancy)
    xs, ys = grid.cell_center(ii, jj)
    return [Obstacle((float(x), float(y)), r) for x, y in zip(xs, ys)]


def clearance(point, obstacles: Iterable[Obstacle] | "ObstacleSet") -> float:
    if isinstance(obstacles, ObstacleSet):
        return float(obstacles.clearance(np.asarray(point, dtype=float)[None])[0])
    p = np.asarray(point, dtype=float)
    best = math.inf
    for ob in obstacles:
        best = min(best, math.hypot(p[0] - ob.center[0], p[1] - ob.center[1]) - ob.radius)
    return best


class ObstacleSet:
    """Circle obstacles packed into arrays with a KD-tree for range queries.

    Built from a map with ``boundary_only=True`` it keeps just the occupied
    cells that touch a non-occupied cell (4-neighbourhood, map edge counts as
    free). For any point outside the occupied cells the nearest occupied cell
    centre is always such a boundary cell, so clearances of free points are
    unchanged.
    """

    def __init__(self, centers, radii):
        self.centers = np.asarray(centers, dtype=float).reshape(-1, 2)
        self.radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(self.centers),)).copy()
        self.max_radius = float(self.radii.max()) if len(self.radii) else 0.0
        self._tree = cKDTree(self.centers) if len(self.centers) else None

    @classmethod
    def from_obstacles(cls, obstacles: Sequence[Obstacle]) -> "ObstacleSet":
        if not obstacles:
            return cls(np.zeros((0, 2)), np.zeros(0))
        return cls([o.center for o in obstacles], [o.radius for o in obstacles])

    @classmethod
    def from_map(cls, grid: GridMap, boundary_only: bool = True) -> "ObstacleSet":
        occ = grid.occupancy
        mask = occ.copy()
        if boundary_only:
            padded = np.pad(occ, 1, constant_values=False)
            interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
            mask &= ~interior
        jj, ii = np.nonzero(mask)
        xs, ys = grid.cell_center(ii, jj)
        return cls(np.column_stack([xs, ys]), grid.resolution * math.sqrt(2.0) / 2.0)

    def __len__(self) -> int:
        return len(self.centers)

    def clearance(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if self._tree is None:
            return np.full(len(pts), math.inf)
        if np.all(self.radii == self.radii[0]):
            d, _ = self._tree.query(pts)
            return d - self.radii[0]
        diff = pts[:, None, :] - self.centers[None]
        return (np.hypot(diff[..., 0], diff[..., 1]) - self.radii[None]).min(axis=1)

    def near(self, points, radius: float) -> np.ndarray:
        """Indices of obstacles whose centre lies within ``radius`` of any point."""
        if self._tree is None:
            return np.zeros(0, dtype=int)
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        hits = self._tree.query_ball_point(pts, radius)
        if len(pts) == 1:
            return np.asarray(sorted(hits[0]), dtype=int)
        idx = set()
        for h in hits:
            idx.update(h)
        return np.asarray(sorted(idx), dtype=int)

    def near_each(self, points, radius: float) -> list[np.ndarray]:
        """Per-point indices of obstacles whose centre lies within ``radius``."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if self._tree is None:
            return [np.zeros(0, dtype=int) for _ in pts]
        return [np.asarray(h, dtype=int) for h in self._tree.query_ball_point(pts, radius)]

    def subset(self, idx) -> tuple[np.ndarray, np.ndarray]:
        return self.centers[idx], self.radii[idx]
