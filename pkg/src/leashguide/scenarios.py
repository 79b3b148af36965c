"""Built-in maps: the lobby / doors / corridors layout and small test worlds."""

from __future__ import annotations

import numpy as np

from .world import GridMap, dump_map

RES = 0.1

# free rectangles (x0, x1, y0, y1) in metres; everything else is wall
CORRIDOR_LAYOUT = {
    "lobby": (0.2, 4.0, 0.2, 5.8),
    "door_1": (4.0, 4.2, 2.0, 3.1),        # 1.1 m
    "corridor_a": (4.2, 8.0, 1.9, 3.4),    # 1.5 m
    "corridor_b": (8.0, 11.0, 2.3, 3.3),   # 1.0 m
    "hall": (11.0, 12.4, 1.2, 4.4),
    "door_2": (12.4, 12.6, 2.3, 3.6),      # 1.3 m
    "lab": (12.6, 16.8, 0.2, 5.8),
}
CORRIDOR_SIZE = (17.0, 6.0)
CORRIDOR_HUMAN_START = (1.2, 4.6)
CORRIDOR_ROBOT_START = (2.6, 3.55)
CORRIDOR_TARGET = (14.5, 2.6)


def rect_map(size: tuple[float, float], free_rects, res: float = RES) -> GridMap:
    width = int(round(size[0] / res))
    height = int(round(size[1] / res))
    occ = np.ones((height, width), dtype=bool)
    for x0, x1, y0, y1 in free_rects:
        i0, i1 = int(round(x0 / res)), int(round(x1 / res))
        j0, j1 = int(round(y0 / res)), int(round(y1 / res))
        occ[j0:j1, i0:i1] = False
    return GridMap(width, height, res, (0.0, 0.0), occ)


def corridor_map() -> GridMap:
    """Lobby, 1.1 m door, 1.5 m corridor, 1.0 m corridor, hall, 1.3 m door, lab."""
    return rect_map(CORRIDOR_SIZE, CORRIDOR_LAYOUT.values())


def corridor_map_text() -> str:
    return dump_map(corridor_map())


def straight_corridor(length: float = 8.0, width: float = 1.5, res: float = RES) -> GridMap:
    """Single walled corridor along +x; free band centred on y = 1.5."""
    return rect_map((length, 3.0), [(0.2, length - 0.2, 1.5 - width / 2, 1.5 + width / 2)], res)


def open_room(size: tuple[float, float] = (6.0, 6.0), res: float = RES) -> GridMap:
    return rect_map(size, [(0.2, size[0] - 0.2, 0.2, size[1] - 0.2)], res)
