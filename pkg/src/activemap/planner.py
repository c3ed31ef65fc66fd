"""Goal selection, traversability, grid A* and discrete action synthesis.

Also hosts the two baseline policies (random walk, nearest frontier).
"""
from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .world import FORWARD_STEP, ROBOT_RADIUS, TURN_STEP, Action, AgentPose, Observation, wrap_angle

SQRT2 = math.sqrt(2.0)
_MOVES = ((1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
          (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2))


class SelectionCriterion(str, enum.Enum):
    MAX_VARIANCE = "max-variance"
    CLUSTER_SIZE = "cluster-size"
    NEAREST = "nearest-distance"

    @classmethod
    def parse(cls, text) -> "SelectionCriterion":
        if isinstance(text, cls):
            return text
        norm = str(text).strip().lower().replace("_", "-")
        aliases = {"variance": cls.MAX_VARIANCE, "size": cls.CLUSTER_SIZE,
                   "nearest": cls.NEAREST, "distance": cls.NEAREST}
        for c in cls:
            if c.value == norm:
                return c
        if norm in aliases:
            return aliases[norm]
        raise ValueError(f"unknown selection criterion {text!r}")


def in_horizon(point, pose: AgentPose, side: float = 4.0, ahead: float = 2.0) -> bool:
    """Whether ``point`` lies in the axis-aligned box of side ``side`` centred
    ``ahead`` metres in front of the agent."""
    cx = pose.x + ahead * math.cos(pose.heading)
    cy = pose.y + ahead * math.sin(pose.heading)
    h = side / 2.0
    return abs(point[0] - cx) <= h and abs(point[1] - cy) <= h


def score_and_select(candidates, pose: AgentPose, criterion=SelectionCriterion.MAX_VARIANCE,
                     horizon: float = 4.0, ahead: float = 2.0):
    """Pick one candidate. Candidates whose viewpoint falls inside the horizon
    box are preferred; ties resolve to the lowest index. Returns
    ``(index, candidate)`` or ``None``."""
    if not candidates:
        return None
    criterion = SelectionCriterion.parse(criterion)
    idx = [i for i, c in enumerate(candidates) if in_horizon(c.position, pose, horizon, ahead)]
    pool = idx or list(range(len(candidates)))

    def key(i):
        c = candidates[i]
        if criterion is SelectionCriterion.MAX_VARIANCE:
            return -c.max_variance
        if criterion is SelectionCriterion.CLUSTER_SIZE:
            return -c.count
        return float(np.hypot(*(c.position - pose.position)))

    best = min(pool, key=lambda i: (key(i), i))
    return best, candidates[best]


@dataclass
class TraversabilityGrid:
    """``free[iy, ix]`` describes the cell centred at
    ``(x0 + (ix + 0.5) * cell, y0 + (iy + 0.5) * cell)``."""

    x0: float
    y0: float
    cell: float
    free: np.ndarray

    @property
    def shape(self):
        return self.free.shape

    def centers(self) -> np.ndarray:
        ny, nx = self.free.shape
        xs = self.x0 + (np.arange(nx) + 0.5) * self.cell
        ys = self.y0 + (np.arange(ny) + 0.5) * self.cell
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def to_cell(self, p) -> tuple[int, int]:
        ix = int(math.floor((p[0] - self.x0) / self.cell))
        iy = int(math.floor((p[1] - self.y0) / self.cell))
        ny, nx = self.free.shape
        return min(max(iy, 0), ny - 1), min(max(ix, 0), nx - 1)

    def to_point(self, cell) -> np.ndarray:
        iy, ix = cell
        return np.array([self.x0 + (ix + 0.5) * self.cell, self.y0 + (iy + 0.5) * self.cell])

    def is_free(self, p) -> bool:
        ix = math.floor((p[0] - self.x0) / self.cell)
        iy = math.floor((p[1] - self.y0) / self.cell)
        ny, nx = self.free.shape
        return 0 <= ix < nx and 0 <= iy < ny and bool(self.free[iy, ix])


def _grid_shape(bounds, cell):
    x0, y0, x1, y1 = bounds
    nx = max(1, int(math.ceil((x1 - x0) / cell - 1e-9)))
    ny = max(1, int(math.ceil((y1 - y0) / cell - 1e-9)))
    return nx, ny


def traversability_from_field(snapshot, bounds, cell: float = 0.05,
                              robot_radius: float = ROBOT_RADIUS) -> TraversabilityGrid:
    """Cell is free iff the predicted distance at its centre exceeds the robot radius."""
    if cell <= 0:
        raise ValueError("cell size must be > 0")
    nx, ny = _grid_shape(bounds, cell)
    g = TraversabilityGrid(bounds[0], bounds[1], cell, np.zeros((ny, nx), dtype=bool))
    sdf = snapshot.sdf if hasattr(snapshot, "sdf") else snapshot
    vals = np.asarray(sdf(g.centers()), dtype=float).reshape(ny, nx)
    g.free = vals > robot_radius
    return g


@dataclass
class Path:
    cells: list
    cost: float
    goal_substituted: bool = False

    def waypoints(self, grid: TraversabilityGrid) -> np.ndarray:
        return np.array([grid.to_point(c) for c in self.cells])


def nearest_free_cell(free: np.ndarray, goal, radius_cells: int):
    """Closest free cell (Euclidean, ties by row-major order) within the radius."""
    gy, gx = goal
    ny, nx = free.shape
    ylo, yhi = max(0, gy - radius_cells), min(ny, gy + radius_cells + 1)
    xlo, xhi = max(0, gx - radius_cells), min(nx, gx + radius_cells + 1)
    sub = free[ylo:yhi, xlo:xhi]
    iy, ix = np.nonzero(sub)
    if len(iy) == 0:
        return None
    d2 = (iy + ylo - gy) ** 2 + (ix + xlo - gx) ** 2
    ok = d2 <= radius_cells ** 2
    if not ok.any():
        return None
    k = np.flatnonzero(ok)[np.argmin(d2[ok])]
    return int(iy[k] + ylo), int(ix[k] + xlo)


def _neighbors(free, cell):
    y, x = cell
    ny, nx = free.shape
    for dx, dy, c in _MOVES:
        yy, xx = y + dy, x + dx
        if not (0 <= yy < ny and 0 <= xx < nx) or not free[yy, xx]:
            continue
        if dx and dy and not (free[y, xx] and free[yy, x]):
            continue                                # no corner cutting
        yield (yy, xx), c, (dx != 0 and dy != 0)


def plan_path(grid, start, goal, goal_radius: float = 0.5, force_start_free: bool = False):
    """8-connected A* from ``start`` to ``goal`` (row, col cells).

    ``grid`` is a TraversabilityGrid or a boolean free matrix. An occupied
    goal is replaced by the nearest free cell within ``goal_radius`` metres
    (cells when given a bare matrix). Returns a :class:`Path` or ``None``
    when no path exists.
    """
    free = grid.free if isinstance(grid, TraversabilityGrid) else np.asarray(grid, dtype=bool)
    cell = grid.cell if isinstance(grid, TraversabilityGrid) else 1.0
    start, goal = tuple(map(int, start)), tuple(map(int, goal))
    if force_start_free and not free[start]:
        free = free.copy()
        free[start] = True
    if not free[start]:
        raise ValueError(f"start cell {start} is blocked")
    substituted = False
    if not free[goal]:
        goal = nearest_free_cell(free, goal, int(math.floor(goal_radius / cell + 1e-9)))
        if goal is None:
            return None
        substituted = True
    if start == goal:
        return Path([start], 0.0, substituted)

    return _astar(free, start, goal, substituted)


def _astar(free, start, goal, substituted):
    ny, nx = free.shape
    fr = np.zeros((ny + 2, nx + 2), dtype=bool)     # padded so bounds checks vanish
    fr[1:-1, 1:-1] = free
    W = nx + 2
    open_ = fr.ravel().tolist()
    s0 = (start[0] + 1) * W + start[1] + 1
    g0 = (goal[0] + 1) * W + goal[1] + 1
    gy, gx = goal[0] + 1, goal[1] + 1
    size = len(open_)
    # costs are tracked as (straight, diagonal) step counts so totals are exact
    n_s = [0] * size
    n_d = [0] * size
    cost = [math.inf] * size
    parent = [-1] * size
    closed = bytearray(size)
    cost[s0] = 0.0
    straight = (1, -1, W, -W)
    diag = ((1 + W, 1, W), (1 - W, 1, -W), (-1 + W, -1, W), (-1 - W, -1, -W))
    hypot = math.hypot
    push, pop = heapq.heappush, heapq.heappop
    heap = [(hypot(s0 // W - gy, s0 % W - gx), s0)]
    while heap:
        _, cur = pop(heap)
        if closed[cur]:
            continue
        if cur == g0:
            break
        closed[cur] = 1
        cs, cd = n_s[cur], n_d[cur]
        for off in straight:
            nb = cur + off
            if open_[nb] and not closed[nb]:
                c = (cs + 1) + cd * SQRT2
                if c < cost[nb] - 1e-12:
                    cost[nb] = c
                    n_s[nb], n_d[nb] = cs + 1, cd
                    parent[nb] = cur
                    push(heap, (c + hypot(nb // W - gy, nb % W - gx), nb))
        for off, ox, oy in diag:
            nb = cur + off
            if open_[nb] and open_[cur + ox] and open_[cur + oy] and not closed[nb]:
                c = cs + (cd + 1) * SQRT2
                if c < cost[nb] - 1e-12:
                    cost[nb] = c
                    n_s[nb], n_d[nb] = cs, cd + 1
                    parent[nb] = cur
                    push(heap, (c + hypot(nb // W - gy, nb % W - gx), nb))
    if parent[g0] < 0:
        return None
    cells = []
    c = g0
    while c >= 0:
        cells.append((c // W - 1, c % W - 1))
        c = parent[c]
    return Path(cells[::-1], n_s[g0] + n_d[g0] * SQRT2, substituted)


def dijkstra_cost(free, start, goal) -> float | None:
    """Reference shortest-path cost with the same move set (no heuristic).

    Step counts are kept as integers so the result has the same canonical
    form ``n_straight + n_diagonal * sqrt(2)`` as :func:`plan_path`.
    """
    free = np.asarray(free, dtype=bool)
    start, goal = tuple(start), tuple(goal)
    best = {start: (0.0, 0, 0)}
    heap = [(0.0, 0, 0, start)]
    done = set()
    while heap:
        d, ns, nd, cur = heapq.heappop(heap)
        if cur in done:
            continue
        if cur == goal:
            return ns + nd * SQRT2
        done.add(cur)
        for nb, _c, diag in _neighbors(free, cur):
            s2, d2 = (ns, nd + 1) if diag else (ns + 1, nd)
            c2 = s2 + d2 * SQRT2
            if c2 < best.get(nb, (math.inf,))[0] - 1e-12:
                best[nb] = (c2, s2, d2)
                heapq.heappush(heap, (c2, s2, d2, nb))
    return None


def path_to_actions(waypoints, pose: AgentPose, grid: TraversabilityGrid | None = None,
                    arrive_tol: float = 0.1, turn_step: float = TURN_STEP,
                    forward_step: float = FORWARD_STEP, lookahead: float = 0.15) -> Action:
    """Next discrete action to follow ``waypoints``.

    Targets the first waypoint farther than ``lookahead`` (the last one
    otherwise). STOP on arrival, or when the cell one forward step ahead is
    blocked in ``grid``.
    """
    wps = np.atleast_2d(np.asarray(waypoints, dtype=float))
    if len(wps) == 0:
        raise ValueError("empty path")
    pos = pose.position
    if np.hypot(*(wps[-1] - pos)) <= arrive_tol:
        return Action.STOP
    d = np.hypot(wps[:, 0] - pos[0], wps[:, 1] - pos[1])
    far = np.flatnonzero(d > lookahead)
    # only look past the closest waypoint so the agent does not double back
    closest = int(np.argmin(d))
    far = far[far >= closest]
    target = wps[far[0]] if len(far) else wps[-1]
    bearing = math.atan2(target[1] - pos[1], target[0] - pos[0])
    err = wrap_angle(bearing - pose.heading)
    if abs(err) > turn_step / 2:
        return Action.TURN_LEFT if err > 0 else Action.TURN_RIGHT
    if grid is not None:
        ahead = pos + forward_step * np.array([math.cos(pose.heading), math.sin(pose.heading)])
        if not grid.is_free(ahead):
            return Action.STOP
    return Action.MOVE_FORWARD


class RandomPolicy:
    """Uniform choice among the three movement actions."""

    ACTIONS = (Action.MOVE_FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT)

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)

    def act(self, *_):
        return self.ACTIONS[int(self.rng.integers(0, 3))]


UNKNOWN, FREE, OCCUPIED = 0, 1, 2


class OccupancyGrid:
    """Three-state grid updated from depth scans by ray traversal."""

    def __init__(self, bounds, cell: float = 0.05):
        nx, ny = _grid_shape(bounds, cell)
        self.x0, self.y0, self.cell = bounds[0], bounds[1], cell
        self.state = np.zeros((ny, nx), dtype=np.int8)

    def _idx(self, pts):
        ix = np.floor((pts[:, 0] - self.x0) / self.cell).astype(np.int64)
        iy = np.floor((pts[:, 1] - self.y0) / self.cell).astype(np.int64)
        ny, nx = self.state.shape
        ok = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        return iy[ok], ix[ok]

    def integrate(self, obs: Observation):
        ang = obs.ray_angles()
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        depth = np.asarray(obs.depths, dtype=float)
        origin = obs.pose.position
        step = self.cell / 2.0
        n = int(math.ceil(depth.max() / step))
        t = np.arange(n) * step
        # free cells strictly before each endpoint
        mask = t[None, :] < (depth[:, None] - self.cell)
        pts = (origin + t[None, :, None] * dirs[:, None, :])[mask]
        iy, ix = self._idx(pts)
        keep = self.state[iy, ix] != OCCUPIED
        self.state[iy[keep], ix[keep]] = FREE
        hit = depth < obs.max_range
        ends = origin + depth[hit, None] * dirs[hit]
        iy, ix = self._idx(ends)
        self.state[iy, ix] = OCCUPIED

    def frontier_mask(self) -> np.ndarray:
        """Free cells 4-adjacent to at least one unknown cell."""
        unk = self.state == UNKNOWN
        near = ndimage.binary_dilation(unk, structure=ndimage.generate_binary_structure(2, 1))
        return (self.state == FREE) & near

    def traversable(self, robot_radius: float = ROBOT_RADIUS) -> np.ndarray:
        """Known-free cells farther than the robot radius from any occupied cell."""
        occ = self.state == OCCUPIED
        if not occ.any():
            return self.state == FREE
        dist = ndimage.distance_transform_edt(~occ) * self.cell
        return (self.state == FREE) & (dist > robot_radius)

    def to_cell(self, p):
        ny, nx = self.state.shape
        ix = int(math.floor((p[0] - self.x0) / self.cell))
        iy = int(math.floor((p[1] - self.y0) / self.cell))
        return min(max(iy, 0), ny - 1), min(max(ix, 0), nx - 1)

    def to_point(self, c):
        return np.array([self.x0 + (c[1] + 0.5) * self.cell, self.y0 + (c[0] + 0.5) * self.cell])


def frontier_goal(free: np.ndarray, frontier: np.ndarray, start, min_cluster: int = 1):
    """Frontier cell of minimal path cost from ``start`` over ``free``.

    Frontier components smaller than ``min_cluster`` cells are ignored.
    Returns ``(cell, cost)`` or ``None`` when no frontier is reachable.
    """
    if min_cluster > 1:
        lab, n = ndimage.label(frontier, structure=np.ones((3, 3)))
        sizes = np.bincount(lab.ravel())
        frontier = frontier & (sizes[lab] >= min_cluster)
    if not frontier.any():
        return None
    free = free.copy()
    free[start] = True
    dist = {start: 0.0}
    heap = [(0.0, start)]
    done = set()
    while heap:
        d, cur = heapq.heappop(heap)
        if cur in done:
            continue
        done.add(cur)
        if frontier[cur]:
            return cur, d
        for nb, c, _ in _neighbors(free, cur):
            nd = d + c
            if nd < dist.get(nb, math.inf):
                dist[nb] = nd
                heapq.heappush(heap, (nd, nb))
    return None


class FrontierExplorer:
    """Nearest-frontier exploration on an occupancy grid built from the scans.

    Obstacles are inflated by the robot radius plus one cell to absorb
    discretisation error. Goals that were reached, collided with or stalled
    on are blacklisted (disc of ``reject_radius``) so permanent frontiers,
    e.g. next to the never-observed inside of a wall, cannot trap the agent.
    """

    def __init__(self, bounds, cell: float = 0.05, robot_radius: float = ROBOT_RADIUS,
                 min_cluster: int = 5, reject_radius: float = 0.3):
        self.grid = OccupancyGrid(bounds, cell)
        self.inflation = robot_radius + cell
        self.min_cluster = min_cluster
        self.reject_radius = reject_radius
        self.blacklist = np.zeros_like(self.grid.state, dtype=bool)

    def observe(self, obs: Observation):
        self.grid.integrate(obs)

    def reject(self, point):
        ny, nx = self.blacklist.shape
        cy, cx = self.grid.to_cell(point)
        r = int(math.ceil(self.reject_radius / self.grid.cell))
        yy, xx = np.ogrid[max(0, cy - r):min(ny, cy + r + 1), max(0, cx - r):min(nx, cx + r + 1)]
        self.blacklist[yy, xx] |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r

    def frontier(self, free=None) -> np.ndarray:
        free = self.grid.traversable(self.inflation) if free is None else free
        return self.grid.frontier_mask() & free & ~self.blacklist

    def plan(self, pose: AgentPose):
        """``(waypoints, cost)`` to the nearest frontier, or None when done."""
        free = self.grid.traversable(self.inflation)
        start = self.grid.to_cell(pose.position)
        found = frontier_goal(free, self.frontier(free), start, self.min_cluster)
        if found is None:
            return None
        goal, cost = found
        path = plan_path(free, start, goal, force_start_free=True)
        if path is None:
            return None
        return np.array([self.grid.to_point(c) for c in path.cells]), cost
