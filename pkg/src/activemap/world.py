"""Polygonal 2D worlds: loading, raycast depth sensing, disc kinematics and
an exact signed distance oracle.

Environment file grammar (one directive per line, ``#`` starts a comment)::

    name: two_room
    boundary: x0 y0 x1 y1 ... x0 y0
    obstacle: x0 y0 x1 y1 ... x0 y0

Coordinates are whitespace-separated decimal meters. Every polygon must be
closed explicitly (last vertex repeats the first) and needs at least three
distinct vertices. Exactly one ``boundary`` is required; ``obstacle`` lines
are optional. Orientation is normalised on load (boundary counter-clockwise,
obstacles clockwise), so free space is always on the left of every edge.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

FORWARD_STEP = 0.065
TURN_STEP = math.radians(10.0)
ROBOT_RADIUS = 0.1


class EnvironmentError_(ValueError):
    pass


class EnvironmentParseError(EnvironmentError_):
    def __init__(self, line_no: int, msg: str):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


class EnvironmentValidationError(EnvironmentError_):
    pass


class Action(enum.IntEnum):
    MOVE_FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    STOP = 3


def wrap_angle(a: float) -> float:
    """Map an angle to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class AgentPose:
    x: float
    y: float
    heading: float = 0.0

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Observation:
    pose: AgentPose
    depths: np.ndarray
    step: int = 0
    fov: float = math.pi / 2
    max_range: float = 6.0

    @property
    def n_rays(self) -> int:
        return len(self.depths)

    def ray_angles(self) -> np.ndarray:
        return ray_angles(self.pose.heading, self.fov, self.n_rays)

    def endpoints(self, hits_only: bool = True) -> np.ndarray:
        ang = self.ray_angles()
        d = self.depths
        pts = self.pose.position + d[:, None] * np.stack([np.cos(ang), np.sin(ang)], 1)
        if hits_only:
            pts = pts[d < self.max_range]
        return pts


def ray_angles(heading: float, fov: float, n_rays: int) -> np.ndarray:
    """Ray 0 at heading - fov/2, uniformly spaced across the field of view."""
    if n_rays == 1:
        return np.array([heading])
    return heading - fov / 2 + fov * np.arange(n_rays) / (n_rays - 1)


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and d1 != 0 and d2 != 0 and \
       ((d3 > 0) != (d4 > 0)) and d3 != 0 and d4 != 0:
        return True

    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and \
            min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    return (d1 == 0 and on_seg(q1, q2, p1)) or (d2 == 0 and on_seg(q1, q2, p2)) or \
        (d3 == 0 and on_seg(p1, p2, q1)) or (d4 == 0 and on_seg(p1, p2, q2))


def _self_intersecting(poly: np.ndarray) -> bool:
    n = len(poly)
    for i in range(n):
        a1, a2 = poly[i], poly[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            if _segments_cross(a1, a2, poly[j], poly[(j + 1) % n]):
                return True
    return False


def points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test, vectorised over points."""
    px, py = points[:, 0:1], points[:, 1:2]
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    straddle = (y0 > py) != (y1 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
    crossings = straddle & (px < xint)
    return (crossings.sum(axis=1) % 2) == 1


@dataclass(frozen=True)
class World:
    boundary: np.ndarray
    obstacles: tuple = ()
    name: str = "world"
    segments: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        segs = []
        for poly in (self.boundary, *self.obstacles):
            segs.append(np.stack([poly, np.roll(poly, -1, axis=0)], axis=1))
        object.__setattr__(self, "segments", np.concatenate(segs, axis=0))

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        lo = self.boundary.min(axis=0)
        hi = self.boundary.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def free_area(self) -> float:
        """Boundary area minus obstacle areas (obstacles assumed disjoint)."""
        return abs(_signed_area(self.boundary)) - sum(abs(_signed_area(o)) for o in self.obstacles)

    def inside_free(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        inside = points_in_polygon(points, self.boundary)
        for obs in self.obstacles:
            inside &= ~points_in_polygon(points, obs)
        return inside


def _parse_polygon(tokens, line_no):
    try:
        vals = [float(t) for t in tokens]
    except ValueError as exc:
        raise EnvironmentParseError(line_no, f"bad number ({exc})") from None
    if len(vals) % 2:
        raise EnvironmentParseError(line_no, "odd number of coordinates")
    pts = np.array(vals, dtype=float).reshape(-1, 2)
    if not np.isfinite(pts).all():
        raise EnvironmentParseError(line_no, "non-finite coordinate")
    return pts


def _close(poly: np.ndarray, label: str) -> np.ndarray:
    if len(poly) < 4 or not np.array_equal(poly[0], poly[-1]):
        raise EnvironmentValidationError(f"{label}: polygon is open (last vertex must repeat the first)")
    poly = poly[:-1]
    if len(np.unique(poly, axis=0)) < 3:
        raise EnvironmentValidationError(f"{label}: fewer than three distinct vertices")
    if abs(_signed_area(poly)) == 0.0:
        raise EnvironmentValidationError(f"{label}: zero area")
    if _self_intersecting(poly):
        raise EnvironmentValidationError(f"{label}: polygon is self-intersecting")
    return poly


def load_environment(text: str) -> World:
    """Parse and validate an environment description (see module docstring)."""
    name = "world"
    boundary = None
    obstacles = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise EnvironmentParseError(line_no, f"expected 'key: values', got {line!r}")
        key, rest = (s.strip() for s in line.split(":", 1))
        if key == "name":
            name = rest
        elif key == "boundary":
            if boundary is not None:
                raise EnvironmentParseError(line_no, "duplicate boundary")
            boundary = (line_no, _parse_polygon(rest.split(), line_no))
        elif key == "obstacle":
            obstacles.append((line_no, _parse_polygon(rest.split(), line_no)))
        else:
            raise EnvironmentParseError(line_no, f"unknown directive {key!r}")
    if boundary is None:
        raise EnvironmentValidationError("missing boundary polygon")

    b = _close(boundary[1], f"boundary (line {boundary[0]})")
    if _signed_area(b) < 0:
        b = b[::-1].copy()
    obs = []
    for k, (ln, poly) in enumerate(obstacles):
        label = f"obstacle {k} (line {ln})"
        o = _close(poly, label)
        if _signed_area(o) > 0:
            o = o[::-1].copy()
        if not _within(o, b):
            raise EnvironmentValidationError(f"{label}: not inside the boundary")
        obs.append(o)
    return World(b, tuple(obs), name)


def _within(inner: np.ndarray, outer: np.ndarray, tol: float = 1e-9) -> bool:
    on_or_in = points_in_polygon(inner, outer) | (_dist_to_segments(inner, _poly_segments(outer)) <= tol)
    if not on_or_in.all():
        return False
    # edge midpoints catch obstacles that bridge across a concave notch
    mids = 0.5 * (inner + np.roll(inner, -1, axis=0))
    return bool((points_in_polygon(mids, outer) | (_dist_to_segments(mids, _poly_segments(outer)) <= tol)).all())


def _poly_segments(poly):
    return np.stack([poly, np.roll(poly, -1, axis=0)], axis=1)


def _dist_to_segments(points: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Minimum point-to-segment distance for each point, shape (N,)."""
    a = segs[:, 0][None]
    ab = (segs[:, 1] - segs[:, 0])[None]
    ap = points[:, None, :] - a
    denom = (ab * ab).sum(-1)
    t = np.clip((ap * ab).sum(-1) / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
    d = ap - t[..., None] * ab
    return np.sqrt((d * d).sum(-1)).min(axis=1)


def analytic_sdf(world: World, x, chunk: int = 8192) -> np.ndarray:
    """Exact signed distance to the wall set: positive in free space."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    out = np.empty(len(x))
    for i in range(0, len(x), chunk):
        pts = x[i:i + chunk]
        d = _dist_to_segments(pts, world.segments)
        out[i:i + chunk] = np.where(world.inside_free(pts), d, -d)
    return out[0] if single else out


def raycast_depth(world: World, pose: AgentPose, fov: float = math.pi / 2,
                  n_rays: int = 128, max_range: float = 6.0, step: int = 0,
                  noise_std: float = 0.0, rng=None) -> Observation:
    """Exact ray / segment intersection depth scan, clamped to ``max_range``."""
    ang = ray_angles(pose.heading, fov, n_rays)
    d = np.stack([np.cos(ang), np.sin(ang)], axis=1)            # (R, 2)
    o = pose.position
    a = world.segments[:, 0]                                     # (S, 2)
    e = world.segments[:, 1] - a
    # solve o + t d = a + s e
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
    ao = a[None] - o                                             # (1, S, 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ao[..., 0] * e[None, :, 1] - ao[..., 1] * e[None, :, 0]) / denom
        s = (ao[..., 0] * d[:, None, 1] - ao[..., 1] * d[:, None, 0]) / denom
    valid = (denom != 0) & (t > 1e-12) & (s >= 0.0) & (s <= 1.0)
    t = np.where(valid, t, np.inf).min(axis=1)
    depth = np.minimum(t, max_range)
    if noise_std > 0:
        rng = rng if rng is not None else np.random.default_rng()
        hit = depth < max_range
        depth = np.where(hit, depth + rng.normal(0.0, noise_std, size=depth.shape), depth)
        depth = np.clip(depth, 1e-6, max_range)
    return Observation(pose, depth, step, fov, max_range)


def _segment_segment_distance(p, q, segs):
    """Distance from segment pq to each segment in ``segs`` (min over them)."""
    a, b = segs[:, 0], segs[:, 1]
    end_d = min(_dist_to_segments(np.stack([p, q]), segs).min(),
                _dist_to_segments(a, np.array([[p, q]])).min(),
                _dist_to_segments(b, np.array([[p, q]])).min())
    r = q - p
    e = b - a
    denom = r[0] * e[:, 1] - r[1] * e[:, 0]
    ap = a - p
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ap[:, 0] * e[:, 1] - ap[:, 1] * e[:, 0]) / denom
        s = (ap[:, 0] * r[1] - ap[:, 1] * r[0]) / denom
    crosses = (denom != 0) & (t >= 0) & (t <= 1) & (s >= 0) & (s <= 1)
    return 0.0 if crosses.any() else float(end_d)


def apply_action(world: World, pose: AgentPose, action: Action,
                 forward_step: float = FORWARD_STEP, turn_step: float = TURN_STEP,
                 robot_radius: float = ROBOT_RADIUS) -> tuple[AgentPose, bool]:
    """Advance the agent by one discrete action; forward moves that would bring
    the robot disc within ``robot_radius`` of a wall are rejected."""
    action = Action(action)
    if action == Action.TURN_LEFT:
        return AgentPose(pose.x, pose.y, wrap_angle(pose.heading + turn_step)), False
    if action == Action.TURN_RIGHT:
        return AgentPose(pose.x, pose.y, wrap_angle(pose.heading - turn_step)), False
    if action == Action.STOP:
        return pose, False
    p = pose.position
    q = p + forward_step * np.array([math.cos(pose.heading), math.sin(pose.heading)])
    if _segment_segment_distance(p, q, world.segments) < robot_radius:
        return pose, True
    if not world.inside_free(q)[0]:
        return pose, True
    return AgentPose(float(q[0]), float(q[1]), pose.heading), False


def ground_truth_boundary_samples(world: World, spacing: float) -> np.ndarray:
    """Points at uniform arc-length spacing along every wall segment that
    faces free space. Segments hidden inside solid regions (e.g. where a wall
    obstacle touches the boundary) are skipped."""
    if spacing <= 0:
        raise ValueError("spacing must be > 0")
    pts = []
    for a, b in world.segments:
        length = float(np.hypot(*(b - a)))
        n = max(1, math.ceil(length / spacing - 1e-9))
        t = np.arange(n) / n
        seg_pts = a + t[:, None] * (b - a)
        tangent = (b - a) / length
        normal = np.array([-tangent[1], tangent[0]])
        # step just off the wall into the free side (and off the vertex)
        keep = world.inside_free(seg_pts + 1e-5 * (normal + tangent))
        pts.append(seg_pts[keep])
    return np.concatenate(pts, axis=0) if pts else np.zeros((0, 2))


def sample_free_pose(world: World, rng, clearance: float = 0.4) -> AgentPose:
    """Uniform random pose with at least ``clearance`` to every wall."""
    x0, y0, x1, y1 = world.bounds
    for _ in range(10000):
        p = rng.uniform([x0, y0], [x1, y1])
        if analytic_sdf(world, p) >= clearance:
            return AgentPose(float(p[0]), float(p[1]), wrap_angle(float(rng.uniform(-math.pi, math.pi))))
    raise RuntimeError("could not find a free starting pose")


FIXTURES = ("empty_room", "two_room", "corridor_loop", "apartment", "office")


def fixture_path(name: str):
    return resources.files("activemap") / "worlds" / f"{name}.txt"


def load_fixture(name: str) -> World:
    return load_environment(fixture_path(name).read_text())


def load_world_file(path) -> World:
    with open(path) as fh:
        return load_environment(fh.read())
