"""Target-view identification from weight-perturbation variance.

Pipeline: zero-crossings of the predicted field -> prediction variance under
Gaussian weight noise -> top fraction -> single-linkage clusters -> viewpoint
placed along the surface normal on the free side. Also the 2D parameter
plane slice used to inspect the loss landscape around a trained map.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .field import FieldParams, forward, perturb_weights
from .world import AgentPose


@dataclass
class Grid:
    """Regular lattice of field samples: ``values[iy, ix]`` at
    ``(x0 + ix * res, y0 + iy * res)``."""

    x0: float
    y0: float
    res: float
    values: np.ndarray

    @property
    def shape(self):
        return self.values.shape

    def node_coords(self) -> np.ndarray:
        ny, nx = self.values.shape
        xs = self.x0 + self.res * np.arange(nx)
        ys = self.y0 + self.res * np.arange(ny)
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)


def _as_sdf(snapshot):
    if isinstance(snapshot, FieldParams):
        return lambda p: forward(snapshot, p)
    if hasattr(snapshot, "sdf"):
        return snapshot.sdf
    return snapshot


def evaluate_grid(snapshot, bounds, resolution: float) -> Grid:
    """Sample the field on a lattice covering ``bounds`` = (x0, y0, x1, y1)."""
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    x0, y0, x1, y1 = bounds
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate region {bounds}")
    nx = int(math.floor((x1 - x0) / resolution + 1e-9)) + 1
    ny = int(math.floor((y1 - y0) / resolution + 1e-9)) + 1
    grid = Grid(x0, y0, resolution, np.zeros((ny, nx)))
    vals = np.asarray(_as_sdf(snapshot)(grid.node_coords()), dtype=float)
    grid.values = vals.reshape(ny, nx)
    return grid


@dataclass
class ZeroCrossingSet:
    points: np.ndarray
    resolution: float

    def __len__(self):
        return len(self.points)


def _edge_point(p0, p1, v0, v1):
    t = v0 / (v0 - v1)
    return p0 + t[:, None] * (p1 - p0)


def marching_squares_midpoints(grid: Grid) -> np.ndarray:
    """Midpoints of the 0-level segments of a lattice, in cell order.

    The field is first put into a canonical sign (first non-zero value
    positive) so ``f`` and ``-f`` give identical output. Saddle cells connect
    the corners that share the sign of the cell-centre average.
    """
    v = grid.values
    nz = v[v != 0]
    if nz.size and nz.flat[0] < 0:
        v = -v
    ny, nx = v.shape
    if ny < 2 or nx < 2:
        return np.zeros((0, 2))
    pos = v > 0
    c00, c10 = pos[:-1, :-1], pos[:-1, 1:]
    c01, c11 = pos[1:, :-1], pos[1:, 1:]
    case = c00.astype(np.int8) | (c10 << 1) | (c11 << 2) | (c01 << 3)
    cells = np.argwhere((case != 0) & (case != 15))
    if len(cells) == 0:
        return np.zeros((0, 2))
    iy, ix = cells[:, 0], cells[:, 1]
    k = case[iy, ix]
    v00, v10 = v[iy, ix], v[iy, ix + 1]
    v01, v11 = v[iy + 1, ix], v[iy + 1, ix + 1]
    x = grid.x0 + grid.res * ix
    y = grid.y0 + grid.res * iy
    r = grid.res
    p00 = np.stack([x, y], 1)
    p10 = np.stack([x + r, y], 1)
    p01 = np.stack([x, y + r], 1)
    p11 = np.stack([x + r, y + r], 1)

    s00, s10, s01, s11 = v00 > 0, v10 > 0, v01 > 0, v11 > 0
    edges = {
        "b": (s00 != s10, _safe_edge(p00, p10, v00, v10)),
        "r": (s10 != s11, _safe_edge(p10, p11, v10, v11)),
        "t": (s01 != s11, _safe_edge(p01, p11, v01, v11)),
        "l": (s00 != s01, _safe_edge(p00, p01, v00, v01)),
    }
    saddle = (k == 5) | (k == 10)
    out = np.zeros((len(k), 2, 2))
    has_two = np.zeros(len(k), dtype=bool)

    # regular cells: exactly two crossing edges
    reg = ~saddle
    acc = np.zeros((len(k), 2))
    for flag, pt in edges.values():
        acc += np.where(flag[:, None], pt, 0.0)
    out[reg, 0] = acc[reg] / 2.0

    # saddles: pair edges around the corners whose sign differs from the centre
    if saddle.any():
        centre_pos = (v00 + v10 + v01 + v11) > 0
        b, rr, t, l = (edges[e][1] for e in "brtl")
        # corners 00 and 11 share a sign in case 5 (and in case 10 the other pair)
        corner00_like_centre = np.where(k == 5, centre_pos, ~centre_pos)
        # if 00 matches the centre, 00 and 11 are joined and corners 10, 01 are cut off
        cut_10_01 = corner00_like_centre
        seg_a = np.where(cut_10_01[:, None], (b + rr) / 2, (b + l) / 2)
        seg_b = np.where(cut_10_01[:, None], (t + l) / 2, (rr + t) / 2)
        out[saddle, 0] = seg_a[saddle]
        out[saddle, 1] = seg_b[saddle]
        has_two[saddle] = True

    first = out[:, 0]
    second = out[has_two, 1]
    # interleave so each cell's points stay adjacent
    order = np.concatenate([np.arange(len(k)), np.flatnonzero(has_two) + 0.5])
    pts = np.concatenate([first, second])
    return pts[np.argsort(order, kind="stable")]


def _safe_edge(p0, p1, v0, v1):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = v0 / (v0 - v1)
    t = np.where(np.isfinite(t), np.clip(t, 0.0, 1.0), 0.5)
    return p0 + t[:, None] * (p1 - p0)


def extract_zero_crossings(snapshot, bounds, resolution: float = 0.05,
                           iso_tol: float | None = None, grid: Grid | None = None) -> ZeroCrossingSet:
    """Predicted 0-level points over ``bounds`` at the given lattice spacing.

    Points whose re-evaluated |f| exceeds ``iso_tol`` (default: the
    resolution) are dropped. A precomputed ``grid`` may be passed to avoid
    re-sampling the field.
    """
    if grid is None:
        grid = evaluate_grid(snapshot, bounds, resolution)
    pts = marching_squares_midpoints(grid)
    tol = grid.res if iso_tol is None else iso_tol
    if len(pts):
        f = np.asarray(_as_sdf(snapshot)(pts), dtype=float)
        pts = pts[np.abs(f) <= tol]
    return ZeroCrossingSet(pts, grid.res)


@dataclass
class VariabilityScores:
    points: np.ndarray
    variance: np.ndarray
    mean: np.ndarray

    def __len__(self):
        return len(self.variance)


def perturbation_scale(delta_norm: float, n_params: int, normalize: bool = True) -> float:
    """Per-parameter noise scale derived from the recent parameter-change norm."""
    return delta_norm / math.sqrt(n_params) if normalize else delta_norm


def neural_variability(params: FieldParams, points, b: float, k: int = 10, seed=0) -> VariabilityScores:
    """Sample variance (ddof=1) of predictions at ``points`` over ``k`` draws
    of Gaussian weight noise with standard deviation ``b``."""
    if k < 2:
        raise ValueError("need at least two perturbation draws")
    if b < 0:
        raise ValueError("b must be >= 0")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(points) == 0:
        return VariabilityScores(points, np.zeros(0), np.zeros(0))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    preds = np.empty((k, len(points)))
    for i in range(k):
        preds[i] = forward(perturb_weights(params, b, rng), points)
    var = preds.var(axis=0, ddof=1)
    var[np.ptp(preds, axis=0) == 0] = 0.0   # exact zero when draws agree
    return VariabilityScores(points, var, preds.mean(axis=0))


def select_high_variance(variance, fraction: float = 0.1) -> np.ndarray:
    """Indices of the ``ceil(fraction * N)`` largest variances; ties go to the
    lower index. Returned in descending-variance order."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    variance = np.asarray(variance, dtype=float)
    n = len(variance)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    k = min(n, math.ceil(fraction * n - 1e-9))
    order = np.argsort(-variance, kind="stable")
    return order[:k]


def cluster_candidates(points, link_radius: float = 0.5) -> list[np.ndarray]:
    """Single-linkage clusters: points within ``link_radius`` are joined
    transitively. Clusters are index arrays ordered by their first member."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(points)
    if n == 0:
        return []
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in cKDTree(points).query_pairs(link_radius, output_type="ndarray"):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(n)])
    clusters = {}
    for i, r in enumerate(roots):
        clusters.setdefault(r, []).append(i)
    return [np.array(c) for c in sorted(clusters.values(), key=lambda c: c[0])]


@dataclass
class TargetCandidate:
    members: np.ndarray
    centroid: np.ndarray
    max_variance: float
    count: int
    viewpoint: AgentPose
    distance: float = 0.0
    normal: np.ndarray | None = None

    @property
    def position(self) -> np.ndarray:
        return self.viewpoint.position


def free_side_viewpoint(sdf, centroid, normal, d_place: float, clearance: float):
    """Place a viewpoint ``d_place`` from ``centroid`` along ``+normal`` if the
    field there is positive, else along ``-normal``. Returns None when the
    chosen spot is closer than ``clearance`` to predicted geometry. The
    result does not depend on the orientation of ``normal``."""
    p_plus = centroid + d_place * normal
    p_minus = centroid - d_place * normal
    f = np.asarray(sdf(np.stack([p_plus, p_minus])), dtype=float)
    if f[0] > 0 and f[0] >= f[1]:
        p, fp = p_plus, f[0]
    elif f[1] > 0:
        p, fp = p_minus, f[1]
    else:
        p, fp = (p_plus, f[0]) if f[0] >= f[1] else (p_minus, f[1])
    if fp < clearance:
        return None
    return p


def place_target_views(clusters, points, variance, snapshot, d_place: float = 1.0,
                       robot_radius: float = 0.1, agent: AgentPose | None = None,
                       log: list | None = None) -> list[TargetCandidate]:
    """One candidate viewpoint per cluster, facing the cluster centroid.

    Clusters whose centroid gradient vanishes or whose viewpoint lands in
    predicted-occupied space are dropped (reasons appended to ``log``).
    """
    if d_place <= 0:
        raise ValueError("d_place must be > 0")
    if isinstance(snapshot, FieldParams):
        sdf, grad = snapshot.sdf, snapshot.grad
    else:
        sdf, grad = snapshot.sdf, snapshot.grad
    points = np.atleast_2d(np.asarray(points, dtype=float))
    variance = np.asarray(variance, dtype=float)
    if not clusters:
        return []
    centroids = np.array([points[c].mean(axis=0) for c in clusters])
    grads = np.atleast_2d(np.asarray(grad(centroids), dtype=float))
    out = []
    for ci, (members, c, g) in enumerate(zip(clusters, centroids, grads)):
        gn = float(np.hypot(*g))
        if gn < 1e-8:
            if log is not None:
                log.append((ci, "vanishing-gradient"))
            continue
        normal = g / gn
        p = free_side_viewpoint(sdf, c, normal, d_place, robot_radius)
        if p is None:
            if log is not None:
                log.append((ci, "occupied-viewpoint"))
            continue
        heading = math.atan2(c[1] - p[1], c[0] - p[0])
        dist = float(np.hypot(*(c - agent.position))) if agent is not None else 0.0
        out.append(TargetCandidate(np.asarray(members), c, float(variance[members].max()),
                                   len(members), AgentPose(float(p[0]), float(p[1]), heading),
                                   dist, normal))
    return out


@dataclass
class LandscapeSlice:
    u: np.ndarray
    v: np.ndarray
    us: np.ndarray
    vs: np.ndarray
    values: np.ndarray       # |f(x; theta_a + u_i * u + v_j * v)|, shape (len(us), len(vs))
    origin: np.ndarray

    def project(self, theta) -> tuple[float, float]:
        """Coordinates of a parameter vector in the slice plane."""
        d = np.asarray(theta, dtype=float) - self.origin
        return float(d @ self.u), float(d @ self.v)


def orthonormal_basis(theta_a, theta_b, theta_c, tol: float = 1e-10):
    """Gram-Schmidt on (b - a, c - a)."""
    a = np.asarray(theta_a, dtype=float)
    d1 = np.asarray(theta_b, dtype=float) - a
    d2 = np.asarray(theta_c, dtype=float) - a
    n1 = np.linalg.norm(d1)
    if n1 < tol:
        raise ValueError("collinear basis: theta_b coincides with theta_a")
    u = d1 / n1
    w = d2 - (d2 @ u) * u
    nw = np.linalg.norm(w)
    if nw < tol:
        raise ValueError("collinear basis: theta_c lies on the line through theta_a, theta_b")
    return u, w / nw


def landscape_slice(theta_a: FieldParams, theta_b: FieldParams, theta_c: FieldParams,
                    probe, us, vs) -> LandscapeSlice:
    """|f(probe)| over the plane through ``theta_a`` spanned by the
    orthonormalised directions towards ``theta_b`` and ``theta_c``."""
    if not (theta_a.shapes == theta_b.shapes == theta_c.shapes):
        raise ValueError("parameter sets are not shape-compatible")
    a = theta_a.flat.astype(float)
    u, v = orthonormal_basis(a, theta_b.flat, theta_c.flat)
    us = np.asarray(us, dtype=float)
    vs = np.asarray(vs, dtype=float)
    probe = np.asarray(probe, dtype=float).reshape(1, 2)
    base = theta_a.astype(np.float64)
    vals = np.empty((len(us), len(vs)))
    for i, ui in enumerate(us):
        for j, vj in enumerate(vs):
            vals[i, j] = abs(forward(base.with_flat(a + ui * u + vj * v), probe)[0])
    return LandscapeSlice(u, v, us, vs, vals, a)


def write_scores_csv(scores: VariabilityScores, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "variance"])
        for (x, y), var in zip(scores.points, scores.variance):
            w.writerow([f"{x:.6f}", f"{y:.6f}", f"{var:.6e}"])


def write_pgm(values, path) -> None:
    """Grayscale binary PGM, min -> black, max -> white; row 0 at the top."""
    arr = np.asarray(values, dtype=float)
    lo, hi = float(arr.min()), float(arr.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = np.round((arr - lo) * scale).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
