"""Map and exploration quality: MAD, FPR and completeness."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .uncertainty import extract_zero_crossings
from .world import World, analytic_sdf

COMPLETENESS_CAP = 10.0   # reported nearest distance when nothing was observed (m)


@dataclass
class MetricsReport:
    mad: float
    fpr: float
    comp_pct: float
    comp_mean: float
    step: int = 0
    extras: dict = field(default_factory=dict)

    def row(self) -> list:
        return [self.step, _fmt(self.mad), _fmt(self.fpr), _fmt(self.comp_pct), _fmt(self.comp_mean)]


def _fmt(v: float) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6f}"


def _sdf(snapshot):
    return snapshot.sdf if hasattr(snapshot, "sdf") else snapshot


def mad(snapshot, gt_points) -> float:
    gt_points = np.atleast_2d(np.asarray(gt_points, dtype=float))
    if len(gt_points) == 0:
        raise ValueError("no ground-truth points")
    return float(np.abs(np.asarray(_sdf(snapshot)(gt_points), dtype=float)).mean())


@dataclass
class FprResult:
    percent: float
    n_points: int
    empty: bool


def extraction_bounds(world: World, margin: float = 0.05):
    """World bounding box grown by ``margin`` so walls on its edge are bracketed."""
    x0, y0, x1, y1 = world.bounds
    return x0 - margin, y0 - margin, x1 + margin, y1 + margin


def fpr(snapshot, world: World, threshold: float = 0.05, resolution: float = 0.05,
        margin: float | None = None) -> FprResult:
    """Percent of predicted 0-level points farther than ``threshold`` from any
    wall. The lattice covers the world box plus one cell by default."""
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    margin = resolution if margin is None else margin
    pts = extract_zero_crossings(snapshot, extraction_bounds(world, margin), resolution).points
    if len(pts) == 0:
        return FprResult(100.0, 0, True)
    far = np.abs(analytic_sdf(world, pts)) > threshold
    return FprResult(100.0 * float(far.mean()), len(pts), False)


def nearest_distances(query, ref) -> np.ndarray:
    """Euclidean distance from each query point to its nearest reference point."""
    query = np.atleast_2d(np.asarray(query, dtype=float))
    ref = np.atleast_2d(np.asarray(ref, dtype=float))
    if len(ref) == 0:
        return np.full(len(query), np.inf)
    return cKDTree(ref).query(query, k=1)[0]


@dataclass
class CompletenessResult:
    percent: float
    mean: float
    empty: bool


def completeness(gt_points, observed, threshold: float = 0.05,
                 cap: float = COMPLETENESS_CAP) -> CompletenessResult:
    gt_points = np.atleast_2d(np.asarray(gt_points, dtype=float))
    if len(gt_points) == 0:
        raise ValueError("no ground-truth points")
    observed = np.asarray(observed, dtype=float).reshape(-1, 2)
    if len(observed) == 0:
        return CompletenessResult(0.0, cap, True)
    d = np.minimum(nearest_distances(gt_points, observed), cap)
    return CompletenessResult(100.0 * float((d <= threshold).mean()), float(d.mean()), False)


class CompletenessTracker:
    """Running per-ground-truth-point minimum distance to everything observed.

    Equivalent to :func:`completeness` on the union of all added points but
    costs one nearest-neighbour query per new batch.
    """

    def __init__(self, gt_points, threshold: float = 0.05, cap: float = COMPLETENESS_CAP):
        self.gt = np.atleast_2d(np.asarray(gt_points, dtype=float))
        if len(self.gt) == 0:
            raise ValueError("no ground-truth points")
        self.threshold = threshold
        self.cap = cap
        self.best = np.full(len(self.gt), np.inf)
        self.n_observed = 0

    def add(self, points):
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(points) == 0:
            return
        self.n_observed += len(points)
        d = nearest_distances(self.gt, points)
        np.minimum(self.best, d, out=self.best)

    def result(self) -> CompletenessResult:
        if self.n_observed == 0:
            return CompletenessResult(0.0, self.cap, True)
        d = np.minimum(self.best, self.cap)
        return CompletenessResult(100.0 * float((d <= self.threshold).mean()), float(d.mean()), False)


def evaluate(snapshot, world: World, gt_points, tracker: CompletenessTracker, step: int,
             threshold: float = 0.05, resolution: float = 0.05, with_map: bool = True) -> MetricsReport:
    comp = tracker.result()
    extras = {"comp_empty": comp.empty}
    if with_map and snapshot is not None:
        f = fpr(snapshot, world, threshold, resolution)
        extras.update(fpr_empty=f.empty, n_recon=f.n_points)
        return MetricsReport(mad(snapshot, gt_points), f.percent, comp.percent, comp.mean, step, extras)
    return MetricsReport(float("nan"), float("nan"), comp.percent, comp.mean, step, extras)


class MetricsLog:
    FIELDS = ["step", "mad", "fpr", "comp_pct", "comp_mean"]

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(self.FIELDS)

    def write(self, report: MetricsReport):
        self._w.writerow(report.row())

    def close(self):
        self._fh.close()
