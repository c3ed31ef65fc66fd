"""Ray samples from depth scans and the SDF training loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import DivergenceError, FieldParams, backward, forward, forward_with_cache
from .world import Observation

SURFACE = 0
FREE = 1


@dataclass
class RaySamples:
    """A batch of supervised points stored column-wise.

    ``kind`` is SURFACE (target: zero level) or FREE (``target`` holds the
    distance to the ray endpoint, used as a free-space bound). ``eikonal``
    marks the rows on which the unit-gradient penalty is evaluated; the flag
    travels with the sample so batch composition does not change which
    points are regularised.
    """

    points: np.ndarray
    kind: np.ndarray
    target: np.ndarray
    frame: np.ndarray
    eikonal: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.kind = np.asarray(self.kind, dtype=np.int8)
        self.target = np.asarray(self.target, dtype=float)
        self.frame = np.asarray(self.frame, dtype=np.int64)
        if self.eikonal is None:
            self.eikonal = np.ones(len(self.kind), dtype=bool)
        self.eikonal = np.asarray(self.eikonal, dtype=bool)

    @classmethod
    def build(cls, points, kind, target=None, frame=0, eikonal=None) -> "RaySamples":
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        n = len(points)
        kind = np.broadcast_to(np.asarray(kind, dtype=np.int8), (n,)).copy()
        target = np.zeros(n) if target is None else np.broadcast_to(np.asarray(target, float), (n,)).copy()
        return cls(points, kind, target, np.full(n, frame, dtype=np.int64), eikonal)

    def __len__(self):
        return len(self.kind)

    def take(self, idx) -> "RaySamples":
        return RaySamples(self.points[idx], self.kind[idx], self.target[idx],
                          self.frame[idx], self.eikonal[idx])

    @staticmethod
    def concat(parts) -> "RaySamples":
        parts = list(parts)
        if not parts:
            return RaySamples.empty()
        return RaySamples(np.concatenate([p.points for p in parts]),
                          np.concatenate([p.kind for p in parts]),
                          np.concatenate([p.target for p in parts]),
                          np.concatenate([p.frame for p in parts]),
                          np.concatenate([p.eikonal for p in parts]))

    @staticmethod
    def empty() -> "RaySamples":
        return RaySamples(np.zeros((0, 2)), np.zeros(0, dtype=np.int8),
                          np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool))

    @property
    def surface(self) -> np.ndarray:
        return self.kind == SURFACE


@dataclass
class LossConfig:
    w_surface: float = 1.0
    w_free: float = 1.0
    w_eikonal: float = 0.1
    beta_free: float = 0.8


@dataclass(frozen=True)
class LossReport:
    total: float
    surface: float
    free: float
    eikonal: float


def sample_rays(obs: Observation, n_free: int = 4, rng=None, frame_id: int = 0,
                eikonal_fraction: float = 0.25) -> RaySamples:
    """One surface sample per hitting ray plus ``n_free`` stratified free-space
    samples per ray, strictly between the sensor and the endpoint.

    A random ``eikonal_fraction`` of the samples is flagged for the eikonal
    penalty (at least one).
    """
    depths = np.asarray(obs.depths, dtype=float)
    if depths.size == 0:
        raise ValueError("empty depth scan")
    if np.any(depths <= 0) or np.any(depths > obs.max_range):
        raise ValueError("depth values must lie in (0, max_range]")
    rng = rng if rng is not None else np.random.default_rng(0)
    ang = obs.ray_angles()
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    origin = obs.pose.position
    hit = depths < obs.max_range

    pts = [origin + depths[hit, None] * dirs[hit]]
    kind = [np.full(int(hit.sum()), SURFACE, dtype=np.int8)]
    target = [np.zeros(int(hit.sum()))]
    if n_free > 0:
        u = rng.uniform(size=(len(depths), n_free))
        u = np.clip(u, 1e-6, 1.0 - 1e-6)
        frac = (np.arange(n_free)[None] + u) / n_free          # stratified in (0, 1)
        t = frac * depths[:, None]
        pts.append((origin + t[..., None] * dirs[:, None, :]).reshape(-1, 2))
        kind.append(np.full(t.size, FREE, dtype=np.int8))
        target.append((depths[:, None] - t).reshape(-1))
    pts = np.concatenate(pts)
    eik = rng.uniform(size=len(pts)) < eikonal_fraction
    if eikonal_fraction > 0 and not eik.any():
        eik[0] = True
    return RaySamples(pts, np.concatenate(kind), np.concatenate(target),
                      np.full(len(pts), frame_id, dtype=np.int64), eik)


def compute_loss(params: FieldParams, batch: RaySamples, cfg: LossConfig | None = None,
                 with_grad: bool = True):
    """Weighted surface L1 + free-space hinge + eikonal loss.

    Every term is a mean over its own rows (surface rows, free rows, rows
    flagged ``eikonal``). Returns ``(LossReport, flat_gradient or None)``.
    """
    cfg = cfg or LossConfig()
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    m = int(batch.eikonal.sum()) if cfg.w_eikonal else 0
    if m and not batch.eikonal[:m].all():
        # tangent rows must come first
        batch = batch.take(np.argsort(~batch.eikonal, kind="stable"))
    cache = forward_with_cache(params, batch.points, n_tangent=m)
    f = cache.out
    d_out = np.zeros(n)

    surf = batch.kind == SURFACE
    n_s = int(surf.sum())
    l_surf = 0.0
    if n_s:
        l_surf = float(np.abs(f[surf]).sum() / n_s)
        d_out[surf] = cfg.w_surface * np.sign(f[surf]) / n_s

    free = ~surf
    n_f = n - n_s
    l_free = 0.0
    if n_f:
        r = cfg.beta_free * batch.target[free] - f[free]
        active = r > 0
        l_free = float(np.where(active, r, 0.0).sum() / n_f)
        d_out[free] = np.where(active, -cfg.w_free / n_f, 0.0)

    l_eik = 0.0
    d_grad = None
    if m:
        g = cache.grad
        norm = np.sqrt((g * g).sum(axis=1))
        resid = norm - 1.0
        l_eik = float((resid ** 2).sum() / m)
        safe = np.where(norm > 0, norm, 1.0)
        d_grad = cfg.w_eikonal * (2.0 * resid / safe)[:, None] * g / m

    total = cfg.w_surface * l_surf + cfg.w_free * l_free + cfg.w_eikonal * l_eik
    if not np.isfinite(total):
        raise DivergenceError(f"non-finite loss ({total})")
    report = LossReport(total, l_surf, l_free, l_eik)
    if not with_grad:
        return report, None
    return report, backward(params, cache, d_out, d_grad)


def evaluate_loss(params: FieldParams, batch: RaySamples, cfg: LossConfig | None = None) -> LossReport:
    return compute_loss(params, batch, cfg, with_grad=False)[0]


def surface_loss(params: FieldParams, batch: RaySamples) -> float:
    """Mean |f| over the surface samples of ``batch`` (0 if there are none)."""
    surf = batch.surface
    if not surf.any():
        return 0.0
    return float(np.abs(forward(params, batch.points[surf])).mean())
