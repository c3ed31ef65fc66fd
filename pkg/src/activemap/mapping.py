"""Continual map training: keyframes, experience replay and update bursts."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .field import (Architecture, FieldParams, OptimizerState, ParamDelta,
                    adam_step)
from .losses import LossConfig, LossReport, RaySamples, compute_loss, evaluate_loss, surface_loss
from .world import Observation


@dataclass
class MappingConfig:
    batch_size: int = 128
    replay_mix: float = 0.5          # share of each batch drawn from the current frame
    iters_per_step: int = 10
    keyframe_threshold: float = 0.05  # mean |f| on a new frame's surface samples (m)
    capacity: int = 256
    delta_alpha: float = 0.9
    replay: bool = True
    lr: float = 0.0013


@dataclass
class Keyframe:
    id: int
    obs: Observation
    samples: RaySamples
    admission_loss: float

    @property
    def pose(self):
        return self.obs.pose


class ReplayBuffer:
    """Ordered keyframe store with oldest-first eviction."""

    def __init__(self, capacity: int = 256, seed=0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.keyframes: list[Keyframe] = []
        self.rng = np.random.default_rng(seed)
        self._next_id = 0
        self._cat: RaySamples | None = None
        self._offsets = np.zeros(1, dtype=np.int64)

    def __len__(self):
        return len(self.keyframes)

    @property
    def ids(self) -> list[int]:
        return [k.id for k in self.keyframes]

    def add(self, obs: Observation, samples: RaySamples, loss: float) -> Keyframe:
        kf = Keyframe(self._next_id, obs, samples, loss)
        self._next_id += 1
        self.keyframes.append(kf)
        if len(self.keyframes) > self.capacity:
            self.keyframes.pop(0)
        self._cat = None
        return kf

    def _concat(self):
        if self._cat is None:
            self._cat = RaySamples.concat(k.samples for k in self.keyframes)
            sizes = np.array([len(k.samples) for k in self.keyframes], dtype=np.int64)
            self._offsets = np.concatenate([[0], np.cumsum(sizes)])
        return self._cat, self._offsets

    def sample(self, n: int, rng=None) -> RaySamples:
        """``n`` samples: keyframe chosen uniformly, then a sample within it."""
        rng = rng if rng is not None else self.rng
        cat, off = self._concat()
        k = rng.integers(0, len(self.keyframes), size=n)
        sizes = off[k + 1] - off[k]
        local = np.floor(rng.uniform(size=n) * sizes).astype(np.int64)
        return cat.take(off[k] + local)

    def all_samples(self) -> RaySamples:
        return self._concat()[0] if self.keyframes else RaySamples.empty()


@dataclass
class NeuralMap:
    params: FieldParams
    optim: OptimizerState
    delta: ParamDelta = field(default_factory=ParamDelta)
    loss_cfg: LossConfig = field(default_factory=LossConfig)

    @classmethod
    def create(cls, arch: Architecture | None = None, seed: int = 0, lr: float = 0.0013,
               delta_alpha: float = 0.9, loss_cfg: LossConfig | None = None,
               dtype=np.float64) -> "NeuralMap":
        arch = arch or Architecture()
        params = FieldParams.initialize(arch, seed, dtype=dtype)
        return cls(params, OptimizerState.fresh(params, lr=lr), ParamDelta(alpha=delta_alpha),
                   loss_cfg or LossConfig())

    def snapshot(self) -> FieldParams:
        return self.params.copy()

    def copy(self) -> "NeuralMap":
        return NeuralMap(self.params.copy(), self.optim.copy(),
                         ParamDelta(self.delta.alpha, self.delta.last, self.delta.smoothed),
                         self.loss_cfg)


def admit_keyframe(buffer: ReplayBuffer, obs: Observation, samples: RaySamples,
                   params: FieldParams, threshold: float = 0.05) -> bool:
    """Store ``obs`` as a keyframe if the buffer is empty or the current map
    fits its surface samples poorly (mean |f| above ``threshold``)."""
    loss = surface_loss(params, samples)
    if len(buffer) == 0 or loss > threshold:
        buffer.add(obs, samples, loss)
        return True
    return False


def sample_batch(buffer: ReplayBuffer, current: RaySamples | None, n: int,
                 mix: float = 0.5, rng=None) -> RaySamples:
    """Exactly ``n`` samples: ``round(mix * n)`` from the current frame and the
    rest from the replay buffer (all from whichever source exists alone)."""
    if n <= 0:
        raise ValueError("batch size must be > 0")
    rng = rng if rng is not None else buffer.rng
    has_cur = current is not None and len(current) > 0
    if not has_cur and len(buffer) == 0:
        raise ValueError("no data: empty replay buffer and no current observation")
    if not has_cur:
        n_cur = 0
    elif len(buffer) == 0:
        n_cur = n
    else:
        n_cur = int(round(mix * n))
    parts = []
    if n_cur:
        parts.append(current.take(rng.integers(0, len(current), size=n_cur)))
    if n - n_cur:
        parts.append(buffer.sample(n - n_cur, rng))
    return RaySamples.concat(parts)


@dataclass
class UpdateResult:
    report: LossReport | None
    delta_norm: float
    history: list


def map_update_step(nmap: NeuralMap, buffer: ReplayBuffer, current: RaySamples | None,
                    iters: int, cfg: MappingConfig | None = None, rng=None,
                    keep_history: bool = False) -> UpdateResult:
    """Run ``iters`` sample -> loss -> backward -> Adam cycles in place.

    The L2 norm of the total parameter change is pushed into ``nmap.delta``
    (skipped for ``iters == 0``).
    """
    cfg = cfg or MappingConfig()
    rng = rng if rng is not None else buffer.rng
    if iters <= 0:
        return UpdateResult(None, 0.0, [])
    before = nmap.params.flat.copy()
    report = None
    history = []
    use_buffer = buffer if cfg.replay else ReplayBuffer(1)
    for _ in range(iters):
        batch = sample_batch(use_buffer, current, cfg.batch_size, cfg.replay_mix, rng)
        report, grad = compute_loss(nmap.params, batch, nmap.loss_cfg)
        adam_step(nmap.params, grad, nmap.optim)
        if keep_history:
            history.append(report)
    norm = float(np.linalg.norm(nmap.params.flat - before))
    nmap.delta.update(norm)
    return UpdateResult(report, norm, history)


def generalization_forgetting_probe(before: FieldParams, after: FieldParams,
                                    old: RaySamples, new: RaySamples,
                                    cfg: LossConfig | None = None) -> tuple[float, float]:
    """Diagnostic loss deltas.

    forgetting     = L(after, old) - L(before, old)
    generalization = L(before, new + old) - L(before, old)
    """
    l_before_old = evaluate_loss(before, old, cfg).total
    l_after_old = evaluate_loss(after, old, cfg).total if after is not before else l_before_old
    if len(new):
        l_before_all = evaluate_loss(before, RaySamples.concat([new, old]), cfg).total
    else:
        l_before_all = l_before_old
    return l_after_old - l_before_old, l_before_all - l_before_old


class StepLog:
    """Per-step mapping CSV: step, losses, parameter-change norm, buffer size."""

    FIELDS = ["step", "total", "surface", "free", "eikonal", "delta_norm", "buffer_size", "keyframe"]

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(self.FIELDS)

    def write(self, step: int, report: LossReport | None, delta_norm: float,
              buffer_size: int, keyframe: bool):
        r = report or LossReport(float("nan"), float("nan"), float("nan"), float("nan"))
        self._w.writerow([step, f"{r.total:.6g}", f"{r.surface:.6g}", f"{r.free:.6g}",
                          f"{r.eikonal:.6g}", f"{delta_norm:.6g}", buffer_size, int(keyframe)])

    def close(self):
        self._fh.close()
