"""Episode orchestration: the sense / map / identify / select / navigate loop,
configuration files, CSV logs, snapshots and PPM rendering."""
from __future__ import annotations

import csv
import dataclasses
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import field as nf
from .losses import LossConfig, sample_rays
from .mapping import MappingConfig, NeuralMap, ReplayBuffer, StepLog, admit_keyframe, map_update_step
from .metrics import CompletenessTracker, MetricsLog, MetricsReport, evaluate, extraction_bounds
from .planner import (FrontierExplorer, RandomPolicy, SelectionCriterion, TraversabilityGrid,
                      path_to_actions, plan_path, score_and_select)
from .uncertainty import (evaluate_grid, cluster_candidates, extract_zero_crossings,
                          neural_variability, perturbation_scale, place_target_views,
                          select_high_variance)
from .world import (ROBOT_RADIUS, TURN_STEP, Action, AgentPose, World, apply_action,
                    ground_truth_boundary_samples, load_world_file, raycast_depth,
                    sample_free_pose, wrap_angle)

POLICIES = ("active", "random", "frontier")


class ConfigError(ValueError):
    pass


@dataclass
class EpisodeConfig:
    world: str = "empty_room"
    steps: int = 1000
    seed: int = 0
    policy: str = "active"
    criterion: str = "max-variance"
    out: str | None = None
    # sensing
    n_rays: int = 128
    fov_deg: float = 90.0
    max_range: float = 6.0
    n_free: int = 4
    # field
    width: int = 64
    n_hidden: int = 4
    lr: float = 0.0013
    normalize_input: bool = True
    # mapping
    iters: int = 10
    batch_size: int = 128
    replay_mix: float = 0.5
    keyframe_threshold: float = 0.05
    capacity: int = 256
    replay: bool = True
    # uncertainty
    k_draws: int = 10
    b_normalize: bool = True
    fraction: float = 0.1
    link_radius: float = 0.5
    d_place: float = 1.0
    resolution: float = 0.05
    # planning
    horizon: float = 4.0
    horizon_ahead: float = 2.0
    goal_radius: float = 0.5
    stall_steps: int = 100
    regen_interval: int = 10
    commit_goal: bool = True
    early_stop: bool = True
    empty_cycles: int = 3
    frontier_min_cluster: int = 5
    # metrics
    threshold: float = 0.05
    gt_spacing: float = 0.02
    metrics_every: int = 50
    train_map: bool | None = None
    snapshot_every: int = 0

    def validate(self) -> "EpisodeConfig":
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r} (expected one of {', '.join(POLICIES)})")
        SelectionCriterion.parse(self.criterion)
        resolve_world_path(self.world)
        return self

    @property
    def trains_map(self) -> bool:
        return self.policy == "active" if self.train_map is None else bool(self.train_map)

    def replace(self, **kw) -> "EpisodeConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_text(cls, text: str, **overrides) -> "EpisodeConfig":
        """Parse ``key = value`` lines (``#`` comments) and apply overrides."""
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected 'key = value'")
            k, v = (s.strip() for s in line.split("=", 1))
            values[k.replace("-", "_")] = v
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values: dict) -> "EpisodeConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kw = {}
        for k, v in values.items():
            if k not in fields:
                raise ConfigError(f"unknown config key {k!r}")
            kw[k] = _coerce(fields[k], v)
        return cls(**kw)

    @classmethod
    def from_file(cls, path, **overrides) -> "EpisodeConfig":
        return cls.from_text(Path(path).read_text(), **overrides)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))


def _coerce(f, v):
    if not isinstance(v, str):
        return v
    t = str(f.type)
    if v.lower() in ("none", "") and "None" in t:
        return None
    try:
        if t.startswith("bool"):
            if v.lower() in ("1", "true", "yes", "on"):
                return True
            if v.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(v)
        if t.startswith("int"):
            return int(v)
        if t.startswith("float"):
            return float(v)
    except ValueError:
        raise ConfigError(f"bad value for {f.name}: {v!r}") from None
    return v


def resolve_world_path(world: str) -> Path:
    from .world import FIXTURES, fixture_path
    if world in FIXTURES:
        return Path(fixture_path(world))
    p = Path(world)
    if not p.is_file():
        raise ConfigError(f"world file not found: {world}")
    return p


@dataclass
class EpisodeReport:
    final: MetricsReport
    initial: MetricsReport
    steps_run: int
    early_stopped: bool
    files: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    n_keyframes: int = 0
    n_cycles: int = 0


class EpisodeError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step}: {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause


_MODULES = ("sim", "mapping", "uncertainty", "planning", "metrics")


@dataclass
class _Goal:
    waypoints: np.ndarray
    heading: float
    since: int
    position: np.ndarray
    target: np.ndarray | None = None


class _Streams:
    """Independent random streams derived from one seed."""

    def __init__(self, seed: int):
        names = ("init", "pose", "rays", "replay", "perturb", "policy")
        seqs = np.random.SeedSequence(seed).spawn(len(names))
        for n, s in zip(names, seqs):
            setattr(self, n, np.random.default_rng(s))
        self.init_seed = int(seqs[0].generate_state(1)[0])


def _field_grid_to_traversability(grid, robot_radius):
    r = grid.res
    return TraversabilityGrid(grid.x0 - r / 2, grid.y0 - r / 2, r, grid.values > robot_radius)


def identify_targets(params: nf.FieldParams, delta_norm: float, bounds, cfg: EpisodeConfig,
                     pose: AgentPose, rng):
    """Candidate viewpoints from the current map plus the sampled lattice
    (reused for traversability)."""
    grid = evaluate_grid(params, bounds, cfg.resolution)
    zc = extract_zero_crossings(params, bounds, cfg.resolution, grid=grid)
    if len(zc) == 0:
        return [], grid
    b = perturbation_scale(delta_norm, len(params), cfg.b_normalize)
    scores = neural_variability(params, zc.points, b, cfg.k_draws, rng)
    sel = select_high_variance(scores.variance, cfg.fraction)
    pts, var = zc.points[sel], scores.variance[sel]
    clusters = cluster_candidates(pts, cfg.link_radius)
    cands = place_target_views(clusters, pts, var, params, cfg.d_place, ROBOT_RADIUS, pose)
    return cands, grid


def choose_goal(cands, trav: TraversabilityGrid, pose: AgentPose, cfg: EpisodeConfig):
    """Best reachable candidate and its path. Unreachable ones are discarded."""
    start = trav.to_cell(pose.position)
    free = trav.free.copy()
    free[start] = True
    # with corner cutting forbidden, 8-connected reachability equals 4-connected
    labels, _ = ndimage.label(free)
    comp = labels[start]
    ny, nx = trav.free.shape
    x1, y1 = trav.x0 + nx * trav.cell, trav.y0 + ny * trav.cell
    # viewpoints outside the mapped region cannot be reached
    pool = [c for c in cands
            if trav.x0 <= c.position[0] < x1 and trav.y0 <= c.position[1] < y1]
    r_cells = int(math.floor(cfg.goal_radius / trav.cell + 1e-9))
    while pool:
        pick = score_and_select(pool, pose, cfg.criterion, cfg.horizon, cfg.horizon_ahead)
        i, cand = pick
        gcell = trav.to_cell(cand.position)
        reachable = labels[gcell] == comp
        if not reachable:
            # goal substitution may still land inside the component
            y, x = gcell
            win = labels[max(0, y - r_cells):y + r_cells + 1, max(0, x - r_cells):x + r_cells + 1]
            reachable = bool((win == comp).any())
        path = None
        if reachable:
            path = plan_path(TraversabilityGrid(trav.x0, trav.y0, trav.cell, free), start, gcell,
                             cfg.goal_radius)
        if path is not None:
            return cand, path
        pool.pop(i)
    return None, None


def episode_architecture(cfg: EpisodeConfig, world: World) -> nf.Architecture:
    """Field layout for an episode; raw coordinates are optionally mapped to
    the unit box around the world's bounding box."""
    emb = nf.PositionalEmbedding()
    if cfg.normalize_input:
        x0, y0, x1, y1 = world.bounds
        emb = nf.PositionalEmbedding(center=((x0 + x1) / 2, (y0 + y1) / 2),
                                     scale=max(x1 - x0, y1 - y0) / 2)
    return nf.Architecture(width=cfg.width, n_hidden=cfg.n_hidden, embedding=emb)


def run_episode(cfg: EpisodeConfig, out_dir=None) -> EpisodeReport:
    """Run one exploration episode. Deterministic for a given config."""
    cfg.validate()
    out = Path(out_dir or cfg.out or "runs/episode")
    out.mkdir(parents=True, exist_ok=True)
    world = load_world_file(resolve_world_path(cfg.world))
    rs = _Streams(cfg.seed)
    gt = ground_truth_boundary_samples(world, cfg.gt_spacing)
    tracker = CompletenessTracker(gt, cfg.threshold)
    bounds = extraction_bounds(world, cfg.resolution)
    fov = math.radians(cfg.fov_deg)

    pose = sample_free_pose(world, rs.pose)
    nmap = None
    buffer = ReplayBuffer(cfg.capacity, seed=0)
    mcfg = MappingConfig(cfg.batch_size, cfg.replay_mix, cfg.iters, cfg.keyframe_threshold,
                         cfg.capacity, 0.9, cfg.replay, cfg.lr)
    if cfg.trains_map:
        arch = episode_architecture(cfg, world)
        nmap = NeuralMap.create(arch, rs.init_seed, lr=cfg.lr, loss_cfg=LossConfig(), dtype=np.float32)
    random_policy = RandomPolicy(rs.policy) if cfg.policy == "random" else None
    frontier = FrontierExplorer(world.bounds, cfg.resolution, ROBOT_RADIUS, cfg.frontier_min_cluster) \
        if cfg.policy == "frontier" else None

    files = {k: out / f"{k}.csv" for k in ("steps", "metrics", "decisions", "timings")}
    steplog = StepLog(files["steps"])
    mlog = MetricsLog(files["metrics"])
    dec_fh = open(files["decisions"], "w", newline="")
    dec = csv.writer(dec_fh, lineterminator="\n")
    dec.writerow(["step", "n_candidates", "criterion", "goal_x", "goal_y", "path_cost", "reason"])
    tim_fh = open(files["timings"], "w", newline="")
    tim = csv.writer(tim_fh, lineterminator="\n")
    tim.writerow(["step", *_MODULES])
    totals = dict.fromkeys(_MODULES, 0.0)

    snap = nmap.params if nmap else None
    initial = evaluate(snap, world, gt, tracker, 0, cfg.threshold, cfg.resolution, nmap is not None)
    mlog.write(initial)
    final = initial
    snapshots = []
    goal: _Goal | None = None
    last_regen = -10 ** 9
    empty_run = 0
    n_cycles = 0
    early = False
    need_regen = True
    last_overlay = {}
    step = 0
    try:
        for step in range(cfg.steps):
            t = {k: 0.0 for k in _MODULES}
            t0 = time.perf_counter()
            obs = raycast_depth(world, pose, fov, cfg.n_rays, cfg.max_range, step)
            tracker.add(obs.endpoints(hits_only=True))
            if frontier:
                frontier.observe(obs)
            t["sim"] += time.perf_counter() - t0

            # map update
            keyframe = False
            if nmap is not None:
                t0 = time.perf_counter()
                samples = sample_rays(obs, cfg.n_free, rs.rays, frame_id=step)
                keyframe = admit_keyframe(buffer, obs, samples, nmap.params, cfg.keyframe_threshold)
                res = map_update_step(nmap, buffer, samples, cfg.iters, mcfg, rs.replay)
                steplog.write(step, res.report, res.delta_norm, len(buffer), keyframe)
                t["mapping"] += time.perf_counter() - t0
            else:
                steplog.write(step, None, 0.0, 0, False)

            # decide
            action = None
            if cfg.policy == "random":
                action = random_policy.act()
            elif cfg.policy == "frontier":
                t0 = time.perf_counter()
                action, goal, reason = _frontier_decide(frontier, pose, goal, step, cfg)
                if reason:
                    g = goal.position if goal else (math.nan, math.nan)
                    dec.writerow([step, "", "frontier", _f(g[0]), _f(g[1]), "", reason])
                t["planning"] += time.perf_counter() - t0
            else:
                regen_reason = None
                if need_regen:
                    regen_reason = need_regen if isinstance(need_regen, str) else "start"
                elif keyframe and step - last_regen >= cfg.regen_interval:
                    regen_reason = "keyframe"
                elif goal is not None and step - goal.since >= cfg.stall_steps:
                    regen_reason = "stall"
                if regen_reason:
                    t0 = time.perf_counter()
                    cands, grid = identify_targets(nmap.params, nmap.delta.norm, bounds, cfg,
                                                   pose, rs.perturb)
                    t["uncertainty"] += time.perf_counter() - t0
                    t0 = time.perf_counter()
                    trav = _field_grid_to_traversability(grid, ROBOT_RADIUS)
                    last_regen = step
                    need_regen = False
                    n_cycles += 1
                    keep = regen_reason == "keyframe" and _still_uncertain(goal, cands, cfg)
                    cand, path = (None, None) if keep or not cands else choose_goal(cands, trav, pose, cfg)
                    if keep:
                        empty_run = 0
                    elif cand is None:
                        goal = None
                        empty_run += 1
                        dec.writerow([step, len(cands), cfg.criterion, "", "", "", regen_reason + ":none"])
                    else:
                        empty_run = 0
                        goal = _Goal(path.waypoints(trav), cand.viewpoint.heading, step,
                                     cand.position, cand.centroid)
                        dec.writerow([step, len(cands), cfg.criterion, _f(cand.position[0]),
                                      _f(cand.position[1]), _f(path.cost), regen_reason])
                    last_overlay = {"candidates": [c.position for c in cands],
                                    "goal": None if goal is None else goal.position,
                                    "path": None if goal is None else goal.waypoints}
                    t["planning"] += time.perf_counter() - t0
                    if cfg.early_stop and empty_run >= cfg.empty_cycles:
                        early = True
                        _log_timing(tim, step, t, totals)
                        break
                t0 = time.perf_counter()
                action, arrived = _follow(goal, pose, cfg)
                if arrived:
                    goal = None
                    need_regen = "arrival"
                elif goal is None and not need_regen and step - last_regen >= cfg.regen_interval:
                    need_regen = "idle"
                t["planning"] += time.perf_counter() - t0

            t0 = time.perf_counter()
            pose, collided = apply_action(world, pose, action)
            if collided and cfg.policy == "active":
                goal = None
                need_regen = "blocked"
            elif collided and cfg.policy == "frontier":
                if goal is not None:
                    frontier.reject(goal.position)
                goal = None
            t["sim"] += time.perf_counter() - t0

            t0 = time.perf_counter()
            if (step + 1) % cfg.metrics_every == 0:
                final = evaluate(nmap.params if nmap else None, world, gt, tracker, step + 1,
                                 cfg.threshold, cfg.resolution, nmap is not None)
                mlog.write(final)
            if nmap is not None and cfg.snapshot_every and (step + 1) % cfg.snapshot_every == 0:
                p = out / f"snapshot_{step + 1:05d}.ckpt"
                nf.save(nmap.params, p)
                snapshots.append(p)
            t["metrics"] += time.perf_counter() - t0
            _log_timing(tim, step, t, totals)
        steps_run = step + 1 if cfg.steps else 0
        if steps_run % cfg.metrics_every or early:
            final = evaluate(nmap.params if nmap else None, world, gt, tracker, steps_run,
                             cfg.threshold, cfg.resolution, nmap is not None)
            mlog.write(final)
    except nf.DivergenceError as exc:
        if nmap is not None:
            nf.save(nmap.params, out / "crash.ckpt")
        raise EpisodeError(step, exc) from exc
    finally:
        steplog.close()
        mlog.close()
        dec_fh.close()
        tim_fh.close()

    if nmap is not None:
        p = out / "final.ckpt"
        nf.save(nmap.params, p)
        snapshots.append(p)
        img = out / "final.ppm"
        emit_visualization(nmap.params, world, img, pose=pose, **last_overlay)
        files["image"] = img
    with open(out / "config.txt", "w") as fh:
        fh.write(cfg.to_text())
    n = max(1, steps_run)
    timing = {k: v / n for k, v in totals.items()}
    return EpisodeReport(final, initial, steps_run, early, files, snapshots, timing,
                         len(buffer), n_cycles)


def _f(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{float(v):.4f}"


def _log_timing(w, step, t, totals):
    for k in _MODULES:
        totals[k] += t[k]
    w.writerow([step, *(f"{t[k]:.6f}" for k in _MODULES)])


def _still_uncertain(goal: _Goal | None, cands, cfg: EpisodeConfig) -> bool:
    """Whether the region the current goal looks at is still a candidate."""
    if not cfg.commit_goal or goal is None or goal.target is None or not cands:
        return False
    cen = np.array([c.centroid for c in cands])
    return bool((np.hypot(*(cen - goal.target).T) <= cfg.d_place).any())


def _follow(goal: _Goal | None, pose: AgentPose, cfg: EpisodeConfig):
    """(action, arrived). Idle agents rotate in place to keep sensing."""
    if goal is None:
        return Action.TURN_LEFT, False
    a = path_to_actions(goal.waypoints, pose, arrive_tol=0.1)
    if a != Action.STOP:
        return a, False
    err = wrap_angle(goal.heading - pose.heading)
    if abs(err) > TURN_STEP / 2:
        return (Action.TURN_LEFT if err > 0 else Action.TURN_RIGHT), False
    return Action.TURN_LEFT, True


def _frontier_decide(frontier: FrontierExplorer, pose, goal, step, cfg):
    reason = None
    if goal is not None:
        gcell = frontier.grid.to_cell(goal.position)
        if not frontier.frontier()[gcell]:
            goal, reason = None, "seen"
        elif step - goal.since >= cfg.stall_steps:
            frontier.reject(goal.position)
            goal, reason = None, "stall"
    if goal is None:
        found = frontier.plan(pose)
        if found is None:
            first = not getattr(frontier, "done", False)
            frontier.done = True
            return Action.TURN_LEFT, None, "complete" if first else None
        frontier.done = False
        wps, _cost = found
        goal = _Goal(wps, pose.heading, step, wps[-1])
        reason = "new" if reason is None else reason
    a = path_to_actions(goal.waypoints, pose, arrive_tol=0.1)
    if a == Action.STOP:
        frontier.reject(goal.position)
        return Action.TURN_LEFT, None, "arrival"
    return a, goal, reason


# -- visualisation -----------------------------------------------------------

def _heat(values, scale):
    v = np.clip(values / scale, -1.0, 1.0)
    img = np.empty(v.shape + (3,), dtype=np.float64)
    pos = np.clip(v, 0, 1)
    neg = np.clip(-v, 0, 1)
    img[..., 0] = 1.0 - pos * 0.8
    img[..., 1] = 1.0 - 0.5 * pos - 0.8 * neg
    img[..., 2] = 1.0 - neg * 0.8
    return img


def emit_visualization(snapshot, world: World | None, out_path, pose: AgentPose | None = None,
                       candidates=None, goal=None, path=None, bounds=None, pixel: float = 0.05,
                       scale: float = 2.0) -> Path:
    """Write a binary PPM: SDF heat map (blue free, red occupied) with walls,
    agent, candidate viewpoints, chosen goal and planned path overlaid."""
    bounds = bounds or extraction_bounds(world, 0.25)
    x0, y0, x1, y1 = bounds
    nx = int(round((x1 - x0) / pixel))
    ny = int(round((y1 - y0) / pixel))
    xs = x0 + (np.arange(nx) + 0.5) * pixel
    ys = y1 - (np.arange(ny) + 0.5) * pixel        # row 0 is the top edge
    gx, gy = np.meshgrid(xs, ys)
    sdf = snapshot.sdf if hasattr(snapshot, "sdf") else snapshot
    vals = np.asarray(sdf(np.stack([gx.ravel(), gy.ravel()], 1)), dtype=float).reshape(ny, nx)
    img = _heat(vals, scale)
    img[np.abs(vals) < pixel / 2] *= 0.35

    def put(points, color, radius=0):
        for p in np.atleast_2d(np.asarray(points, dtype=float)):
            cx = int(math.floor((p[0] - x0) / pixel))
            cy = int(math.floor((y1 - p[1]) / pixel))
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    if dx * dx + dy * dy <= radius * radius and 0 <= cx + dx < nx and 0 <= cy + dy < ny:
                        img[cy + dy, cx + dx] = color

    if world is not None:
        put(ground_truth_boundary_samples(world, pixel / 2), (0.0, 0.0, 0.0))
    if path is not None and len(path):
        put(path, (1.0, 0.85, 0.0))
    if candidates is not None and len(candidates):
        put(candidates, (0.0, 0.7, 0.0), 1)
    if goal is not None:
        put(goal, (0.9, 0.0, 0.9), 2)
    if pose is not None:
        put(pose.position, (0.0, 0.0, 0.0), 2)
        put(pose.position + 0.15 * np.array([math.cos(pose.heading), math.sin(pose.heading)]),
            (1.0, 1.0, 1.0))
    data = np.round(img * 255).astype(np.uint8)
    out_path = Path(out_path)
    with open(out_path, "wb") as fh:
        fh.write(f"P6\n{nx} {ny}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
    return out_path


def read_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


# -- ablation ----------------------------------------------------------------

ABLATION_FIELDS = ["label", "world", "n_runs", "n_failed", "comp_pct_mean", "comp_pct_std",
                   "comp_mean_mean", "comp_mean_std", "mad_mean", "mad_std", "fpr_mean", "fpr_std"]


@dataclass
class RunResult:
    label: str
    world: str
    seed: int
    report: EpisodeReport | None
    error: str | None = None


def run_ablation_suite(configs: dict, seeds, out_dir, table_path=None, per_world: bool = True,
                       runner=None) -> tuple[list[dict], list[RunResult]]:
    """Run every labelled config over ``seeds`` and aggregate metrics.

    ``configs`` maps a label to a list of EpisodeConfig (one per world).
    Failed runs are recorded and skipped in the aggregates.
    """
    if len(configs) < 2:
        raise ValueError("need at least two configurations to compare")
    runner = runner or run_episode
    out_dir = Path(out_dir)
    results: list[RunResult] = []
    for label, cfgs in configs.items():
        for cfg in (cfgs if isinstance(cfgs, (list, tuple)) else [cfgs]):
            wname = Path(cfg.world).stem
            for seed in seeds:
                c = cfg.replace(seed=seed)
                run_dir = out_dir / label / wname / f"seed{seed}"
                try:
                    results.append(RunResult(label, wname, seed, runner(c, run_dir)))
                except Exception as exc:  # noqa: BLE001 - continue with the rest of the suite
                    results.append(RunResult(label, wname, seed, None, f"{type(exc).__name__}: {exc}"))
    rows = aggregate(results, per_world)
    if table_path is not None:
        write_table(rows, table_path)
    return rows, results


def aggregate(results, per_world: bool = True) -> list[dict]:
    groups: dict = {}
    for r in results:
        key = (r.label, r.world if per_world else "all")
        groups.setdefault(key, []).append(r)
    rows = []
    for (label, wname), rs in groups.items():
        ok = [r.report.final for r in rs if r.report is not None]
        row = {"label": label, "world": wname, "n_runs": len(rs), "n_failed": len(rs) - len(ok)}
        for attr, name in (("comp_pct", "comp_pct"), ("comp_mean", "comp_mean"), ("mad", "mad"), ("fpr", "fpr")):
            vals = np.array([getattr(m, attr) for m in ok], dtype=float)
            row[f"{name}_mean"] = float(vals.mean()) if len(vals) else math.nan
            row[f"{name}_std"] = float(vals.std()) if len(vals) else math.nan
        rows.append(row)
    return rows


def write_table(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, ABLATION_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})


def suite_configs(base: EpisodeConfig, worlds=None, large=("office",), large_steps=2000,
                  small_steps=1000) -> list[EpisodeConfig]:
    from .world import FIXTURES
    worlds = worlds or FIXTURES
    return [base.replace(world=w, steps=large_steps if w in large else small_steps) for w in worlds]
