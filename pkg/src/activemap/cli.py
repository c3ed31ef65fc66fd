"""Command-line entry point: ``activemap explore|ablate|landscape|replay``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import field as nf
from .driver import (ConfigError, EpisodeConfig, EpisodeError, emit_visualization,
                     resolve_world_path, run_ablation_suite, run_episode, suite_configs)
from .uncertainty import landscape_slice, write_pgm
from .world import FIXTURES, EnvironmentError_, load_world_file

# exit codes per error category
EXIT = {"config": 2, "world": 3, "io": 4, "runtime": 5}


def _episode_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--world", help=f"fixture name ({', '.join(FIXTURES)}) or world file")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--policy", choices=("active", "random", "frontier"))
    p.add_argument("--criterion", help="max-variance | cluster-size | nearest-distance")
    p.add_argument("--out", help="output directory")


def _config(args) -> EpisodeConfig:
    over = {k: getattr(args, k, None) for k in ("world", "steps", "seed", "policy", "criterion", "out")}
    if args.config:
        return EpisodeConfig.from_file(args.config, **over)
    return EpisodeConfig.from_mapping({k: v for k, v in over.items() if v is not None})


def cmd_explore(args) -> int:
    cfg = _config(args)
    rep = run_episode(cfg, cfg.out or "runs/explore")
    m = rep.final
    print(f"steps={rep.steps_run} comp_pct={m.comp_pct:.2f} comp_mean={m.comp_mean:.4f} "
          f"mad={m.mad:.4f} fpr={m.fpr:.2f} early_stop={rep.early_stopped}")
    print(f"metrics: {rep.files['metrics']}")
    return 0


def cmd_ablate(args) -> int:
    base = _config(args)
    worlds = args.worlds.split(",") if args.worlds else None
    if args.vary == "policy":
        labels = {v: base.replace(policy=v) for v in args.values.split(",")}
    else:
        labels = {v: base.replace(criterion=v) for v in args.values.split(",")}
    for c in labels.values():
        c.validate()
    configs = {k: suite_configs(c, worlds, small_steps=args.steps or 1000,
                                large_steps=args.large_steps) for k, c in labels.items()}
    out = Path(base.out or "runs/ablate")
    out.mkdir(parents=True, exist_ok=True)
    table = out / "table.csv"
    rows, results = run_ablation_suite(configs, range(args.seeds), out, table, per_world=True)
    for r in results:
        if r.error:
            print(f"failed: {r.label} {r.world} seed {r.seed}: {r.error}", file=sys.stderr)
    for row in rows:
        print(f"{row['label']:>16} {row['world']:>14} comp={row['comp_pct_mean']:.2f}"
              f"±{row['comp_pct_std']:.2f} mad={row['mad_mean']:.4f} fpr={row['fpr_mean']:.2f}")
    print(f"table: {table}")
    return 0


def cmd_landscape(args) -> int:
    a, b, c = (nf.load(p) for p in args.checkpoints)
    us = np.linspace(-args.extent, args.extent, args.n)
    sl = landscape_slice(a, b, c, args.probe, us, us)
    out = Path(args.out or "landscape")
    out.mkdir(parents=True, exist_ok=True)
    # rows of the image follow v (top = largest), columns follow u
    write_pgm(sl.values.T[::-1], out / "slice.pgm")
    np.savetxt(out / "slice.csv", sl.values, delimiter=",", fmt="%.8g")
    pb, pc = sl.project(b.flat), sl.project(c.flat)
    print(f"origin={sl.values[args.n // 2, args.n // 2]:.6g} b=({pb[0]:.4g},{pb[1]:.4g}) "
          f"c=({pc[0]:.4g},{pc[1]:.4g})")
    print(f"image: {out / 'slice.pgm'}")
    return 0


def cmd_replay(args) -> int:
    run = Path(args.run)
    cfg_file = run / "config.txt"
    if not cfg_file.is_file():
        raise FileNotFoundError(f"{cfg_file} missing")
    cfg = EpisodeConfig.from_file(cfg_file)
    world = load_world_file(resolve_world_path(cfg.world))
    ckpts = sorted(run.glob("*.ckpt"))
    if not ckpts:
        raise FileNotFoundError(f"no checkpoints in {run}")
    out = Path(args.out or run / "replay")
    out.mkdir(parents=True, exist_ok=True)
    for p in ckpts:
        img = emit_visualization(nf.load(p), world, out / (p.stem + ".ppm"))
        print(img)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="activemap", description="Active neural mapping in 2D worlds.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explore", help="run one exploration episode")
    _episode_flags(p)
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("ablate", help="compare policies or selection criteria over worlds and seeds")
    _episode_flags(p)
    p.add_argument("--vary", choices=("policy", "criterion"), default="policy")
    p.add_argument("--values", default="active,random,frontier",
                   help="comma-separated values of the varied setting")
    p.add_argument("--worlds", help="comma-separated worlds (default: all fixtures)")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, starting at 0")
    p.add_argument("--large-steps", type=int, default=2000, help="step budget for large worlds")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("landscape", help="|f(probe)| over a 2D slice through three checkpoints")
    p.add_argument("--checkpoints", nargs=3, required=True, metavar="CKPT")
    p.add_argument("--probe", nargs=2, type=float, required=True, metavar=("X", "Y"))
    p.add_argument("--extent", type=float, default=1.0)
    p.add_argument("--n", type=int, default=41)
    p.add_argument("--out")
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("replay", help="re-render images from a run's checkpoints")
    p.add_argument("--run", required=True, help="episode output directory")
    p.add_argument("--out")
    p.set_defaults(func=cmd_replay)
    return ap


def _category(exc: Exception) -> str:
    # order matters: ConfigError and EnvironmentError_ subclass ValueError
    if isinstance(exc, EnvironmentError_):
        return "world"
    if isinstance(exc, EpisodeError):
        return "runtime"
    if isinstance(exc, OSError):
        return "io"
    return "config"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, EnvironmentError_, EpisodeError, OSError, ValueError) as exc:
        cat = _category(exc)
        print(f"error[{cat}]: {exc}", file=sys.stderr)
        return EXIT[cat]


if __name__ == "__main__":
    sys.exit(main())
