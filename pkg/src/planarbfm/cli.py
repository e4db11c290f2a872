"""Command-line entry point: thin client over the core pipeline.

Subcommands map one-to-one onto pipeline stages (gen-motions, train-proxy,
distill, eval, latent-project, residual, steer).  Every subcommand accepts
``--config`` (TOML, one table per stage), ``--seed``, and ``--out``; errors
exit nonzero with a single machine-readable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import (
    CheckpointError,
    load_bfm,
    load_checkpoint,
    load_proxy,
    save_bfm,
    save_proxy,
    save_residual,
)
from .config import ConfigError, apply_overrides, load_config, section
from .distill import DistillConfig, StudentController, distill
from .embodiment import default_embodiment
from .latent import collect_latents, project_2d, projection_to_csv
from .metrics import eval_policy
from .motions import (
    MotionFormatError,
    MotionSetParams,
    generate_basic_set,
    load_clip_dir,
    save_clip,
)
from .control import preset_mask
from .proxy import ProxyConfig, train_proxy
from .residual import ResidualConfig, train_residual

__all__ = ["main"]


@dataclasses.dataclass(frozen=True)
class EvalCliConfig:
    tolerance: float = 0.25
    seeds: tuple[int, ...] = (0,)


@dataclasses.dataclass(frozen=True)
class LatentCliConfig:
    tolerance: float = 0.25
    clips: tuple[str, ...] = ()      # empty = every available clip


@dataclasses.dataclass(frozen=True)
class SteerCliConfig:
    host: str = "127.0.0.1"
    port: int = 8765


def _load_section(args, name: str, base):
    overrides = {}
    if args.config is not None:
        overrides = section(load_config(args.config), name)
    return apply_overrides(base, overrides)


def _clips(args):
    if getattr(args, "motions", None):
        return load_clip_dir(args.motions)
    return generate_basic_set()


def _require_out(args) -> Path:
    if args.out is None:
        raise ConfigError("this subcommand requires --out")
    return Path(args.out)


# -- subcommands ------------------------------------------------------------
def cmd_gen_motions(args) -> int:
    params = _load_section(args, "motions", MotionSetParams())
    out = _require_out(args)
    out.mkdir(parents=True, exist_ok=True)
    clips = generate_basic_set(params)
    for clip in clips:
        save_clip(clip, out / f"{clip.name}.json")
    print(json.dumps({"written": len(clips), "dir": str(out)}))
    return 0


def cmd_train_proxy(args) -> int:
    config = _load_section(args, "proxy", ProxyConfig())
    out = _require_out(args)
    result = train_proxy(_clips(args), config, seed=args.seed, log_path=args.log)
    save_proxy(out, result, metadata={"seed": args.seed, "env_steps": result.env_steps})
    print(json.dumps({"checkpoint": str(out), "env_steps": result.env_steps}))
    return 0


def cmd_distill(args) -> int:
    config = _load_section(args, "distill", DistillConfig())
    out = _require_out(args)
    teacher = load_proxy(args.teacher)
    result = distill(teacher, _clips(args), config, seed=args.seed, log_path=args.log)
    save_bfm(out, result.model, metadata={"seed": args.seed, "env_steps": result.env_steps})
    print(json.dumps({"checkpoint": str(out), "env_steps": result.env_steps}))
    return 0


def cmd_eval(args) -> int:
    config = _load_section(args, "eval", EvalCliConfig())
    out = _require_out(args)
    spec = default_embodiment()
    ckpt = load_checkpoint(args.checkpoint, spec)
    if ckpt.kind == "proxy":
        if args.mode != "track":
            raise ConfigError(
                "proxy checkpoints evaluate in track mode only (privileged policy)"
            )
        controller = load_proxy(args.checkpoint, spec)
    elif ckpt.kind == "bfm":
        model = load_bfm(args.checkpoint, spec)
        controller = StudentController(model, spec, mask=preset_mask(args.mode))
    else:
        raise ConfigError(f"cannot evaluate checkpoint kind {ckpt.kind!r} directly")

    report = eval_policy(
        controller, _clips(args), seeds=tuple(config.seeds), spec=spec,
        mode=args.mode, tolerance=config.tolerance,
    )
    out.write_text(json.dumps(report.to_dict(), indent=2))
    print(json.dumps({
        "report": str(out), "success_rate": report.success_rate,
        "mpkpe_m": report.mean("mpkpe"),
    }))
    return 0


def cmd_latent_project(args) -> int:
    config = _load_section(args, "latent", LatentCliConfig())
    out = _require_out(args)
    spec = default_embodiment()
    model = load_bfm(args.checkpoint, spec)
    clips = _clips(args)
    if config.clips:
        index = {c.name: c for c in clips}
        missing = [n for n in config.clips if n not in index]
        if missing:
            raise ConfigError(f"clips not found: {missing}; available: {sorted(index)}")
        clips = [index[n] for n in config.clips]
    traces = [
        collect_latents(model, clip, spec=spec, tolerance=config.tolerance)
        for clip in clips
    ]
    proj = project_2d(traces)
    labels = [t.clip for t in traces for _ in range(len(t))]
    projection_to_csv(proj, out, labels=labels)
    print(json.dumps({
        "csv": str(out), "points": len(labels),
        "explained_variance": [float(v) for v in proj.explained_variance],
        "failed_traces": [t.clip for t in traces if t.failed],
    }))
    return 0


def cmd_residual(args) -> int:
    config = _load_section(args, "residual", ResidualConfig())
    out = _require_out(args)
    spec = default_embodiment()
    bfm = load_bfm(args.bfm, spec)
    clips = {c.name: c for c in _clips(args)}
    if args.clip not in clips:
        raise ConfigError(f"clip {args.clip!r} not found; available: {sorted(clips)}")
    result = train_residual(
        bfm, clips[args.clip], config, baseline=args.baseline,
        seed=args.seed, spec=spec, log_path=args.log,
    )
    save_residual(out, result, spec, metadata={"clip": args.clip, "seed": args.seed})
    print(json.dumps({
        "checkpoint": str(out), "arm": result.arm,
        "env_steps": result.env_steps, "steps_to_target": result.steps_to_target,
    }))
    return 0


def cmd_steer(args) -> int:
    import uvicorn

    from .service import create_app

    config = _load_section(args, "steer", SteerCliConfig())
    spec = default_embodiment()
    model = load_bfm(args.checkpoint, spec)
    clips = {c.name: c for c in _clips(args)}
    app = create_app(model, clips, spec, seed=args.seed)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    return 0


# -- parser -----------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planarbfm",
        description="Planar behavior-foundation-model pipeline: motions, "
        "proxy teacher, distillation, evaluation, latent analysis, residual "
        "adaptation, and live steering.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None,
                       help="TOML config (one table per stage)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=Path, default=None, help="output path")

    p = sub.add_parser("gen-motions", help="write the procedural clip set to --out DIR")
    common(p)
    p.set_defaults(func=cmd_gen_motions)

    p = sub.add_parser("train-proxy", help="PPO motion-imitation teacher -> checkpoint")
    common(p)
    p.add_argument("--motions", type=Path, default=None, help="clip dir (default: generated)")
    p.add_argument("--log", type=Path, default=None, help="NDJSON training log")
    p.set_defaults(func=cmd_train_proxy)

    p = sub.add_parser("distill", help="masked online DAgger -> BFM checkpoint")
    common(p)
    p.add_argument("--teacher", type=Path, required=True, help="proxy checkpoint")
    p.add_argument("--motions", type=Path, default=None)
    p.add_argument("--log", type=Path, default=None)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="metric report for a checkpoint over the clip set")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--mode", choices=("track", "teleop", "loco"), default="track")
    p.add_argument("--motions", type=Path, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("latent-project", help="collect latent traces and PCA-project to CSV")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True, help="BFM checkpoint")
    p.add_argument("--motions", type=Path, default=None)
    p.set_defaults(func=cmd_latent_project)

    p = sub.add_parser("residual", help="residual adapter (or from-scratch baseline) on one clip")
    common(p)
    p.add_argument("--bfm", type=Path, required=True, help="BFM checkpoint")
    p.add_argument("--clip", type=str, required=True, help="clip name to acquire")
    p.add_argument("--baseline", choices=("residual", "from_scratch"), default="residual")
    p.add_argument("--motions", type=Path, default=None)
    p.add_argument("--log", type=Path, default=None)
    p.set_defaults(func=cmd_residual)

    p = sub.add_parser("steer", help="serve the live steering WebSocket service")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True, help="BFM checkpoint")
    p.add_argument("--motions", type=Path, default=None)
    p.set_defaults(func=cmd_steer)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, MotionFormatError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
