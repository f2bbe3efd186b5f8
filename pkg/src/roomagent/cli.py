"""Command-line entry points.

Subcommands: scene validate, task run, plan, train, sample, serve.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _backend(args):
    from .vlm import ScriptedBackend, HttpBackend, VlmBackendConfig

    if args.backend == "scripted":
        if not args.fixtures:
            raise SystemExit("--fixtures DIR is required with the scripted backend")
        return ScriptedBackend(fixtures_dir=args.fixtures)
    if args.backend == "rule":
        return None  # resolved later against the scene
    return HttpBackend(VlmBackendConfig(endpoint=args.endpoint or "", model=args.model))


def cmd_scene_validate(args) -> int:
    from .scene import SceneError, load_scene

    try:
        scene = load_scene(args.scene)
    except (SceneError, FileNotFoundError) as exc:
        print(f"invalid scene: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, FileNotFoundError) else 1
    parents = {o.id: o.parent_id for o in scene.objects if o.parent_id}
    print(f"scene ok: {len(scene.objects)} objects, "
          f"floor area {scene.floor_polygon().area:.1f} m^2")
    for child, parent in sorted(parents.items()):
        print(f"  {child} on {parent}")
    return 0


def cmd_task_run(args) -> int:
    from .episode import EpisodeConfig, run_episode
    from .motion.executor import MotionExecutor
    from .motion.frames import Pose2
    from .scene import load_scene
    from .tasks import load_task

    if not Path(args.scene).exists():
        print(f"scene not found: {args.scene}", file=sys.stderr)
        return 2
    if not Path(args.task).exists():
        print(f"task not found: {args.task}", file=sys.stderr)
        return 2
    backend = _backend(args)
    if backend is None:
        from .scripted import RuleAnswerer, plan_from_task

        scene = load_scene(args.scene)
        task = load_task(args.task)
        backend = RuleAnswerer(scene, plan=plan_from_task(task, scene))
    executor = (
        MotionExecutor.load(args.weights) if args.weights
        else MotionExecutor.create(seed=args.seed)
    )
    pose = Pose2(*(float(v) for v in args.start.split(","))) if args.start else Pose2()
    config = EpisodeConfig(seed=args.seed, initial_pose=pose,
                           max_frames=args.max_frames)
    result = run_episode(args.scene, args.task, backend, seed=args.seed,
                         trace_path=args.trace, executor=executor, config=config)
    print(result.report())
    print(f"frames: {result.frames}  success: {result.success}")
    return 0 if result.success else 1


def cmd_plan(args) -> int:
    from .navigation import RepulsionParams, build_map, dump_weights_pgm, plan_world
    from .scene import load_scene

    if not Path(args.scene).exists():
        print(f"scene not found: {args.scene}", file=sys.stderr)
        return 2
    scene = load_scene(args.scene)
    omap = build_map(scene, resolution=args.resolution)
    params = RepulsionParams(alpha=args.alpha, beta=args.beta)
    start = tuple(float(v) for v in getattr(args, "from").split(","))
    goal = tuple(float(v) for v in args.to.split(","))
    plan = plan_world(omap, params, start, goal)
    print(f"cost {plan.cost:.3f}, {len(plan.dense)} cells, "
          f"{len(plan.waypoints)} waypoints:")
    for x, y in plan.waypoints:
        print(f"  {x:.3f},{y:.3f}")
    if args.pgm:
        Path(args.pgm).write_bytes(dump_weights_pgm(omap, params))
        print(f"weight grid written to {args.pgm}")
    return 0


def cmd_train(args) -> int:
    from .motion.diffusion import NoiseSchedule
    from .motion.executor import MotionExecutor
    from .motion.synthetic import build_dataset
    from .motion.training import (
        TrainConfig, train_denoiser, train_vae, write_loss_csv,
    )
    from .motion.vae import ModelConfig

    from .motion.training import Normalizer

    if args.paper_scale:
        cfg = ModelConfig.paper_scale()
    else:
        cfg = ModelConfig(denoiser_width=128, denoiser_layers=3,
                          denoiser_heads=4, denoiser_ff=512)
    executor = MotionExecutor.create(cfg, seed=args.seed)
    data = build_dataset(args.episodes, seed=args.seed)
    print(f"dataset: {len(data)} windows from {args.episodes} episodes")
    executor.normalizer = Normalizer.fit(data)
    data = executor.normalizer.normalize_samples(data)
    tc = TrainConfig(
        vae_steps=args.steps, denoiser_steps=args.denoiser_steps or args.steps,
        seed=args.seed, batch_size=args.batch, warmup_steps=args.warmup, lr=args.lr,
    )
    vae_losses = train_vae(executor.vae, data, tc, log_every=args.log_every)
    sample_latents = np.concatenate([
        executor.vae.encode(s.clip)[0].tokens for s in data[::4]
    ])
    executor.latent_scale = float(max(sample_latents.std(), 1e-3))
    print(f"latent scale: {executor.latent_scale:.4f}")
    den_losses = train_denoiser(
        executor.denoiser, executor.vae, executor.control_encoder, data,
        executor.schedule, tc, log_every=args.log_every,
        latent_scale=executor.latent_scale,
    )
    executor.save(args.out)
    if args.loss_csv:
        write_loss_csv(args.loss_csv, vae_losses + den_losses, "vae+denoiser")
    print(f"weights written to {args.out}")
    return 0


def cmd_sample(args) -> int:
    from .commands import Command
    from .motion.diffusion import SamplerConfig
    from .motion.executor import MotionExecutor

    executor = MotionExecutor.load(args.weights)
    rng = np.random.default_rng(args.seed)
    command = Command(
        caption=args.caption,
        location=tuple(float(v) for v in args.location.split(",")) if args.location else None,
        facing=args.facing,
        speed=args.speed,
    )
    sampler = SamplerConfig(ddim_steps=args.ddim_steps, guidance_scale=args.guidance)
    prefix = executor.stance_prefix()
    clip = executor.rollout(command, prefix, prefix, rng=rng, sampler=sampler)
    out = Path(args.out)
    np.save(out, clip.frames)
    print(f"sampled {clip.n_frames}x{clip.dim} frames -> {out}")
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    backend = _backend(args)
    serve(
        port=args.port, scene_path=args.scene, backend=backend,
        weights=args.weights, seed=args.seed,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roomagent")
    sub = p.add_subparsers(dest="command", required=True)

    def add_backend_flags(sp):
        sp.add_argument("--backend", choices=["scripted", "http", "rule"], default="rule")
        sp.add_argument("--fixtures", help="scripted backend fixture directory")
        sp.add_argument("--endpoint", help="chat-completion endpoint URL")
        sp.add_argument("--model", default="gpt-4o")

    scene = sub.add_parser("scene", help="scene file utilities")
    scene_sub = scene.add_subparsers(dest="scene_command", required=True)
    sv = scene_sub.add_parser("validate", help="parse and validate a scene file")
    sv.add_argument("--scene", required=True)
    sv.set_defaults(func=cmd_scene_validate)

    task = sub.add_parser("task", help="task execution")
    task_sub = task.add_subparsers(dest="task_command", required=True)
    tr = task_sub.add_parser("run", help="run one episode")
    tr.add_argument("--scene", required=True)
    tr.add_argument("--task", required=True)
    add_backend_flags(tr)
    tr.add_argument("--weights", help="motion model checkpoint")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--trace", help="trace output path")
    tr.add_argument("--start", help="initial pose x,y,facing")
    tr.add_argument("--max-frames", type=int, default=1600)
    tr.set_defaults(func=cmd_task_run)

    plan = sub.add_parser("plan", help="grid path planning")
    plan.add_argument("--scene", required=True)
    plan.add_argument("--from", required=True, help="start x,y")
    plan.add_argument("--to", required=True, help="goal x,y")
    plan.add_argument("--alpha", type=float, default=0.5)
    plan.add_argument("--beta", type=float, default=0.5)
    plan.add_argument("--resolution", type=int, default=512)
    plan.add_argument("--pgm", help="dump the transformed weight grid as PGM")
    plan.set_defaults(func=cmd_plan)

    train = sub.add_parser("train", help="train the motion model")
    train.add_argument("--out", required=True)
    train.add_argument("--steps", type=int, default=3000)
    train.add_argument("--denoiser-steps", type=int, default=0,
                       help="defaults to --steps")
    train.add_argument("--episodes", type=int, default=200)
    train.add_argument("--batch", type=int, default=16)
    train.add_argument("--warmup", type=int, default=2000)
    train.add_argument("--lr", type=float, default=5e-4)
    train.add_argument("--seed", type=int, default=1234)
    train.add_argument("--paper-scale", action="store_true")
    train.add_argument("--loss-csv")
    train.add_argument("--log-every", type=int, default=200)
    train.set_defaults(func=cmd_train)

    sample = sub.add_parser("sample", help="sample motion from a checkpoint")
    sample.add_argument("--weights", required=True)
    sample.add_argument("--caption", default="A person is walking.")
    sample.add_argument("--location")
    sample.add_argument("--facing", type=float)
    sample.add_argument("--speed", type=float)
    sample.add_argument("--seed", type=int, default=0)
    sample.add_argument("--ddim-steps", type=int, default=5)
    sample.add_argument("--guidance", type=float, default=7.5)
    sample.add_argument("--out", default="sample.npy")
    sample.set_defaults(func=cmd_sample)

    serve = sub.add_parser("serve", help="live-steering service")
    serve.add_argument("--port", type=int, default=8734)
    serve.add_argument("--scene", required=True)
    add_backend_flags(serve)
    serve.add_argument("--weights")
    serve.add_argument("--seed", type=int, default=0)
    serve.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
