"""Command-line entry points: train, eval, oracle, inspect-queue."""

from __future__ import annotations

import argparse
import sys

import numpy as np


def _add_common(parser) -> None:
    parser.add_argument("--config", help="path to a key=value config file")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--mode", help="override the run mode")
    parser.add_argument("--out", help="override the output directory")


def _build_config(args, extra: dict | None = None):
    from .config import RunConfig, load_config

    overrides = dict(extra or {})
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "mode", None):
        overrides["mode"] = args.mode
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    if args.config:
        return load_config(args.config, overrides)
    return RunConfig(overrides)


def cmd_train(args) -> int:
    from .harness import run

    cfg = _build_config(args)
    summary = run(cfg, resume_dir=args.resume)
    print(f"finished: {summary['iterations']} iterations, "
          f"{summary['env_steps']} env steps, "
          f"final eval {summary.get('final_eval', float('nan')):.4f}")
    print(f"outputs in {summary['out_dir']}")
    return 0


def cmd_eval(args) -> int:
    from . import nets, ppo
    from .config import RunConfig, load_config
    from .tasks import sample_uniform
    from .world import VecWorld

    cfg = _build_config(args) if args.config else RunConfig({})
    spec = cfg.scenario_spec()
    net, _, _, _ = nets.load_policy(args.checkpoint)
    n = args.n or cfg.n_max
    rng = np.random.default_rng(args.seed if args.seed is not None else cfg.seed)
    score = ppo.evaluate(net, n, spec, args.episodes, rng,
                         cfg.world_config(), cfg.ppo_config())
    print(f"eval coverage over {args.episodes} episodes at n={n}: {score:.4f}")
    if args.dump_traj:
        from .nets import layout_for
        from .world import dump_trajectory

        task = sample_uniform(n, spec, 1, rng)[0]
        world = VecWorld(spec, cfg.world_config(), [task])
        layout = layout_for(spec, n)
        records = []
        for t in range(cfg.ppo_config().effective_horizon(spec)):
            obs = world.observe().astype(np.float32).reshape(n, -1)
            logits, _ = net.forward(obs, layout)
            actions = np.argmax(logits, axis=1).reshape(1, n)
            shared, _, _, coverage = world.step(actions)
            records.append((t, world.pos[0], float(shared[0]), float(coverage[0])))
        dump_trajectory(args.dump_traj, records)
        print(f"trajectory written to {args.dump_traj}")
    return 0


def cmd_oracle(args) -> int:
    from .harness import run_synthetic_oracle

    cfg = _build_config(args, {"mode": "synthetic_oracle"})
    out = run_synthetic_oracle(cfg)
    print(f"oracle expansion: {out['iterations']} iterations, "
          f"final probe coverage {out['final_coverage']:.4f}")
    print(f"trace in {out['out_dir']}/oracle_trace.csv")
    return 0


def cmd_inspect_queue(args) -> int:
    from .curriculum import diversity_scores, load_particle_set

    ps = load_particle_set(args.snapshot, capacity=10 ** 9)
    values = np.array(ps.values) if len(ps) else np.zeros(0)
    print(f"{args.snapshot}: {len(ps)} tasks")
    if not len(ps):
        return 0
    scenario = ps.tasks[0].scenario.value
    counts = {}
    for t in ps.tasks:
        counts[t.n] = counts.get(t.n, 0) + 1
    print(f"scenario {scenario}; n counts {counts}")
    print(f"values: min {values.min():.3f} mean {values.mean():.3f} "
          f"max {values.max():.3f}")
    edges = np.linspace(0.0, 1.0, 11)
    hist, _ = np.histogram(values, bins=edges)
    bars = " ".join(f"{lo:.1f}:{c}" for lo, c in zip(edges[:-1], hist))
    print(f"value histogram {bars}")
    scores = diversity_scores(ps.phi_matrix(), k=5)
    print(f"diversity (mean top-5 nn distance): min {scores.min():.3f} "
          f"mean {scores.mean():.3f} max {scores.max():.3f}")
    if args.top:
        order = np.argsort(scores)[::-1][:args.top]
        for i in order:
            print(f"  n={ps.tasks[i].n} value={values[i]:.3f} "
                  f"diversity={scores[i]:.3f}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="currl",
        description="curriculum-driven multi-agent particle-world training")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run training per a config file")
    _add_common(p_train)
    p_train.add_argument("--resume", help="run directory to resume from")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a policy checkpoint")
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--episodes", type=int, default=200)
    p_eval.add_argument("--n", type=int, default=0)
    p_eval.add_argument("--dump-traj", dest="dump_traj",
                        help="write one greedy episode as line-delimited records")
    p_eval.set_defaults(fn=cmd_eval)

    p_oracle = sub.add_parser("oracle",
                              help="run the curriculum engine against the "
                                   "synthetic frontier oracle (no RL)")
    _add_common(p_oracle)
    p_oracle.set_defaults(fn=cmd_oracle)

    p_inspect = sub.add_parser("inspect-queue",
                               help="summarize a particle-set snapshot")
    p_inspect.add_argument("--snapshot", required=True)
    p_inspect.add_argument("--top", type=int, default=0,
                           help="also list the N most diverse tasks")
    p_inspect.set_defaults(fn=cmd_inspect_queue)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
