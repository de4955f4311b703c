"""Benchmark the compiled world-step kernel against the numpy fallback.

Usage: python benchmarks/bench_world_step.py [--envs 128] [--steps 500]

The two backends execute identical IEEE arithmetic; this script reports their
throughput side by side and verifies the outputs stay bit-identical.
"""

import argparse
import time

import numpy as np

from currl import _world_core_py

try:
    from currl import _world_core
except ImportError:
    _world_core = None


def make_state(rng, n_envs, n_agents, n_balls, n_landmarks):
    E = n_agents + n_balls + n_landmarks
    return (rng.uniform(-2.5, 2.5, (n_envs, E, 2)),
            rng.normal(0, 1.0, (n_envs, n_agents, 2)))


def run_backend(backend, pos, vel, forces_seq, n_agents, n_balls, obstacles):
    B, _, _ = pos.shape
    collisions = np.zeros((B, n_agents), np.uint8)
    covered = np.zeros((B, pos.shape[1] - n_agents - n_balls), np.uint8)
    t0 = time.perf_counter()
    for forces in forces_seq:
        backend.step_batch(pos, vel, forces, n_agents, n_balls,
                           0.1, 0.25, 2.0, 0.15, 0.15, obstacles,
                           -3.0, 3.0, -3.0, 3.0, 0.2, 0, collisions, covered)
    return time.perf_counter() - t0


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--envs", type=int, default=128)
    parser.add_argument("--agents", type=int, default=4)
    parser.add_argument("--steps", type=int, default=500)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    obstacles = np.array([[0.2, 0.5, -1.0, 0.3]])
    forces_seq = [rng.normal(0, 5.0, (args.envs, args.agents, 2))
                  for _ in range(args.steps)]
    env_steps = args.envs * args.steps

    pos_py, vel_py = make_state(rng, args.envs, args.agents, 0, args.agents)
    pos_ref = pos_py.copy()
    vel_ref = vel_py.copy()

    t_py = run_backend(_world_core_py, pos_py, vel_py, forces_seq,
                       args.agents, 0, obstacles)
    print(f"python backend:  {env_steps / t_py:12.0f} env-steps/s "
          f"({t_py:.3f}s for {env_steps} steps)")

    if _world_core is None:
        print("cython backend:  not built (pip install -e . compiles it)")
        return

    t_cy = run_backend(_world_core, pos_ref, vel_ref, forces_seq,
                       args.agents, 0, obstacles)
    print(f"cython backend:  {env_steps / t_cy:12.0f} env-steps/s "
          f"({t_cy:.3f}s for {env_steps} steps)")
    print(f"speedup: {t_py / t_cy:.1f}x")
    same = np.array_equal(pos_py, pos_ref) and np.array_equal(vel_py, vel_ref)
    print(f"bit-identical trajectories: {same}")


if __name__ == "__main__":
    main()
