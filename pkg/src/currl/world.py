"""Deterministic multi-agent particle physics with sparse team rewards.

Each scenario is an episodic MDP over point agents in a bounded 2-D box:
semi-implicit Euler integration with damping, position-projection collision
resolution, and landmark-coverage rewards.  The batched step kernel lives in
a compiled extension with a pure-numpy fallback selected at import time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tasks import Scenario, ScenarioSpec, TaskParams, feasibility_check

try:
    from . import _world_core as _core
except ImportError:  # extension not built
    from . import _world_core_py as _core

from . import _world_core_py


def active_backend() -> str:
    """Name of the step-kernel backend in use ('cython' or 'python')."""
    return _core.BACKEND_NAME


# discrete action set: idle, +x, -x, +y, -y
N_ACTIONS = 5
_ACTION_DIRS = np.array(
    [[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


@dataclass
class WorldConfig:
    """Integration and contact constants; all overridable via the run config."""

    dt: float = 0.1
    damping: float = 0.25
    max_speed: float = 2.0
    force_scale: float = 5.0
    agent_radius: float = 0.15
    ball_radius: float = 0.15
    landmark_radius: float = 0.05
    action_space: str = "discrete"  # or "force"

    def cover_radius(self, scenario: Scenario) -> float:
        coverer = self.ball_radius if scenario is Scenario.PUSH_BALL else self.agent_radius
        return coverer + self.landmark_radius


@dataclass
class WorldState:
    positions: np.ndarray  # (E, 2)
    velocities: np.ndarray  # (A, 2)
    t: int
    task: TaskParams


@dataclass
class StepResult:
    next_state: WorldState
    shared_reward: float
    per_agent_collision_penalty: np.ndarray  # (A,), 0 or -1 each
    done: bool
    coverage: float


def obs_dim(spec: ScenarioSpec, n: int) -> int:
    nb = spec.n_balls(n)
    return 4 + 2 * (n - 1) + 2 * nb + 2 * n


def obs_layout(spec: ScenarioSpec, n: int) -> list[tuple[str, int]]:
    """Entity-set blocks following the 4 self features: (name, count)."""
    groups = [("others", n - 1)]
    if spec.n_balls(n):
        groups.append(("balls", n))
    groups.append(("landmarks", n))
    return groups


class VecWorld:
    """A batch of environments sharing one scenario and agent count.

    All episodes step in lockstep through the compiled kernel; used by the
    trainer.  The single-environment contract ops below wrap a batch of one.
    """

    def __init__(self, spec: ScenarioSpec, config: WorldConfig,
                 tasks: list[TaskParams], check_feasibility: bool = True):
        if not tasks:
            raise ValueError("empty task batch")
        n = tasks[0].n
        if any(t.n != n or t.scenario is not spec.scenario for t in tasks):
            raise ValueError("all tasks in a batch must share scenario and n")
        if check_feasibility:
            for t in tasks:
                if not feasibility_check(t, spec):
                    raise ValueError("infeasible task passed to reset")
        self.spec = spec
        self.config = config
        self.tasks = tasks
        self.n = n
        self.n_balls = spec.n_balls(n)
        self.n_landmarks = n
        self.B = len(tasks)
        self.pos = np.stack([t.positions() for t in tasks]).astype(np.float64)
        self.vel = np.zeros((self.B, n, 2), dtype=np.float64)
        self.t = 0
        if spec.obstacle_set:
            self._obstacles = np.array(
                [[o.x_min, o.x_max, o.y_min, o.y_max] for o in spec.obstacle_set])
        else:
            self._obstacles = np.zeros((0, 4), dtype=np.float64)
        self._collisions = np.zeros((self.B, n), dtype=np.uint8)
        self._covered = np.zeros((self.B, self.n_landmarks), dtype=np.uint8)
        self._others_idx = np.array(
            [[j for j in range(n) if j != i] for i in range(n)], dtype=np.intp)

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    def actions_to_forces(self, actions: np.ndarray) -> np.ndarray:
        actions = np.asarray(actions)
        if self.config.action_space == "discrete" and actions.ndim == 2:
            return _ACTION_DIRS[actions] * self.config.force_scale
        if actions.ndim == 3 and actions.shape[-1] == 2:
            return np.asarray(actions, dtype=np.float64)
        raise ValueError(f"bad action array of shape {actions.shape}")

    def step(self, actions: np.ndarray):
        """Step all environments; returns (shared, penalties, done, coverage)."""
        if self.t >= self.horizon:
            raise RuntimeError("step() called on a finished episode batch")
        forces = self.actions_to_forces(actions)
        cfg = self.config
        hx, hy = self.spec.world_half_extent
        _core.step_batch(
            self.pos, self.vel, forces, self.n, self.n_balls,
            cfg.dt, cfg.damping, cfg.max_speed,
            cfg.agent_radius, cfg.ball_radius,
            self._obstacles,
            -hx, hx, -hy, hy,
            cfg.cover_radius(self.spec.scenario),
            1 if self.spec.scenario is Scenario.PUSH_BALL else 0,
            self._collisions, self._covered)
        self.t += 1
        covered_count = self._covered.sum(axis=1)
        coverage = covered_count / self.n_landmarks
        all_covered = covered_count == self.n_landmarks
        if self.spec.scenario is Scenario.PUSH_BALL:
            shared = (2.0 / self.n) * covered_count + np.where(all_covered, 1.0, 0.0)
        else:
            shared = np.where(all_covered, 4.0, 0.0)
        penalties = -1.0 * self._collisions
        done = self.t >= self.horizon
        return shared, penalties, done, coverage

    def observe(self) -> np.ndarray:
        """Observations for every agent in every environment: (B, A, D)."""
        A = self.n
        agents = self.pos[:, :A]
        blocks = [agents, self.vel]
        rel = self.pos[:, None, :, :] - agents[:, :, None, :]  # (B, A, E, 2)
        others = rel[:, np.arange(A)[:, None], self._others_idx]
        blocks.append(others.reshape(self.B, A, -1))
        if self.n_balls:
            blocks.append(rel[:, :, A:A + self.n_balls].reshape(self.B, A, -1))
        blocks.append(rel[:, :, A + self.n_balls:].reshape(self.B, A, -1))
        return np.concatenate(blocks, axis=2)

    def coverage_rate(self) -> np.ndarray:
        """Coverage from current positions without advancing time."""
        cover = self.config.cover_radius(self.spec.scenario)
        if self.spec.scenario is Scenario.PUSH_BALL:
            coverers = self.pos[:, self.n:self.n + self.n_balls]
        else:
            coverers = self.pos[:, :self.n]
        landmarks = self.pos[:, self.n + self.n_balls:]
        d = landmarks[:, :, None, :] - coverers[:, None, :, :]
        dist2 = (d * d).sum(axis=3)
        covered = (dist2 < cover * cover).any(axis=2)
        return covered.sum(axis=1) / self.n_landmarks


def reset(task: TaskParams, spec: ScenarioSpec, config: WorldConfig | None = None) -> WorldState:
    """Initial state for a task: positions from phi, zero velocities, t=0."""
    config = config or WorldConfig()
    if not feasibility_check(task, spec):
        raise ValueError("reset() requires a feasible task")
    return WorldState(positions=task.positions().copy(),
                      velocities=np.zeros((task.n, 2)), t=0, task=task)


def step(state: WorldState, joint_actions, spec: ScenarioSpec,
         config: WorldConfig | None = None) -> StepResult:
    """Advance a single environment one step (functional, state is copied)."""
    config = config or WorldConfig()
    if state.t >= spec.horizon:
        raise RuntimeError("step() called after the episode finished")
    world = VecWorld(spec, config, [state.task], check_feasibility=False)
    world.pos[0] = state.positions
    world.vel[0] = state.velocities
    world.t = state.t
    actions = np.asarray(joint_actions)
    shared, penalties, done, coverage = world.step(actions[None, ...])
    next_state = WorldState(positions=world.pos[0].copy(),
                            velocities=world.vel[0].copy(),
                            t=world.t, task=state.task)
    return StepResult(next_state=next_state, shared_reward=float(shared[0]),
                      per_agent_collision_penalty=penalties[0].copy(),
                      done=bool(done), coverage=float(coverage[0]))


def observe(state: WorldState, agent_index: int, spec: ScenarioSpec) -> np.ndarray:
    """Observation vector for one agent: own pos/vel then relative entities."""
    n = state.task.n
    if not 0 <= agent_index < n:
        raise IndexError(f"agent index {agent_index} out of range for n={n}")
    nb = spec.n_balls(n)
    pos = state.positions
    own = pos[agent_index]
    parts = [own, state.velocities[agent_index]]
    for j in range(n):
        if j != agent_index:
            parts.append(pos[j] - own)
    for b in range(n, n + nb):
        parts.append(pos[b] - own)
    for m in range(n + nb, pos.shape[0]):
        parts.append(pos[m] - own)
    return np.concatenate(parts)


def coverage_rate(state: WorldState, spec: ScenarioSpec,
                  config: WorldConfig | None = None) -> float:
    config = config or WorldConfig()
    world = VecWorld(spec, config, [state.task], check_feasibility=False)
    world.pos[0] = state.positions
    return float(world.coverage_rate()[0])


def dump_trajectory(path, records) -> None:
    """Write line-delimited trajectory records for offline rendering.

    Each record is (t, positions, reward, coverage); one JSON object per line.
    """
    import json

    with open(path, "w") as fh:
        for t, positions, reward, coverage in records:
            fh.write(json.dumps({
                "t": int(t),
                "positions": np.asarray(positions).round(6).tolist(),
                "reward": float(reward),
                "coverage": float(coverage),
            }) + "\n")
