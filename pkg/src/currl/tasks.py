"""Task parameterization, feasibility checking, and task generators.

A task is a full initial configuration of one episode: the number of agents
``n`` plus a flat vector ``phi`` of 2-D entity positions (agents, then balls
for the pushing scenario, then landmarks).  Generators produce easy clustered
tasks and uniform evaluation tasks by rejection sampling against the
scenario's feasibility constraints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import GenerationError


class Scenario(Enum):
    SIMPLE_SPREAD = "simple_spread"
    PUSH_BALL = "push_ball"
    HARD_SPREAD = "hard_spread"


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle, closed on all sides."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def contains(self, p) -> bool:
        return self.x_min <= p[0] <= self.x_max and self.y_min <= p[1] <= self.y_max

    def distance(self, p) -> float:
        """Euclidean distance from a point to the rectangle (0 inside)."""
        dx = max(self.x_min - p[0], 0.0, p[0] - self.x_max)
        dy = max(self.y_min - p[1], 0.0, p[1] - self.y_max)
        return float(np.hypot(dx, dy))

    @property
    def center(self):
        return np.array([(self.x_min + self.x_max) / 2.0,
                         (self.y_min + self.y_max) / 2.0])


@dataclass
class ScenarioSpec:
    """Static geometry and generation parameters of one scenario."""

    scenario: Scenario
    world_half_extent: tuple[float, float]
    entity_radius: float
    horizon: int
    easy_side_length_table: dict[int, float]
    obstacle_set: list[Rect] = field(default_factory=list)
    landmark_region: Rect | None = None
    eval_agent_region: Rect | None = None
    r_easy_factor: float = 4.0
    rejection_budget: int = 100

    def __post_init__(self):
        hx, hy = self.world_half_extent
        for obs in self.obstacle_set:
            if not (-hx <= obs.x_min <= obs.x_max <= hx
                    and -hy <= obs.y_min <= obs.y_max <= hy):
                raise ValueError(f"obstacle {obs} extends outside the world box")

    @property
    def bounds(self) -> Rect:
        hx, hy = self.world_half_extent
        return Rect(-hx, hx, -hy, hy)

    @property
    def r_easy(self) -> float:
        return self.entity_radius * self.r_easy_factor

    def n_balls(self, n: int) -> int:
        return n if self.scenario is Scenario.PUSH_BALL else 0

    def entity_count(self, n: int) -> int:
        return n + self.n_balls(n) + n  # agents + balls + landmarks


@dataclass
class TaskParams:
    """One task instance: agent count and the flat position vector."""

    scenario: Scenario
    n: int
    phi: np.ndarray

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)

    def positions(self) -> np.ndarray:
        return self.phi.reshape(-1, 2)

    def agent_positions(self) -> np.ndarray:
        return self.positions()[: self.n]

    def ball_positions(self) -> np.ndarray:
        nb = self.n if self.scenario is Scenario.PUSH_BALL else 0
        return self.positions()[self.n: self.n + nb]

    def landmark_positions(self) -> np.ndarray:
        nb = self.n if self.scenario is Scenario.PUSH_BALL else 0
        return self.positions()[self.n + nb:]


def feasibility_check(task: TaskParams, spec: ScenarioSpec) -> bool:
    """Whether ``task`` is a legal initial configuration for ``spec``.

    Raises ValueError for a malformed ``phi`` length; returns False for
    out-of-bounds positions, entity centers within ``entity_radius`` of an
    obstacle, or scenario placement rules (hard-spread landmarks outside the
    allowed landmark region).
    """
    expected = spec.entity_count(task.n) * 2
    if task.phi.shape != (expected,):
        raise ValueError(
            f"phi has shape {task.phi.shape}, expected ({expected},) for "
            f"{spec.scenario.value} with n={task.n}")
    pts = task.positions()
    hx, hy = spec.world_half_extent
    x = pts[:, 0]
    y = pts[:, 1]
    if x.min() < -hx or x.max() > hx or y.min() < -hy or y.max() > hy:
        return False
    r2 = spec.entity_radius * spec.entity_radius
    for obs in spec.obstacle_set:
        dx = np.maximum(np.maximum(obs.x_min - x, x - obs.x_max), 0.0)
        dy = np.maximum(np.maximum(obs.y_min - y, y - obs.y_max), 0.0)
        if np.any(dx * dx + dy * dy < r2):
            return False
    if spec.landmark_region is not None:
        lm = task.landmark_positions()
        reg = spec.landmark_region
        if (lm[:, 0].min() < reg.x_min or lm[:, 0].max() > reg.x_max
                or lm[:, 1].min() < reg.y_min or lm[:, 1].max() > reg.y_max):
            return False
    return True


def _easy_square(spec: ScenarioSpec, s: float) -> Rect:
    """The s-by-s spawn square for easy tasks.

    Centered at the origin, except when landmarks are restricted to a
    sub-region (hard-spread): a square at the origin could never hold a
    feasible landmark there, so the square is centered inside that region.
    """
    c = spec.landmark_region.center if spec.landmark_region is not None else np.zeros(2)
    return Rect(c[0] - s / 2, c[0] + s / 2, c[1] - s / 2, c[1] + s / 2)


def _point_ok(p, spec: ScenarioSpec) -> bool:
    if not spec.bounds.contains(p):
        return False
    return all(obs.distance(p) >= spec.entity_radius for obs in spec.obstacle_set)


def _draw_in_rect(rect: Rect, spec: ScenarioSpec, rng, budget: int) -> np.ndarray | None:
    for _ in range(budget):
        p = rng.uniform([rect.x_min, rect.y_min], [rect.x_max, rect.y_max])
        if _point_ok(p, spec):
            return p
    return None


def _draw_near(center, radius: float, inside: Rect, spec: ScenarioSpec, rng,
               budget: int) -> np.ndarray | None:
    """Uniform draw from the disk around ``center`` intersected with ``inside``."""
    for _ in range(budget):
        r = radius * np.sqrt(rng.uniform())
        theta = rng.uniform(0.0, 2.0 * np.pi)
        p = center + r * np.array([np.cos(theta), np.sin(theta)])
        if inside.contains(p) and _point_ok(p, spec):
            return p
    return None


def get_easy(n: int, spec: ScenarioSpec, count: int, rng) -> list[TaskParams]:
    """Generate ``count`` feasible clustered tasks for the easiest regime.

    All entities lie within the scenario's easy square of side
    ``easy_side_length_table[n]``; every landmark gets one agent (and, for
    push-ball, one ball) within ``r_easy`` of it.
    """
    if n not in spec.easy_side_length_table:
        raise ValueError(f"no easy side length configured for n={n}")
    s = spec.easy_side_length_table[n]
    square = _easy_square(spec, s)
    budget = spec.rejection_budget
    out = []
    for _ in range(count):
        task = None
        for _ in range(budget):
            landmarks = []
            for _ in range(n):
                p = _draw_in_rect(square, spec, rng, budget)
                if p is None:
                    break
                if spec.landmark_region is not None and not spec.landmark_region.contains(p):
                    break
                landmarks.append(p)
            if len(landmarks) < n:
                continue
            agents = []
            for lm in landmarks:
                p = _draw_near(lm, spec.r_easy, square, spec, rng, budget)
                if p is None:
                    break
                agents.append(p)
            if len(agents) < n:
                continue
            balls = []
            if spec.scenario is Scenario.PUSH_BALL:
                for lm in landmarks:
                    p = _draw_near(lm, spec.r_easy, square, spec, rng, budget)
                    if p is None:
                        break
                    balls.append(p)
                if len(balls) < n:
                    continue
            phi = np.concatenate([np.ravel(agents), np.ravel(balls) if balls else [],
                                  np.ravel(landmarks)]).astype(np.float64)
            cand = TaskParams(spec.scenario, n, phi)
            if feasibility_check(cand, spec):
                task = cand
                break
        if task is None:
            raise GenerationError(
                f"could not place an easy task for {spec.scenario.value} "
                f"(n={n}, side={s}) within {budget} attempts")
        out.append(task)
    return out


def sample_uniform(n: int, spec: ScenarioSpec, count: int, rng) -> list[TaskParams]:
    """Draw ``count`` tasks uniformly over the feasible configuration space.

    Used for evaluation and for the uniform-sampling baseline.  Agents are
    restricted to ``eval_agent_region`` when the scenario defines one (the
    hard-spread evaluation protocol spawns agents in the far room).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    agent_rect = spec.eval_agent_region or spec.bounds
    land_rect = spec.landmark_region or spec.bounds
    budget = spec.rejection_budget
    out = []
    for _ in range(count):
        task = None
        for _ in range(budget):
            agents = [_draw_in_rect(agent_rect, spec, rng, budget) for _ in range(n)]
            balls = ([_draw_in_rect(spec.bounds, spec, rng, budget) for _ in range(n)]
                     if spec.scenario is Scenario.PUSH_BALL else [])
            landmarks = [_draw_in_rect(land_rect, spec, rng, budget) for _ in range(n)]
            if any(p is None for p in agents + balls + landmarks):
                continue
            phi = np.concatenate([np.ravel(agents), np.ravel(balls) if balls else [],
                                  np.ravel(landmarks)]).astype(np.float64)
            cand = TaskParams(spec.scenario, n, phi)
            if feasibility_check(cand, spec):
                task = cand
                break
        if task is None:
            raise GenerationError(
                f"could not sample a uniform task for {spec.scenario.value} "
                f"(n={n}) within {budget} attempts")
        out.append(task)
    return out


def _hard_spread_obstacles(wall_x: float, wall_half_thickness: float,
                           door_half: float, hy: float) -> list[Rect]:
    walls = []
    for wx in (-wall_x, wall_x):
        walls.append(Rect(wx - wall_half_thickness, wx + wall_half_thickness, -hy, -door_half))
        walls.append(Rect(wx - wall_half_thickness, wx + wall_half_thickness, door_half, hy))
    return walls


def default_scenario_spec(scenario: Scenario, **overrides) -> ScenarioSpec:
    """Documented default geometry for each scenario."""
    if scenario is Scenario.SIMPLE_SPREAD:
        kw = dict(
            scenario=scenario,
            world_half_extent=(3.0, 3.0),
            entity_radius=0.15,
            horizon=70,
            easy_side_length_table={2: 0.3, 4: 0.6, 8: 2.0},
        )
    elif scenario is Scenario.PUSH_BALL:
        kw = dict(
            scenario=scenario,
            world_half_extent=(2.0, 2.0),
            entity_radius=0.15,
            horizon=120,
            easy_side_length_table={2: 0.8, 4: 1.6},
        )
    elif scenario is Scenario.HARD_SPREAD:
        hy = 1.0
        wall_x = overrides.pop("wall_x", 5.0 / 3.0)
        wall_half = overrides.pop("wall_half_thickness", 0.1)
        door_half = overrides.pop("door_half", 0.3)
        landmark_min_x = overrides.pop("landmark_min_x", 2.0)
        eval_agent_max_x = overrides.pop("eval_agent_max_x", -2.0)
        kw = dict(
            scenario=scenario,
            world_half_extent=(5.0, hy),
            entity_radius=0.15,
            horizon=70,
            easy_side_length_table={4: 0.6, 8: 1.8},
            obstacle_set=_hard_spread_obstacles(wall_x, wall_half, door_half, hy),
            landmark_region=Rect(landmark_min_x, 5.0, -hy, hy),
            eval_agent_region=Rect(-5.0, eval_agent_max_x, -hy, hy),
        )
    else:
        raise ValueError(f"unknown scenario {scenario}")
    kw.update(overrides)
    return ScenarioSpec(**kw)
