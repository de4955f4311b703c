"""Curriculum state machine over particle task sets.

Maintains bounded, diversity-pruned queues of active and solved tasks per
agent-count level, quantizes value estimates into unsolved/active/solved,
expands the task frontier by kernel-repelled noisy candidates from newly
solved seeds, composes mixed training batches across two levels during a
progression, and provides a variational diagnostic of how far the current
task distribution is from uniform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import ndtr

from .errors import CurriculumExhausted
from .kernels import KernelConfig, svgd_simplified_update
from .tasks import TaskParams

# instrumentation: incremented on every ParticleSet construction, so tests can
# assert curriculum-free modes never build one
_particle_sets_created = 0


def particle_sets_created() -> int:
    return _particle_sets_created


class TaskStatus(Enum):
    UNSOLVED = "unsolved"
    ACTIVE = "active"
    SOLVED = "solved"


@dataclass(frozen=True)
class QuantizationThresholds:
    sigma_min: float = 0.1
    sigma_max: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.sigma_min < self.sigma_max < 1.0:
            raise ValueError("need 0 < sigma_min < sigma_max < 1")


def quantize(value: float, th: QuantizationThresholds) -> TaskStatus:
    """Solved above sigma_max (strict), active in [sigma_min, sigma_max]."""
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"value {value} outside [0, 1]")
    if value > th.sigma_max:
        return TaskStatus.SOLVED
    if value >= th.sigma_min:
        return TaskStatus.ACTIVE
    return TaskStatus.UNSOLVED


@dataclass
class ExplorationConfig:
    epsilon: float = 0.6      # kernel-gradient step magnitude
    delta: float = 0.6        # uniform noise half-width, per coordinate
    b_exp: int = 150          # exploration candidates per round
    max_attempts: int = 100   # feasibility re-draws per candidate
    rejection: bool = True    # re-draw infeasible candidates with fresh noise

    def __post_init__(self):
        if self.epsilon < 0 or self.delta < 0 or self.b_exp < 1:
            raise ValueError("epsilon, delta must be >= 0 and b_exp >= 1")


class ParticleSet:
    """Bounded task store with cached values and diversity-based pruning."""

    def __init__(self, capacity: int, diversity_k: int = 5):
        global _particle_sets_created
        if capacity < 1 or diversity_k < 1:
            raise ValueError("capacity and diversity_k must be positive")
        self.capacity = capacity
        self.diversity_k = diversity_k
        self.tasks: list[TaskParams] = []
        self.values: list[float] = []
        self._index: dict[int, int] = {}
        _particle_sets_created += 1

    def __len__(self) -> int:
        return len(self.tasks)

    def __contains__(self, task: TaskParams) -> bool:
        return id(task) in self._index

    def position(self, task: TaskParams) -> int:
        return self._index[id(task)]

    def add(self, task: TaskParams, value: float) -> None:
        if id(task) in self._index:
            raise ValueError("task already stored in this set")
        self._index[id(task)] = len(self.tasks)
        self.tasks.append(task)
        self.values.append(float(value))

    def set_value(self, task: TaskParams, value: float) -> None:
        self.values[self.position(task)] = float(value)

    def value_of(self, task: TaskParams) -> float:
        return self.values[self.position(task)]

    def remove(self, task: TaskParams) -> float:
        value = self.value_of(task)
        self.remove_many([task])
        return value

    def remove_many(self, to_remove: list[TaskParams]) -> None:
        """Remove a batch of members in one rebuild (preserves insertion order)."""
        drop = {id(t) for t in to_remove}
        for t in to_remove:
            if id(t) not in self._index:
                raise KeyError("task not stored in this set")
        keep = [(t, v) for t, v in zip(self.tasks, self.values) if id(t) not in drop]
        self.tasks = [t for t, _ in keep]
        self.values = [v for _, v in keep]
        self._index = {id(t): i for i, t in enumerate(self.tasks)}

    def phi_matrix(self) -> np.ndarray:
        if not self.tasks:
            return np.zeros((0, 0))
        return np.stack([t.phi for t in self.tasks])

    def sample(self, count: int, rng) -> list[TaskParams]:
        idx = rng.integers(0, len(self.tasks), size=count)
        return [self.tasks[i] for i in idx]

    def prune(self) -> list[TaskParams]:
        """Drop lowest-diversity members until within capacity."""
        if len(self.tasks) <= self.capacity:
            return []
        removed_idx = prune_order(self.phi_matrix(), self.capacity, self.diversity_k)
        removed = [self.tasks[i] for i in removed_idx]
        self.remove_many(removed)
        return removed


def _pairwise_distances(phis: np.ndarray) -> np.ndarray:
    """Exact pairwise distances via direct differences, chunked by rows.

    Direct subtraction avoids the catastrophic cancellation of the Gram-matrix
    shortcut, which matters because pruning breaks near-ties by comparison.
    """
    m, d = phis.shape
    out = np.empty((m, m))
    chunk = max(1, int(2e6 // max(m * d, 1)))
    for at in range(0, m, chunk):
        diff = phis[at:at + chunk, None, :] - phis[None, :, :]
        out[at:at + chunk] = np.sqrt((diff * diff).sum(axis=2))
    return out


def diversity_scores(phis: np.ndarray, k: int) -> np.ndarray:
    """Mean of the k smallest distances from each row to the other rows.

    When fewer than k other elements exist, all available distances are used.
    """
    m = len(phis)
    if m < 2:
        return np.zeros(m)
    dist = _pairwise_distances(phis)
    np.fill_diagonal(dist, np.inf)
    kk = min(k, m - 1)
    part = np.partition(dist, kk - 1, axis=1)[:, :kk]
    return part.mean(axis=1)


def prune_order(phis: np.ndarray, capacity: int, k: int) -> list[int]:
    """Indices to remove (in removal order) to bring ``phis`` within capacity.

    Greedy: repeatedly drop the element with the smallest mean top-k distance
    to the remaining elements, ties broken by lowest insertion index; distance
    scores are recomputed after every removal.  The pairwise distance matrix
    is built once; removed elements are masked out with +inf.
    """
    m = len(phis)
    if m <= capacity:
        return []
    dist = _pairwise_distances(phis)
    np.fill_diagonal(dist, np.inf)
    removed = []
    alive_count = m
    while alive_count > capacity:
        kk = min(k, alive_count - 1)
        part = np.partition(dist, kk - 1, axis=1)[:, :kk]
        scores = part.mean(axis=1)  # removed rows are all-inf, never minimal
        drop = int(np.argmin(scores))  # argmin takes the first = earliest inserted
        removed.append(drop)
        dist[drop, :] = np.inf
        dist[:, drop] = np.inf
        alive_count -= 1
    return removed


@dataclass
class LevelSets:
    q_act: ParticleSet
    q_sol: ParticleSet


@dataclass
class TransitionReport:
    """Outcome of one partition update."""

    solved: list[TaskParams] = field(default_factory=list)        # active -> solved
    activated: list[TaskParams] = field(default_factory=list)     # fresh -> active
    direct_solved: list[TaskParams] = field(default_factory=list)  # fresh -> solved
    unchanged: list[TaskParams] = field(default_factory=list)
    dropped: list[TaskParams] = field(default_factory=list)


@dataclass
class CurriculumState:
    """Two-level mixed curriculum: current level plus an optional next level.

    ``z`` is the training probability mass on the current level; it stays 1
    outside a progression and decays linearly to 0 during one, at which point
    the next level becomes current.
    """

    n_current: int
    n_max: int
    sets: dict[int, LevelSets]
    progression_trigger: float = 0.9
    z_decay: float = 1.0 / 40.0
    increment: str = "exponential"  # or "incremental"
    n_next: int | None = None
    z: float = 1.0

    @property
    def transition_active(self) -> bool:
        return self.n_next is not None

    def next_level(self) -> int | None:
        if self.n_current >= self.n_max:
            return None
        if self.increment == "exponential":
            return min(2 * self.n_current, self.n_max)
        return self.n_current + 1

    def level_sets(self, n: int) -> LevelSets:
        return self.sets[n]


def make_state(n0: int, n_max: int, initial_easy: list[TaskParams],
               capacity: int, diversity_k: int = 5, **kwargs) -> CurriculumState:
    """Fresh curriculum with the easiest tasks seeding the active queue."""
    q_act = ParticleSet(capacity, diversity_k)
    for t in initial_easy:
        q_act.add(t, 0.0)
    q_sol = ParticleSet(capacity, diversity_k)
    return CurriculumState(n_current=n0, n_max=n_max,
                           sets={n0: LevelSets(q_act, q_sol)}, **kwargs)


def update_partition(state: CurriculumState, level: int,
                     estimates: list[tuple[TaskParams, float]],
                     th: QuantizationThresholds) -> TransitionReport:
    """Apply fresh value estimates to one level's queues.

    Active tasks crossing sigma_max move to the solved queue; fresh tasks are
    admitted by their quantized status or dropped below sigma_min.  Solved
    tasks are never re-estimated, so passing one is a caller bug.
    """
    sets = state.level_sets(level)
    report = TransitionReport()
    solved_values = []
    for task, value in estimates:
        status = quantize(value, th)
        if task.n != level:
            raise ValueError(f"estimate for n={task.n} applied to level {level}")
        if task in sets.q_sol:
            raise ValueError("solved tasks are not re-estimated")
        if task in sets.q_act:
            if status is TaskStatus.SOLVED:
                report.solved.append(task)
                solved_values.append(value)
            else:
                sets.q_act.set_value(task, value)
                report.unchanged.append(task)
        else:  # fresh exploration task
            if status is TaskStatus.SOLVED:
                sets.q_sol.add(task, value)
                report.direct_solved.append(task)
            elif status is TaskStatus.ACTIVE:
                sets.q_act.add(task, value)
                report.activated.append(task)
            else:
                report.dropped.append(task)
    if report.solved:
        sets.q_act.remove_many(report.solved)
        for task, value in zip(report.solved, solved_values):
            sets.q_sol.add(task, value)
    return report


def select_seeds(report: TransitionReport) -> list[TaskParams]:
    """Exploration seeds: exactly the tasks that went active -> solved."""
    return list(report.solved)


def explore(seeds: list[TaskParams], q_sol: ParticleSet, cfg: ExplorationConfig,
            kernel: KernelConfig, feas, rng) -> list[TaskParams]:
    """Generate up to ``b_exp`` feasible candidates around the seed tasks.

    Each candidate is seed + epsilon * (repulsion from the solved set) plus
    per-coordinate uniform noise; infeasible draws are re-drawn with fresh
    noise up to ``max_attempts`` times when rejection sampling is on, and
    discarded outright when it is off.
    """
    if not seeds:
        return []
    sol_phis = q_sol.phi_matrix()
    bases = []
    for seed in seeds:
        grad = svgd_simplified_update(seed.phi, sol_phis, kernel) if len(sol_phis) else 0.0
        bases.append(seed.phi + cfg.epsilon * grad)
    out = []
    attempts = cfg.max_attempts if cfg.rejection else 1
    for j in range(cfg.b_exp):
        seed = seeds[j % len(seeds)]
        base = bases[j % len(seeds)]
        for _ in range(attempts):
            phi = base + rng.uniform(-cfg.delta, cfg.delta, size=base.shape)
            cand = TaskParams(seed.scenario, seed.n, phi)
            if feas(cand):
                out.append(cand)
                break
    return out


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _draw_level(sets: LevelSets, count: int, ratio_active: float, rng,
                level: int) -> list[TaskParams]:
    if len(sets.q_act) == 0 and len(sets.q_sol) == 0:
        raise CurriculumExhausted(f"no tasks available at level n={level}")
    n_act = _round_half_up(ratio_active * count)
    n_sol = count - n_act
    if len(sets.q_sol) == 0:
        n_act, n_sol = count, 0
    elif len(sets.q_act) == 0:
        n_act, n_sol = 0, count
    out = sets.q_act.sample(n_act, rng) if n_act else []
    if n_sol:
        out = out + sets.q_sol.sample(n_sol, rng)
    return out


def sample_train_batch(state: CurriculumState, batch_size: int,
                       ratio_active: float, rng) -> list[TaskParams]:
    """Compose a training batch across the two active levels.

    round(B*z) tasks come from the current level and the rest from the next
    level; within a level, round(ratio_active * count) are drawn from the
    active queue and the remainder from the solved queue (uniform, with
    replacement), falling back to whichever queue is non-empty.
    """
    n_cur = _round_half_up(batch_size * state.z)
    n_nxt = batch_size - n_cur
    out = []
    if n_cur:
        out += _draw_level(state.level_sets(state.n_current), n_cur,
                           ratio_active, rng, state.n_current)
    if n_nxt:
        if state.n_next is None:
            raise CurriculumExhausted("nonzero mass on an inactive next level")
        out += _draw_level(state.level_sets(state.n_next), n_nxt,
                           ratio_active, rng, state.n_next)
    return out


def progression_step(state: CurriculumState, eval_score: float,
                     init_next_level) -> CurriculumState:
    """Advance the entity-progression machinery by one update.

    Outside a transition: when the evaluation score reaches the trigger,
    activate the next level (full mass stays on the current level) and seed
    its active queue via ``init_next_level(n)``.  Inside a transition: decay
    z; at zero the next level becomes current.
    """
    if not state.transition_active:
        if eval_score >= state.progression_trigger:
            nxt = state.next_level()
            if nxt is None:
                return state  # terminal: already at the largest level
            q_act = state.sets[state.n_current].q_act
            new_act = ParticleSet(q_act.capacity, q_act.diversity_k)
            for t in init_next_level(nxt):
                new_act.add(t, 0.0)
            state.sets[nxt] = LevelSets(new_act, ParticleSet(q_act.capacity,
                                                             q_act.diversity_k))
            state.n_next = nxt
            state.z = 1.0
    else:
        state.z = max(0.0, state.z - state.z_decay)
        if state.z <= 1e-12:  # snap accumulated float drift to an exact commit
            state.n_current = state.n_next
            state.n_next = None
            state.z = 1.0
    return state


# ---------------------------------------------------------------------------
# Variational diagnostic: particle estimate of E_q[V * log(p / q)]
# ---------------------------------------------------------------------------

def _scott_bandwidths(phis: np.ndarray) -> np.ndarray:
    m, d = phis.shape
    std = phis.std(axis=0, ddof=1)
    spread = np.maximum(std, 1e-6)
    return spread * m ** (-1.0 / (d + 4))


def _loo_kde_log_density(phis: np.ndarray, support_bounds=None) -> np.ndarray:
    """Leave-one-out Gaussian KDE log density at each sample point.

    With ``support_bounds`` = (low, high) arrays, each kernel is renormalized
    by its mass inside the box, removing boundary bias on a known support.
    """
    m, d = phis.shape
    h = _scott_bandwidths(phis)
    u = phis / (np.sqrt(2.0) * h)
    sq = ((u[:, None, :] - u[None, :, :]) ** 2).sum(axis=2)
    log_kernel = -sq - np.sum(np.log(np.sqrt(2.0 * np.pi) * h))
    if support_bounds is not None:
        low, high = (np.asarray(b, dtype=np.float64) for b in support_bounds)
        mass = ndtr((high[None, :] - phis) / h) - ndtr((low[None, :] - phis) / h)
        log_kernel = log_kernel - np.log(np.clip(mass, 1e-300, None)).sum(axis=1)[None, :]
    np.fill_diagonal(log_kernel, -np.inf)
    row_max = log_kernel.max(axis=1, keepdims=True)
    log_sum = row_max[:, 0] + np.log(np.exp(log_kernel - row_max).sum(axis=1))
    return log_sum - np.log(m - 1)


def value_weighted_log_ratio(phis: np.ndarray, values: np.ndarray,
                             target_log_density, support_bounds=None) -> float:
    """Core of the curriculum-objective diagnostic on raw arrays."""
    phis = np.asarray(phis, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if phis.ndim != 2 or len(phis) != len(values):
        raise ValueError("phis must be (m, d) with matching values")
    if not np.any(values):
        return 0.0
    if len(phis) < 2:
        return 0.0
    log_q = _loo_kde_log_density(phis, support_bounds)
    log_p = np.array([float(target_log_density(x)) for x in phis])
    return float(np.mean(values * (log_p - log_q)))


def estimate_L2(particle_set: ParticleSet, target_log_density,
                support_bounds=None) -> float:
    """Diagnostic estimate of E_q[V log(p/q)] over a particle set.

    q is a kernel-density estimate over the stored tasks; p is supplied as a
    log-density function.  Diagnostic only: never drives training.
    """
    if len(particle_set) == 0:
        raise ValueError("estimate_L2 requires a non-empty particle set")
    return value_weighted_log_ratio(particle_set.phi_matrix(),
                                    np.array(particle_set.values),
                                    target_log_density, support_bounds)


# ---------------------------------------------------------------------------
# Snapshot serialization: one task per line
# ---------------------------------------------------------------------------

def save_particle_set(ps: ParticleSet, path) -> None:
    """Line format: scenario n phi... value (full float precision)."""
    with open(path, "w") as fh:
        for task, value in zip(ps.tasks, ps.values):
            coords = " ".join(f"{x:.17g}" for x in task.phi)
            fh.write(f"{task.scenario.value} {task.n} {coords} {value:.17g}\n")


def load_particle_set(path, capacity: int, diversity_k: int = 5) -> ParticleSet:
    from .tasks import Scenario

    ps = ParticleSet(capacity, diversity_k)
    with open(path) as fh:
        for line in fh:
            tokens = line.split()
            if not tokens:
                continue
            scenario = Scenario(tokens[0])
            n = int(tokens[1])
            value = float(tokens[-1])
            phi = np.array([float(x) for x in tokens[2:-1]])
            ps.add(TaskParams(scenario, n, phi), value)
    return ps
