"""Run orchestration: the outer training loop, ablation modes, and logging.

One run = one config + seed.  Per iteration: sample a training batch from the
task queues, roll it out, update the policy, refresh the queue partition from
the per-task success estimates, explore new candidates from newly solved
seeds, estimate and admit them, prune, and advance entity progression.
Metrics go to a line-delimited log plus a plot-ready learning-curve CSV;
checkpoints allow bit-exact resume.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import curriculum as cur
from . import nets, ppo, tasks
from .config import RunConfig
from .errors import TrainingDiverged
from .tasks import Scenario, TaskParams, feasibility_check

STREAM_NAMES = ("init", "tasks", "rollout", "explore", "ppo", "eval")


@dataclass
class MetricRecord:
    iteration: int
    env_steps: int
    eval_coverage: float
    q_act_size: int
    q_sol_size: int
    z: float
    n_current: int
    seeds_count: int
    exploration_acceptance_rate: float
    wall_clock: float


def emit_metrics(record: MetricRecord, sink) -> None:
    """Append one structured line per iteration; flushed per write.

    wall_clock is kept out of the serialized line so that logs from identical
    (config, seed) runs are byte-identical; it goes to the timing sidecar.
    """
    payload = asdict(record)
    payload.pop("wall_clock")
    sink.write(json.dumps(payload, sort_keys=True) + "\n")
    sink.flush()


def entity_types_for(scenario: Scenario) -> tuple[str, ...]:
    if scenario is Scenario.PUSH_BALL:
        return ("others", "balls", "landmarks")
    return ("others", "landmarks")


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    seqs = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
    return {name: np.random.Generator(np.random.PCG64(seq))
            for name, seq in zip(STREAM_NAMES, seqs)}


def _rng_state_token(rng: np.random.Generator) -> str:
    st = rng.bit_generator.state
    return f"{st['state']['state']}:{st['state']['inc']}:{st['has_uint32']}:{st['uinteger']}"


def _restore_rng(rng: np.random.Generator, token: str) -> None:
    state, inc, has32, uint = token.split(":")
    st = rng.bit_generator.state
    st["state"]["state"] = int(state)
    st["state"]["inc"] = int(inc)
    st["has_uint32"] = int(has32)
    st["uinteger"] = int(uint)
    rng.bit_generator.state = st


class FrontierOracle:
    """Deterministic stand-in value function for curriculum-only testing.

    A task is worth 1 within ``rho`` of any anchor (the initial easy tasks
    plus everything solved so far) and decays exponentially beyond.
    """

    def __init__(self, anchor_phis: np.ndarray, rho: float):
        self._anchors = np.array(anchor_phis, dtype=np.float64)
        self._norms = (self._anchors * self._anchors).sum(axis=1)
        self.rho = rho

    def add_anchors(self, phis: np.ndarray) -> None:
        if len(phis):
            phis = np.asarray(phis, dtype=np.float64)
            self._anchors = np.vstack([self._anchors, phis])
            self._norms = np.concatenate([self._norms, (phis * phis).sum(axis=1)])

    def min_dist(self, queries: np.ndarray) -> np.ndarray:
        q = np.asarray(queries, dtype=np.float64)
        d2 = ((q * q).sum(axis=1)[:, None] + self._norms[None, :]
              - 2.0 * q @ self._anchors.T)
        return np.sqrt(np.maximum(d2.min(axis=1), 0.0))

    def values(self, queries: np.ndarray) -> np.ndarray:
        d = self.min_dist(queries)
        return np.where(d <= self.rho, 1.0, 0.5 * np.exp(-(d - self.rho)))


class Run:
    """State of one training run; construct then call ``execute()``."""

    def __init__(self, cfg: RunConfig, resume_dir: str | None = None):
        self.cfg = cfg
        self.mode = cfg.mode
        if self.mode == "synthetic_oracle":
            raise ValueError("use run_synthetic_oracle for oracle mode")
        self.spec = cfg.scenario_spec()
        self.wcfg = cfg.world_config()
        self.pcfg = cfg.ppo_config()
        self.th = cfg.thresholds()
        self.kernel = cfg.kernel_config()
        self.explore_cfg = cfg.exploration_config()
        self.out_dir = cfg["out_dir"]
        os.makedirs(self.out_dir, exist_ok=True)
        self.cfg_hash = nets.config_hash(cfg.semantic_text())
        self.rngs = make_streams(cfg.seed)
        self.net = nets.PolicyNet(entity_types_for(cfg.scenario),
                                  hidden=self.pcfg.hidden,
                                  rng=self.rngs["init"])
        self.optimizer = nets.Adam(self.net.params, lr=self.pcfg.learning_rate,
                                   eps=self.pcfg.adam_eps)
        self.iteration = 0
        self.env_steps = 0
        self.last_eval = 0.0
        self.force_eval = False
        self.state: cur.CurriculumState | None = None
        if self.mode != "uniform":
            easy = tasks.get_easy(cfg.n0, self.spec, cfg["queue.init_easy_count"],
                                  self.rngs["tasks"])
            self.state = cur.make_state(
                cfg.n0, cfg.n_max, easy, capacity=cfg["queue.capacity"],
                diversity_k=cfg["queue.diversity_k"],
                progression_trigger=cfg["mix.progression_trigger"],
                z_decay=cfg.z_decay(), increment=cfg["mix.increment"])
        if resume_dir is not None:
            self._load_state(resume_dir)
        else:
            with open(os.path.join(self.out_dir, "config.txt"), "w") as fh:
                fh.write(cfg.to_text())

    # -- helpers ---------------------------------------------------------------

    def _feasible(self, task: TaskParams) -> bool:
        return feasibility_check(task, self.spec)

    def _init_level(self, n: int) -> list[TaskParams]:
        return tasks.get_easy(n, self.spec, self.cfg["queue.init_easy_count"],
                              self.rngs["tasks"])

    def _active_levels(self) -> list[int]:
        levels = [self.state.n_current]
        if self.state.transition_active:
            levels.append(self.state.n_next)
        return levels

    def _evaluate(self) -> float:
        episodes = self.cfg["eval.episodes"]
        if self.mode == "uniform" or self.state is None:
            return ppo.evaluate(self.net, self.cfg.n_max, self.spec, episodes,
                                self.rngs["eval"], self.wcfg, self.pcfg)
        score = ppo.evaluate(self.net, self.state.n_current, self.spec, episodes,
                             self.rngs["eval"], self.wcfg, self.pcfg)
        if self.state.transition_active:
            nxt = ppo.evaluate(self.net, self.state.n_next, self.spec, episodes,
                               self.rngs["eval"], self.wcfg, self.pcfg)
            score = self.state.z * score + (1.0 - self.state.z) * nxt
        return float(score)

    # -- one curriculum iteration ----------------------------------------------

    def _train_tasks(self) -> list[TaskParams]:
        if self.mode == "uniform":
            return tasks.sample_uniform(self.cfg.n_max, self.spec,
                                        self.cfg["train.tasks_per_iter"],
                                        self.rngs["tasks"])
        return cur.sample_train_batch(self.state, self.cfg["train.tasks_per_iter"],
                                      self.cfg["mix.ratio_active"],
                                      self.rngs["tasks"])

    def _seed_tasks(self, level: int, report: cur.TransitionReport) -> list[TaskParams]:
        if self.mode in ("exp_act", "exp_act_eval"):
            q_act = self.state.level_sets(level).q_act
            if len(q_act) == 0:
                return []
            count = min(self.cfg["explore.exp_act_seed_count"], len(q_act))
            return q_act.sample(count, self.rngs["explore"])
        return cur.select_seeds(report)

    def iterate(self) -> MetricRecord:
        t0 = time.perf_counter()
        cfg = self.cfg
        unique = self._train_tasks()
        episode_tasks = [t for t in unique
                         for _ in range(cfg["train.episodes_per_task"])]
        batch = ppo.rollout(self.net, episode_tasks, self.spec, self.wcfg,
                            self.pcfg, self.rngs["rollout"])
        self.env_steps += batch.env_steps
        ppo.ppo_update(self.net, self.optimizer, batch, self.pcfg, self.rngs["ppo"])

        seeds_count = 0
        accepted = 0
        attempted = 0
        if self.state is not None:
            for level in self._active_levels():
                sets = self.state.level_sets(level)
                estimates = [(t, v) for t, v in batch.task_values
                             if t.n == level and t in sets.q_act]
                report = cur.update_partition(self.state, level, estimates, self.th)
                seeds = self._seed_tasks(level, report)
                seeds_count += len(seeds)
                if seeds:
                    cands = cur.explore(seeds, sets.q_sol, self.explore_cfg,
                                        self.kernel, self._feasible,
                                        self.rngs["explore"])
                    attempted += self.explore_cfg.b_exp
                    accepted += len(cands)
                    if cands:
                        self._admit(level, cands)
                sets.q_act.prune()
                sets.q_sol.prune()

        # evaluation precedes the progression step that consumes it
        do_eval = (self.iteration % cfg["eval.interval"] == 0) or self.force_eval
        self.force_eval = False
        if do_eval:
            self.last_eval = self._evaluate()
            with open(os.path.join(self.out_dir, "curve.csv"), "a") as fh:
                fh.write(f"{self.env_steps},{self.last_eval:.6f}\n")

        if self.state is not None:
            before = (self.state.n_current, self.state.n_next)
            cur.progression_step(self.state, self.last_eval, self._init_level)
            if (self.state.n_current, self.state.n_next) != before:
                self.force_eval = True  # sample the curve right after a switch

        record = MetricRecord(
            iteration=self.iteration,
            env_steps=self.env_steps,
            eval_coverage=round(self.last_eval, 6),
            q_act_size=(sum(len(self.state.level_sets(n).q_act)
                            for n in self._active_levels()) if self.state else 0),
            q_sol_size=(sum(len(self.state.level_sets(n).q_sol)
                            for n in self._active_levels()) if self.state else 0),
            z=(self.state.z if self.state else 1.0),
            n_current=(self.state.n_current if self.state else cfg.n_max),
            seeds_count=seeds_count,
            exploration_acceptance_rate=(accepted / attempted if attempted else 0.0),
            wall_clock=time.perf_counter() - t0,
        )
        self.iteration += 1
        return record

    def _admit(self, level: int, cands: list[TaskParams]) -> None:
        """Estimate exploration candidates and admit by quantized value."""
        cfg = self.cfg
        if self.mode == "exp_act":
            # admitted without estimation, cached at the activation threshold
            estimates = [(c, self.th.sigma_min) for c in cands]
        else:
            reps = cfg["explore.estimation_episodes"]
            episode_tasks = [c for c in cands for _ in range(reps)]
            est = ppo.rollout(self.net, episode_tasks, self.spec, self.wcfg,
                              self.pcfg, self.rngs["rollout"])
            self.env_steps += est.env_steps
            estimates = est.task_values
        cur.update_partition(self.state, level, estimates, self.th)

    # -- outer loop --------------------------------------------------------------

    def converged(self) -> bool:
        if self.state is None:
            return False
        return (self.state.n_current == self.cfg.n_max
                and not self.state.transition_active
                and self.last_eval >= self.cfg["mix.progression_trigger"])

    def execute(self) -> dict:
        cfg = self.cfg
        metrics_path = os.path.join(self.out_dir, "metrics.jsonl")
        timing_path = os.path.join(self.out_dir, "timing.log")
        if self.iteration == 0:
            open(metrics_path, "w").close()
            open(timing_path, "w").close()
            with open(os.path.join(self.out_dir, "curve.csv"), "w") as fh:
                fh.write("env_steps,eval_coverage\n")
        with open(metrics_path, "a") as sink, open(timing_path, "a") as timing:
            while self.env_steps < cfg["total_env_steps"] and not self.converged():
                try:
                    record = self.iterate()
                except TrainingDiverged as exc:
                    self._dump_diagnostics(str(exc))
                    raise
                emit_metrics(record, sink)
                timing.write(f"{record.iteration} {record.wall_clock:.3f}\n")
                timing.flush()
                if record.iteration % cfg["checkpoint.interval"] == 0:
                    self.save_state()
        self.save_state()
        return {"iterations": self.iteration, "env_steps": self.env_steps,
                "final_eval": self.last_eval, "out_dir": self.out_dir}

    def _dump_diagnostics(self, message: str) -> None:
        path = os.path.join(self.out_dir, "diverged.txt")
        with open(path, "w") as fh:
            fh.write(f"{message}\niteration {self.iteration} "
                     f"env_steps {self.env_steps}\n")
        self.save_state()

    # -- persistence ---------------------------------------------------------------

    def save_state(self) -> None:
        meta = {"iteration": str(self.iteration), "env_steps": str(self.env_steps)}
        nets.save_policy(os.path.join(self.out_dir, "policy.ckpt"), self.net,
                         self.cfg_hash, optimizer=self.optimizer, meta=meta)
        lines = [f"iteration {self.iteration}", f"env_steps {self.env_steps}",
                 f"last_eval {self.last_eval!r}",
                 f"force_eval {int(self.force_eval)}"]
        for name, rng in self.rngs.items():
            lines.append(f"rng.{name} {_rng_state_token(rng)}")
        if self.state is not None:
            st = self.state
            lines.append(f"n_current {st.n_current}")
            lines.append(f"n_next {st.n_next if st.n_next is not None else 'none'}")
            lines.append(f"z {st.z!r}")
            lines.append(f"levels {','.join(str(n) for n in sorted(st.sets))}")
            for n, sets in st.sets.items():
                cur.save_particle_set(
                    sets.q_act, os.path.join(self.out_dir, f"qact_{n}.txt"))
                cur.save_particle_set(
                    sets.q_sol, os.path.join(self.out_dir, f"qsol_{n}.txt"))
        with open(os.path.join(self.out_dir, "state.txt"), "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def _load_state(self, run_dir: str) -> None:
        net, optimizer, cfg_hash, meta = nets.load_policy(
            os.path.join(run_dir, "policy.ckpt"),
            lr=self.pcfg.learning_rate, adam_eps=self.pcfg.adam_eps)
        if cfg_hash != self.cfg_hash:
            raise ValueError("checkpoint config hash does not match this config")
        self.net = net
        self.optimizer = optimizer
        kv = {}
        with open(os.path.join(run_dir, "state.txt")) as fh:
            for line in fh:
                key, _, value = line.strip().partition(" ")
                kv[key] = value
        self.iteration = int(kv["iteration"])
        self.env_steps = int(kv["env_steps"])
        self.last_eval = float(kv["last_eval"])
        self.force_eval = bool(int(kv["force_eval"]))
        for name, rng in self.rngs.items():
            _restore_rng(rng, kv[f"rng.{name}"])
        if self.state is not None:
            levels = [int(x) for x in kv["levels"].split(",")]
            sets = {}
            for n in levels:
                q_act = cur.load_particle_set(
                    os.path.join(run_dir, f"qact_{n}.txt"),
                    self.cfg["queue.capacity"], self.cfg["queue.diversity_k"])
                q_sol = cur.load_particle_set(
                    os.path.join(run_dir, f"qsol_{n}.txt"),
                    self.cfg["queue.capacity"], self.cfg["queue.diversity_k"])
                sets[n] = cur.LevelSets(q_act, q_sol)
            self.state.sets = sets
            self.state.n_current = int(kv["n_current"])
            self.state.n_next = None if kv["n_next"] == "none" else int(kv["n_next"])
            self.state.z = float(kv["z"])


def run(cfg: RunConfig, resume_dir: str | None = None) -> dict:
    """Execute one full training run per the configured mode."""
    if cfg.mode == "synthetic_oracle":
        return run_synthetic_oracle(cfg)
    return Run(cfg, resume_dir=resume_dir).execute()


def run_synthetic_oracle(cfg: RunConfig) -> dict:
    """Curriculum-only loop against the frontier oracle; no RL anywhere.

    Tracks the fraction of a fixed uniform probe set lying within rho of the
    solved queue; writes one trace row per engine iteration.
    """
    spec = cfg.scenario_spec()
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    rngs = make_streams(cfg.seed)
    rho = cfg["oracle.rho"]
    th = cfg.thresholds()
    kernel = cfg.kernel_config()
    explore_cfg = cur.ExplorationConfig(
        epsilon=cfg["oracle.epsilon"], delta=cfg["oracle.delta"],
        b_exp=cfg["oracle.b_exp"], max_attempts=cfg["oracle.max_attempts"])

    easy = tasks.get_easy(cfg.n0, spec, cfg["queue.init_easy_count"], rngs["tasks"])
    state = cur.make_state(cfg.n0, cfg.n0, easy, capacity=cfg["oracle.capacity"],
                           diversity_k=cfg["queue.diversity_k"])
    oracle = FrontierOracle(np.stack([t.phi for t in easy]), rho)
    probes = np.stack([t.phi for t in tasks.sample_uniform(
        cfg.n0, spec, cfg["oracle.probe_count"], rngs["eval"])])
    probe_min = np.full(len(probes), np.inf)  # running distance to Q_sol

    def feas(task):
        return feasibility_check(task, spec)

    trace = []
    with open(os.path.join(out_dir, "oracle_trace.csv"), "w") as fh:
        fh.write("iteration,q_act_size,q_sol_size,probe_coverage\n")
        for it in range(cfg["oracle.iterations"]):
            batch = cur.sample_train_batch(state, cfg["oracle.batch"],
                                           cfg["mix.ratio_active"], rngs["tasks"])
            sets = state.level_sets(cfg.n0)
            unique = list({id(t): t for t in batch if t in sets.q_act}.values())
            new_solved: list[TaskParams] = []
            report = cur.TransitionReport()
            if unique:
                phis = np.stack([t.phi for t in unique])
                values = oracle.values(phis)
                report = cur.update_partition(state, cfg.n0,
                                              list(zip(unique, values)), th)
                new_solved += report.solved
            seeds = cur.select_seeds(report)
            if seeds:
                cands = cur.explore(seeds, sets.q_sol, explore_cfg, kernel,
                                    feas, rngs["explore"])
                if cands:
                    values = oracle.values(np.stack([c.phi for c in cands]))
                    rep2 = cur.update_partition(state, cfg.n0,
                                                list(zip(cands, values)), th)
                    new_solved += rep2.solved + rep2.direct_solved
            sets.q_act.prune()
            sets.q_sol.prune()
            if new_solved:
                new_phis = np.stack([t.phi for t in new_solved])
                oracle.add_anchors(new_phis)
                d2 = ((probes * probes).sum(axis=1)[:, None]
                      + (new_phis * new_phis).sum(axis=1)[None, :]
                      - 2.0 * probes @ new_phis.T)
                probe_min = np.minimum(probe_min,
                                       np.sqrt(np.maximum(d2.min(axis=1), 0.0)))
            coverage = float((probe_min <= rho).mean())
            trace.append(coverage)
            fh.write(f"{it},{len(sets.q_act)},{len(sets.q_sol)},{coverage:.6f}\n")
            if coverage >= cfg["oracle.stop_at"]:
                break
    return {"trace": trace, "out_dir": out_dir,
            "final_coverage": trace[-1] if trace else 0.0,
            "iterations": len(trace)}
