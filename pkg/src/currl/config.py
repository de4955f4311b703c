"""Flat key-value run configuration with dotted sections.

The config file is plain text, one ``key = value`` per line, ``#`` comments.
Every training constant is a key with its documented default; unknown keys
are rejected to catch typos.
"""

from __future__ import annotations

from .curriculum import ExplorationConfig, QuantizationThresholds
from .kernels import KernelConfig
from .ppo import PpoConfig
from .tasks import Scenario, default_scenario_spec
from .world import WorldConfig

MODES = ("vacl", "uniform", "exp_act", "exp_act_eval", "unif_noise",
         "hard_transfer", "synthetic_oracle")

DEFAULTS: dict[str, object] = {
    "scenario": "simple_spread",
    "n0": 4,
    "n_max": 4,
    "mode": "vacl",
    "seed": 1,
    "total_env_steps": 5_000_000,
    "out_dir": "runs/out",
    # training batch composition
    "train.tasks_per_iter": 32,
    "train.episodes_per_task": 4,
    # policy optimization
    "ppo.learning_rate": 5e-4,
    "ppo.gamma": 0.99,
    "ppo.gae_lambda": 0.95,
    "ppo.clip": 0.2,
    "ppo.ppo_epochs": 15,
    "ppo.entropy_coef": 0.01,
    "ppo.value_loss_coef": 1.0,
    "ppo.minibatch_count": 2,
    "ppo.parallel_envs": 64,
    "ppo.horizon": 0,  # 0: scenario default
    "ppo.reward_scale": 0.1,
    "ppo.adam_eps": 1e-5,
    "ppo.max_grad_norm": 10.0,
    "ppo.hidden": 64,
    # world physics
    "world.dt": 0.1,
    "world.damping": 0.25,
    "world.max_speed": 2.0,
    "world.force_scale": 5.0,
    "world.agent_radius": 0.15,
    "world.ball_radius": 0.15,
    "world.landmark_radius": 0.05,
    "world.action_space": "discrete",
    # task exploration
    "explore.epsilon": 0.6,
    "explore.delta": 0.6,
    "explore.b_exp": 150,
    "explore.max_attempts": 100,
    "explore.rejection": True,
    "explore.estimation_episodes": 4,
    "explore.exp_act_seed_count": 10,
    # kernel
    "kernel.h": 1.0,
    # value quantization
    "quantize.sigma_min": 0.1,
    "quantize.sigma_max": 0.9,
    # particle queues
    "queue.capacity": 2000,
    "queue.diversity_k": 5,
    "queue.init_easy_count": 300,
    # level mixing / entity progression
    "mix.ratio_active": 0.95,
    "mix.t_mix": 40,
    "mix.progression_trigger": 0.9,
    "mix.increment": "exponential",
    # evaluation and checkpoints
    "eval.interval": 10,
    "eval.episodes": 200,
    "checkpoint.interval": 50,
    # synthetic-oracle mode (its own exploration scales: the frontier oracle
    # needs task-space jumps comparable to its solve radius)
    "oracle.rho": 4.7,
    "oracle.iterations": 500,
    "oracle.probe_count": 1000,
    "oracle.batch": 200,
    "oracle.capacity": 500000,
    "oracle.stop_at": 0.95,
    "oracle.epsilon": 0.6,
    "oracle.delta": 2.3,
    "oracle.b_exp": 300,
    "oracle.max_attempts": 100,
    # task generation and scenario geometry (0 = scenario default extent)
    "tasks.r_easy_factor": 4.0,
    "tasks.rejection_budget": 100,
    "tasks.entity_radius": 0.15,
    "scen.world_half_extent_x": 0.0,
    "scen.world_half_extent_y": 0.0,
    # hard-spread geometry
    "hs.wall_x": 5.0 / 3.0,
    "hs.wall_half_thickness": 0.1,
    "hs.door_half": 0.3,
    "hs.landmark_min_x": 2.0,
    "hs.eval_agent_max_x": -2.0,
}

# scenario-dependent defaults applied unless the key is set explicitly
_SCENARIO_DEFAULTS = {
    "push_ball": {"explore.epsilon": 0.4, "explore.delta": 0.4},
}


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"bad boolean for {key}: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text: str) -> dict:
    """Parse config text into a {key: typed value} dict of explicit settings."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in DEFAULTS:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, raw)
    return out


class RunConfig:
    """Resolved run configuration with typed sub-config builders."""

    def __init__(self, settings: dict | None = None):
        settings = dict(settings or {})
        for key in settings:
            if key not in DEFAULTS:
                raise ValueError(f"unknown config key {key!r}")
        merged = dict(DEFAULTS)
        scenario = settings.get("scenario", merged["scenario"])
        for key, value in _SCENARIO_DEFAULTS.get(scenario, {}).items():
            merged[key] = value
        merged.update(settings)
        self.values = merged
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.n0 > self.n_max:
            raise ValueError(f"n0={self.n0} exceeds n_max={self.n_max}")
        Scenario(self.values["scenario"])  # validates the name

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def scenario(self) -> Scenario:
        return Scenario(self.values["scenario"])

    @property
    def mode(self) -> str:
        return self.values["mode"]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def n0(self) -> int:
        return self.values["n0"]

    @property
    def n_max(self) -> int:
        return self.values["n_max"]

    def scenario_spec(self):
        kwargs = dict(
            r_easy_factor=self.values["tasks.r_easy_factor"],
            rejection_budget=self.values["tasks.rejection_budget"],
            entity_radius=self.values["tasks.entity_radius"],
        )
        hx = self.values["scen.world_half_extent_x"]
        hy = self.values["scen.world_half_extent_y"]
        if hx > 0 and hy > 0:
            kwargs["world_half_extent"] = (hx, hy)
        if self.scenario is Scenario.HARD_SPREAD:
            kwargs.update(
                wall_x=self.values["hs.wall_x"],
                wall_half_thickness=self.values["hs.wall_half_thickness"],
                door_half=self.values["hs.door_half"],
                landmark_min_x=self.values["hs.landmark_min_x"],
                eval_agent_max_x=self.values["hs.eval_agent_max_x"],
            )
        return default_scenario_spec(self.scenario, **kwargs)

    def ppo_config(self) -> PpoConfig:
        v = self.values
        return PpoConfig(
            learning_rate=v["ppo.learning_rate"], gamma=v["ppo.gamma"],
            gae_lambda=v["ppo.gae_lambda"], clip=v["ppo.clip"],
            ppo_epochs=v["ppo.ppo_epochs"], entropy_coef=v["ppo.entropy_coef"],
            value_loss_coef=v["ppo.value_loss_coef"],
            minibatch_count=v["ppo.minibatch_count"],
            parallel_envs=v["ppo.parallel_envs"], horizon=v["ppo.horizon"],
            reward_scale=v["ppo.reward_scale"], adam_eps=v["ppo.adam_eps"],
            max_grad_norm=v["ppo.max_grad_norm"], hidden=v["ppo.hidden"])

    def world_config(self) -> WorldConfig:
        v = self.values
        return WorldConfig(
            dt=v["world.dt"], damping=v["world.damping"],
            max_speed=v["world.max_speed"], force_scale=v["world.force_scale"],
            agent_radius=v["world.agent_radius"], ball_radius=v["world.ball_radius"],
            landmark_radius=v["world.landmark_radius"],
            action_space=v["world.action_space"])

    def exploration_config(self) -> ExplorationConfig:
        v = self.values
        epsilon = 0.0 if self.mode == "unif_noise" else v["explore.epsilon"]
        return ExplorationConfig(
            epsilon=epsilon, delta=v["explore.delta"], b_exp=v["explore.b_exp"],
            max_attempts=v["explore.max_attempts"], rejection=v["explore.rejection"])

    def kernel_config(self) -> KernelConfig:
        return KernelConfig(h=self.values["kernel.h"])

    def thresholds(self) -> QuantizationThresholds:
        return QuantizationThresholds(sigma_min=self.values["quantize.sigma_min"],
                                      sigma_max=self.values["quantize.sigma_max"])

    def z_decay(self) -> float:
        if self.mode == "hard_transfer":
            return 1.0
        return 1.0 / self.values["mix.t_mix"]

    def to_text(self) -> str:
        lines = [f"{k} = {self._fmt(self.values[k])}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def semantic_text(self) -> str:
        """Config text minus run-control keys; the checkpoint compatibility
        hash comes from this, so resuming with a larger step budget or a
        different output directory is allowed."""
        skip = {"total_env_steps", "out_dir"}
        lines = [f"{k} = {self._fmt(self.values[k])}"
                 for k in sorted(self.values) if k not in skip]
        return "\n".join(lines) + "\n"

    @staticmethod
    def _fmt(value) -> str:
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, float):
            return repr(value)
        return str(value)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    with open(path) as fh:
        settings = parse_config(fh.read())
    settings.update(overrides or {})
    return RunConfig(settings)
