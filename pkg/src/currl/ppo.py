"""Rollouts, advantage estimation, and clipped-surrogate policy updates.

Each task in a batch is run for one full-horizon episode; trajectories are
grouped by agent count so one parameter set can train on mixed entity counts
during a level transition.  Per-task success fractions feed the curriculum's
value estimates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrainingDiverged
from .nets import Adam, ObsLayout, PolicyNet, layout_for
from .tasks import ScenarioSpec, TaskParams
from .world import VecWorld, WorldConfig


@dataclass
class PpoConfig:
    learning_rate: float = 5e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    ppo_epochs: int = 15
    entropy_coef: float = 0.01
    value_loss_coef: float = 1.0
    minibatch_count: int = 2
    parallel_envs: int = 64
    horizon: int = 0  # 0: use the scenario default
    reward_scale: float = 0.1
    adam_eps: float = 1e-5
    max_grad_norm: float = 10.0
    hidden: int = 64

    def __post_init__(self):
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")

    def effective_horizon(self, spec: ScenarioSpec) -> int:
        return self.horizon if self.horizon > 0 else spec.horizon


@dataclass
class RolloutGroup:
    """Trajectories of one lockstep chunk (same n, same horizon)."""

    n: int
    layout: ObsLayout
    obs: np.ndarray      # (T, B, A, D) float32
    actions: np.ndarray  # (T, B, A) int64
    log_probs: np.ndarray  # (T, B, A) float32
    rewards: np.ndarray  # (T, B, A) float32, reward-scaled
    values: np.ndarray   # (T, B, A) float32
    dones: np.ndarray    # (T, B) bool


@dataclass
class RolloutBatch:
    groups: list[RolloutGroup]
    task_values: list[tuple[TaskParams, float]]  # per unique task success rate
    episode_success: np.ndarray  # (episodes,) 0/1
    episode_coverage: np.ndarray  # mean coverage over the last five steps
    env_steps: int = 0
    advantages: list[np.ndarray] | None = None
    returns: list[np.ndarray] | None = None


def _chunks(seq, size):
    for at in range(0, len(seq), size):
        yield seq[at:at + size]


def rollout(net: PolicyNet, tasks: list[TaskParams], spec: ScenarioSpec,
            wcfg: WorldConfig, cfg: PpoConfig, rng) -> RolloutBatch:
    """One sampled episode per task instance (tasks may repeat)."""
    order = {}
    for task in tasks:
        order.setdefault(id(task), task)
    by_n: dict[int, list[TaskParams]] = {}
    for task in tasks:
        by_n.setdefault(task.n, []).append(task)

    groups = []
    stats: dict[int, list[int]] = {id(t): [0, 0] for t in order.values()}
    success_all = []
    coverage_all = []
    env_steps = 0
    for n, n_tasks in sorted(by_n.items()):
        layout = layout_for(spec, n)
        T = cfg.effective_horizon(spec)
        for chunk in _chunks(n_tasks, cfg.parallel_envs):
            world = VecWorld(spec, wcfg, chunk)
            B, A = world.B, n
            obs_arr = np.empty((T, B, A, layout.total_dim), dtype=np.float32)
            act_arr = np.empty((T, B, A), dtype=np.int64)
            logp_arr = np.empty((T, B, A), dtype=np.float32)
            rew_arr = np.empty((T, B, A), dtype=np.float32)
            val_arr = np.empty((T, B, A), dtype=np.float32)
            done_arr = np.zeros((T, B), dtype=bool)
            reached_full = np.zeros(B, dtype=bool)
            tail_cov = np.zeros(B, dtype=np.float64)
            for t in range(T):
                obs = world.observe().astype(np.float32)
                flat = obs.reshape(B * A, -1)
                logits, values = net.forward(flat, layout)
                actions = net.sample_actions(np.asarray(logits, dtype=np.float64), rng)
                logp, _, _ = net.log_probs_and_entropy(logits)
                logp_a = logp[np.arange(B * A), actions]
                shared, penalties, done, coverage = world.step(actions.reshape(B, A))
                obs_arr[t] = obs
                act_arr[t] = actions.reshape(B, A)
                logp_arr[t] = logp_a.reshape(B, A)
                val_arr[t] = values.reshape(B, A)
                rew_arr[t] = ((shared[:, None] + penalties) * cfg.reward_scale
                              ).astype(np.float32)
                done_arr[t] = done
                if t >= T - 5:
                    reached_full |= coverage >= 1.0
                    tail_cov += coverage
            groups.append(RolloutGroup(n=n, layout=layout, obs=obs_arr,
                                       actions=act_arr, log_probs=logp_arr,
                                       rewards=rew_arr, values=val_arr,
                                       dones=done_arr))
            env_steps += T * B
            for env_i, task in enumerate(chunk):
                rec = stats[id(task)]
                rec[0] += int(reached_full[env_i])
                rec[1] += 1
            success_all.extend(int(s) for s in reached_full)
            coverage_all.extend(tail_cov / 5.0)

    task_values = [(task, stats[id(task)][0] / stats[id(task)][1])
                   for task in order.values()]
    return RolloutBatch(groups=groups, task_values=task_values,
                        episode_success=np.array(success_all),
                        episode_coverage=np.array(coverage_all),
                        env_steps=env_steps)


def compute_gae(batch: RolloutBatch, cfg: PpoConfig, normalize: bool = True):
    """Recursive generalized advantage estimation per trajectory lane.

    Returns (advantages, returns) as per-group arrays shaped like rewards;
    returns are advantages plus value predictions.  Advantages are jointly
    normalized to zero mean and unit variance across the whole batch unless
    ``normalize`` is false.
    """
    adv_groups = []
    ret_groups = []
    for g in batch.groups:
        T = g.rewards.shape[0]
        adv = np.zeros_like(g.rewards, dtype=np.float64)
        last = np.zeros(g.rewards.shape[1:], dtype=np.float64)
        for t in reversed(range(T)):
            nonterminal = 1.0 - g.dones[t].astype(np.float64)[:, None]
            next_v = g.values[t + 1] if t + 1 < T else np.zeros_like(last)
            delta = g.rewards[t] + cfg.gamma * next_v * nonterminal - g.values[t]
            last = delta + cfg.gamma * cfg.gae_lambda * nonterminal * last
            adv[t] = last
        adv_groups.append(adv)
        ret_groups.append(adv + g.values)
    if normalize and adv_groups:
        flat = np.concatenate([a.ravel() for a in adv_groups])
        mean = flat.mean()
        std = flat.std()
        adv_groups = [(a - mean) / (std + 1e-8) for a in adv_groups]
    batch.advantages = adv_groups
    batch.returns = ret_groups
    return adv_groups, ret_groups


def ppo_loss_terms(net: PolicyNet, layout: ObsLayout, obs, actions, logp_old,
                   advantages, returns, cfg: PpoConfig, need_grads: bool = True):
    """Sum-convention loss terms and gradients for one sample slice.

    The caller divides by the union minibatch size; gradients are linear in
    the upstream scale so they can be rescaled after accumulation.
    """
    out = net.forward(obs, layout, need_cache=need_grads)
    logits, values = out[0], out[1]
    logp, probs, entropy = net.log_probs_and_entropy(logits)
    S = len(obs)
    idx = np.arange(S)
    logp_a = logp[idx, actions]
    ratio = np.exp(logp_a - logp_old)
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * advantages
    obj = np.minimum(surr1, surr2)
    v_err = values - returns
    terms = {
        "pi_sum": -obj.sum(),
        "v_sum": 0.5 * (v_err * v_err).sum(),
        "entropy_sum": entropy.sum(),
        "n": S,
        "clip_frac": float((surr2 < surr1).mean()),
    }
    if not need_grads:
        return terms, None
    cache = out[2]
    active = (surr1 <= surr2).astype(logits.dtype)
    dlogp_a = -active * ratio * advantages
    onehot = np.zeros_like(probs)
    onehot[idx, actions] = 1.0
    dlogits = dlogp_a[:, None] * (onehot - probs)
    dlogits += cfg.entropy_coef * probs * (logp + entropy[:, None])
    dvalues = cfg.value_loss_coef * v_err
    grads = net.backward(cache, dlogits, dvalues)
    return terms, grads


def ppo_update(net: PolicyNet, optimizer: Adam, batch: RolloutBatch,
               cfg: PpoConfig, rng) -> dict:
    """Clipped-surrogate update over shuffled minibatches, in place."""
    if batch.advantages is None:
        compute_gae(batch, cfg)
    flat = []
    for g, adv, ret in zip(batch.groups, batch.advantages, batch.returns):
        S = int(np.prod(g.actions.shape))
        flat.append({
            "layout": g.layout,
            "obs": g.obs.reshape(S, -1),
            "actions": g.actions.ravel(),
            "logp_old": g.log_probs.ravel().astype(np.float64),
            "adv": adv.ravel(),
            "ret": ret.ravel(),
        })
    stats = {"pi_loss": 0.0, "v_loss": 0.0, "entropy": 0.0, "clip_frac": 0.0}
    updates = 0
    for _ in range(cfg.ppo_epochs):
        perms = [rng.permutation(len(f["actions"])) for f in flat]
        edges = [np.linspace(0, len(p), cfg.minibatch_count + 1, dtype=int)
                 for p in perms]
        for mb in range(cfg.minibatch_count):
            grad_total: dict[str, np.ndarray] = {}
            n_total = 0
            loss_terms = {"pi_sum": 0.0, "v_sum": 0.0, "entropy_sum": 0.0}
            clip_fracs = []
            for f, perm, edge in zip(flat, perms, edges):
                take = perm[edge[mb]:edge[mb + 1]]
                if len(take) == 0:
                    continue
                terms, grads = ppo_loss_terms(
                    net, f["layout"], f["obs"][take], f["actions"][take],
                    f["logp_old"][take], f["adv"][take], f["ret"][take], cfg)
                n_total += terms["n"]
                for key in loss_terms:
                    loss_terms[key] += terms[key]
                clip_fracs.append(terms["clip_frac"])
                for k, v in grads.items():
                    if k in grad_total:
                        grad_total[k] += v
                    else:
                        grad_total[k] = v.copy()
            if n_total == 0:
                continue
            loss = (loss_terms["pi_sum"] + cfg.value_loss_coef * loss_terms["v_sum"]
                    - cfg.entropy_coef * loss_terms["entropy_sum"]) / n_total
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss} (pi={loss_terms['pi_sum']}, "
                    f"v={loss_terms['v_sum']}, ent={loss_terms['entropy_sum']})")
            scale = 1.0 / n_total
            grads = {k: v * scale for k, v in grad_total.items()}
            optimizer.step(net.params, grads, cfg.max_grad_norm)
            stats["pi_loss"] += loss_terms["pi_sum"] / n_total
            stats["v_loss"] += loss_terms["v_sum"] / n_total
            stats["entropy"] += loss_terms["entropy_sum"] / n_total
            stats["clip_frac"] += float(np.mean(clip_fracs))
            updates += 1
    if updates:
        for k in stats:
            stats[k] /= updates
    return stats


def evaluate(net: PolicyNet, n: int, spec: ScenarioSpec, episodes: int, rng,
             wcfg: WorldConfig | None = None, cfg: PpoConfig | None = None) -> float:
    """Mean final-window landmark coverage under the greedy policy.

    Episodes run on uniformly sampled tasks; the score is the mean over
    episodes of the mean coverage over the last five steps.
    """
    from .tasks import sample_uniform

    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    wcfg = wcfg or WorldConfig()
    cfg = cfg or PpoConfig()
    tasks = sample_uniform(n, spec, episodes, rng)
    layout = layout_for(spec, n)
    T = cfg.effective_horizon(spec)
    scores = []
    for chunk in _chunks(tasks, cfg.parallel_envs):
        world = VecWorld(spec, wcfg, chunk)
        B, A = world.B, n
        tail = np.zeros(B, dtype=np.float64)
        for t in range(T):
            obs = world.observe().astype(np.float32).reshape(B * A, -1)
            logits, _ = net.forward(obs, layout)
            actions = np.argmax(logits, axis=1).reshape(B, A)
            _, _, _, coverage = world.step(actions)
            if t >= T - 5:
                tail += coverage
        scores.extend(tail / 5.0)
    return float(np.mean(scores))
