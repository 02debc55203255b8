"""PPO training of the privileged teacher policy."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import seeding
from .config import ExperimentConfig, RlSection, env_config, randomization_config, save_config
from .env import PegInHoleEnv
from .history import HistoryBuffer
from .nn import ActorCritic, Adam, clip_by_global_norm, gaussian_log_prob, policy_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

CURVE_COLUMNS = ["iteration", "timesteps", "mean_return", "success_rate", "mean_episode_len",
                 "policy_loss", "value_loss", "entropy"]


class NonFiniteLoss(FloatingPointError):
    pass


def compute_gae(rewards, values, dones, bootstrap, gamma: float = 0.99, lam: float = 0.95):
    """Generalized advantage estimates along axis 0 (time); extra axes are independent streams.

    ``dones[t]`` marks that step t ended its episode, so nothing flows back across it.
    ``bootstrap`` is the value estimate after the last step.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=float)
    adv = np.zeros_like(r)
    last = np.zeros_like(r[0])
    for t in reversed(range(len(r))):
        next_v = np.asarray(bootstrap, dtype=float) if t == len(r) - 1 else v[t + 1]
        keep = 1.0 - d[t]
        delta = r[t] + gamma * next_v * keep - v[t]
        last = delta + gamma * lam * keep * last
        adv[t] = last
    return adv, adv + v


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def clipped_surrogate(ratio, adv, clip: float) -> np.ndarray:
    """Per-sample PPO objective min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)."""
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(adv, dtype=float)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)


# ---------------------------------------------------------------- policies and inputs

def make_policy(cfg: ExperimentConfig, rng: np.random.Generator) -> ActorCritic:
    rl = cfg.rl
    if rl.policy == "mlp":
        in_dim = 6 + (10 if cfg.include_alignment else 9)
        arch = {"in_dim": in_dim, "hidden": list(rl.hidden), "act_dim": 3, "init_std": rl.init_std,
                "input": "privileged", "value_scale": rl.value_scale}
        return ActorCritic("mlp_policy", arch, rng)
    d = cfg.distill
    arch = {"in_dim": 6, "history": d.history, "channels": d.channels, "kernel": d.kernel,
            "dilations": list(d.dilations), "act_dim": 3, "init_std": rl.init_std, "input": "history",
            "value_scale": rl.value_scale}
    return ActorCritic("tcn_policy", arch, rng)


class InputTracker:
    """Builds the policy input of one environment (privileged vector or sensor history)."""

    def __init__(self, env: PegInHoleEnv, kind: str, history: int = 20):
        self.env = env
        self.kind = kind
        self.hist = HistoryBuffer(history, env.obs_dim) if kind == "history" else None

    def on_reset(self, obs) -> None:
        if self.hist is not None:
            self.hist.reset()
            self.hist.push(obs)

    def on_step(self, obs) -> None:
        if self.hist is not None:
            self.hist.push(obs)

    def current(self) -> np.ndarray:
        if self.hist is not None:
            return self.hist.array()
        return self.env.policy_input()


# ---------------------------------------------------------------- rollout collection

@dataclass
class EpisodeStats:
    returns: list = field(default_factory=list)
    successes: list = field(default_factory=list)
    lengths: list = field(default_factory=list)

    def summary(self) -> tuple[float, float, float]:
        if not self.returns:
            return math.nan, math.nan, math.nan
        return float(np.mean(self.returns)), float(np.mean(self.successes)), float(np.mean(self.lengths))


class RolloutCollector:
    """Steps a fixed list of environments in lockstep; worker order fixes the batch layout."""

    def __init__(self, envs: list[PegInHoleEnv], input_kind: str, history: int, rng: np.random.Generator):
        self.envs = envs
        self.trackers = [InputTracker(e, input_kind, history) for e in envs]
        self.rng = rng
        self.ep_return = np.zeros(len(envs))
        for env, tr in zip(envs, self.trackers):
            obs, _ = env.reset()
            tr.on_reset(obs)

    def collect(self, policy: ActorCritic, steps_per_env: int, value_scale: float):
        n = len(self.envs)
        inputs, actions, logps, rewards, values, dones = [], [], [], [], [], []
        stats = EpisodeStats()
        for _ in range(steps_per_env):
            x = np.stack([tr.current() for tr in self.trackers])
            a, logp, v = policy.act(x, self.rng)
            r = np.zeros(n)
            done = np.zeros(n)
            for i, (env, tr) in enumerate(zip(self.envs, self.trackers)):
                res = env.step(a[i])
                r[i] = res.reward
                self.ep_return[i] += res.reward
                if res.terminated:
                    done[i] = 1.0
                    stats.returns.append(self.ep_return[i])
                    stats.successes.append(float(res.success))
                    stats.lengths.append(env.steps)
                    self.ep_return[i] = 0.0
                    obs, _ = env.reset()
                    tr.on_reset(obs)
                else:
                    tr.on_step(res.observation)
            inputs.append(x)
            actions.append(a)
            logps.append(logp)
            rewards.append(r)
            values.append(v / value_scale)
            dones.append(done)
        x_last = np.stack([tr.current() for tr in self.trackers])
        bootstrap = policy.value(x_last) / value_scale
        batch = {
            "inputs": np.stack(inputs), "actions": np.stack(actions), "logp": np.stack(logps),
            "rewards": np.stack(rewards), "values": np.stack(values), "dones": np.stack(dones),
            "bootstrap": bootstrap,
        }
        return batch, stats


# ---------------------------------------------------------------- PPO update

def _split_groups(grads: dict[str, np.ndarray]):
    actor = {k: v for k, v in grads.items() if not k.startswith("critic.")}
    critic = {k: v for k, v in grads.items() if k.startswith("critic.")}
    return actor, critic


def ppo_loss_and_grads(policy: ActorCritic, x, actions, old_logp, adv, returns_scaled, hp: RlSection):
    """PPO loss on one minibatch and its exact gradient for every policy parameter."""
    n = len(adv)
    mean, value, caches = policy.forward_train(x)
    log_std = policy.log_std
    logp = gaussian_log_prob(actions, mean, log_std)
    ratio = np.exp(logp - old_logp)
    surr = clipped_surrogate(ratio, adv, hp.clip)
    unclipped = ratio * adv <= np.clip(ratio, 1.0 - hp.clip, 1.0 + hp.clip) * adv
    policy_loss = -float(np.mean(surr))
    value_loss = float(np.mean((value - returns_scaled) ** 2))
    entropy = policy.entropy()
    total = policy_loss + hp.value_coef * value_loss - hp.entropy_coef * entropy
    if not math.isfinite(total):
        raise NonFiniteLoss(f"non-finite PPO loss: policy {policy_loss}, value {value_loss}, entropy {entropy}")
    d_logp = -(ratio * adv * unclipped) / n
    inv_var = np.exp(-2.0 * log_std)
    diff = actions - mean
    d_mean = d_logp[:, None] * diff * inv_var
    d_log_std = np.sum(d_logp[:, None] * (diff * diff * inv_var - 1.0), axis=0) - hp.entropy_coef
    d_value = 2.0 * hp.value_coef * (value - returns_scaled) / n
    grads = policy.backward(caches, d_mean, d_value, d_log_std)
    stats = {"policy_loss": policy_loss, "value_loss": value_loss, "entropy": entropy,
             "approx_kl": float(np.mean(old_logp - logp)), "clip_frac": float(np.mean(np.abs(ratio - 1.0) > hp.clip))}
    return total, grads, stats


def ppo_update(policy: ActorCritic, opt: Adam, batch: dict, hp: RlSection, rng: np.random.Generator) -> dict:
    """Epochs of shuffled minibatch updates on one rollout batch (flattened over time and envs)."""
    adv, returns = compute_gae(batch["rewards"], batch["values"], batch["dones"], batch["bootstrap"], hp.gamma, hp.lam)
    x = batch["inputs"].reshape(-1, *batch["inputs"].shape[2:])
    a = batch["actions"].reshape(-1, batch["actions"].shape[-1])
    old_logp = batch["logp"].reshape(-1)
    adv = normalize_advantages(adv.reshape(-1))
    ret_scaled = returns.reshape(-1) * hp.value_scale
    n = len(adv)
    mb = min(hp.minibatch, n)
    agg: dict[str, list] = {}
    for _ in range(hp.epochs):
        perm = rng.permutation(n)
        for start in range(0, n - mb + 1, mb):
            idx = perm[start:start + mb]
            _, grads, stats = ppo_loss_and_grads(policy, x[idx], a[idx], old_logp[idx], adv[idx], ret_scaled[idx], hp)
            g_actor, g_critic = _split_groups(grads)
            g_actor, _ = clip_by_global_norm(g_actor, hp.max_grad_norm)
            g_critic, _ = clip_by_global_norm(g_critic, hp.max_grad_norm)
            opt.step(policy.params, {**g_actor, **g_critic})
            for k, v in stats.items():
                agg.setdefault(k, []).append(v)
    return {k: float(np.mean(v)) for k, v in agg.items()}


# ---------------------------------------------------------------- evaluation helper

def evaluate_policy(policy: ActorCritic, cfg: ExperimentConfig, n_trials: int, seed: int,
                    randomization=None) -> tuple[float, float]:
    """Deterministic-action success rate and mean return over ``n_trials`` seeded episodes."""
    rand = randomization or randomization_config(cfg, for_eval=True)
    successes, returns = [], []
    kind = policy.arch.get("input", "privileged")
    for trial in range(n_trials):
        env = PegInHoleEnv(env_config(cfg), rand, rng=seeding.stream(seed, "eval-trial", trial))
        tr = InputTracker(env, kind, int(policy.arch.get("history", 20)))
        obs, _ = env.reset()
        tr.on_reset(obs)
        total = 0.0
        while True:
            a, _, _ = policy.act(tr.current()[None], deterministic=True)
            res = env.step(a[0])
            total += res.reward
            if res.terminated:
                break
            tr.on_step(res.observation)
        successes.append(float(res.success))
        returns.append(total)
    return float(np.mean(successes)), float(np.mean(returns))


# ---------------------------------------------------------------- training loop

@dataclass
class TeacherRun:
    policy: ActorCritic
    curve: list[dict]
    checkpoint: Path
    best_checkpoint: Path | None
    best_success: float


def teacher_metadata(cfg: ExperimentConfig, iteration: int, timesteps: int) -> dict:
    return {"iteration": iteration, "timesteps": timesteps, "seed": cfg.seed, "ablation": cfg.ablation,
            "include_alignment": cfg.include_alignment, "peg_shape": cfg.env.peg_shape.value,
            "workers": cfg.workers}


def train_teacher(cfg: ExperimentConfig, out_dir: str | Path, iterations: int | None = None,
                  progress=None) -> TeacherRun:
    """PPO loop. Writes teacher checkpoints, the learning curve and a config snapshot to ``out_dir``."""
    hp = cfg.rl
    iterations = iterations or hp.iterations
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.resolved.json")
    ecfg = env_config(cfg)
    rand = randomization_config(cfg)
    envs = [PegInHoleEnv(ecfg, rand, rng=seeding.stream(cfg.seed, "env", i)) for i in range(cfg.workers)]
    policy = make_policy(cfg, seeding.stream(cfg.seed, "init"))
    opt = Adam(policy.params, lr=hp.lr)
    collector = RolloutCollector(envs, policy.arch["input"], int(policy.arch.get("history", 20)),
                                 seeding.stream(cfg.seed, "policy"))
    mb_rng = seeding.stream(cfg.seed, "minibatch")
    norm = ecfg.norm.to_dict()
    steps_per_env = max(1, hp.steps_per_iteration // cfg.workers)
    curve: list[dict] = []
    timesteps = 0
    best_success, best_path = -1.0, None
    curve_path = out / "learning_curve.csv"
    with open(curve_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS)
        writer.writeheader()
        for it in range(1, iterations + 1):
            t0 = time.perf_counter()
            batch, ep = collector.collect(policy, steps_per_env, hp.value_scale)
            timesteps += batch["rewards"].size
            stats = ppo_update(policy, opt, batch, hp, mb_rng)
            mean_ret, succ, ep_len = ep.summary()
            row = {"iteration": it, "timesteps": timesteps, "mean_return": mean_ret, "success_rate": succ,
                   "mean_episode_len": ep_len, "policy_loss": stats["policy_loss"],
                   "value_loss": stats["value_loss"], "entropy": stats["entropy"]}
            curve.append(row)
            writer.writerow(row)
            fh.flush()
            log.info("iter %d return %.2f success %.2f len %.1f (%.2fs)", it, mean_ret, succ, ep_len,
                     time.perf_counter() - t0)
            if progress is not None:
                progress(row)
            if it % hp.checkpoint_every == 0 or it == iterations:
                ckpt = policy_checkpoint(policy, norm, teacher_metadata(cfg, it, timesteps))
                save_checkpoint(ckpt, out / "teacher.swck")
            if hp.eval_every and (it % hp.eval_every == 0 or it == iterations):
                rate, _ = evaluate_policy(policy, cfg, hp.eval_trials, seeding.derived_seed(cfg.seed, "train-eval"))
                log.info("iter %d eval success %.2f", it, rate)
                if rate > best_success:
                    best_success = rate
                    meta = teacher_metadata(cfg, it, timesteps)
                    meta["eval_success"] = rate
                    best_path = save_checkpoint(policy_checkpoint(policy, norm, meta), out / "teacher_best.swck")
    return TeacherRun(policy, curve, out / "teacher.swck", best_path, best_success)
