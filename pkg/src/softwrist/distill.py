"""Student phase: a TCN encoder learns the privileged state from sensor history.

At step t the encoder sees the zero-padded history ``[o_{t-T}, ..., o_{t-1}]`` and its
estimate of ``x_t`` replaces the ground truth in the frozen teacher's input. Training
data always comes from fresh rollouts driven by the current student.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import seeding
from .config import ExperimentConfig, env_config, randomization_config, save_config
from .env import PegInHoleEnv
from .history import HistoryBuffer
from .nn import ActorCritic, Adam, Encoder, encoder_checkpoint, save_checkpoint, sigmoid, student_loss
from .nn.checkpoint import CheckpointMismatch

log = logging.getLogger(__name__)

LOSS_COLUMNS = ["iteration", "mse", "bce", "align_accuracy"]
TRACE_COLUMNS = ["t", "pred_x", "true_x", "pred_y", "true_y", "pred_z", "true_z", "pred_align_prob", "true_align"]


def check_teacher(teacher: ActorCritic, include_alignment: bool) -> None:
    want = 6 + (10 if include_alignment else 9)
    if teacher.kind != "mlp_policy" or teacher.in_dim != want:
        raise CheckpointMismatch(
            f"teacher takes {teacher.in_dim} inputs ({teacher.kind}); this configuration needs a privileged "
            f"policy with {want} (alignment {'on' if include_alignment else 'off'})")


def make_encoder(cfg: ExperimentConfig, rng: np.random.Generator) -> Encoder:
    d = cfg.distill
    return Encoder({"in_dim": 6, "history": d.history, "channels": d.channels, "kernel": d.kernel,
                    "dilations": list(d.dilations), "include_alignment": cfg.include_alignment}, rng)


def student_act(encoder: Encoder, teacher: ActorCritic, history, obs, threshold_alignment: bool = False) -> np.ndarray:
    """Teacher mean action on [obs, encoder estimate]. Accepts one sample or a batch."""
    history = np.asarray(history, dtype=float)
    obs = np.asarray(obs, dtype=float)
    single = history.ndim == 2
    if single:
        history, obs = history[None], obs[None]
    est = encoder.privileged_estimate(history, threshold_alignment)
    a = teacher.mean(np.concatenate([obs, est], axis=1))
    return a[0] if single else a


@dataclass
class DistillBatch:
    histories: np.ndarray
    pose: np.ndarray
    align: np.ndarray
    successes: list
    lengths: list

    def __len__(self) -> int:
        return len(self.pose)


class StudentDriver:
    """Runs environments in lockstep under the student and records (history, truth) pairs."""

    def __init__(self, envs: list[PegInHoleEnv], history: int, threshold_alignment: bool = False):
        self.envs = envs
        self.threshold = threshold_alignment
        self.hists = [HistoryBuffer(history, e.obs_dim) for e in envs]
        self.obs = [None] * len(envs)
        for i, env in enumerate(envs):
            self.obs[i], _ = env.reset()

    def collect(self, encoder: Encoder, teacher: ActorCritic, n_steps: int) -> DistillBatch:
        H, P, A, succ, lens = [], [], [], [], []
        while len(P) < n_steps:
            hist = np.stack([h.array() for h in self.hists])
            priv = np.stack([env.privileged() for env in self.envs])
            actions = student_act(encoder, teacher, hist, np.stack(self.obs), self.threshold)
            for i, env in enumerate(self.envs):
                if len(P) < n_steps:
                    H.append(hist[i])
                    P.append(priv[i, :9])
                    A.append(priv[i, 9] if priv.shape[1] > 9 else 0.0)
                res = env.step(actions[i])
                self.hists[i].push(self.obs[i])
                self.obs[i] = res.observation
                if res.terminated:
                    succ.append(float(res.success))
                    lens.append(env.steps)
                    self.obs[i], _ = env.reset()
                    self.hists[i].reset()
        return DistillBatch(np.array(H), np.array(P), np.array(A), succ, lens)


def collect_distill_data(encoder: Encoder, teacher: ActorCritic, cfg: ExperimentConfig, n_steps: int,
                         seed: int | None = None) -> DistillBatch:
    """One-off collection with fresh environments (``cfg.workers`` of them)."""
    seed = cfg.seed if seed is None else seed
    ecfg, rand = env_config(cfg), randomization_config(cfg)
    envs = [PegInHoleEnv(ecfg, rand, rng=seeding.stream(seed, "distill-env", i)) for i in range(cfg.workers)]
    return StudentDriver(envs, cfg.distill.history, cfg.distill.threshold_alignment).collect(encoder, teacher, n_steps)


def encoder_loss_and_grads(encoder: Encoder, histories, pose, align, w: float):
    outs, cache = encoder.net.forward(histories)
    logit = outs["align"][:, 0] if encoder.include_alignment else None
    loss, parts, d_pose, d_logit = student_loss(outs["pose"], logit, pose, align if logit is not None else None,
                                                w, with_grad=True)
    d_heads = {"pose": d_pose}
    if logit is not None:
        d_heads["align"] = d_logit
        parts["align_accuracy"] = float(np.mean((logit > 0) == (align > 0.5)))
    else:
        parts["align_accuracy"] = math.nan
    return loss, parts, encoder.net.backward(cache, d_heads)


def evaluate_encoder(encoder: Encoder, batch: DistillBatch) -> dict:
    pose, logit = encoder.predict(batch.histories)
    out = {"rmse": np.sqrt(np.mean((pose - batch.pose) ** 2, axis=0)).tolist(),
           "pos_rmse": float(np.sqrt(np.mean((pose[:, :3] - batch.pose[:, :3]) ** 2))),
           "samples": len(batch)}
    if logit is not None:
        out["align_accuracy"] = float(np.mean((logit > 0) == (batch.align > 0.5)))
        out["aligned_fraction"] = float(np.mean(batch.align))
    return out


@dataclass
class StudentRun:
    encoder: Encoder
    curve: list[dict]
    checkpoint: Path
    heldout: dict


def annealed_lr(lr: float, lr_final: float | None, it: int, iterations: int) -> float:
    """Learning rate for 1-based iteration ``it``: linear from lr to lr_final, or constant."""
    if lr_final is None or iterations <= 1:
        return lr
    frac = (it - 1) / (iterations - 1)
    return lr + frac * (lr_final - lr)


def train_student(cfg: ExperimentConfig, teacher: ActorCritic, out_dir: str | Path, iterations: int | None = None,
                  teacher_normalization: dict | None = None, progress=None) -> StudentRun:
    """Fresh on-policy batches each iteration, minibatch Adam on the student loss."""
    check_teacher(teacher, cfg.include_alignment)
    d = cfg.distill
    iterations = iterations or d.iterations
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.resolved.json")
    ecfg, rand = env_config(cfg), randomization_config(cfg)
    envs = [PegInHoleEnv(ecfg, rand, rng=seeding.stream(cfg.seed, "distill-env", i)) for i in range(cfg.workers)]
    driver = StudentDriver(envs, d.history, d.threshold_alignment)
    encoder = make_encoder(cfg, seeding.stream(cfg.seed, "encoder-init"))
    opt = Adam(encoder.params, lr=d.lr)
    mb_rng = seeding.stream(cfg.seed, "distill-minibatch")
    norm = teacher_normalization if teacher_normalization is not None else ecfg.norm.to_dict()
    curve = []
    with open(out / "student_loss.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOSS_COLUMNS)
        writer.writeheader()
        for it in range(1, iterations + 1):
            opt.lr = annealed_lr(d.lr, d.lr_final, it, iterations)
            batch = driver.collect(encoder, teacher, d.steps_per_iteration)
            n = len(batch)
            mb = min(d.minibatch, n)
            agg: dict[str, list] = {}
            for _ in range(d.epochs):
                perm = mb_rng.permutation(n)
                for start in range(0, n - mb + 1, mb):
                    idx = perm[start:start + mb]
                    loss, parts, grads = encoder_loss_and_grads(encoder, batch.histories[idx], batch.pose[idx],
                                                                batch.align[idx], d.align_weight)
                    if not math.isfinite(loss):
                        raise FloatingPointError(f"non-finite student loss at iteration {it}")
                    opt.step(encoder.params, grads)
                    for k, v in parts.items():
                        agg.setdefault(k, []).append(v)
            row = {"iteration": it, "mse": float(np.mean(agg["mse"])), "bce": float(np.mean(agg["bce"])),
                   "align_accuracy": float(np.mean(agg["align_accuracy"]))}
            curve.append(row)
            writer.writerow(row)
            fh.flush()
            log.info("student iter %d mse %.4f bce %.4f acc %.3f", it, row["mse"], row["bce"], row["align_accuracy"])
            if progress is not None:
                progress(row)
            if it % d.checkpoint_every == 0 or it == iterations:
                meta = {"iteration": it, "seed": cfg.seed, "ablation": cfg.ablation,
                        "include_alignment": cfg.include_alignment}
                save_checkpoint(encoder_checkpoint(encoder, norm, meta), out / "encoder.swck")
    heldout_batch = collect_distill_data(encoder, teacher, cfg, d.heldout_steps,
                                         seed=seeding.derived_seed(cfg.seed, "heldout"))
    heldout = evaluate_encoder(encoder, heldout_batch)
    (out / "heldout.json").write_text(json.dumps(heldout, indent=2) + "\n")
    return StudentRun(encoder, curve, out / "encoder.swck", heldout)


# ---------------------------------------------------------------- prediction traces

def prediction_trace(encoder: Encoder, teacher: ActorCritic, cfg: ExperimentConfig, n_episodes: int,
                     seed: int | None = None) -> list[list[dict]]:
    """Per-episode lists of rows in the prediction-trace schema."""
    seed = cfg.seed if seed is None else seed
    ecfg, rand = env_config(cfg), randomization_config(cfg, for_eval=True)
    episodes = []
    for ep in range(n_episodes):
        env = PegInHoleEnv(ecfg, rand, rng=seeding.stream(seed, "trace-episode", ep))
        hist = HistoryBuffer(cfg.distill.history, env.obs_dim)
        obs, _ = env.reset()
        rows = []
        while True:
            h = hist.array()[None]
            pose, logit = encoder.predict(h)
            truth = env.privileged()
            prob = float(sigmoid(logit)[0]) if logit is not None else math.nan
            rows.append({"t": env.steps, "pred_x": pose[0, 0], "true_x": truth[0], "pred_y": pose[0, 1],
                         "true_y": truth[1], "pred_z": pose[0, 2], "true_z": truth[2], "pred_align_prob": prob,
                         "true_align": int(truth[9]) if len(truth) > 9 else 0})
            a = student_act(encoder, teacher, h[0], obs, cfg.distill.threshold_alignment)
            res = env.step(a)
            hist.push(obs)
            obs = res.observation
            if res.terminated:
                break
        episodes.append(rows)
    return episodes


def write_prediction_trace(episodes: list[list[dict]], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        w.writeheader()
        for rows in episodes:
            w.writerows(rows)
    return path


def dump_prediction_trace(encoder: Encoder, teacher: ActorCritic, cfg: ExperimentConfig, n_episodes: int,
                          path: str | Path, seed: int | None = None) -> Path:
    return write_prediction_trace(prediction_trace(encoder, teacher, cfg, n_episodes, seed), path)


def trace_metrics(episodes: list[list[dict]], window: int = 3) -> dict:
    """Position RMSE per axis and how promptly the alignment estimate follows the truth."""
    rows = [r for ep in episodes for r in ep]
    rmse = {ax: float(np.sqrt(np.mean([(r[f"pred_{ax}"] - r[f"true_{ax}"]) ** 2 for r in rows]))) for ax in "xyz"}
    hits = total = 0
    for ep in episodes:
        truth = np.array([r["true_align"] for r in ep])
        pred = np.array([r["pred_align_prob"] > 0.5 for r in ep])
        changes = np.nonzero(np.diff(truth))[0] + 1
        if len(changes) == 0:
            continue
        t0 = changes[0]
        total += 1
        lo, hi = max(0, t0 - window), min(len(ep), t0 + window + 1)
        pred_changes = np.nonzero(np.diff(pred.astype(int)))[0] + 1
        hits += int(np.any((pred_changes >= lo) & (pred_changes < hi)))
    return {"rmse": rmse, "transition_hit_rate": hits / total if total else math.nan, "episodes_with_transition": total}
