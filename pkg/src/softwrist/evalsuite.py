"""Batch evaluation: success rates over shape, misalignment and seed grids.

Every trial builds its own environment whose RNG comes from (base seed, condition
index, trial index), so trials are independent of execution order and of any other
condition. Success is the environment's own termination verdict.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import seeding
from .config import ExperimentConfig, env_config, randomization_config
from .distill import student_act
from .env import EnvConfig, NormalizationConstants, PegInHoleEnv, trace_row
from .geometry import Shape
from .history import HistoryBuffer
from .nn import ActorCritic, Encoder, load_checkpoint, network_from_checkpoint
from .nn.checkpoint import CheckpointMismatch

POLICY_KINDS = ("teacher", "student", "student_no_align", "tcn_baseline", "oracle", "zero")
ABLATION_ROWS = ("all", "fixed-angle", "fixed-hole", "fixed-stiffness", "no-alignment")
REPORT_COLUMNS = ["condition", "peg_shape", "misalignment_deg", "start_shift", "policy_kind", "policy_seed",
                  "n_trials", "successes", "success_rate", "mean_episode_len", "mean_return"]
QUARTILE_METHOD = "linear"


# ---------------------------------------------------------------- agents

class Agent:
    """Per-episode controller. ``priv_width`` is the privileged width the agent expects (None: any)."""

    kind = "agent"
    priv_width: int | None = None
    normalization: dict | None = None

    def reset(self, env: PegInHoleEnv, obs: np.ndarray) -> None:
        pass

    def act(self, env: PegInHoleEnv, obs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def observe(self, obs_before: np.ndarray, obs_after: np.ndarray) -> None:
        pass


class ZeroAgent(Agent):
    kind = "zero"

    def act(self, env, obs):
        return np.zeros(3)


class ScriptedOracle(Agent):
    """Privileged hand-written controller: centre the resting tip over the hole, then descend.

    The lateral command targets where the tip would be with the wrist at rest, which
    filters out the swing of the soft wrist. It descends once that point is within
    0.5 mm of the hole axis and the swing has settled, or once the tip is already
    a hover height below the plate surface.
    """

    kind = "oracle"

    def __init__(self, lateral_gain: float = 0.5, hover: float = 0.002, axis_tol: float = 0.0005,
                 swing_tol: float = 0.0008):
        self.lateral_gain = lateral_gain
        self.hover = hover
        self.axis_tol = axis_tol
        self.swing_tol = swing_tol

    def act(self, env, obs):
        st = env.state
        tip = env.tip()
        tip_local = env.scene.grasp_pose.apply(np.array([[0.0, 0.0, -env.config.peg_length]]))[0]
        rest_tip = st.base_pos + tip_local + np.array([0.0, 0.0, st.q[0]])
        err = rest_tip - env.target
        stroke = env.config.action_scale
        a = np.zeros(3)
        a[:2] = np.clip(-self.lateral_gain * err[:2] / stroke, -1.0, 1.0)
        swing = math.hypot(*(tip - rest_tip)[:2])
        if tip[2] < -self.hover or (math.hypot(*err[:2]) < self.axis_tol and swing < self.swing_tol):
            a[2] = -1.0
        else:
            a[2] = np.clip(-(tip[2] - self.hover) / stroke, -1.0, 1.0)
        return a


class TeacherAgent(Agent):
    kind = "teacher"

    def __init__(self, policy: ActorCritic, normalization: dict | None = None):
        self.policy = policy
        self.priv_width = policy.in_dim - 6
        self.normalization = normalization

    def act(self, env, obs):
        return self.policy.mean(env.policy_input()[None])[0]


class StudentAgent(Agent):
    kind = "student"

    def __init__(self, encoder: Encoder, teacher: ActorCritic, threshold_alignment: bool = False,
                 normalization: dict | None = None):
        self.encoder = encoder
        self.teacher = teacher
        self.threshold = threshold_alignment
        self.priv_width = teacher.in_dim - 6
        self.normalization = normalization
        if self.priv_width != (10 if encoder.include_alignment else 9):
            raise CheckpointMismatch(f"encoder predicts {'10' if encoder.include_alignment else '9'} privileged "
                                     f"values, teacher expects {self.priv_width}")
        if not encoder.include_alignment:
            self.kind = "student_no_align"
        self.hist = HistoryBuffer(encoder.history, 6)

    def reset(self, env, obs):
        self.hist.reset()

    def act(self, env, obs):
        return student_act(self.encoder, self.teacher, self.hist.array(), obs, self.threshold)

    def observe(self, obs_before, obs_after):
        self.hist.push(obs_before)


class TcnBaselineAgent(Agent):
    """Policy on raw sensor history, trained end to end without privileged data."""

    kind = "tcn_baseline"

    def __init__(self, policy: ActorCritic, normalization: dict | None = None):
        self.policy = policy
        self.normalization = normalization
        self.hist = HistoryBuffer(int(policy.arch.get("history", 20)), 6)

    def reset(self, env, obs):
        self.hist.reset()
        self.hist.push(obs)

    def act(self, env, obs):
        return self.policy.mean(self.hist.array()[None])[0]

    def observe(self, obs_before, obs_after):
        self.hist.push(obs_after)


def load_agent(policy_path: str | Path, encoder_path: str | Path | None = None,
               threshold_alignment: bool = False) -> Agent:
    ckpt = load_checkpoint(policy_path)
    net = network_from_checkpoint(ckpt)
    if not isinstance(net, ActorCritic):
        raise CheckpointMismatch(f"{policy_path} holds a {ckpt.kind}, not a policy")
    if net.kind == "tcn_policy":
        if encoder_path is not None:
            raise CheckpointMismatch("the history-based baseline policy takes no encoder")
        return TcnBaselineAgent(net, ckpt.normalization)
    if encoder_path is None:
        return TeacherAgent(net, ckpt.normalization)
    enc_ckpt = load_checkpoint(encoder_path)
    enc = network_from_checkpoint(enc_ckpt)
    if not isinstance(enc, Encoder):
        raise CheckpointMismatch(f"{encoder_path} holds a {enc_ckpt.kind}, not an encoder")
    return StudentAgent(enc, net, threshold_alignment, ckpt.normalization)


# ---------------------------------------------------------------- conditions and reports

@dataclass(frozen=True)
class EvalCondition:
    """One evaluation cell. ``misalignment_deg`` None keeps the random grasp angle;
    ``start_shift`` 0 keeps the training init noise; ``randomization`` overrides flags."""

    peg_shape: Shape = Shape.CIRCLE
    misalignment_deg: float | None = None
    start_shift: float = 0.0
    n_trials: int = 100
    policy_kind: str = "teacher"
    randomization: tuple = ()
    include_alignment: bool = True

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.policy_kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.policy_kind!r}")

    @property
    def label(self) -> str:
        mis = "rand" if self.misalignment_deg is None else f"{self.misalignment_deg:+g}deg"
        return f"{Shape(self.peg_shape).value}/{mis}/shift{self.start_shift * 1000:g}mm"


@dataclass
class ConditionResult:
    condition: str
    peg_shape: str
    misalignment_deg: float | None
    start_shift: float
    policy_kind: str
    policy_seed: int
    n_trials: int
    successes: int
    success_rate: float
    mean_episode_len: float
    mean_return: float
    trial_success: list = field(default_factory=list, repr=False)


@dataclass
class EvalReport:
    rows: list[ConditionResult] = field(default_factory=list)

    def merge(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(self.rows + other.rows)

    def by_condition(self) -> dict[str, list[ConditionResult]]:
        out: dict[str, list[ConditionResult]] = {}
        for r in self.rows:
            out.setdefault(r.condition, []).append(r)
        return out

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, extrasaction="ignore")
            w.writeheader()
            for r in self.rows:
                w.writerow(asdict(r))
        return path

    def summary(self) -> dict:
        return {"quartile_method": QUARTILE_METHOD, "conditions": summarize_seeds(self),
                "rows": [{k: v for k, v in asdict(r).items() if k != "trial_success"} for r in self.rows]}

    def write_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.summary(), indent=2) + "\n")
        return path


def quartiles(values) -> dict:
    v = np.asarray(values, dtype=float)
    q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0], method=QUARTILE_METHOD)
    return {"min": float(q[0]), "q1": float(q[1]), "median": float(q[2]), "q3": float(q[3]), "max": float(q[4])}


def summarize_seeds(reports) -> dict:
    """Quartiles of the success rate per condition across policy seeds; raw values kept."""
    if isinstance(reports, EvalReport):
        reports = [reports]
    merged = EvalReport([r for rep in reports for r in rep.rows])
    out = {}
    for label, rows in merged.by_condition().items():
        rates = [r.success_rate for r in rows]
        out[label] = {**quartiles(rates), "seeds": [r.policy_seed for r in rows], "success_rates": rates}
    return out


# ---------------------------------------------------------------- running

def condition_env_config(cfg: ExperimentConfig, cond: EvalCondition, agent: Agent) -> EnvConfig:
    ecfg = replace(env_config(cfg, cond.peg_shape), include_alignment=cond.include_alignment)
    if agent.priv_width is not None and agent.priv_width != ecfg.priv_dim:
        raise CheckpointMismatch(f"{agent.kind} policy expects {agent.priv_width} privileged values, condition "
                                 f"{cond.label} provides {ecfg.priv_dim}")
    if agent.normalization:
        ecfg = replace(ecfg, norm=NormalizationConstants.from_dict(agent.normalization))
    return ecfg


def condition_randomization(cfg: ExperimentConfig, cond: EvalCondition):
    rand = randomization_config(cfg, for_eval=True)
    updates = dict(cond.randomization)
    if cond.misalignment_deg is not None:
        updates["fixed_grasp_angle"] = math.radians(cond.misalignment_deg)
    if cond.start_shift > 0:
        updates["start_shift"] = cond.start_shift
    return replace(rand, **updates)


def run_trial(agent: Agent, env: PegInHoleEnv) -> tuple[bool, int, float]:
    obs, _ = env.reset()
    agent.reset(env, obs)
    total = 0.0
    while True:
        res = env.step(agent.act(env, obs))
        total += res.reward
        agent.observe(obs, res.observation)
        obs = res.observation
        if res.terminated:
            return bool(res.success), env.steps, total


def run_eval(agent: Agent, conditions: list[EvalCondition], cfg: ExperimentConfig, seed: int | None = None,
             policy_seed: int = 0) -> EvalReport:
    seed = cfg.eval.seed if seed is None else seed
    report = EvalReport()
    for ci, cond in enumerate(conditions):
        ecfg = condition_env_config(cfg, cond, agent)
        rand = condition_randomization(cfg, cond)
        outcomes = [run_trial(agent, PegInHoleEnv(ecfg, rand, rng=seeding.stream(seed, "eval", ci, t)))
                    for t in range(cond.n_trials)]
        succ = [o[0] for o in outcomes]
        report.rows.append(ConditionResult(
            cond.label, Shape(cond.peg_shape).value, cond.misalignment_deg, cond.start_shift, cond.policy_kind,
            policy_seed, cond.n_trials, int(sum(succ)), sum(succ) / cond.n_trials,
            float(np.mean([o[1] for o in outcomes])), float(np.mean([o[2] for o in outcomes])), succ))
    return report


def training_condition(cfg: ExperimentConfig, n_trials: int | None = None, policy_kind: str = "teacher") -> EvalCondition:
    """The training distribution itself (with the ablation ignored)."""
    return EvalCondition(cfg.env.peg_shape, None, 0.0, n_trials or cfg.eval.n_trials, policy_kind,
                         include_alignment=cfg.include_alignment)


def table_conditions(cfg: ExperimentConfig, policy_kind: str = "teacher", n_trials: int | None = None,
                     include_alignment: bool | None = None) -> list[EvalCondition]:
    """Shape x misalignment grid with the uniform start shift."""
    inc = cfg.include_alignment if include_alignment is None else include_alignment
    return [EvalCondition(shape, mis, cfg.eval.start_shift, n_trials or cfg.eval.n_trials, policy_kind,
                          include_alignment=inc)
            for shape in cfg.eval.shapes for mis in cfg.eval.misalignments_deg]


def write_table_grid(report: EvalReport, path: str | Path, misalignments=(-5.0, 0.0, 5.0)) -> Path:
    """Success counts laid out as shape rows by misalignment columns."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cells = {(r.peg_shape, r.misalignment_deg): r for r in report.rows}
    shapes = list(dict.fromkeys(r.peg_shape for r in report.rows))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["shape", "n_trials"] + [f"{m:+g}deg" for m in misalignments])
        for s in shapes:
            row = [cells.get((s, float(m))) for m in misalignments]
            n = next((c.n_trials for c in row if c is not None), 0)
            w.writerow([s, n] + ["" if c is None else c.successes for c in row])
    return path


def write_reports(report: EvalReport, out_dir: str | Path, grid: bool = True) -> dict[str, Path]:
    out = Path(out_dir)
    paths = {"csv": report.write_csv(out / "eval.csv"), "json": report.write_json(out / "eval.json")}
    if grid and any(r.misalignment_deg is not None for r in report.rows):
        paths["grid"] = write_table_grid(report, out / "table_grid.csv")
    return paths


def run_randomization_ablation(cfg: ExperimentConfig, checkpoints: dict[str, str | Path], n_trials: int | None = None,
                               seed: int | None = None) -> EvalReport:
    """Evaluate one teacher per ablation on the fully randomized environment, per shape."""
    missing = [a for a in ABLATION_ROWS if a not in checkpoints]
    if missing:
        raise KeyError(f"missing ablation checkpoints: {', '.join(missing)}")
    full = (("angle", True), ("hole", True), ("stiffness", True))
    report = EvalReport()
    for name in ABLATION_ROWS:
        agent = load_agent(checkpoints[name])
        inc = name != "no-alignment"
        conds = [EvalCondition(shape, None, 0.0, n_trials or cfg.eval.n_trials, agent.kind, full, inc)
                 for shape in cfg.eval.shapes]
        rep = run_eval(agent, conds, cfg, seed)
        for r in rep.rows:
            r.condition = f"{name}/{r.peg_shape}"
        report = report.merge(rep)
    return report


def write_ablation_grid(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    shapes = list(dict.fromkeys(r.peg_shape for r in report.rows))
    rates = {r.condition: r.success_rate for r in report.rows}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ablation"] + shapes)
        for name in ABLATION_ROWS:
            w.writerow([name] + [rates.get(f"{name}/{s}", "") for s in shapes])
    return path


def rollout_traces(agent: Agent, cfg: ExperimentConfig, n_episodes: int, seed: int | None = None,
                   physics: list | None = None) -> list[list]:
    """Per-step rows in the environment trace schema, episodes back to back.

    When ``physics`` is a list it receives the per-substep simulator rows as well.
    """
    seed = cfg.eval.seed if seed is None else seed
    cond = EvalCondition(cfg.env.peg_shape, None, 0.0, n_episodes, agent.kind if agent.kind in POLICY_KINDS else "teacher",
                         include_alignment=cfg.include_alignment)
    ecfg = condition_env_config(cfg, cond, agent)
    rand = condition_randomization(cfg, cond)
    rows = []
    for ep in range(n_episodes):
        env = PegInHoleEnv(ecfg, rand, rng=seeding.stream(seed, "rollout", ep))
        if physics is not None:
            env.physics_trace = physics
        obs, priv = env.reset()
        agent.reset(env, obs)
        while True:
            a = np.clip(agent.act(env, obs), -1.0, 1.0)
            res = env.step(a)
            rows.append(trace_row(env.steps - 1, obs, a, res.reward, priv, res.termination))
            agent.observe(obs, res.observation)
            obs, priv = res.observation, res.privileged
            if res.terminated:
                break
    return rows
