"""Peg-in-hole MDP on top of the soft-wrist simulator.

Observations are the 6-vector (wrist position, wrist force). The privileged state is
the peg tip position relative to the insertion target, the peg orientation in 6D form
and the binary alignment flag.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dynamics import (
    CONTROL_DT,
    N_SUBSTEPS,
    BodyParams,
    ContactParams,
    Scene,
    SimulationDiverged,
    WristParams,
    WristState,
    static_sag,
    step_physics,
)
from .geometry import HoleGeometry, Shape, equal_area_section, make_peg, peg_tip, rotation_to_6d

log = logging.getLogger(__name__)

IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


START_CLEARANCE = 0.0005


class InvalidScenario(ValueError):
    pass


class EpisodeOver(RuntimeError):
    pass


class Termination(str, enum.Enum):
    CONTINUE = "continue"
    SUCCESS = "success"
    FAIL_DIVERGENCE = "fail_divergence"
    FAIL_TIMEOUT = "fail_timeout"


@dataclass(frozen=True)
class RewardConfig:
    distance_weights: tuple[float, float, float] = (1.0, 1.0, 10.0)
    progress_unit: float = 0.001
    insertion_weight_aligned: float = 0.001
    insertion_weight_unaligned: float = 1.0
    success_reward: float = 1.0
    fail_penalty: float = 5.0


@dataclass(frozen=True)
class TerminationConfig:
    success_threshold: float = 0.005
    align_threshold: float = 0.007
    divergence_factor: float = 1.2
    max_steps: int = 200


@dataclass(frozen=True)
class NormalizationConstants:
    """Offsets/scales mapping raw quantities to roughly [-1, 1]."""

    pos_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    pos_scale: float = 0.05
    force_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    force_scale: float = 20.0
    peg_pos_scale: float = 0.03
    rot_scale: float = 0.1

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationConstants":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass(frozen=True)
class EnvConfig:
    peg_shape: Shape = Shape.CIRCLE
    peg_radius: float = 0.020
    peg_length: float = 0.05
    clearance: float = 0.001
    hole_depth: float = 0.030
    hole_top_z: float = 0.0
    plate_extent: float = 0.2
    target_depth: float = 0.025
    start_height: float = 0.002
    start_offset: float = 0.015
    action_scale: float = 0.003
    command_lead: float = 0.006
    contact: bool = True
    include_alignment: bool = True
    reward: RewardConfig = RewardConfig()
    termination: TerminationConfig = TerminationConfig()
    wrist: WristParams = WristParams()
    contact_params: ContactParams = ContactParams()
    body: BodyParams = BodyParams()
    # None means: offset = nominal start pose of the wrist
    norm: NormalizationConstants | None = None

    @property
    def obs_dim(self) -> int:
        return 6

    @property
    def priv_dim(self) -> int:
        return 10 if self.include_alignment else 9

    def nominal_base(self) -> np.ndarray:
        """Wrist base position for the un-randomized start."""
        tip = np.array([0.0, -self.start_offset, self.hole_top_z + self.start_height])
        return tip - np.array([0.0, 0.0, static_sag(self.body, self.wrist) - self.body.grasp_offset - self.peg_length])

    def normalization(self) -> NormalizationConstants:
        if self.norm is not None:
            return self.norm
        return NormalizationConstants(pos_offset=tuple(float(v) for v in self.nominal_base()))


@dataclass(frozen=True)
class RandomizationConfig:
    angle: bool = True
    hole: bool = True
    stiffness: bool = True
    init: bool = True
    max_grasp_angle: float = math.radians(5.0)
    max_hole_offset: float = 0.010
    gain_range: tuple[float, float] = (1e3, 1e4)
    nominal_gain: float = 10**3.5
    init_sigma: float = 0.001
    # evaluation start shift: uniform +-start_shift in x, y (replaces the Gaussian init noise)
    start_shift: float = 0.0
    fixed_grasp_angle: float | None = None


@dataclass(frozen=True)
class Scenario:
    grasp_angle: float = 0.0
    grasp_axis_azimuth: float = 0.0
    hole_offset: tuple[float, float] = (0.0, 0.0)
    tracking_gain: float = 10**3.5
    init_noise: tuple[float, float, float] = (0.0, 0.0, 0.0)
    peg_shape: Shape = Shape.CIRCLE
    flags: dict = field(default_factory=lambda: {"angle": False, "hole": False, "stiffness": False, "init": False})

    def validate(self, rand: RandomizationConfig | None = None) -> None:
        rand = rand or RandomizationConfig()
        max_angle = max(rand.max_grasp_angle, abs(rand.fixed_grasp_angle or 0.0))
        if set(self.flags) != {"angle", "hole", "stiffness", "init"}:
            raise InvalidScenario(f"unknown randomization flags {sorted(self.flags)}")
        if abs(self.grasp_angle) > max_angle + 1e-12:
            raise InvalidScenario(f"grasp angle {self.grasp_angle} outside +-{max_angle}")
        if max(abs(self.hole_offset[0]), abs(self.hole_offset[1])) > 0.010 + 1e-12:
            raise InvalidScenario("hole offset beyond +-10 mm")
        if not self.flags["hole"] and any(self.hole_offset):
            raise InvalidScenario("hole offset set while hole randomization is off")
        if not self.flags["init"] and any(self.init_noise):
            raise InvalidScenario("initial noise set while init randomization is off")
        if not (1e3 - 1e-9 <= self.tracking_gain <= 1e4 + 1e-9):
            raise InvalidScenario(f"tracking gain {self.tracking_gain} outside [1e3, 1e4]")
        if not self.flags["stiffness"] and not math.isclose(self.tracking_gain, rand.nominal_gain):
            raise InvalidScenario("tracking gain differs from nominal while stiffness randomization is off")

    def to_dict(self) -> dict:
        return {
            "grasp_angle": self.grasp_angle, "grasp_axis_azimuth": self.grasp_axis_azimuth,
            "hole_offset": list(self.hole_offset), "tracking_gain": self.tracking_gain,
            "init_noise": list(self.init_noise), "peg_shape": Shape(self.peg_shape).value,
            "flags": dict(self.flags),
        }


def sample_scenario(rand: RandomizationConfig, rng: np.random.Generator,
                    peg_shape: Shape = Shape.CIRCLE) -> Scenario:
    """Draw one episode's randomized parameters. Draw order is fixed for reproducibility."""
    u = rng.uniform(-1.0, 1.0, size=2)
    azimuth = rng.uniform(0.0, 2.0 * math.pi)
    hole = rng.uniform(-1.0, 1.0, size=2)
    log_gain = rng.uniform(math.log10(rand.gain_range[0]), math.log10(rand.gain_range[1]))
    gauss = rng.normal(size=3)
    shift = rng.uniform(-1.0, 1.0, size=2)

    if rand.fixed_grasp_angle is not None:
        angle = rand.fixed_grasp_angle
    elif rand.angle:
        angle = float(u[0] * rand.max_grasp_angle)
    else:
        angle = 0.0
    hole_offset = tuple(float(h) for h in hole * rand.max_hole_offset) if rand.hole else (0.0, 0.0)
    gain = float(10**log_gain) if rand.stiffness else rand.nominal_gain
    if rand.start_shift > 0:
        noise = (float(shift[0] * rand.start_shift), float(shift[1] * rand.start_shift), 0.0)
    elif rand.init:
        noise = tuple(float(g) for g in gauss * rand.init_sigma)
    else:
        noise = (0.0, 0.0, 0.0)
    flags = {"angle": rand.angle, "hole": rand.hole, "stiffness": rand.stiffness,
             "init": rand.init or rand.start_shift > 0}
    # a fixed misalignment tilts about the x axis so that +angle and -angle are mirror images
    tilt_azimuth = float(azimuth) if angle != 0.0 and rand.fixed_grasp_angle is None else 0.0
    return Scenario(angle, tilt_azimuth, hole_offset, gain, noise, Shape(peg_shape), flags)


# ---------------------------------------------------------------- reward pieces

def weighted_distance(e, weights=(1.0, 1.0, 10.0)) -> float:
    e = np.asarray(e, dtype=float)
    return float(math.sqrt(weights[0] * e[0] * e[0] + weights[1] * e[1] * e[1] + weights[2] * e[2] * e[2]))


def alignment_state(e, threshold: float = 0.007) -> bool:
    return bool(math.hypot(float(e[0]), float(e[1])) < threshold)


def compute_reward(d_prev: float, d: float, a, a_prev, aligned: bool, success: bool,
                   cfg: RewardConfig = RewardConfig()) -> float:
    """Progress minus insertion and smoothness penalties plus the success bonus."""
    a = np.asarray(a, dtype=float)
    a_prev = np.asarray(a_prev, dtype=float)
    r_p = (d_prev - d) / cfg.progress_unit
    w_i = cfg.insertion_weight_aligned if aligned else cfg.insertion_weight_unaligned
    r_i = w_i * a[2] ** 2
    r_a = float(np.sum((a - a_prev) ** 2))
    r_s = cfg.success_reward if success else 0.0
    return float(r_p - r_i - r_a + r_s)


def check_termination(d: float, d0: float, e, step: int,
                      cfg: TerminationConfig = TerminationConfig()) -> Termination:
    if float(np.linalg.norm(e)) < cfg.success_threshold:
        return Termination.SUCCESS
    if d > cfg.divergence_factor * d0:
        return Termination.FAIL_DIVERGENCE
    if step >= cfg.max_steps:
        return Termination.FAIL_TIMEOUT
    return Termination.CONTINUE


def normalize_observation(p_wrist_raw, f_raw, norm: NormalizationConstants) -> np.ndarray:
    p = (np.asarray(p_wrist_raw, dtype=float) - np.asarray(norm.pos_offset)) / norm.pos_scale
    f = (np.asarray(f_raw, dtype=float) - np.asarray(norm.force_offset)) / norm.force_scale
    return np.concatenate([p, f])


@dataclass
class StepResult:
    observation: np.ndarray
    privileged: np.ndarray
    reward: float
    terminated: bool
    success: bool
    termination: Termination
    info: dict


class PegInHoleEnv:
    """One simulated insertion cell. Not thread-safe; one driver per instance."""

    def __init__(self, config: EnvConfig = EnvConfig(), randomization: RandomizationConfig = RandomizationConfig(),
                 rng: np.random.Generator | int | None = None):
        self.config = config
        self.randomization = randomization
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.norm = config.normalization()
        self._scene_cache: dict = {}
        self.scenario: Scenario | None = None
        self.state: WristState | None = None
        self._active = False
        # set to a list to collect per-substep physics rows (dynamics.TRACE_COLUMNS)
        self.physics_trace: list | None = None

    @property
    def obs_dim(self) -> int:
        return self.config.obs_dim

    @property
    def priv_dim(self) -> int:
        return self.config.priv_dim

    def build_scene(self, scenario: Scenario) -> Scene:
        cfg = self.config
        peg_section = equal_area_section(scenario.peg_shape, cfg.peg_radius)
        key = Shape(scenario.peg_shape)
        if key not in self._scene_cache:
            hole = HoleGeometry(peg_section.inflated(cfg.clearance), cfg.hole_top_z, cfg.hole_depth, cfg.plate_extent)
            self._scene_cache[key] = (hole, make_peg(peg_section, cfg.peg_length))
        hole, peg = self._scene_cache[key]
        return Scene(hole, peg, hole_xy=tuple(scenario.hole_offset), grasp_angle=scenario.grasp_angle,
                     grasp_axis_azimuth=scenario.grasp_axis_azimuth, tracking_gain=scenario.tracking_gain,
                     wrist=cfg.wrist, contact=replace(cfg.contact_params, enabled=cfg.contact), body=cfg.body)

    def reset(self, scenario: Scenario | None = None) -> tuple[np.ndarray, np.ndarray]:
        if scenario is None:
            scenario = sample_scenario(self.randomization, self.rng, self.config.peg_shape)
        scenario.validate(self.randomization)
        cfg = self.config
        self.scenario = scenario
        self.scene = self.build_scene(scenario)
        self._compiled = self.scene.compiled()
        sag = static_sag(cfg.body, cfg.wrist)
        tip_start = np.array([0.0, -cfg.start_offset, cfg.hole_top_z + cfg.start_height]) + np.asarray(scenario.init_noise)
        tip_local = self.scene.grasp_pose.apply(np.array([[0.0, 0.0, -cfg.peg_length]]))[0]
        # z noise must not push any part of the peg into the plate
        low = np.min(self.scene.grasp_pose.apply(self.scene.peg.sample_points)[:, 2] - tip_local[2])
        floor = cfg.hole_top_z + START_CLEARANCE
        if tip_start[2] + low < floor:
            tip_start[2] = floor - low
        base = tip_start - tip_local - np.array([0.0, 0.0, sag])
        self.state = WristState(base, q=[sag, 0.0, 0.0, 0.0])
        self.reading = np.array([0.0, 0.0, cfg.wrist.k_z * sag])
        self.target = np.array([scenario.hole_offset[0], scenario.hole_offset[1], cfg.hole_top_z - cfg.target_depth])
        self.steps = 0
        self.a_prev = np.zeros(3)
        e = self.error()
        self.d0 = weighted_distance(e, cfg.reward.distance_weights)
        self.d_prev = self.d0
        self._active = True
        return self.observation(), self.privileged()

    # ---------------------------------------------------------------- state views

    def peg_pose(self):
        return self.scene.peg_pose(self.state)

    def tip(self) -> np.ndarray:
        return peg_tip(self.peg_pose(), self.scene.peg)

    def error(self) -> np.ndarray:
        return self.tip() - self.target

    def aligned(self) -> bool:
        return alignment_state(self.error(), self.config.termination.align_threshold)

    def observation(self) -> np.ndarray:
        return normalize_observation(self.state.base_pos, self.reading, self.norm)

    def privileged(self) -> np.ndarray:
        pose = self.peg_pose()
        e = peg_tip(pose, self.scene.peg) - self.target
        parts = [e / self.norm.peg_pos_scale, (rotation_to_6d(pose.rotation) - IDENTITY_6D) / self.norm.rot_scale]
        if self.config.include_alignment:
            parts.append([1.0 if alignment_state(e, self.config.termination.align_threshold) else 0.0])
        return np.concatenate(parts)

    def policy_input(self) -> np.ndarray:
        return np.concatenate([self.observation(), self.privileged()])

    # ---------------------------------------------------------------- dynamics

    def command_target(self, a: np.ndarray) -> np.ndarray:
        """Next base reference: previous command plus the scaled action, kept near the base."""
        lead = self.config.command_lead
        target = self.state.base_ref + a * self.config.action_scale
        return np.clip(target, self.state.base_pos - lead, self.state.base_pos + lead)

    def step(self, action) -> StepResult:
        if not self._active:
            raise EpisodeOver("step() called on a finished episode; call reset()")
        cfg = self.config
        a = np.clip(np.asarray(action, dtype=float).reshape(3), -1.0, 1.0)
        aligned_before = self.aligned()
        diverged = False
        try:
            out = step_physics(self.state, self.command_target(a), self.scene, CONTROL_DT, N_SUBSTEPS,
                               compiled=self._compiled, record_trace=self.physics_trace is not None)
            if out.trace is not None:
                rows = out.trace.copy()
                rows[:, 0] += self.steps * CONTROL_DT
                self.physics_trace.extend(rows.tolist())
            self.state = out.state
            self.reading = out.reading
        except SimulationDiverged as exc:
            log.warning("episode aborted: %s", exc)
            diverged = True
        self.steps += 1
        e = self.error()
        d = weighted_distance(e, cfg.reward.distance_weights)
        if diverged:
            term = Termination.FAIL_DIVERGENCE
        else:
            term = check_termination(d, self.d0, e, self.steps, cfg.termination)
        success = term is Termination.SUCCESS
        reward = compute_reward(self.d_prev, d, a, self.a_prev, aligned_before, success, cfg.reward)
        if term in (Termination.FAIL_DIVERGENCE, Termination.FAIL_TIMEOUT):
            reward -= cfg.reward.fail_penalty
        terminated = term is not Termination.CONTINUE
        self.d_prev = d
        self.a_prev = a
        if terminated:
            self._active = False
        info = {"d_t": d, "e_t": e, "aligned": alignment_state(e, cfg.termination.align_threshold),
                "sim_diverged": diverged, "step": self.steps}
        return StepResult(self.observation(), self.privileged(), reward, terminated, success, term, info)


TRACE_HEADER = (["t"] + [f"obs_{i}" for i in range(6)] + [f"action_{i}" for i in range(3)] + ["reward"]
                + [f"priv_{i}" for i in range(10)] + ["termination"])


def trace_row(t: int, obs, action, reward: float, priv, termination: Termination | str) -> list:
    priv = list(np.asarray(priv, dtype=float))
    priv += [""] * (10 - len(priv))
    return [t, *np.asarray(obs, dtype=float), *np.asarray(action, dtype=float), reward, *priv,
            Termination(termination).value]


def write_trace_csv(rows: list[list], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        w.writerows(rows)
