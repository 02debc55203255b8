"""Experiment configuration: one JSON document validated by pydantic.

Unknown keys are rejected at every level. Defaults carry the published constants
(spring values, thresholds, randomization ranges, history length, loss weight, episode
limit, action stroke).
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .dynamics import BodyParams, ContactParams, WristParams
from .env import EnvConfig, NormalizationConstants, RandomizationConfig, RewardConfig, TerminationConfig
from .geometry import Shape

SCHEMA_VERSION = 1
ABLATIONS = ("none", "no-alignment", "fixed-angle", "fixed-hole", "fixed-stiffness")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class WristSection(_Strict):
    k_z: float = Field(1000.0, gt=0)
    kappa_x: float = Field(0.5, gt=0)
    kappa_y: float = Field(0.5, gt=0)
    kappa_z: float = Field(5.0, gt=0)
    b_z: float = Field(1.0, gt=0)
    beta_x: float = Field(0.005, gt=0)
    beta_y: float = Field(0.005, gt=0)
    beta_z: float = Field(1.0, gt=0)


class ContactSection(_Strict):
    k_c: float = Field(5e4, gt=0)
    b_c: float = Field(100.0, gt=0)
    mu: float = Field(0.3, gt=0, lt=2)
    k_t: float = Field(1e4, gt=0)


class BodySection(_Strict):
    distal_mass: float = Field(0.5, gt=0)
    distal_inertia: tuple[float, float, float] = (2e-3, 2e-3, 1e-3)
    base_mass: float = Field(5.0, gt=0)
    gravity: float = Field(9.81, ge=0)
    com_offset: float = Field(0.06, ge=0)
    grasp_offset: float = Field(0.06, ge=0)

    @field_validator("distal_inertia")
    @classmethod
    def _positive_inertia(cls, v):
        if min(v) <= 0:
            raise ValueError("inertias must be > 0")
        return v


class GeometrySection(_Strict):
    peg_radius: float = Field(0.020, gt=0)
    peg_length: float = Field(0.05, gt=0)
    clearance: float = Field(0.001, gt=0)
    hole_depth: float = Field(0.030, gt=0)
    plate_extent: float = Field(0.2, gt=0)
    target_depth: float = Field(0.025, gt=0)


class PhysicsSection(_Strict):
    wrist: WristSection = WristSection()
    contact: ContactSection = ContactSection()
    body: BodySection = BodySection()
    geometry: GeometrySection = GeometrySection()


class NormalizationSection(_Strict):
    pos_offset: tuple[float, float, float] | None = None
    pos_scale: float = Field(0.05, gt=0)
    force_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    force_scale: float = Field(20.0, gt=0)
    peg_pos_scale: float = Field(0.03, gt=0)
    rot_scale: float = Field(0.1, gt=0)


class RewardSection(_Strict):
    distance_weights: tuple[float, float, float] = (1.0, 1.0, 10.0)
    progress_unit: float = Field(0.001, gt=0)
    insertion_weight_aligned: float = 0.001
    insertion_weight_unaligned: float = 1.0
    success_reward: float = 1.0
    fail_penalty: float = 5.0


class TerminationSection(_Strict):
    success_threshold: float = Field(0.005, gt=0)
    align_threshold: float = Field(0.007, gt=0)
    divergence_factor: float = Field(1.2, gt=1)
    max_steps: int = Field(200, ge=1)


class EnvSection(_Strict):
    peg_shape: Shape = Shape.CIRCLE
    action_scale: float = Field(0.003, gt=0)
    control_dt: float = 0.05
    start_height: float = Field(0.002, gt=0)
    start_offset: float = 0.015
    command_lead: float = Field(0.006, gt=0)
    contact: bool = True
    normalization: NormalizationSection = NormalizationSection()
    reward: RewardSection = RewardSection()
    termination: TerminationSection = TerminationSection()

    @field_validator("control_dt")
    @classmethod
    def _fixed_rate(cls, v):
        if not math.isclose(v, 0.05):
            raise ValueError("control_dt is fixed at 0.05 s (20 Hz)")
        return v


class RandomizationSection(_Strict):
    angle: bool = True
    hole: bool = True
    stiffness: bool = True
    init: bool = True
    max_grasp_angle_deg: float = Field(5.0, ge=0)
    max_hole_offset: float = Field(0.010, ge=0, le=0.010)
    gain_range: tuple[float, float] = (1e3, 1e4)
    nominal_gain: float = 10**3.5
    init_sigma: float = Field(0.001, ge=0)

    @model_validator(mode="after")
    def _gains(self):
        lo, hi = self.gain_range
        if not (1e3 <= lo <= hi <= 1e4) or not (1e3 <= self.nominal_gain <= 1e4):
            raise ValueError("tracking gains must lie in [1e3, 1e4]")
        return self


class RlSection(_Strict):
    iterations: int = Field(10_000, ge=1)
    steps_per_iteration: int = Field(1000, ge=1)
    policy: Literal["mlp", "tcn"] = "mlp"
    hidden: tuple[int, ...] = (256, 256)
    init_std: float = Field(0.5, gt=0)
    gamma: float = Field(0.99, gt=0, le=1)
    lam: float = Field(0.95, ge=0, le=1)
    epochs: int = Field(10, ge=1)
    minibatch: int = Field(250, ge=1)
    clip: float = Field(0.2, gt=0)
    value_coef: float = Field(0.5, ge=0)
    entropy_coef: float = Field(0.001, ge=0)
    lr: float = Field(3e-4, gt=0)
    max_grad_norm: float = Field(0.5, gt=0)
    value_scale: float = Field(0.1, gt=0)
    checkpoint_every: int = Field(100, ge=1)
    eval_every: int = Field(0, ge=0)
    eval_trials: int = Field(20, ge=1)


class DistillSection(_Strict):
    iterations: int = Field(5000, ge=1)
    steps_per_iteration: int = Field(1000, ge=1)
    history: int = Field(20, ge=1)
    align_weight: float = Field(0.1, ge=0)
    channels: int = Field(32, ge=1)
    kernel: int = Field(3, ge=2)
    dilations: tuple[int, ...] = (1, 2, 4)
    lr: float = Field(1e-3, gt=0)
    # linear anneal from lr to lr_final over the run; None keeps lr constant
    lr_final: float | None = Field(None, gt=0)
    epochs: int = Field(4, ge=1)
    minibatch: int = Field(250, ge=1)
    threshold_alignment: bool = False
    checkpoint_every: int = Field(100, ge=1)
    heldout_steps: int = Field(2000, ge=1)

    @model_validator(mode="after")
    def _covers_history(self):
        rf = 1 + 2 * (self.kernel - 1) * sum(self.dilations)
        if rf < self.history:
            raise ValueError(f"encoder receptive field {rf} is shorter than the history {self.history}")
        return self


class EvalSection(_Strict):
    n_trials: int = Field(100, ge=1)
    shapes: tuple[Shape, ...] = (Shape.CIRCLE, Shape.SQUARE, Shape.TRIANGLE, Shape.HEXAGON)
    misalignments_deg: tuple[float, ...] = (-5.0, 0.0, 5.0)
    start_shift: float = Field(0.010, ge=0)
    seed: int = 1234


class ExperimentConfig(_Strict):
    version: int = SCHEMA_VERSION
    seed: int = 0
    workers: int = Field(8, ge=1)
    out_dir: str = "runs"
    ablation: Literal["none", "no-alignment", "fixed-angle", "fixed-hole", "fixed-stiffness"] = "none"
    physics: PhysicsSection = PhysicsSection()
    env: EnvSection = EnvSection()
    randomization: RandomizationSection = RandomizationSection()
    rl: RlSection = RlSection()
    distill: DistillSection = DistillSection()
    eval: EvalSection = EvalSection()

    @field_validator("version")
    @classmethod
    def _version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"config schema version {v} is not supported (expected {SCHEMA_VERSION})")
        return v

    @property
    def include_alignment(self) -> bool:
        return self.ablation != "no-alignment"

    def with_ablation(self, ablation: str | None) -> "ExperimentConfig":
        if ablation is None:
            return self
        return self.model_copy(update={"ablation": ablation})

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=False)


class ConfigNotFound(FileNotFoundError):
    pass


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigNotFound(f"config not found: {path}")
    return ExperimentConfig.model_validate(json.loads(path.read_text()))


def save_config(cfg: ExperimentConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(cfg.to_json() + "\n")
    return path


# ---------------------------------------------------------------- builders

def wrist_params(cfg: ExperimentConfig) -> WristParams:
    return WristParams(**cfg.physics.wrist.model_dump())


def body_params(cfg: ExperimentConfig) -> BodyParams:
    return BodyParams(**cfg.physics.body.model_dump())


def contact_params(cfg: ExperimentConfig) -> ContactParams:
    return ContactParams(**cfg.physics.contact.model_dump())


def env_config(cfg: ExperimentConfig, peg_shape: Shape | None = None) -> EnvConfig:
    e, g = cfg.env, cfg.physics.geometry
    n = e.normalization
    norm = None
    if n.pos_offset is not None:
        norm = NormalizationConstants(tuple(n.pos_offset), n.pos_scale, tuple(n.force_offset), n.force_scale,
                                      n.peg_pos_scale, n.rot_scale)
    base = EnvConfig(
        peg_shape=Shape(peg_shape or e.peg_shape), peg_radius=g.peg_radius, peg_length=g.peg_length,
        clearance=g.clearance, hole_depth=g.hole_depth, plate_extent=g.plate_extent, target_depth=g.target_depth,
        start_height=e.start_height, start_offset=e.start_offset, action_scale=e.action_scale,
        command_lead=e.command_lead, contact=e.contact, include_alignment=cfg.include_alignment,
        reward=RewardConfig(**e.reward.model_dump()), termination=TerminationConfig(**e.termination.model_dump()),
        wrist=wrist_params(cfg), contact_params=contact_params(cfg), body=body_params(cfg),
    )
    if norm is None:
        default = base.normalization()
        norm = NormalizationConstants(default.pos_offset, n.pos_scale, tuple(n.force_offset), n.force_scale,
                                      n.peg_pos_scale, n.rot_scale)
    from dataclasses import replace

    return replace(base, norm=norm)


def randomization_config(cfg: ExperimentConfig, for_eval: bool = False) -> RandomizationConfig:
    """Training randomization with the ablation applied; ``for_eval`` ignores the ablation."""
    r = cfg.randomization
    angle, hole, stiffness = r.angle, r.hole, r.stiffness
    if not for_eval:
        angle = angle and cfg.ablation != "fixed-angle"
        hole = hole and cfg.ablation != "fixed-hole"
        stiffness = stiffness and cfg.ablation != "fixed-stiffness"
    return RandomizationConfig(angle=angle, hole=hole, stiffness=stiffness, init=r.init,
                               max_grasp_angle=math.radians(r.max_grasp_angle_deg), max_hole_offset=r.max_hole_offset,
                               gain_range=tuple(r.gain_range), nominal_gain=r.nominal_gain, init_sigma=r.init_sigma)
