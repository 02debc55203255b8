"""Self-checks of the wrist simulator against closed-form references.

Each check returns a ``CheckResult``; the CLI prints one PASS/FAIL line per check.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import ExperimentConfig, env_config
from .dynamics import (
    STABILITY_BOUND,
    BodyParams,
    Scene,
    SimulationDiverged,
    WristState,
    mechanical_energy,
    stability_margin,
    static_sag,
    step_physics,
    wrist_rotation,
)
from .geometry import HoleGeometry, equal_area_section, make_peg


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def damped_response(m: float, k: float, b: float, x0: float, t) -> np.ndarray:
    """Free response of m x'' + b x' + k x = 0 from rest at x0."""
    t = np.asarray(t, dtype=float)
    disc = complex(b * b - 4.0 * m * k)
    l1 = (-b + disc**0.5) / (2.0 * m)
    l2 = (-b - disc**0.5) / (2.0 * m)
    if abs(l1 - l2) < 1e-9 * abs(l1):
        lam = -b / (2.0 * m)
        return x0 * (1.0 - lam * t) * np.exp(lam * t)
    c1 = x0 * l2 / (l2 - l1)
    c2 = -x0 * l1 / (l2 - l1)
    return np.real(c1 * np.exp(l1 * t) + c2 * np.exp(l2 * t))


def nominal_scene(cfg: ExperimentConfig) -> Scene:
    e = env_config(cfg)
    section = equal_area_section(e.peg_shape, e.peg_radius)
    hole = HoleGeometry(section.inflated(e.clearance), e.hole_top_z, e.hole_depth, e.plate_extent)
    return Scene(hole, make_peg(section, e.peg_length), tracking_gain=cfg.randomization.nominal_gain,
                 wrist=e.wrist, contact=e.contact_params, body=e.body)


def cfg_body(cfg: ExperimentConfig) -> BodyParams:
    return env_config(cfg).body


def _run(state, scene, n_steps):
    rows = []
    out = None
    for _ in range(n_steps):
        out = step_physics(state, state.base_ref, scene, record_trace=True)
        state = out.state
        rows.append(out.trace)
    return state, np.vstack(rows), out


def check_oscillator(cfg: ExperimentConfig, tol: float = 0.02) -> CheckResult:
    scene = replace(nominal_scene(cfg), body=replace(cfg_body(cfg), gravity=0.0), base_fixed=True)
    worst = 0.0
    for dof, x0 in enumerate([0.01, 0.1, 0.1, 0.1]):
        q = np.zeros(4)
        q[dof] = x0
        _, trace, _ = _run(WristState([0.0, 0.0, 0.5], q=q), scene, 10)
        t = (np.arange(len(trace)) + 1) * (0.05 / (len(trace) // 10))
        m = scene.body.distal_mass if dof == 0 else scene.body.distal_inertia[dof - 1]
        ref = damped_response(m, scene.wrist.stiffness[dof], scene.wrist.damping[dof], x0, t)
        rms = float(np.sqrt(np.mean((trace[:, 4 + dof] - ref) ** 2)) / np.sqrt(np.mean(ref**2)))
        worst = max(worst, rms)
    return CheckResult("free oscillation", worst < tol, f"worst relative RMS {worst:.2e} (limit {tol})")


def check_energy(cfg: ExperimentConfig, n_cases: int = 10, rtol: float = 1e-9) -> CheckResult:
    scene = replace(nominal_scene(cfg), body=replace(cfg_body(cfg), gravity=0.0), base_fixed=True)
    rng = np.random.default_rng(0)
    k = scene.wrist.stiffness
    M = np.diag([scene.body.distal_mass, *scene.body.distal_inertia])
    for _ in range(n_cases):
        q = rng.uniform(-1, 1, 4) * [0.02, 0.5, 0.5, 0.5]
        qd = rng.uniform(-1, 1, 4) * [0.1, 1, 1, 1]
        state = WristState([0.0, 0.0, 0.5], q=q, qdot=qd)
        e_prev = mechanical_energy(state, scene)
        _, trace, _ = _run(state, scene, 4)
        for row in trace:
            e = 0.5 * row[8:12] @ M @ row[8:12] + 0.5 * np.sum(k * row[4:8] ** 2)
            if e > e_prev * (1 + rtol) + 1e-15:
                return CheckResult("energy", False, f"energy rose from {e_prev:.6e} to {e:.6e}")
            e_prev = e
    return CheckResult("energy", True, f"non-increasing over {n_cases} random releases")


def check_gravity_sag(cfg: ExperimentConfig, tol: float = 1e-4) -> CheckResult:
    scene = nominal_scene(cfg)
    state, _, _ = _run(WristState([0.0, 0.0, 0.5]), scene, 60)
    want = static_sag(scene.body, scene.wrist)
    err = abs(state.q[0] - want)
    return CheckResult("gravity sag", err < tol, f"z deflection {state.q[0]:.6f} m vs {want:.6f} m")


def check_contact_rest(cfg: ExperimentConfig) -> CheckResult:
    scene = nominal_scene(cfg)
    hole = scene.hole
    state = WristState([0.06, 0.0, hole.top_z + scene.body.grasp_offset + scene.peg.length])
    try:
        state, _, out = _run(state, scene, 80)
    except SimulationDiverged as exc:
        return CheckResult("contact rest", False, "diverged: " + str(exc).split(":")[0])
    pts = state.base_pos + [0.0, 0.0, state.q[0]] + scene.distal_points() @ wrist_rotation(state.q).T
    pen = hole.top_z - pts[:, 2].min()
    m, g = scene.body.distal_mass, scene.body.gravity
    bound = m * g / scene.contact.k_c + 1e-5
    balance = out.contact_sum[2] - m * g - scene.wrist.k_z * state.q[0]
    ok = 0 < pen < bound and abs(balance) < 1e-6
    return CheckResult("contact rest", ok, f"penetration {pen:.2e} m (bound {bound:.2e}), vertical residual {balance:.1e} N")


def check_stability(cfg: ExperimentConfig) -> CheckResult:
    e = env_config(cfg)
    margin = stability_margin(e.contact_params, e.body, e.peg_length)
    return CheckResult("integrator stability", margin < STABILITY_BOUND,
                       f"k_c dt^2 / m_eff = {margin:.3g} (bound {STABILITY_BOUND})")


CHECKS = (check_oscillator, check_energy, check_gravity_sag, check_contact_rest, check_stability)


def run_checks(cfg: ExperimentConfig) -> list[CheckResult]:
    out = []
    for check in CHECKS:
        try:
            out.append(check(cfg))
        except (SimulationDiverged, FloatingPointError) as exc:
            out.append(CheckResult(check.__name__.removeprefix("check_").replace("_", " "), False, str(exc)))
    return out
