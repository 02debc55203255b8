"""Wrist base tracking, passive soft-wrist springs and penalty contact at 500 Hz.

Generalized coordinates are ``x = [base (3), z, theta_x, theta_y, theta_z]``. The distal
body (gripper + peg) hangs from the base through a z slider followed by the rotations
``Rz(theta_z) @ Ry(theta_y) @ Rx(theta_x)`` about the wrist pivot. Kinetic energy uses a
lumped constant mass matrix::

    T = 1/2 m_b |db|^2 + 1/2 m_d |db + dz e_z|^2 + 1/2 sum_i I_i dtheta_i^2

Contact forces act on sampled peg points and enter through the exact point Jacobian.

Time stepping: the wrist springs, the base tracker and the contact stiffness are
integrated with the trapezoidal rule (positions advance with the mean velocity of the
substep), contact damping and friction are implicit in the end-of-substep velocity.
Conservative linear springs therefore never gain energy, and stiff friction stays stable
at 2 ms steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .geometry import HoleGeometry, PegGeometry, Pose, axis_angle, rot_x, rot_y, rot_z, sdf_plate_kernel

CONTROL_DT = 0.05
N_SUBSTEPS = 25
READING_AVG_SUBSTEPS = 5

MAX_Z_DEFLECTION = 0.1
MAX_TILT = 0.5 * math.pi
MAX_SPEED = 10.0

STATUS_OK = 0
STATUS_DIVERGED = 1


class SimulationDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class WristParams:
    k_z: float = 1000.0
    kappa_x: float = 0.5
    kappa_y: float = 0.5
    kappa_z: float = 5.0
    b_z: float = 1.0
    beta_x: float = 0.005
    beta_y: float = 0.005
    beta_z: float = 1.0

    def __post_init__(self):
        if np.any(self.stiffness <= 0) or np.any(self.damping <= 0):
            raise ValueError("wrist stiffness and damping must be > 0")

    @property
    def stiffness(self) -> np.ndarray:
        return np.array([self.k_z, self.kappa_x, self.kappa_y, self.kappa_z])

    @property
    def damping(self) -> np.ndarray:
        return np.array([self.b_z, self.beta_x, self.beta_y, self.beta_z])


@dataclass(frozen=True)
class ContactParams:
    k_c: float = 5e4
    b_c: float = 100.0
    mu: float = 0.3
    k_t: float = 1e4
    enabled: bool = True

    def __post_init__(self):
        if min(self.k_c, self.b_c, self.mu, self.k_t) <= 0 or self.mu >= 2:
            raise ValueError("contact parameters must be > 0 with mu < 2")


@dataclass(frozen=True)
class BodyParams:
    distal_mass: float = 0.5
    distal_inertia: tuple[float, float, float] = (2e-3, 2e-3, 1e-3)
    base_mass: float = 5.0
    gravity: float = 9.81
    # pivot to distal center of mass, and pivot to the peg grasp point, both along -z
    com_offset: float = 0.06
    grasp_offset: float = 0.06

    def __post_init__(self):
        if self.distal_mass <= 0 or self.base_mass <= 0 or min(self.distal_inertia) <= 0:
            raise ValueError("masses and inertias must be > 0")
        if self.gravity < 0 or self.com_offset < 0 or self.grasp_offset < 0:
            raise ValueError("gravity and offsets must be >= 0")

    def mass_matrix(self) -> np.ndarray:
        M = np.zeros((7, 7))
        M[:3, :3] = (self.base_mass + self.distal_mass) * np.eye(3)
        M[2, 3] = M[3, 2] = self.distal_mass
        M[3, 3] = self.distal_mass
        M[4:, 4:] = np.diag(self.distal_inertia)
        return M


@dataclass(frozen=True)
class WristState:
    base_pos: np.ndarray
    base_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    base_ref: np.ndarray | None = None
    q: np.ndarray = field(default_factory=lambda: np.zeros(4))
    qdot: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        for name, n in (("base_pos", 3), ("base_vel", 3), ("q", 4), ("qdot", 4)):
            arr = np.array(getattr(self, name), dtype=float).reshape(n)
            object.__setattr__(self, name, arr)
        ref = self.base_pos.copy() if self.base_ref is None else np.array(self.base_ref, dtype=float).reshape(3)
        object.__setattr__(self, "base_ref", ref)

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.base_pos, self.q])

    @property
    def v(self) -> np.ndarray:
        return np.concatenate([self.base_vel, self.qdot])


def wrist_rotation(q) -> np.ndarray:
    return rot_z(q[3]) @ rot_y(q[2]) @ rot_x(q[1])


@dataclass(frozen=True)
class Scene:
    """Everything the integrator needs for one episode besides the state."""

    hole: HoleGeometry
    peg: PegGeometry
    hole_xy: tuple[float, float] = (0.0, 0.0)
    grasp_angle: float = 0.0
    grasp_axis_azimuth: float = 0.0
    tracking_gain: float = 3162.0
    wrist: WristParams = WristParams()
    contact: ContactParams = ContactParams()
    body: BodyParams = BodyParams()
    base_fixed: bool = False

    @property
    def grasp_rotation(self) -> np.ndarray:
        if self.grasp_angle == 0.0:
            return np.eye(3)
        axis = [math.cos(self.grasp_axis_azimuth), math.sin(self.grasp_axis_azimuth), 0.0]
        return axis_angle(axis, self.grasp_angle)

    @property
    def grasp_pose(self) -> Pose:
        """Peg frame expressed in the distal (post-deflection) wrist frame."""
        return Pose([0.0, 0.0, -self.body.grasp_offset], self.grasp_rotation)

    def distal_points(self) -> np.ndarray:
        return np.ascontiguousarray(self.grasp_pose.apply(self.peg.sample_points))

    @property
    def lever_arm(self) -> float:
        """Pivot to peg centroid at zero deflection."""
        centroid = self.grasp_pose.apply(np.array([[0.0, 0.0, -0.5 * self.peg.length]]))[0]
        return float(np.linalg.norm(centroid))

    def peg_pose(self, state: WristState) -> Pose:
        distal = Pose(state.base_pos + np.array([0.0, 0.0, state.q[0]]), wrist_rotation(state.q))
        return distal.compose(self.grasp_pose)

    def compiled(self) -> "_CompiledScene":
        return _CompiledScene.build(self)


@dataclass(frozen=True)
class _CompiledScene:
    """Flat arrays handed to the numba kernel; built once per episode."""

    points: np.ndarray
    kq: np.ndarray
    bq: np.ndarray
    inertia: np.ndarray
    scalars: np.ndarray
    ints: np.ndarray

    @classmethod
    def build(cls, scene: Scene) -> "_CompiledScene":
        b, c, h = scene.body, scene.contact, scene.hole
        gain = float(scene.tracking_gain)
        scalars = np.array([
            b.base_mass, b.distal_mass, b.gravity, b.com_offset, gain,
            2.0 * math.sqrt(gain * b.base_mass), h.section.size, h.top_z, h.depth,
            scene.hole_xy[0], scene.hole_xy[1], c.k_c, c.b_c, c.mu, c.k_t, scene.lever_arm,
            b.grasp_offset + scene.peg.length,
        ])
        ints = np.array([h.section.shape.code, int(c.enabled), int(scene.base_fixed)], dtype=np.int64)
        return cls(scene.distal_points(), scene.wrist.stiffness, scene.wrist.damping,
                   np.array(b.distal_inertia, dtype=float), scalars, ints)


# ---------------------------------------------------------------- force laws

@njit(cache=True)
def _contact_kernel(phi, nx, ny, nz, vx, vy, vz, kc, bc, mu, kt, out):
    """Penalty contact force at one point. Writes force into out[0:3].

    Returns (active, normal magnitude, tangential viscous coefficient).
    """
    out[0] = 0.0
    out[1] = 0.0
    out[2] = 0.0
    if phi >= 0.0:
        return False, 0.0, 0.0
    vn = vx * nx + vy * ny + vz * nz
    fn = -kc * phi - bc * vn
    if fn <= 0.0:
        return False, 0.0, 0.0
    tx = vx - vn * nx
    ty = vy - vn * ny
    tz = vz - vn * nz
    vt = math.sqrt(tx * tx + ty * ty + tz * tz)
    if vt < 1e-9:
        c = kt
        tx = 0.0
        ty = 0.0
        tz = 0.0
    else:
        c = min(kt, mu * fn / vt)
    out[0] = fn * nx - c * tx
    out[1] = fn * ny - c * ty
    out[2] = fn * nz - c * tz
    return True, fn, c


def spring_wrench(q, qdot, params: WristParams) -> np.ndarray:
    """Restoring generalized force of the four passive springs: -k q - b qdot."""
    return -params.stiffness * np.asarray(q, dtype=float) - params.damping * np.asarray(qdot, dtype=float)


def contact_force(point_world, point_vel, hole: HoleGeometry, params: ContactParams,
                  hole_xy=(0.0, 0.0)) -> np.ndarray:
    p = np.asarray(point_world, dtype=float)
    v = np.asarray(point_vel, dtype=float)
    phi, gx, gy, gz = sdf_plate_kernel(p[0] - hole_xy[0], p[1] - hole_xy[1], p[2], hole.section.shape.code,
                                       hole.section.size, hole.top_z, hole.depth)
    out = np.zeros(3)
    _contact_kernel(phi, gx, gy, gz, v[0], v[1], v[2], params.k_c, params.b_c, params.mu, params.k_t, out)
    return out


def base_tracking_force(state: WristState, gain: float, base_mass: float) -> np.ndarray:
    """Critically damped PD pull of the base toward its interpolated reference."""
    kd = 2.0 * math.sqrt(gain * base_mass)
    return gain * (state.base_ref - state.base_pos) - kd * state.base_vel


def force_reading(q, qdot, params: WristParams, lever_arm: float) -> np.ndarray:
    """Load carried by the wrist springs, as an equivalent force in the base frame."""
    k, b = params.stiffness, params.damping
    mx = k[1] * q[1] + b[1] * qdot[1]
    my = k[2] * q[2] + b[2] * qdot[2]
    return np.array([-my / lever_arm, mx / lever_arm, k[0] * q[0] + b[0] * qdot[0]])


def mechanical_energy(state: WristState, scene: Scene, include_gravity: bool = False) -> float:
    """Kinetic plus spring potential energy (optionally plus gravity potential)."""
    M = scene.body.mass_matrix()
    v = state.v
    if scene.base_fixed:
        v = np.concatenate([np.zeros(3), state.qdot])
    e = 0.5 * v @ M @ v + 0.5 * np.sum(scene.wrist.stiffness * state.q**2)
    if include_gravity:
        b = scene.body
        com_z = state.base_pos[2] + state.q[0] + (wrist_rotation(state.q) @ [0.0, 0.0, -b.com_offset])[2]
        e += b.distal_mass * b.gravity * com_z + b.base_mass * b.gravity * state.base_pos[2]
    return float(e)


# ---------------------------------------------------------------- integrator kernel

@njit(cache=True)
def _point_jacobian(r, cx, sx, cy, sy, cz, sz, J):
    """World offset of distal-frame point r from (base + z e_z), and its 3x7 Jacobian."""
    # u = Rx r
    ux = r[0]
    uy = cx * r[1] - sx * r[2]
    uz = sx * r[1] + cx * r[2]
    # w = Ry u
    wx = cy * ux + sy * uz
    wy = uy
    wz = -sy * ux + cy * uz
    # pw = Rz w
    px = cz * wx - sz * wy
    py = sz * wx + cz * wy
    pz = wz
    for i in range(3):
        for j in range(7):
            J[i, j] = 0.0
    J[0, 0] = 1.0
    J[1, 1] = 1.0
    J[2, 2] = 1.0
    J[2, 3] = 1.0
    # d/dtheta_x: Rz Ry (e_x x u) with e_x x u = (0, -uz, uy)
    ax, ay, az = 0.0, -uz, uy
    bx = cy * ax + sy * az
    by = ay
    bz = -sy * ax + cy * az
    J[0, 4] = cz * bx - sz * by
    J[1, 4] = sz * bx + cz * by
    J[2, 4] = bz
    # d/dtheta_y: Rz (e_y x w) with e_y x w = (wz, 0, -wx)
    ax, ay, az = wz, 0.0, -wx
    J[0, 5] = cz * ax - sz * ay
    J[1, 5] = sz * ax + cz * ay
    J[2, 5] = az
    # d/dtheta_z: e_z x pw
    J[0, 6] = -py
    J[1, 6] = px
    J[2, 6] = 0.0
    return px, py, pz


@njit(cache=True)
def _step_kernel(x, v, ref, target, n_sub, h, points, kq, bq, inertia, scalars, ints, n_avg, trace, out3):
    """Advance one control period in place. Returns a status code.

    out3 rows: 0 averaged force reading, 1 last contact force sum, 2 unused.
    """
    mb = scalars[0]
    md = scalars[1]
    g = scalars[2]
    l_com = scalars[3]
    gain = scalars[4]
    kd = scalars[5]
    hsize = scalars[6]
    top_z = scalars[7]
    depth = scalars[8]
    hx = scalars[9]
    hy = scalars[10]
    kc = scalars[11]
    bc = scalars[12]
    mu = scalars[13]
    kt = scalars[14]
    lever = scalars[15]
    tip_reach = scalars[16]
    shape = ints[0]
    contact_on = ints[1] == 1
    base_fixed = ints[2] == 1
    n_pts = points.shape[0]

    J = np.empty((3, 7))
    F = np.empty(7)
    S = np.empty((7, 7))
    D = np.empty((7, 7))
    fc = np.empty(3)
    com = np.array([0.0, 0.0, -l_com])
    ref0 = ref.copy()
    for k in range(3):
        out3[0, k] = 0.0
        out3[1, k] = 0.0

    for sub in range(n_sub):
        ra = (sub + 0.5) / n_sub
        for k in range(3):
            ref[k] = ref0[k] + (target[k] - ref0[k]) * ra
        F[:] = 0.0
        S[:, :] = 0.0
        D[:, :] = 0.0

        cx = math.cos(x[4])
        sx = math.sin(x[4])
        cy = math.cos(x[5])
        sy = math.sin(x[5])
        cz = math.cos(x[6])
        sz = math.sin(x[6])
        ox = x[0]
        oy = x[1]
        oz = x[2] + x[3]

        # wrist springs (trapezoidal)
        for i in range(4):
            F[3 + i] -= kq[i] * x[3 + i] + bq[i] * v[3 + i]
            S[3 + i, 3 + i] += 0.5 * kq[i]
            D[3 + i, 3 + i] += 0.5 * bq[i]

        # base tracker with gravity compensation (trapezoidal)
        for i in range(3):
            F[i] += gain * (ref[i] - x[i]) - kd * v[i]
            S[i, i] += 0.5 * gain
            D[i, i] += 0.5 * kd
        F[2] += (mb + md) * g  # compensation of the supported weight
        F[2] -= mb * g

        # gravity on the distal center of mass (explicit)
        _point_jacobian(com, cx, sx, cy, sy, cz, sz, J)
        for j in range(7):
            F[j] -= J[2, j] * md * g

        # penalty contact
        csx = 0.0
        csy = 0.0
        csz = 0.0
        if contact_on:
            for p in range(n_pts):
                px, py, pz = _point_jacobian(points[p], cx, sx, cy, sy, cz, sz, J)
                wx = ox + px
                wy = oy + py
                wz = oz + pz
                phi, nx, ny, nz = sdf_plate_kernel(wx - hx, wy - hy, wz, shape, hsize, top_z, depth)
                if phi >= 0.0:
                    continue
                vx = 0.0
                vy = 0.0
                vz = 0.0
                for j in range(7):
                    vx += J[0, j] * v[j]
                    vy += J[1, j] * v[j]
                    vz += J[2, j] * v[j]
                active, fn, c = _contact_kernel(phi, nx, ny, nz, vx, vy, vz, kc, bc, mu, kt, fc)
                if not active:
                    continue
                csx += fc[0]
                csy += fc[1]
                csz += fc[2]
                # Jn = n^T J
                for j in range(7):
                    F[j] += J[0, j] * fc[0] + J[1, j] * fc[1] + J[2, j] * fc[2]
                jn = np.empty(7)
                for j in range(7):
                    jn[j] = nx * J[0, j] + ny * J[1, j] + nz * J[2, j]
                for a in range(7):
                    for b in range(7):
                        nn = jn[a] * jn[b]
                        # J^T (I - n n^T) J = J^T J - Jn^T Jn
                        jtj = J[0, a] * J[0, b] + J[1, a] * J[1, b] + J[2, a] * J[2, b]
                        S[a, b] += 0.5 * kc * nn
                        D[a, b] += bc * nn + c * (jtj - nn)

        # assemble (M + h^2/2 S + h D) dv = h F - h^2 S v
        lo = 3 if base_fixed else 0
        n = 7 - lo
        A = np.zeros((n, n))
        rhs = np.zeros(n)
        for a in range(n):
            ia = a + lo
            for b in range(n):
                ib = b + lo
                A[a, b] = 0.5 * h * h * S[ia, ib] + h * D[ia, ib]
            acc = h * F[ia]
            for b in range(7):
                acc -= h * h * S[ia, b] * v[b]
            rhs[a] = acc
        # constant lumped mass matrix
        for a in range(n):
            ia = a + lo
            if ia < 3:
                A[a, a] += mb + md
            elif ia == 3:
                A[a, a] += md
            else:
                A[a, a] += inertia[ia - 4]
        if not base_fixed:
            A[2, 3] += md
            A[3, 2] += md
        dv = np.linalg.solve(A, rhs)
        for a in range(n):
            ia = a + lo
            vnew = v[ia] + dv[a]
            x[ia] += 0.5 * h * (v[ia] + vnew)
            v[ia] = vnew
        if base_fixed:
            for i in range(3):
                v[i] = 0.0

        # force reading
        mx = kq[1] * x[4] + bq[1] * v[4]
        my = kq[2] * x[5] + bq[2] * v[5]
        rx = -my / lever
        ry = mx / lever
        rz = kq[0] * x[3] + bq[0] * v[3]
        if sub >= n_sub - n_avg:
            out3[0, 0] += rx / n_avg
            out3[0, 1] += ry / n_avg
            out3[0, 2] += rz / n_avg
        out3[1, 0] = csx
        out3[1, 1] = csy
        out3[1, 2] = csz

        if trace.shape[0] > 0:
            trace[sub, 0] = (sub + 1) * h
            for k in range(3):
                trace[sub, 1 + k] = x[k]
            for k in range(4):
                trace[sub, 4 + k] = x[3 + k]
                trace[sub, 8 + k] = v[3 + k]
            trace[sub, 12] = csx
            trace[sub, 13] = csy
            trace[sub, 14] = csz
            trace[sub, 15] = rx
            trace[sub, 16] = ry
            trace[sub, 17] = rz

        # divergence guards
        for j in range(7):
            if not (math.isfinite(x[j]) and math.isfinite(v[j])):
                return STATUS_DIVERGED
        if abs(x[3]) > 0.1 or abs(x[4]) >= 0.5 * math.pi or abs(x[5]) >= 0.5 * math.pi:
            return STATUS_DIVERGED
        if math.sqrt(v[0] ** 2 + v[1] ** 2 + v[2] ** 2) > 10.0 or abs(v[3]) > 10.0:
            return STATUS_DIVERGED
        if math.sqrt(v[4] ** 2 + v[5] ** 2 + v[6] ** 2) * tip_reach > 10.0:
            return STATUS_DIVERGED

    for k in range(3):
        ref[k] = target[k]
    return STATUS_OK


TRACE_COLUMNS = ["t", "base_x", "base_y", "base_z", "q_z", "q_thx", "q_thy", "q_thz",
                 "qd_z", "qd_thx", "qd_thy", "qd_thz", "contact_fx", "contact_fy", "contact_fz",
                 "reading_x", "reading_y", "reading_z"]


@dataclass
class StepOutput:
    state: WristState
    reading: np.ndarray
    contact_sum: np.ndarray
    trace: np.ndarray | None = None


def step_physics(state: WristState, action_target, scene: Scene, dt: float = CONTROL_DT,
                 n_substeps: int = N_SUBSTEPS, compiled: _CompiledScene | None = None,
                 record_trace: bool = False) -> StepOutput:
    """Advance one control period while the base reference ramps to ``action_target``.

    Raises SimulationDiverged when the wrist leaves its physical envelope
    (|z| > 0.1 m, tilt beyond 90 degrees, or speeds above 10 m/s).
    """
    if not (np.all(np.isfinite(state.x)) and np.all(np.isfinite(state.v))):
        raise SimulationDiverged("non-finite wrist state")
    cs = compiled if compiled is not None else scene.compiled()
    x = state.x.copy()
    v = state.v.copy()
    ref = state.base_ref.copy()
    target = np.asarray(action_target, dtype=float).reshape(3).copy()
    out3 = np.zeros((3, 3))
    trace = np.zeros((n_substeps, len(TRACE_COLUMNS))) if record_trace else np.zeros((0, len(TRACE_COLUMNS)))
    n_avg = min(READING_AVG_SUBSTEPS, n_substeps)
    status = _step_kernel(x, v, ref, target, n_substeps, dt / n_substeps, cs.points, cs.kq, cs.bq,
                          cs.inertia, cs.scalars, cs.ints, n_avg, trace, out3)
    if status != STATUS_OK:
        raise SimulationDiverged(f"wrist state left its envelope: x={x}, v={v}")
    new = WristState(x[:3], v[:3], ref, x[3:], v[3:])
    return StepOutput(new, out3[0].copy(), out3[1].copy(), trace if record_trace else None)


def static_sag(body: BodyParams, wrist: WristParams) -> float:
    """Equilibrium z deflection of the free-hanging wrist."""
    return -body.distal_mass * body.gravity / wrist.k_z


STABILITY_BOUND = 4.0


def stability_margin(contact: ContactParams, body: BodyParams, peg_length: float = 0.05,
                     dt: float = CONTROL_DT / N_SUBSTEPS) -> float:
    """k_c dt^2 / m_eff for the lightest effective mass a tip contact can see.

    Values above STABILITY_BOUND put the contact oscillation beyond what the 2 ms
    substep resolves (omega dt > 2).
    """
    m_eff = min(body.distal_mass, min(body.distal_inertia[:2]) / (body.grasp_offset + peg_length) ** 2)
    return contact.k_c * dt * dt / m_eff


def with_base_fixed(scene: Scene, fixed: bool = True) -> Scene:
    return replace(scene, base_fixed=fixed)
