"""Quasi-static soft-platform simulator.

The platform is modeled as a chain: command delay -> per-joint servo dynamics
with an extension-rate cap -> a calibrated (mildly nonlinear) twist-to-length
map -> rigid forward kinematics continued from the previous pose -> lateral
compliance and load sag -> per-axis structural filters -> additive resonant
modes -> sensing with latency and noise.

Rigid kinematics alone badly overstates what the soft platform can do: for
strongly differential commands the rigid mechanism wanders into extreme poses
the compliant struts never reach.  Three compliance effects bound it:

* strut bending: the plate stops following the rigid branch once any strut
  leans past ``strut_incline_limit_deg`` from vertical (the struts bend
  instead),
* twist windup: total plate rotation is limited to
  ``plate_rotation_limit_deg``,
* shear: pure in-plane translation is mostly absorbed by strut flexure; the
  plate's x/y follow the tilt-pendulum term z*sin(tilt) plus a configurable
  fraction of the rigid offset (``translation_compliance``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .geometry import (
    GRAVITY,
    PlatformGeometry,
    Pose6,
    euler_to_matrix,
    forward_kinematics_from_lengths,
    inverse_kinematics,
    strut_anchors,
)


@dataclass(frozen=True)
class PlantConfig:
    geometry: PlatformGeometry = field(default_factory=PlatformGeometry)
    # true twist-to-length map, calibrated so the settled height runs
    # 0.253 m (all joints 0) to 0.332 m (all joints 270)
    calibrated_neutral_length: float = 0.256984
    calibrated_span: float = 0.078062
    extension_curvature: float = 0.25
    # actuation chain
    actuation_delay: float = 0.0055
    servo_natural_freq: float = 35.0
    servo_damping: float = 1.0
    extension_rate_limit: float = 0.098
    load_speed_derate: float = 0.05       # fractional speed loss per kg
    # structural compliance
    strut_stiffness: float = 4000.0       # axial N/m, sets load sag
    translation_compliance: float = 0.5
    strut_incline_limit_deg: float = 25.0
    plate_rotation_limit_deg: float = 17.0
    structural_freqs: tuple = (12.0, 12.0, 12.0, 17.0, 16.0, 15.0)
    structural_damping: tuple = (0.8, 0.8, 0.8, 0.32, 0.32, 0.5)
    # additive resonant modes on the rotation axes: (freq Hz, damping, gain)
    modal_peaks: tuple = (
        (4.0, 0.05, 0.012),
        (6.0, 0.05, 0.012),
        (9.0, 0.06, 0.025),
        (20.0, 0.04, 0.06),
    )
    # load handling
    working_load: float = 2.0
    max_load: float = 3.5
    usable_volume_fraction: float = 0.5
    # clocks and sensing
    sim_rate: float = 1000.0
    sensor_rate: float = 100.0
    sensor_latency: float = 0.008
    pose_noise_m: float = 2.0e-4
    pose_noise_deg: float = 0.05

    def __post_init__(self):
        if self.working_load >= self.max_load:
            raise ValueError("working_load must be below max_load")
        top_mode = max(f for f, _, _ in self.modal_peaks) if self.modal_peaks else 0.0
        if self.sim_rate < 20.0 * top_mode:
            raise ValueError("sim_rate must be at least 20x the highest modal frequency")
        if not 0.0 <= self.translation_compliance <= 1.0:
            raise ValueError("translation_compliance must lie in [0, 1]")

    @property
    def dt(self) -> float:
        return 1.0 / self.sim_rate

    def command_lengths(self, joints_deg) -> np.ndarray:
        """True rest strut lengths commanded by servo angles."""
        span = self.geometry.joint_limits[1] - self.geometry.joint_limits[0]
        u = (np.asarray(joints_deg, dtype=float) - self.geometry.joint_limits[0]) / span
        c = self.extension_curvature
        return self.calibrated_neutral_length + self.calibrated_span * ((1 - c) * u + c * u * u)

    def length_slope(self, joints_deg) -> np.ndarray:
        """d(length)/d(angle) in meters per degree at the given angles."""
        span = self.geometry.joint_limits[1] - self.geometry.joint_limits[0]
        u = (np.asarray(joints_deg, dtype=float) - self.geometry.joint_limits[0]) / span
        c = self.extension_curvature
        return self.calibrated_span * ((1 - c) + 2 * c * u) / span

    def joints_for_lengths(self, lengths) -> np.ndarray:
        """Invert the calibrated map (exact, the map is a monotone quadratic)."""
        lengths = np.asarray(lengths, dtype=float)
        lo, hi = self.geometry.joint_limits
        c = self.extension_curvature
        e = (lengths - self.calibrated_neutral_length) / self.calibrated_span
        if c == 0.0:
            u = e
        else:
            u = (-(1 - c) + np.sqrt((1 - c) ** 2 + 4 * c * e)) / (2 * c)
        return lo + np.clip(u, 0.0, 1.0) * (hi - lo)


class LoadRegime(enum.Enum):
    FULL = "full"
    PARTIAL = "partial"
    INFEASIBLE = "infeasible"


def _discrete_second_order(omega: float, zeta: float, dt: float):
    """Exact ZOH discretization of  x'' = omega^2 (u - x) - 2 zeta omega x'."""
    A = np.array([[0.0, 1.0], [-omega * omega, -2.0 * zeta * omega]])
    B = np.array([0.0, omega * omega])
    Ad = expm(A * dt)
    Bd = np.linalg.solve(A, (Ad - np.eye(2)) @ B)
    return Ad, Bd


class _Plan:
    """Precomputed per-config stepping constants."""

    def __init__(self, config: PlantConfig):
        g = config.geometry
        dt = config.dt
        self.lower, self.upper = strut_anchors(g)
        self.delay_steps = max(1, round(config.actuation_delay * config.sim_rate))
        self.servo = _discrete_second_order(
            2 * math.pi * config.servo_natural_freq, config.servo_damping, dt)
        self.structural = [
            _discrete_second_order(2 * math.pi * f, z, dt)
            for f, z in zip(config.structural_freqs, config.structural_damping)
        ]
        self.modes = [
            (_discrete_second_order(2 * math.pi * f, z, dt), gain)
            for f, z, gain in config.modal_peaks
        ]
        self.incline_cos = math.cos(math.radians(config.strut_incline_limit_deg))
        self.rotation_cos = math.cos(math.radians(config.plate_rotation_limit_deg))
        neutral = config.command_lengths(np.zeros(6))
        res = forward_kinematics_from_lengths(
            neutral, g, Pose6(0, 0, float(np.mean(neutral))))
        if not res.converged:
            raise RuntimeError("neutral pose solve failed; implausible geometry")
        self.neutral_pose = res.pose.as_array()
        self.history_len = max(4, int(config.sensor_latency * config.sim_rate) + 3)


@lru_cache(maxsize=8)
def _plan_for(config: PlantConfig) -> _Plan:
    return _Plan(config)


@dataclass(eq=False)
class PlantState:
    time: float
    payload_mass: float
    commanded: np.ndarray          # last clamped command, degrees
    delay_buf: np.ndarray          # (delay_steps, 6) command history
    delay_idx: int
    joints: np.ndarray             # actual servo angles, degrees
    joint_vel: np.ndarray          # degrees / s
    load_limited: np.ndarray       # per-joint flags from the load regime
    bend_limited: bool             # plate stopped at a compliance limit
    fk_pose: np.ndarray            # rigid FK solution being tracked
    fk_jac: np.ndarray
    fk_age: int
    quasi: np.ndarray              # pose after compliance + sag, pre-filter
    struct_pos: np.ndarray         # structural filter states per axis
    struct_vel: np.ndarray
    modal_pos: np.ndarray          # (n_modes, 3) roll/pitch/yaw oscillators
    modal_vel: np.ndarray
    hist_t: np.ndarray             # latency ring buffer
    hist_p: np.ndarray
    hist_i: int

    @property
    def pose(self) -> Pose6:
        out = self.struct_pos.copy()
        out[3:] += self.modal_pos.sum(axis=0)
        return Pose6.from_array(out)


def make_state(config: PlantConfig, payload_mass: float = 0.0,
               initial_joints=None) -> PlantState:
    plan = _plan_for(config)
    joints = np.zeros(6) if initial_joints is None else np.asarray(
        initial_joints, dtype=float).copy()
    lengths = config.command_lengths(joints)
    res = forward_kinematics_from_lengths(
        lengths, config.geometry, Pose6.from_array(plan.neutral_pose))
    pose = res.pose.as_array()
    quasi = _soften(pose, payload_mass, lengths, config, plan)
    hist_t = np.full(plan.history_len, 0.0)
    hist_p = np.tile(quasi, (plan.history_len, 1))
    return PlantState(
        time=0.0, payload_mass=payload_mass,
        commanded=joints.copy(),
        delay_buf=np.tile(joints, (plan.delay_steps, 1)), delay_idx=0,
        joints=joints.copy(), joint_vel=np.zeros(6),
        load_limited=np.zeros(6, dtype=bool), bend_limited=False,
        fk_pose=pose, fk_jac=_rigid_jacobian(pose, config), fk_age=0,
        quasi=quasi,
        struct_pos=quasi.copy(), struct_vel=np.zeros(6),
        modal_pos=np.zeros((len(config.modal_peaks), 3)),
        modal_vel=np.zeros((len(config.modal_peaks), 3)),
        hist_t=hist_t, hist_p=hist_p, hist_i=0,
    )


def check_buckling(state: PlantState, config: PlantConfig) -> LoadRegime:
    if state.payload_mass <= config.working_load:
        return LoadRegime.FULL
    if state.payload_mass <= config.max_load:
        return LoadRegime.PARTIAL
    return LoadRegime.INFEASIBLE


def _partial_cap(config: PlantConfig) -> float:
    lo, hi = config.geometry.joint_limits
    return lo + (hi - lo) * config.usable_volume_fraction ** (1.0 / 6.0)


def apply_load_sag(pose: Pose6, payload_mass: float, config: PlantConfig) -> Pose6:
    """Lower the plate by the axial compression of six springy struts."""
    if payload_mass < 0:
        raise ValueError("payload mass must be non-negative")
    if payload_mass == 0.0:
        return pose
    plan = _plan_for(config)
    R = euler_to_matrix(pose.roll, pose.pitch, pose.yaw)
    t = np.array([pose.x, pose.y, pose.z])
    s = plan.upper @ R.T + t - plan.lower
    cos_tilt = float(np.mean(s[:, 2] / np.linalg.norm(s, axis=1)))
    sag = payload_mass * GRAVITY / (6.0 * config.strut_stiffness * cos_tilt)
    return replace(pose, z=pose.z - sag)


def _rigid_jacobian(pose_vec: np.ndarray, config: PlantConfig,
                    step: float = 1e-6) -> np.ndarray:
    J = np.empty((6, 6))
    for j in range(6):
        hi = pose_vec.copy()
        lo = pose_vec.copy()
        hi[j] += step
        lo[j] -= step
        J[:, j] = (inverse_kinematics(Pose6.from_array(hi), config.geometry)
                   - inverse_kinematics(Pose6.from_array(lo), config.geometry)) / (2 * step)
    return J


def _within_limits(pose_vec: np.ndarray, config: PlantConfig, plan: _Plan) -> bool:
    R = euler_to_matrix(pose_vec[3], pose_vec[4], pose_vec[5])
    s = plan.upper @ R.T + pose_vec[:3] - plan.lower
    ln = np.linalg.norm(s, axis=1)
    cos_incline = min(float(np.min(s[:, 2] / ln)),
                      float(np.min((s @ R[:, 2]) / ln)))
    cos_rot = (np.trace(R) - 1.0) / 2.0
    return cos_incline >= plan.incline_cos and cos_rot >= plan.rotation_cos


def _track_rigid(state: PlantState, lengths: np.ndarray, config: PlantConfig,
                 plan: _Plan) -> tuple[np.ndarray, np.ndarray, int, bool]:
    """Advance the tracked rigid FK solution toward the target lengths.

    Returns (pose, jacobian, age, limited).  If the updated pose violates a
    compliance limit the previous pose is kept and the limited flag raised:
    physically the struts bend instead of driving the plate further.
    """
    p = state.fk_pose.copy()
    J = state.fk_jac
    age = state.fk_age + 1
    geometry = config.geometry
    r = inverse_kinematics(Pose6.from_array(p), geometry) - lengths
    res = float(np.linalg.norm(r))
    if res < 1e-9:
        return p, J, age, False
    if age > 40:
        J = _rigid_jacobian(p, config)
        age = 0
    for _ in range(3):
        delta = np.linalg.solve(J.T @ J + 1e-10 * np.eye(6), -J.T @ r)
        p = p + delta
        r = inverse_kinematics(Pose6.from_array(p), geometry) - lengths
        if float(np.linalg.norm(r)) < 1e-9:
            break
    else:
        J = _rigid_jacobian(p, config)
        age = 0
        for _ in range(3):
            delta = np.linalg.solve(J.T @ J + 1e-10 * np.eye(6), -J.T @ r)
            p = p + delta
            r = inverse_kinematics(Pose6.from_array(p), geometry) - lengths
            if float(np.linalg.norm(r)) < 1e-9:
                break
    if not _within_limits(p, config, plan):
        return state.fk_pose.copy(), state.fk_jac, state.fk_age + 1, True
    return p, J, age, False


def _soften(rigid_pose: np.ndarray, payload_mass: float, lengths: np.ndarray,
            config: PlantConfig, plan: _Plan) -> np.ndarray:
    """Compliance corrections: shear-limited translation plus load sag."""
    out = rigid_pose.copy()
    k = config.translation_compliance
    x_tilt = out[2] * math.sin(out[4])
    y_tilt = -out[2] * math.sin(out[3])
    out[0] = x_tilt + k * (out[0] - x_tilt)
    out[1] = y_tilt + k * (out[1] - y_tilt)
    if payload_mass > 0.0:
        R = euler_to_matrix(out[3], out[4], out[5])
        s = plan.upper @ R.T + out[:3] - plan.lower
        cos_tilt = float(np.mean(s[:, 2] / np.linalg.norm(s, axis=1)))
        out[2] -= payload_mass * GRAVITY / (6.0 * config.strut_stiffness * cos_tilt)
    return out


def plant_step(state: PlantState, commanded_joints, dt: float,
               config: PlantConfig) -> PlantState:
    """Advance the plant one fixed step (dt must equal 1 / sim_rate)."""
    if abs(dt * config.sim_rate - 1.0) > 1e-9:
        raise ValueError("dt must equal 1 / config.sim_rate")
    plan = _plan_for(config)
    lo, hi = config.geometry.joint_limits
    cmd = np.clip(np.asarray(commanded_joints, dtype=float), lo, hi)

    regime = check_buckling(state, config)
    load_limited = np.zeros(6, dtype=bool)
    if regime is LoadRegime.PARTIAL:
        cap = _partial_cap(config)
        load_limited = cmd > cap
        cmd = np.minimum(cmd, cap)
    elif regime is LoadRegime.INFEASIBLE:
        load_limited[:] = True
        cmd = np.minimum(cmd, state.joints)   # no further extension

    delay_buf = state.delay_buf.copy()
    idx = state.delay_idx
    delayed = delay_buf[idx].copy()
    delay_buf[idx] = cmd
    idx = (idx + 1) % delay_buf.shape[0]

    # servo response with the extension-rate cap expressed as a twist rate
    Ad, Bd = plan.servo
    pos = Ad[0, 0] * state.joints + Ad[0, 1] * state.joint_vel + Bd[0] * delayed
    vel = Ad[1, 0] * state.joints + Ad[1, 1] * state.joint_vel + Bd[1] * delayed
    rate_m = config.extension_rate_limit * max(
        0.0, 1.0 - config.load_speed_derate * state.payload_mass)
    cap_deg = rate_m / plan_slope
    joints = state.joints
    step_lim = (rate_m / config.length_slope(joints)) * dt
    dpos = np.clip(pos - joints, -step_lim, step_lim)
    joints = joints + dpos
    vel = np.clip(vel, -step_lim / dt, step_lim / dt)
    joints = np.clip(joints, lo, hi)

    lengths = config.command_lengths(joints)
    fk_pose, fk_jac, fk_age, limited = _track_rigid(state, lengths, config, plan)
    quasi = _soften(fk_pose, state.payload_mass, lengths, config, plan)

    struct_pos = np.empty(6)
    struct_vel = np.empty(6)
    struct_acc = np.empty(6)
    for axis in range(6):
        Asd, Bsd = plan.structural[axis]
        x0, v0 = state.struct_pos[axis], state.struct_vel[axis]
        u = quasi[axis]
        struct_pos[axis] = Asd[0, 0] * x0 + Asd[0, 1] * v0 + Bsd[0] * u
        struct_vel[axis] = Asd[1, 0] * x0 + Asd[1, 1] * v0 + Bsd[1] * u
        w = 2 * math.pi * config.structural_freqs[axis]
        z = config.structural_damping[axis]
        struct_acc[axis] = w * w * (u - struct_pos[axis]) - 2 * z * w * struct_vel[axis]

    modal_pos = np.empty_like(state.modal_pos)
    modal_vel = np.empty_like(state.modal_vel)
    drive = struct_acc[3:]
    for m, ((Amd, Bmd), gain) in enumerate(plan.modes):
        x0 = state.modal_pos[m]
        v0 = state.modal_vel[m]
        u = gain * drive
        modal_pos[m] = Amd[0, 0] * x0 + Amd[0, 1] * v0 + Bmd[0] * u
        modal_vel[m] = Amd[1, 0] * x0 + Amd[1, 1] * v0 + Bmd[1] * u

    out = struct_pos.copy()
    out[3:] += modal_pos.sum(axis=0)
    time = state.time + dt
    hist_i = (state.hist_i + 1) % plan.history_len
    hist_t = state.hist_t.copy()
    hist_p = state.hist_p.copy()
    hist_t[hist_i] = time
    hist_p[hist_i] = out

    return PlantState(
        time=time, payload_mass=state.payload_mass,
        commanded=cmd, delay_buf=delay_buf, delay_idx=idx,
        joints=joints, joint_vel=vel,
        load_limited=load_limited, bend_limited=limited,
        fk_pose=fk_pose, fk_jac=fk_jac, fk_age=fk_age,
        quasi=quasi,
        struct_pos=struct_pos, struct_vel=struct_vel,
        modal_pos=modal_pos, modal_vel=modal_vel,
        hist_t=hist_t, hist_p=hist_p, hist_i=hist_i,
    )


def measured_pose(state: PlantState, rng: np.random.Generator,
                  config: PlantConfig) -> Pose6:
    """Sensor view of the platform: latency plus Gaussian noise."""
    t_query = state.time - config.sensor_latency
    order = np.argsort(state.hist_t, kind="stable")
    ts = state.hist_t[order]
    ps = state.hist_p[order]
    t_query = min(max(t_query, ts[0]), ts[-1])
    k = int(np.searchsorted(ts, t_query, side="right"))
    k = min(max(k, 1), len(ts) - 1)
    t0, t1 = ts[k - 1], ts[k]
    w = 0.0 if t1 == t0 else (t_query - t0) / (t1 - t0)
    pose = (1 - w) * ps[k - 1] + w * ps[k]
    noise = np.concatenate([
        rng.normal(0.0, config.pose_noise_m, 3),
        rng.normal(0.0, math.radians(config.pose_noise_deg), 3),
    ])
    return Pose6.from_array(pose + noise)


def settle(state: PlantState, commanded_joints, config: PlantConfig,
           max_time: float = 3.0, substeps: int = 30) -> PlantState:
    """Jump to the settled state for a held command.

    Equivalent limit of stepping the plant until motion stops: joints reach
    the (load-limited) command, the rigid solution is continued along the
    monotone length path the rate-capped servos would follow, filters land on
    their inputs, and the resonant modes decay to zero.  The clock advances
    by the rate-cap travel time plus a servo tail, capped at ``max_time``.
    """
    plan = _plan_for(config)
    lo, hi = config.geometry.joint_limits
    cmd = np.clip(np.asarray(commanded_joints, dtype=float), lo, hi)
    regime = check_buckling(state, config)
    load_limited = np.zeros(6, dtype=bool)
    if regime is LoadRegime.PARTIAL:
        cap = _partial_cap(config)
        load_limited = cmd > cap
        cmd = np.minimum(cmd, cap)
    elif regime is LoadRegime.INFEASIBLE:
        load_limited[:] = True
        cmd = np.minimum(cmd, state.joints)

    rate_m = config.extension_rate_limit * max(
        0.0, 1.0 - config.load_speed_derate * state.payload_mass)
    start = config.command_lengths(state.joints)
    target = config.command_lengths(cmd)
    travel = float(np.max(np.abs(target - start))) / rate_m
    elapsed = min(max_time, travel + 6.0 / config.servo_natural_freq + 0.2)

    work = state
    bend = False
    fk_pose, fk_jac, fk_age = state.fk_pose, state.fk_jac, state.fk_age
    for a in np.linspace(1.0 / substeps, 1.0, substeps):
        lengths = start + a * (target - start)
        probe = replace(work, fk_pose=fk_pose, fk_jac=fk_jac, fk_age=fk_age)
        fk_pose, fk_jac, fk_age, limited = _track_rigid(probe, lengths, config, plan)
        if limited:
            bend = True
            break
    quasi = _soften(fk_pose, state.payload_mass, config.command_lengths(cmd),
                    config, plan)
    time = state.time + elapsed
    hist_t = np.full(plan.history_len, time)
    hist_t -= np.arange(plan.history_len)[::-1] * config.dt
    hist_p = np.tile(quasi, (plan.history_len, 1))
    return PlantState(
        time=time, payload_mass=state.payload_mass,
        commanded=cmd,
        delay_buf=np.tile(cmd, (plan.delay_steps, 1)), delay_idx=0,
        joints=cmd.copy(), joint_vel=np.zeros(6),
        load_limited=load_limited, bend_limited=bend,
        fk_pose=fk_pose, fk_jac=fk_jac, fk_age=fk_age,
        quasi=quasi,
        struct_pos=quasi.copy(), struct_vel=np.zeros(6),
        modal_pos=np.zeros_like(state.modal_pos),
        modal_vel=np.zeros_like(state.modal_vel),
        hist_t=hist_t, hist_p=hist_p, hist_i=plan.history_len - 1,
    )
