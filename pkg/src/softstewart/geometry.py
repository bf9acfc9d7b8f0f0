"""Frames, transforms, and closed-form rigid kinematics of the strut platform.

Euler convention used everywhere: extrinsic roll-pitch-yaw about the fixed
base axes, i.e. ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.  Translations are in
meters, angles in radians internally; degrees appear only at external
interfaces (configs, CSV, joint angles).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GRAVITY = 9.81  # m/s^2

_FULL_TURN_DEG = 360.0


@dataclass(frozen=True)
class Pose6:
    """6-DoF pose of the top platform expressed in the bottom-platform frame."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.roll, self.pitch, self.yaw])

    @classmethod
    def from_array(cls, a) -> "Pose6":
        a = np.asarray(a, dtype=float)
        return cls(*(float(v) for v in a))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.as_array())))


@dataclass(frozen=True)
class WorkspaceLimits:
    """Per-axis working range of the platform (measured hardware reference).

    Angles are stored in degrees because that is how the limits are quoted
    and configured; use :meth:`sample_pose` / :meth:`clamp_pose` for radians.
    """

    x: tuple[float, float] = (-0.06, 0.06)
    y: tuple[float, float] = (-0.056, 0.061)
    z: tuple[float, float] = (0.237, 0.316)
    roll_deg: tuple[float, float] = (-15.5, 18.6)
    pitch_deg: tuple[float, float] = (-18.2, 16.0)
    yaw_deg: tuple[float, float] = (-14.8, 14.4)

    def bounds(self) -> np.ndarray:
        """(6, 2) array of [min, max] per axis in meters / radians."""
        rows = [self.x, self.y, self.z]
        rows += [tuple(math.radians(v) for v in b)
                 for b in (self.roll_deg, self.pitch_deg, self.yaw_deg)]
        return np.array(rows)

    def center(self) -> Pose6:
        b = self.bounds()
        return Pose6.from_array(b.mean(axis=1))

    def half_range(self) -> np.ndarray:
        b = self.bounds()
        return (b[:, 1] - b[:, 0]) / 2.0

    def sample_pose(self, rng: np.random.Generator) -> Pose6:
        b = self.bounds()
        return Pose6.from_array(rng.uniform(b[:, 0], b[:, 1]))

    def clamp_pose(self, pose: Pose6) -> Pose6:
        b = self.bounds()
        return Pose6.from_array(np.clip(pose.as_array(), b[:, 0], b[:, 1]))


@dataclass(frozen=True)
class PlatformGeometry:
    """Geometric constants of the platform and its six extensible struts.

    ``servo_gain`` is meters of strut extension per radian of servo rotation.
    The default spans ``max_extension`` exactly over the joint-limit range,
    so 270 degrees of servo travel gives 50 mm of extension.
    """

    upper_radius: float = 0.076    # m, struts meet the top plate on this circle
    lower_radius: float = 0.0875   # m
    corner_offset: float = math.radians(15.5)
    strut_count: int = 6
    neutral_strut_length: float = 0.250  # m at zero servo angle
    max_extension: float = 0.050         # m
    joint_limits: tuple[float, float] = (0.0, 270.0)  # degrees
    servo_gain: float = field(default=0.0)  # m/rad; 0 means "derive from limits"

    def __post_init__(self):
        if not (self.upper_radius > 0 and self.lower_radius > 0):
            raise ValueError("platform radii must be positive")
        if not 0 < self.corner_offset < math.pi / 3:
            raise ValueError("corner offset must lie in (0, pi/3)")
        if self.strut_count != 6:
            raise ValueError("only six-strut platforms are supported")
        if self.servo_gain == 0.0:
            span = math.radians(self.joint_limits[1] - self.joint_limits[0])
            object.__setattr__(self, "servo_gain", self.max_extension / span)


@dataclass(eq=False)
class JointVector:
    """Six servo angles in degrees plus per-joint clamp flags."""

    angles_deg: np.ndarray
    saturated: np.ndarray

    def __post_init__(self):
        self.angles_deg = np.asarray(self.angles_deg, dtype=float)
        self.saturated = np.asarray(self.saturated, dtype=bool)

    @classmethod
    def from_angles(cls, angles_deg, geometry: PlatformGeometry) -> "JointVector":
        """Clamp raw angles into the joint limits, recording saturation."""
        a = np.asarray(angles_deg, dtype=float)
        lo, hi = geometry.joint_limits
        clamped = np.clip(a, lo, hi)
        return cls(clamped, ~np.isclose(a, clamped, atol=1e-12))


def _rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def euler_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    return _rot_z(yaw) @ _rot_y(pitch) @ _rot_x(roll)


def matrix_to_euler(R: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`euler_to_matrix`; angles in (-pi, pi]."""
    sp = -R[2, 0]
    cp = math.sqrt(max(0.0, 1.0 - sp * sp))
    if cp > 1e-10:
        pitch = math.atan2(sp, cp)
        roll = math.atan2(R[2, 1], R[2, 2])
        yaw = math.atan2(R[1, 0], R[0, 0])
    else:
        # Gimbal lock: pitch = +-pi/2, split is ambiguous; put it all in roll.
        pitch = math.copysign(math.pi / 2, sp)
        roll = math.atan2(-R[0, 1], R[1, 1])
        yaw = 0.0
    return roll, pitch, yaw


def pose_to_transform(pose: Pose6) -> np.ndarray:
    """Homogeneous 4x4 transform of the pose (top frame in bottom frame)."""
    if not pose.is_finite():
        raise ValueError("pose must be finite")
    T = np.eye(4)
    T[:3, :3] = euler_to_matrix(pose.roll, pose.pitch, pose.yaw)
    T[:3, 3] = (pose.x, pose.y, pose.z)
    return T


def transform_to_pose(T: np.ndarray) -> Pose6:
    roll, pitch, yaw = matrix_to_euler(np.asarray(T)[:3, :3])
    x, y, z = np.asarray(T)[:3, 3]
    return Pose6(float(x), float(y), float(z), roll, pitch, yaw)


def strut_anchor_angles(geometry: PlatformGeometry) -> np.ndarray:
    """Angular position of each strut attachment around its platform circle.

    Struts come in three pairs straddling the plate corners: each pair sits
    at +-corner_offset around a corner, and corners are 120 degrees apart.
    For strut index n = 1..6 the angle is (-1)^n * offset + (2*pi/3)*floor(n/2).
    """
    n = np.arange(1, 7)
    return ((-1.0) ** n) * geometry.corner_offset + (2 * np.pi / 3) * (n // 2)


def _ring(radius: float, angles: np.ndarray) -> np.ndarray:
    return radius * np.stack([np.cos(angles), np.sin(angles), np.zeros(6)], axis=1)


def strut_anchors(geometry: PlatformGeometry) -> tuple[np.ndarray, np.ndarray]:
    """(lower, upper) anchor points, each (6, 3), in their own plate frame.

    Both plates place anchors at +-corner_offset around corners 120 degrees
    apart, but each strut crosses between the two offsets: its lower end sits
    on one side of a corner and its upper end on the other.  The crossing is
    what gives the struts their roughly 10 degree inward lean at rest and
    keeps the six length gradients independent; connecting equal angles top
    and bottom would make the two rings similar and the length map singular
    (a pure twist would then leave every length unchanged to first order).
    """
    theta = strut_anchor_angles(geometry)
    n = np.arange(1, 7)
    phi = -((-1.0) ** n) * geometry.corner_offset + (2 * np.pi / 3) * (n // 2)
    return _ring(geometry.lower_radius, theta), _ring(geometry.upper_radius, phi)


def inverse_kinematics(pose: Pose6, geometry: PlatformGeometry) -> np.ndarray:
    """Closed-form strut lengths for a pose: norm of each strut vector.

    Purely geometric; returns lengths for any finite pose, feasibility is
    the caller's concern.
    """
    if not pose.is_finite():
        raise ValueError("pose must be finite")
    lower, upper = strut_anchors(geometry)
    R = euler_to_matrix(pose.roll, pose.pitch, pose.yaw)
    t = np.array([pose.x, pose.y, pose.z])
    vectors = upper @ R.T + t - lower
    return np.linalg.norm(vectors, axis=1)


def lengths_to_joints(lengths, geometry: PlatformGeometry) -> JointVector:
    """Servo angles for target strut lengths under the linear extension map."""
    lengths = np.asarray(lengths, dtype=float)
    if not np.all(np.isfinite(lengths)):
        raise ValueError("strut lengths must be finite")
    angles_rad = (lengths - geometry.neutral_strut_length) / geometry.servo_gain
    return JointVector.from_angles(np.degrees(angles_rad), geometry)


def joints_to_lengths(angles_deg, geometry: PlatformGeometry) -> np.ndarray:
    """Rest strut lengths commanded by servo angles (linear extension map)."""
    angles_deg = np.asarray(angles_deg, dtype=float)
    return geometry.neutral_strut_length + geometry.servo_gain * np.radians(angles_deg)


@dataclass
class FkResult:
    pose: Pose6
    converged: bool
    residual: float   # norm of length mismatch, meters
    iterations: int


def _length_jacobian(pose_vec: np.ndarray, geometry: PlatformGeometry,
                     step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of strut lengths w.r.t. the 6 pose coords."""
    J = np.empty((6, 6))
    for j in range(6):
        hi = pose_vec.copy()
        lo = pose_vec.copy()
        hi[j] += step
        lo[j] -= step
        J[:, j] = (inverse_kinematics(Pose6.from_array(hi), geometry)
                   - inverse_kinematics(Pose6.from_array(lo), geometry)) / (2 * step)
    return J


def forward_kinematics_from_lengths(lengths, geometry: PlatformGeometry,
                                    initial_guess: Pose6,
                                    tol: float = 1e-8,
                                    max_iterations: int = 100) -> FkResult:
    """Numerically invert the length map with damped Gauss-Newton.

    Minimizes the squared length mismatch from ``initial_guess``.  Damping
    follows the usual Levenberg schedule: lambda shrinks by 10x on an
    accepted step and grows by 10x when a step fails to reduce the cost.
    """
    target = np.asarray(lengths, dtype=float)
    if not initial_guess.is_finite():
        raise ValueError("initial guess must be finite")
    p = initial_guess.as_array()
    r = inverse_kinematics(Pose6.from_array(p), geometry) - target
    cost = float(r @ r)
    lam = 1e-3
    best_p, best_res = p.copy(), math.sqrt(cost)
    iterations = 0
    while iterations < max_iterations:
        if math.sqrt(cost) < tol:
            return FkResult(Pose6.from_array(p), True, math.sqrt(cost), iterations)
        J = _length_jacobian(p, geometry)
        iterations += 1
        stepped = False
        for _ in range(25):  # inner damping adjustments within one iteration
            H = J.T @ J + lam * np.eye(6)
            try:
                delta = np.linalg.solve(H, -J.T @ r)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            p_new = p + delta
            r_new = inverse_kinematics(Pose6.from_array(p_new), geometry) - target
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                p, r, cost = p_new, r_new, cost_new
                lam = max(lam / 10, 1e-12)
                stepped = True
                break
            lam *= 10
        if math.sqrt(cost) < best_res:
            best_p, best_res = p.copy(), math.sqrt(cost)
        if not stepped:
            break
    converged = best_res < tol
    return FkResult(Pose6.from_array(best_p), converged, best_res, iterations)


def forward_kinematics(joints: JointVector, geometry: PlatformGeometry,
                       initial_guess: Pose6) -> FkResult:
    """Pose reached by servo angles, via the linear length map and FK solve."""
    lengths = joints_to_lengths(joints.angles_deg, geometry)
    return forward_kinematics_from_lengths(lengths, geometry, initial_guess)


class PoseTracker:
    """Warm-started forward kinematics for streaming length targets.

    Reuses the previous solution as the initial guess and caches the length
    Jacobian between calls, refreshing it only when a Gauss-Newton step with
    the stale Jacobian stops making progress.  Intended for plant stepping,
    where consecutive targets differ by a fraction of a millimeter.
    """

    def __init__(self, geometry: PlatformGeometry, initial_pose: Pose6,
                 tol: float = 1e-9):
        self._geometry = geometry
        self._pose_vec = initial_pose.as_array()
        self._tol = tol
        self._J = _length_jacobian(self._pose_vec, geometry)

    @property
    def pose(self) -> Pose6:
        return Pose6.from_array(self._pose_vec)

    def track(self, lengths) -> Pose6:
        target = np.asarray(lengths, dtype=float)
        p = self._pose_vec
        for attempt in range(12):
            r = inverse_kinematics(Pose6.from_array(p), geometry=self._geometry) - target
            res = float(np.linalg.norm(r))
            if res < self._tol:
                break
            if attempt in (4, 8):  # stale Jacobian is not cutting it
                self._J = _length_jacobian(p, self._geometry)
            H = self._J.T @ self._J + 1e-9 * np.eye(6)
            p = p + np.linalg.solve(H, -self._J.T @ r)
        else:
            # Fall back to the full solver for an off-nominal jump.
            result = forward_kinematics_from_lengths(
                target, self._geometry, Pose6.from_array(self._pose_vec))
            p = result.pose.as_array()
            self._J = _length_jacobian(p, self._geometry)
        self._pose_vec = p
        return Pose6.from_array(p)
