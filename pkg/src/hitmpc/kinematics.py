"""Planar mobile-manipulator kinematics and collision geometry.

Robots are modeled as a circular base (nonholonomic differential-drive or
holonomic omnidirectional) carrying a planar serial arm of revolute and
prismatic links. Configuration q stacks the base pose (x, y, theta) and the
arm joint values; pseudo-velocities nu stack the base velocity coordinates
(forward speed + yaw rate for the nonholonomic base, body-frame vx, vy, yaw
rate for the holonomic one) and the arm joint rates, with q_dot = N(q) nu.

All operations are pure functions over immutable value types and safe to
call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NONHOLONOMIC = "nonholonomic"
HOLONOMIC = "holonomic"
REVOLUTE = "revolute"
PRISMATIC = "prismatic"

BASE_CONFIG_DIM = 3


def wrap_angle(a):
    """Wrap an angle (or array of angles) to (-pi, pi]."""
    wrapped = np.mod(-np.asarray(a) + np.pi, 2.0 * np.pi)
    return -(wrapped - np.pi)


@dataclass(frozen=True)
class ArmLink:
    """One arm link: a revolute joint followed by a rod, or a prismatic slide.

    ``length_or_stroke`` is the rod length for a revolute link and the
    maximum extension for a prismatic one (the actual extension is the joint
    value). ``radius`` is the capsule half-width used for collision checks.
    """

    joint_type: str
    length_or_stroke: float
    radius: float

    def __post_init__(self):
        if self.joint_type not in (REVOLUTE, PRISMATIC):
            raise ValueError(f"unknown joint type {self.joint_type!r}")
        if self.length_or_stroke < 0.0:
            raise ValueError("link length/stroke must be >= 0")
        if self.radius <= 0.0:
            raise ValueError("link radius must be > 0")


@dataclass(frozen=True)
class RobotModel:
    """Kinematic description of a planar mobile manipulator.

    ``joint_limits`` has one [min, max] row per configuration DOF (base rows
    may be +-inf). ``pseudo_velocity_limits`` and ``pseudo_accel_limits``
    are symmetric per-DOF bounds on nu and on u = nu_dot.
    ``self_collision_margins`` holds one clearance per checked link pair, in
    the order produced by :func:`self_collision_pairs`.
    """

    base_type: str
    arm: tuple[ArmLink, ...]
    base_radius: float
    joint_limits: np.ndarray
    pseudo_velocity_limits: np.ndarray
    pseudo_accel_limits: np.ndarray
    self_collision_margins: np.ndarray = field(default_factory=lambda: np.zeros(0))
    name: str = "robot"

    def __post_init__(self):
        if self.base_type not in (NONHOLONOMIC, HOLONOMIC):
            raise ValueError(f"unknown base type {self.base_type!r}")
        if self.base_radius <= 0.0:
            raise ValueError("base radius must be > 0")
        object.__setattr__(self, "arm", tuple(self.arm))
        object.__setattr__(self, "joint_limits", np.asarray(self.joint_limits, dtype=float))
        object.__setattr__(
            self, "pseudo_velocity_limits", np.asarray(self.pseudo_velocity_limits, dtype=float)
        )
        object.__setattr__(
            self, "pseudo_accel_limits", np.asarray(self.pseudo_accel_limits, dtype=float)
        )
        object.__setattr__(
            self, "self_collision_margins", np.asarray(self.self_collision_margins, dtype=float)
        )
        if self.joint_limits.shape != (self.n_q, 2):
            raise ValueError(f"joint_limits must be ({self.n_q}, 2)")
        finite = np.isfinite(self.joint_limits).all(axis=1)
        if np.any(self.joint_limits[:, 0] >= self.joint_limits[:, 1]):
            raise ValueError("joint limits must satisfy min < max")
        del finite
        if self.pseudo_velocity_limits.shape != (self.n_nu,):
            raise ValueError(f"pseudo_velocity_limits must have length {self.n_nu}")
        if self.pseudo_accel_limits.shape != (self.n_nu,):
            raise ValueError(f"pseudo_accel_limits must have length {self.n_nu}")
        if np.any(self.pseudo_velocity_limits <= 0.0) or np.any(self.pseudo_accel_limits <= 0.0):
            raise ValueError("pseudo-velocity and accel bounds must be > 0")
        n_pairs = len(self_collision_pairs(self))
        if self.self_collision_margins.shape != (n_pairs,):
            raise ValueError(
                f"self_collision_margins must have one entry per checked pair ({n_pairs})"
            )

    @property
    def n_q(self) -> int:
        return BASE_CONFIG_DIM + len(self.arm)

    @property
    def n_base_nu(self) -> int:
        return 2 if self.base_type == NONHOLONOMIC else 3

    @property
    def n_nu(self) -> int:
        return self.n_base_nu + len(self.arm)


@dataclass(frozen=True)
class RobotState:
    """Robot state x = (q, nu)."""

    q: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "nu", np.asarray(self.nu, dtype=float))


@dataclass(frozen=True)
class CollisionBody:
    """A disc or a capsule in world coordinates.

    For a disc, ``a == b`` is the center; a capsule with coincident
    endpoints degenerates to a disc.
    """

    a: np.ndarray
    b: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        if self.radius <= 0.0:
            raise ValueError("collision body radius must be > 0")

    @property
    def is_disc(self) -> bool:
        return bool(np.all(self.a == self.b))


def disc(center, radius) -> CollisionBody:
    center = np.asarray(center, dtype=float)
    return CollisionBody(center, center.copy(), radius)


def capsule(a, b, radius) -> CollisionBody:
    return CollisionBody(a, b, radius)


def _check_q(model: RobotModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n_q,):
        raise ValueError(f"configuration must have length {model.n_q}, got {q.shape}")
    return q


def pseudo_velocity_map(model: RobotModel, q) -> np.ndarray:
    """Matrix N(q) with q_dot = N(q) nu.

    Block diagonal: a state-dependent base block and an identity block for
    the arm joints. The nonholonomic base maps (forward speed, yaw rate);
    the holonomic base maps body-frame (vx, vy, yaw rate) through the base
    rotation.
    """
    q = _check_q(model, q)
    n = np.zeros((model.n_q, model.n_nu))
    th = q[2]
    c, s = np.cos(th), np.sin(th)
    if model.base_type == NONHOLONOMIC:
        n[0, 0] = c
        n[1, 0] = s
        n[2, 1] = 1.0
    else:
        n[0, 0] = c
        n[0, 1] = -s
        n[1, 0] = s
        n[1, 1] = c
        n[2, 2] = 1.0
    for i in range(len(model.arm)):
        n[BASE_CONFIG_DIM + i, model.n_base_nu + i] = 1.0
    return n


def pseudo_velocity_map_theta_jac(model: RobotModel, q) -> np.ndarray:
    """d/d(theta) of N(q)nu contracted later with nu; returns dN/dtheta."""
    q = _check_q(model, q)
    dn = np.zeros((model.n_q, model.n_nu))
    th = q[2]
    c, s = np.cos(th), np.sin(th)
    if model.base_type == NONHOLONOMIC:
        dn[0, 0] = -s
        dn[1, 0] = c
    else:
        dn[0, 0] = -s
        dn[0, 1] = -c
        dn[1, 0] = c
        dn[1, 1] = -s
    return dn


def integrate_robot(model: RobotModel, state: RobotState, u, dt: float) -> RobotState:
    """One semi-implicit Euler step: nu' = nu + dt u, q' = q + dt N(q) nu'.

    The same discrete map is used by the MPC prediction model and by the
    simulator; limits are enforced elsewhere (constraints in the MPC,
    clamping at the plant boundary).
    """
    u = np.asarray(u, dtype=float)
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    if u.shape != (model.n_nu,):
        raise ValueError(f"control must have length {model.n_nu}")
    nu_next = state.nu + dt * u
    q_next = state.q + dt * pseudo_velocity_map(model, state.q) @ nu_next
    return RobotState(q_next, nu_next)


@dataclass(frozen=True)
class ForwardKinematics:
    """Chain points of the arm in world coordinates.

    ``points`` has one row per chain node: base center, then the distal end
    of each link. ``headings`` holds each link's world direction angle.
    """

    points: np.ndarray
    headings: np.ndarray

    @property
    def ee_position(self) -> np.ndarray:
        return self.points[-1]

    @property
    def link_frames(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.points[i], self.points[i + 1]) for i in range(len(self.points) - 1)]


def forward_kinematics(model: RobotModel, q) -> ForwardKinematics:
    """Compose the planar chain from the base pose through every joint."""
    q = _check_q(model, q)
    pts = [q[:2].copy()]
    headings = []
    heading = q[2]
    for i, link in enumerate(model.arm):
        val = q[BASE_CONFIG_DIM + i]
        if link.joint_type == REVOLUTE:
            heading = heading + val
            extent = link.length_or_stroke
        else:
            extent = val
        direction = np.array([np.cos(heading), np.sin(heading)])
        pts.append(pts[-1] + extent * direction)
        headings.append(heading)
    return ForwardKinematics(np.asarray(pts), np.asarray(headings))


def chain_jacobians(model: RobotModel, q) -> np.ndarray:
    """Jacobians of every chain point w.r.t. q.

    Returns an array of shape (n_links + 1, 2, n_q); row 0 is the base
    center. The end-effector Jacobian is the last entry.
    """
    q = _check_q(model, q)
    n_pts = len(model.arm) + 1
    jac = np.zeros((n_pts, 2, model.n_q))
    jac[0, 0, 0] = 1.0
    jac[0, 1, 1] = 1.0
    heading = q[2]
    dheading = np.zeros(model.n_q)
    dheading[2] = 1.0
    for i, link in enumerate(model.arm):
        val = q[BASE_CONFIG_DIM + i]
        dheading = dheading.copy()
        if link.joint_type == REVOLUTE:
            heading = heading + val
            dheading[BASE_CONFIG_DIM + i] = 1.0
            extent = val * 0.0 + link.length_or_stroke
            dextent = np.zeros(model.n_q)
        else:
            extent = val
            dextent = np.zeros(model.n_q)
            dextent[BASE_CONFIG_DIM + i] = 1.0
        c, s = np.cos(heading), np.sin(heading)
        jac[i + 1] = jac[i]
        jac[i + 1, 0] += c * dextent + extent * (-s) * dheading
        jac[i + 1, 1] += s * dextent + extent * c * dheading
    return jac


def link_collision_bodies(model: RobotModel, q) -> list[CollisionBody]:
    """Base disc plus one capsule per arm link, consistent with the FK chain."""
    fk = forward_kinematics(model, q)
    bodies = [disc(fk.points[0], model.base_radius)]
    for i, link in enumerate(model.arm):
        bodies.append(capsule(fk.points[i], fk.points[i + 1], link.radius))
    return bodies


def _closest_point_param(p, a, b) -> float:
    """Clamped parameter of the closest point to p on segment [a, b]."""
    d = b - a
    dd = float(d @ d)
    if dd <= 0.0:
        return 0.0
    return float(np.clip((p - a) @ d / dd, 0.0, 1.0))


def _segment_segment_params(a0, a1, b0, b1) -> tuple[float, float]:
    """Closest-point parameters (s, t) between segments [a0,a1] and [b0,b1].

    At medial-axis (non-unique) configurations the parameter-clamped
    candidate is returned, which is a valid subgradient choice.
    """
    d1 = a1 - a0
    d2 = b1 - b0
    r = a0 - b0
    aa = float(d1 @ d1)
    ee = float(d2 @ d2)
    f = float(d2 @ r)
    if aa <= 0.0 and ee <= 0.0:
        return 0.0, 0.0
    if aa <= 0.0:
        return 0.0, float(np.clip(f / ee, 0.0, 1.0))
    c = float(d1 @ r)
    if ee <= 0.0:
        return float(np.clip(-c / aa, 0.0, 1.0)), 0.0
    bb = float(d1 @ d2)
    denom = aa * ee - bb * bb
    if denom > 1e-14 * aa * ee:
        s = float(np.clip((bb * f - c * ee) / denom, 0.0, 1.0))
    else:
        s = 0.0
    t = (bb * s + f) / ee
    if t < 0.0:
        t = 0.0
        s = float(np.clip(-c / aa, 0.0, 1.0))
    elif t > 1.0:
        t = 1.0
        s = float(np.clip((bb - c) / aa, 0.0, 1.0))
    return s, t


def _canonical_order(body_a: CollisionBody, body_b: CollisionBody) -> bool:
    """True when (a, b) is already in canonical evaluation order.

    Evaluating both argument orders through one canonical path keeps
    signed_distance(a, b) == signed_distance(b, a) bit-exact.
    """
    ka = (body_a.a[0], body_a.a[1], body_a.b[0], body_a.b[1], body_a.radius)
    kb = (body_b.a[0], body_b.a[1], body_b.b[0], body_b.b[1], body_b.radius)
    return ka <= kb


def signed_distance(body_a: CollisionBody, body_b: CollisionBody) -> float:
    """Euclidean distance between body surfaces; negative when penetrating."""
    if not _canonical_order(body_a, body_b):
        body_a, body_b = body_b, body_a
    s, t = _segment_segment_params(body_a.a, body_a.b, body_b.a, body_b.b)
    pa = body_a.a + s * (body_a.b - body_a.a)
    pb = body_b.a + t * (body_b.b - body_b.a)
    return float(np.linalg.norm(pa - pb)) - body_a.radius - body_b.radius


def signed_distance_with_grads(body_a: CollisionBody, body_b: CollisionBody):
    """Signed distance plus gradients w.r.t. both bodies' endpoints.

    Returns (sd, (d/d a.a, d/d a.b), (d/d b.a, d/d b.b)). Gradients follow
    the envelope theorem through the closest-point parameters and pick the
    parameter-clamped subgradient at coincident centerlines.
    """
    swapped = not _canonical_order(body_a, body_b)
    if swapped:
        body_a, body_b = body_b, body_a
    s, t = _segment_segment_params(body_a.a, body_a.b, body_b.a, body_b.b)
    pa = body_a.a + s * (body_a.b - body_a.a)
    pb = body_b.a + t * (body_b.b - body_b.a)
    diff = pa - pb
    dist = float(np.linalg.norm(diff))
    if dist > 1e-12:
        unit = diff / dist
    else:
        unit = np.array([1.0, 0.0])
    sd = dist - body_a.radius - body_b.radius
    grads_a = ((1.0 - s) * unit, s * unit)
    grads_b = (-(1.0 - t) * unit, -t * unit)
    if swapped:
        grads_a, grads_b = grads_b, grads_a
    return sd, grads_a, grads_b


def self_collision_pairs(model: RobotModel) -> list[tuple[int, int]]:
    """Checked body-index pairs: non-adjacent links plus (base, distal links).

    Indices refer to :func:`link_collision_bodies` output (0 = base disc,
    i >= 1 = arm link i-1). Adjacent pairs always touch at the joint and are
    skipped.
    """
    n_links = len(model.arm)
    pairs = [(0, j) for j in range(2, n_links + 1)]
    pairs.extend(
        (i, j) for i in range(1, n_links + 1) for j in range(i + 2, n_links + 1)
    )
    return pairs


def self_collision_vector(model: RobotModel, q) -> np.ndarray:
    """Signed distances sd(q) for every checked pair, in canonical pair order."""
    bodies = link_collision_bodies(model, q)
    pairs = self_collision_pairs(model)
    return np.array([signed_distance(bodies[i], bodies[j]) for i, j in pairs])
