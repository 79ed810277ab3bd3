"""Relaxed reciprocal collision-avoidance (ORCA) velocity optimization.

Each agent picks the velocity closest to its preferred velocity subject to
velocity-obstacle half-planes against other agents (slack-relaxed, shared
slack), hard half-planes against static obstacles, a speed cap, and a
slack-relaxed per-step velocity-change cap. Slack keeps the problem
feasible whenever the static planes admit any velocity at all; violations
are penalized quadratically with weights beta = (beta_acc, beta_vel).

Constraint ordering is canonical and shared with the prediction blocks
embedded in the controller:

    0                    speed cap          |xi|^2 <= xi_max^2
    1                    accel cap          |xi - v|^2 - zeta_acc <= (dt a_max)^2
    2 .. 2+nd            dynamic planes     b_i - n_i'xi - zeta_vel <= 0
    2+nd .. 2+nd+ns      static planes      b_j - n_j'xi <= 0
    -2, -1               slack bounds       -zeta_acc <= 0, -zeta_vel <= 0

The exact multipliers of this problem are consumed downstream by the
single-level reformulation of the interactive prediction model, so the
solver drives the KKT residuals below 1e-10 (Newton steps on the
Lagrangian with the small dense QP solver handling the working set).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .solver import qp


class DegenerateGeometryError(ValueError):
    """Raised when the velocity-obstacle geometry is undefined."""


class StaticInfeasibleError(RuntimeError):
    """Raised when the hard static planes admit no velocity; carries the
    indices of the conflicting planes."""

    def __init__(self, message, planes=()):
        super().__init__(message)
        self.planes = tuple(planes)


@dataclass(frozen=True)
class OrcaAgent:
    """One disc agent with its velocity-selection parameters."""

    position: np.ndarray
    velocity: np.ndarray
    radius: float
    v_pref: np.ndarray
    xi_max: float = 1.5
    a_max: float = 2.0
    tau: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float))
        object.__setattr__(self, "v_pref", np.asarray(self.v_pref, dtype=float))
        if self.radius <= 0 or self.xi_max <= 0 or self.a_max <= 0 or self.tau <= 0:
            raise ValueError("radius, xi_max, a_max and tau must be > 0")


@dataclass(frozen=True)
class HalfPlane:
    """Velocity constraint normal'xi >= offset; unit normal."""

    normal: np.ndarray
    offset: float
    slackable: bool

    def __post_init__(self):
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=float))
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-10:
            raise ValueError("half-plane normal must be a unit vector")


@dataclass(frozen=True)
class OrcaProblem:
    agent: OrcaAgent
    dynamic_planes: tuple[HalfPlane, ...] = ()
    static_planes: tuple[HalfPlane, ...] = ()
    slack_penalty: np.ndarray = field(default_factory=lambda: np.array([100.0, 100.0]))
    dt: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "dynamic_planes", tuple(self.dynamic_planes))
        object.__setattr__(self, "static_planes", tuple(self.static_planes))
        object.__setattr__(self, "slack_penalty", np.asarray(self.slack_penalty, dtype=float))
        if self.slack_penalty.shape != (2,) or np.any(self.slack_penalty <= 0):
            raise ValueError("slack_penalty must be two positive weights (acc, vel)")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        for p in self.dynamic_planes:
            if not p.slackable:
                raise ValueError("dynamic planes must be slackable")
        for p in self.static_planes:
            if p.slackable:
                raise ValueError("static planes must not be slackable")

    @property
    def n_constraints(self) -> int:
        return 4 + len(self.dynamic_planes) + len(self.static_planes)


@dataclass
class OrcaSolution:
    xi: np.ndarray
    zeta: np.ndarray
    lam: np.ndarray
    active_set: list[int]
    objective: float


def _det2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def vo_halfplanes(rel_pos, rel_vel, comb_radius, v_self, tau, dt, responsibility,
                  strict=True):
    """Batched velocity-obstacle half-plane construction.

    All leading dimensions broadcast; ``rel_pos`` points from self to the
    other agent and ``rel_vel`` is v_self - v_other. Follows the standard
    reciprocal velocity-obstacle geometry: projection on the cutoff circle
    or a leg of the truncated cone, and for already-overlapping agents a
    separating plane resolving the penetration over one step of ``dt``.

    Returns (normal (..., 2), offset (...,)) with constraint
    normal . xi >= offset for the self agent taking the given share of the
    avoidance responsibility. ``strict=False`` nudges coincident centers
    apart instead of raising (the embedded prediction blocks must stay
    evaluable at arbitrary intermediate iterates).
    """
    rel_pos = np.asarray(rel_pos, dtype=float)
    rel_vel = np.asarray(rel_vel, dtype=float)
    v_self = np.asarray(v_self, dtype=float)
    comb = np.asarray(comb_radius, dtype=float)

    dist_sq = np.sum(rel_pos**2, axis=-1)
    if np.any(dist_sq <= 1e-16):
        if strict:
            raise DegenerateGeometryError("coincident agent centers")
        rel_pos = rel_pos.copy()
        bad = dist_sq <= 1e-16
        rel_pos[..., 0] = np.where(bad, 1e-6, rel_pos[..., 0])
        dist_sq = np.sum(rel_pos**2, axis=-1)
    comb_sq = comb**2
    no_coll = dist_sq > comb_sq

    inv_tau = 1.0 / tau
    w = rel_vel - inv_tau * rel_pos
    w_len_sq = np.sum(w**2, axis=-1)
    dot1 = np.sum(w * rel_pos, axis=-1)
    cutoff = (dot1 < 0.0) & (dot1**2 > comb_sq * w_len_sq)

    # cutoff-circle projection
    w_len = np.sqrt(np.maximum(w_len_sq, 1e-300))
    unit_w = w / w_len[..., None]
    u_cut = (comb * inv_tau - w_len)[..., None] * unit_w
    n_cut = unit_w

    # leg projection
    leg = np.sqrt(np.maximum(dist_sq - comb_sq, 0.0))
    left = _det2(rel_pos, w) > 0.0
    dir_left = np.stack(
        [rel_pos[..., 0] * leg - rel_pos[..., 1] * comb,
         rel_pos[..., 0] * comb + rel_pos[..., 1] * leg], axis=-1
    ) / dist_sq[..., None]
    dir_right = -np.stack(
        [rel_pos[..., 0] * leg + rel_pos[..., 1] * comb,
         -rel_pos[..., 0] * comb + rel_pos[..., 1] * leg], axis=-1
    ) / dist_sq[..., None]
    leg_dir = np.where(left[..., None], dir_left, dir_right)
    u_leg = np.sum(rel_vel * leg_dir, axis=-1)[..., None] * leg_dir - rel_vel
    n_leg = np.stack([-leg_dir[..., 1], leg_dir[..., 0]], axis=-1)

    # penetration resolution over one dt
    w_c = rel_vel - rel_pos / dt
    w_c_len = np.sqrt(np.maximum(np.sum(w_c**2, axis=-1), 1e-300))
    unit_c = w_c / w_c_len[..., None]
    u_pen = (comb / dt - w_c_len)[..., None] * unit_c
    n_pen = unit_c

    n = np.where(no_coll[..., None], np.where(cutoff[..., None], n_cut, n_leg), n_pen)
    u = np.where(no_coll[..., None], np.where(cutoff[..., None], u_cut, u_leg), u_pen)
    point = v_self + responsibility * u
    offset = np.sum(n * point, axis=-1)
    return n, offset


def build_agent_halfplane(agent: OrcaAgent, other, tau=None, responsibility=0.5,
                          dt=None) -> HalfPlane:
    """Half-plane of velocities for ``agent`` avoiding one moving agent.

    ``other`` needs position, velocity and radius attributes (or a mapping
    with those keys). The agent takes the given fraction of the avoidance
    effort; the complementary share is assumed of the other. Overlapping
    agents yield the one-step separating plane instead of the cone
    construction. Always slackable.
    """
    if isinstance(other, dict):
        o_pos, o_vel, o_rad = other["position"], other["velocity"], other["radius"]
    else:
        o_pos, o_vel, o_rad = other.position, other.velocity, other.radius
    if not 0.0 < responsibility <= 1.0:
        raise ValueError("responsibility must be in (0, 1]")
    tau = agent.tau if tau is None else tau
    dt = 0.1 if dt is None else dt
    rel_pos = np.asarray(o_pos, dtype=float) - agent.position
    rel_vel = agent.velocity - np.asarray(o_vel, dtype=float)
    n, b = vo_halfplanes(
        rel_pos, rel_vel, agent.radius + float(o_rad), agent.velocity, tau, dt, responsibility
    )
    norm = float(np.linalg.norm(n))
    return HalfPlane(n / norm, float(b) / norm, slackable=True)


def build_static_halfplane(agent: OrcaAgent, segment, tau=None) -> HalfPlane:
    """Hard half-plane keeping the agent clear of an inflated segment.

    Conservative closest-point construction: the velocity component toward
    the nearest obstacle point may not exceed (surface distance) / tau,
    which excludes every velocity reaching the inflated segment head-on
    within tau while leaving tangential motion free.
    """
    tau = agent.tau if tau is None else tau
    seg = np.asarray(segment, dtype=float).reshape(2, 2)
    d = seg[1] - seg[0]
    dd = float(d @ d)
    if dd <= 0.0:
        closest = seg[0]
    else:
        t = float(np.clip((agent.position - seg[0]) @ d / dd, 0.0, 1.0))
        closest = seg[0] + t * d
    to_obs = closest - agent.position
    dist = float(np.linalg.norm(to_obs))
    surface = dist - agent.radius
    if dist <= 1e-12 or surface <= 0.0:
        raise DegenerateGeometryError("agent inside inflated obstacle")
    direction = to_obs / dist
    return HalfPlane(-direction, -surface / tau, slackable=False)


def _constraint_eval(problem: OrcaProblem, z):
    """Values and gradients of the canonical constraint vector at z=(xi, za, zv)."""
    agent = problem.agent
    xi = z[:2]
    za, zv = z[2], z[3]
    nd, ns = len(problem.dynamic_planes), len(problem.static_planes)
    m = 4 + nd + ns
    g = np.empty(m)
    J = np.zeros((m, 4))
    g[0] = xi @ xi - agent.xi_max**2
    J[0, :2] = 2.0 * xi
    dv = xi - agent.velocity
    cap = problem.dt * agent.a_max
    g[1] = dv @ dv - cap**2 - za
    J[1, :2] = 2.0 * dv
    J[1, 2] = -1.0
    for i, p in enumerate(problem.dynamic_planes):
        g[2 + i] = p.offset - p.normal @ xi - zv
        J[2 + i, :2] = -p.normal
        J[2 + i, 3] = -1.0
    for j, p in enumerate(problem.static_planes):
        g[2 + nd + j] = p.offset - p.normal @ xi
        J[2 + nd + j, :2] = -p.normal
    g[m - 2] = -za
    J[m - 2, 2] = -1.0
    g[m - 1] = -zv
    J[m - 1, 3] = -1.0
    return g, J


def _objective_eval(problem: OrcaProblem, z):
    agent = problem.agent
    beta = problem.slack_penalty
    diff = z[:2] - agent.v_pref
    f = float(diff @ diff + beta[0] * z[2] ** 2 + beta[1] * z[3] ** 2)
    grad = np.concatenate([2.0 * diff, [2.0 * beta[0] * z[2], 2.0 * beta[1] * z[3]]])
    return f, grad


def _check_static_feasible(problem: OrcaProblem):
    """Static planes plus the speed cap must admit some velocity."""
    ns = len(problem.static_planes)
    if ns == 0:
        return
    G = np.array([-p.normal for p in problem.static_planes])
    h = np.array([-p.offset for p in problem.static_planes])
    sol = qp.solve_qp(2.0 * np.eye(2), np.zeros(2), g_ineq=G, h_ineq=h)
    if sol.status == qp.INFEASIBLE:
        rows = tuple(i for kind, i in sol.infeasible_rows if kind == "ineq")
        raise StaticInfeasibleError("static half-planes conflict", rows or range(ns))
    if np.linalg.norm(sol.x) > problem.agent.xi_max + 1e-9:
        rows = tuple(np.flatnonzero(np.abs(G @ sol.x - h) < 1e-8))
        raise StaticInfeasibleError(
            "static half-planes exclude the whole speed disc", rows
        )


def solve_orca(problem: OrcaProblem, max_iterations: int = 60) -> OrcaSolution:
    """Global optimum of the relaxed velocity-selection problem.

    Newton-SQP: the two quadratic constraints are re-linearized around the
    current iterate while the exact Lagrangian Hessian (diagonal plus the
    multiplier-weighted identity of the two ball constraints) drives the
    steps, so convergence is quadratic and the returned multipliers satisfy
    the KKT system to ~1e-10. Raises :class:`StaticInfeasibleError` when
    the hard planes conflict; every other problem is feasible by slack.
    """
    _check_static_feasible(problem)
    agent = problem.agent
    beta = problem.slack_penalty
    nd, ns = len(problem.dynamic_planes), len(problem.static_planes)
    m = 4 + nd + ns

    xi0 = agent.v_pref.copy()
    speed = np.linalg.norm(xi0)
    if speed > agent.xi_max:
        xi0 *= agent.xi_max / speed
    g0_probe = _constraint_eval(problem, np.concatenate([xi0, [0.0, 0.0]]))[0]
    za0 = max(0.0, g0_probe[1])
    zv0 = max(0.0, g0_probe[2:2 + nd].max(initial=0.0))
    z = np.concatenate([xi0, [za0, zv0]])
    lam = np.zeros(m)
    warm = None

    for _ in range(max_iterations):
        g, J = _constraint_eval(problem, z)
        f, grad = _objective_eval(problem, z)
        # exact Lagrangian Hessian: constraint curvature only from the two balls
        H = np.diag([2.0, 2.0, 2.0 * beta[0], 2.0 * beta[1]])
        ball_w = 2.0 * (lam[0] + lam[1])
        H[0, 0] += ball_w
        H[1, 1] += ball_w

        stat = grad + J.T @ lam
        res_stat = np.abs(stat).max()
        res_primal = np.maximum(g, 0.0).max()
        res_comp = np.abs(lam * g).max()
        if max(res_stat, res_primal, res_comp) < 1e-11:
            break

        sub = qp.solve_qp(H, grad, g_ineq=J, h_ineq=-g, warm=warm)
        if sub.status != qp.OPTIMAL:
            raise RuntimeError(f"velocity QP subproblem failed: {sub.status}")
        warm = sub
        step = sub.x
        lam = sub.lam_ineq
        z = z + step
        if np.linalg.norm(step) < 1e-13:
            break

    g, _ = _constraint_eval(problem, z)
    f, _ = _objective_eval(problem, z)
    active = [int(i) for i in np.flatnonzero(np.abs(g) <= 1e-8)]
    return OrcaSolution(
        xi=z[:2].copy(),
        zeta=np.maximum(z[2:4].copy(), 0.0),
        lam=np.maximum(lam, 0.0),
        active_set=active,
        objective=f,
    )


def kkt_residuals(problem: OrcaProblem, candidate: OrcaSolution) -> dict:
    """Infinity norms of the four KKT residual groups at a candidate point."""
    z = np.concatenate([candidate.xi, candidate.zeta])
    lam = np.asarray(candidate.lam, dtype=float)
    g, J = _constraint_eval(problem, z)
    if lam.shape != g.shape:
        raise ValueError(f"multiplier vector must have length {g.shape[0]}")
    _, grad = _objective_eval(problem, z)
    return {
        "stationarity": float(np.abs(grad + J.T @ lam).max()),
        "primal": float(np.maximum(g, 0.0).max()),
        "dual": float(np.maximum(-lam, 0.0).max()),
        "complementarity": float(np.abs(lam * g).max()),
    }
