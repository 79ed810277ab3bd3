"""Stage NLP assembly for the receding-horizon controller.

One :class:`HorizonProblem` owns the variable layout and blocks for a
given structural signature (robot model, human count, obstacle count,
prediction mode, task stack) and is re-used across control steps by
rewriting its parameter dict. Robot and human states are declared through
defining equality blocks, so the SQP layer condenses them out of the QP
subproblems.

Variable groups:
    x{k}            robot state (q, nu), k = 0..N     (defined)
    u{k}            robot input, k = 0..N-1           (bounded)
    h{j}s{k}        human j state (pos, vel), k = 0..N  (defined)
    h{j}xi{k}       human j velocity action, k = 0..N-1   (interactive)
    h{j}ze{k}       human j slack pair (acc, vel)         (interactive)
    h{j}lam{k}      human j multipliers, one per lower-level constraint

The interactive mode embeds each human's velocity-selection optimality
system (stationarity, primal feasibility, relaxed complementarity, dual
nonnegativity as bounds); the plane coefficients are re-linearized at
every SQP iterate by default, with a frozen-coefficient mode for ablation.
"""

from __future__ import annotations

import numpy as np

from . import kinematics as kin
from . import orca as orca_mod
from . import tasks as tasks_mod
from .solver import COMPL, EQ, INEQ, RESIDUAL, Block, VariableLayout, assemble

_FD_H = 1e-6


def weight_sqrt(w):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    vals, vecs = np.linalg.eigh(w)
    vals = np.maximum(vals, 0.0)
    return (vecs * np.sqrt(vals)) @ vecs.T


def robot_dynamics_jacobians(model, x, u, dt):
    """d x_{k+1} / d (x_k, u_k) for the semi-implicit Euler map."""
    nq, nnu = model.n_q, model.n_nu
    q = x[:nq]
    nu = x[nq:]
    nu_next = nu + dt * u
    n_mat = kin.pseudo_velocity_map(model, q)
    dn_dth = kin.pseudo_velocity_map_theta_jac(model, q)
    a = np.zeros((nq + nnu, nq + nnu))
    a[:nq, :nq] = np.eye(nq)
    a[:nq, 2] += dt * (dn_dth @ nu_next)
    a[:nq, nq:] = dt * n_mat
    a[nq:, nq:] = np.eye(nnu)
    b = np.zeros((nq + nnu, nnu))
    b[:nq, :] = dt * dt * n_mat
    b[nq:, :] = dt * np.eye(nnu)
    return a, b


def integrate_packed(model, x, u, dt):
    nq = model.n_q
    state = kin.RobotState(x[:nq], x[nq:])
    nxt = kin.integrate_robot(model, state, u, dt)
    return np.concatenate([nxt.q, nxt.nu])


def base_velocity(model, x):
    """World-frame base velocity and its Jacobian w.r.t. the packed state."""
    nq = model.n_q
    th = x[2]
    c, s = np.cos(th), np.sin(th)
    jac = np.zeros((2, nq + model.n_nu))
    if model.base_type == kin.NONHOLONOMIC:
        v = x[nq]
        vel = np.array([c * v, s * v])
        jac[0, 2] = -s * v
        jac[1, 2] = c * v
        jac[0, nq] = c
        jac[1, nq] = s
    else:
        vx, vy = x[nq], x[nq + 1]
        vel = np.array([c * vx - s * vy, s * vx + c * vy])
        jac[0, 2] = -s * vx - c * vy
        jac[1, 2] = c * vx - s * vy
        jac[0, nq] = c
        jac[0, nq + 1] = -s
        jac[1, nq] = s
        jac[1, nq + 1] = c
    return vel, jac


def static_plane_np(position, radius, segment, tau):
    """Conservative closest-point plane (normal, offset) toward a segment."""
    seg = np.asarray(segment, dtype=float).reshape(2, 2)
    d = seg[1] - seg[0]
    dd = float(d @ d)
    if dd <= 0.0:
        closest = seg[0]
    else:
        t = float(np.clip((position - seg[0]) @ d / dd, 0.0, 1.0))
        closest = seg[0] + t * d
    to_obs = closest - position
    dist = float(np.linalg.norm(to_obs))
    dist = max(dist, 1e-9)
    direction = to_obs / dist
    surface = dist - radius
    return -direction, -surface / tau


class OrcaKktEvaluator:
    """Shared geometry + derivative engine behind the three embedded
    lower-level blocks (stationarity/primal/complementarity) of one human
    at one horizon step.

    Plane coefficients are functions of an 8-dim agent input
    (p_self, v_self, p_other, v_other); their derivatives come from central
    differences on the batched construction and are chained onto the NLP
    variables analytically. ``frozen`` zeroes the coefficient derivatives
    and reads coefficients captured at the start of the control step.
    """

    def __init__(self, human_idx, other_idx, model, n_obstacles, cfg, frozen):
        self.j = human_idx
        self.others = tuple(other_idx)
        self.model = model
        self.n_obs = n_obstacles
        self.cfg = cfg
        self.frozen = frozen
        self.nd = len(self.others) + 1
        self.m = 2 + self.nd + n_obstacles + 2
        self._cache_key = None
        self._cache_val = None

    # input packing: s_own(4), each other s(4), x(robot packed)
    def geometry(self, s_own, others_s, x, params):
        key = (s_own.tobytes(), tuple(s.tobytes() for s in others_s), x.tobytes())
        if key == self._cache_key:
            return self._cache_val
        cfg = self.cfg
        radius = cfg["human_radius"]
        vel_b, vel_b_jac = base_velocity(self.model, x)
        pos_b = x[:2]
        # one row per dynamic plane: others in index order, robot last
        chi = []
        comb = []
        resp = []
        for idx, s_o in zip(self.others, others_s):
            chi.append(np.concatenate([s_own[:2], s_own[2:4], s_o[:2], s_o[2:4]]))
            comb.append(2.0 * radius)
            resp.append(cfg["responsibility_human"])
            del idx
        chi.append(np.concatenate([s_own[:2], s_own[2:4], pos_b, vel_b]))
        comb.append(radius + self.model.base_radius)
        resp.append(cfg["responsibility_robot"])
        chi = np.asarray(chi)
        comb = np.asarray(comb)
        resp = np.asarray(resp)

        def planes_of(chi_rows):
            rel_pos = chi_rows[..., 4:6] - chi_rows[..., 0:2]
            rel_vel = chi_rows[..., 2:4] - chi_rows[..., 6:8]
            return orca_mod.vo_halfplanes(
                rel_pos, rel_vel, comb, chi_rows[..., 2:4], cfg["tau"], cfg["dt"], resp,
                strict=False,
            )

        n_dyn, b_dyn = planes_of(chi)
        if self.frozen:
            frozen_planes = params[f"frozen_planes_h{self.j}"]
            n_dyn, b_dyn = frozen_planes[0], frozen_planes[1]
            dn_dchi = np.zeros((self.nd, 2, 8))
            db_dchi = np.zeros((self.nd, 8))
        else:
            # central differences over the 8 agent inputs, batched
            h = _FD_H
            bumps = np.zeros((16, self.nd, 8))
            for d in range(8):
                bumps[2 * d, :, d] = h
                bumps[2 * d + 1, :, d] = -h
            chi_b = chi[None, :, :] + bumps
            n_b, b_b = planes_of(chi_b)
            dn_dchi = np.empty((self.nd, 2, 8))
            db_dchi = np.empty((self.nd, 8))
            for d in range(8):
                dn_dchi[:, :, d] = (n_b[2 * d] - n_b[2 * d + 1]) / (2 * h)
                db_dchi[:, d] = (b_b[2 * d] - b_b[2 * d + 1]) / (2 * h)

        # static planes: depend on own position only
        n_st = np.zeros((self.n_obs, 2))
        b_st = np.zeros(self.n_obs)
        dn_st = np.zeros((self.n_obs, 2, 2))
        db_st = np.zeros((self.n_obs, 2))
        for o in range(self.n_obs):
            seg = params["obstacles"][o]
            n_st[o], b_st[o] = static_plane_np(s_own[:2], radius, seg, cfg["tau"])
            if not self.frozen:
                for d in range(2):
                    dp = np.zeros(2)
                    dp[d] = _FD_H
                    nh, bh = static_plane_np(s_own[:2] + dp, radius, seg, cfg["tau"])
                    nl, bl = static_plane_np(s_own[:2] - dp, radius, seg, cfg["tau"])
                    dn_st[o, :, d] = (nh - nl) / (2 * _FD_H)
                    db_st[o, d] = (bh - bl) / (2 * _FD_H)

        out = {
            "n_dyn": n_dyn, "b_dyn": b_dyn, "dn_dchi": dn_dchi, "db_dchi": db_dchi,
            "n_st": n_st, "b_st": b_st, "dn_st": dn_st, "db_st": db_st,
            "vel_b_jac": vel_b_jac,
        }
        self._cache_key = key
        self._cache_val = out
        return out

    def constraints(self, xi, zeta, s_own, geo, params):
        cfg = self.cfg
        g = np.empty(self.m)
        g[0] = xi @ xi - cfg["xi_max"] ** 2
        dv = xi - s_own[2:4]
        g[1] = dv @ dv - (cfg["dt"] * cfg["a_max"]) ** 2 - zeta[0]
        g[2:2 + self.nd] = geo["b_dyn"] - geo["n_dyn"] @ xi - zeta[1]
        o0 = 2 + self.nd
        if self.n_obs:
            g[o0:o0 + self.n_obs] = geo["b_st"] - geo["n_st"] @ xi
        g[self.m - 2] = -zeta[0]
        g[self.m - 1] = -zeta[1]
        return g

    def constraint_jacs(self, xi, zeta, s_own, geo, params):
        """dg/d(xi, zeta, chi-rows, own velocity); chained later."""
        m, nd = self.m, self.nd
        d_xi = np.zeros((m, 2))
        d_ze = np.zeros((m, 2))
        d_vown = np.zeros((m, 2))       # direct dependence on s_own[2:4]
        d_chi = np.zeros((m, nd, 8))    # through dynamic plane coefficients
        d_pown = np.zeros((m, 2))       # through static plane coefficients
        del d_chi
        d_xi[0] = 2.0 * xi
        dv = xi - s_own[2:4]
        d_xi[1] = 2.0 * dv
        d_vown[1] = -2.0 * dv
        d_ze[1, 0] = -1.0
        rows = slice(2, 2 + nd)
        d_xi[rows] = -geo["n_dyn"]
        d_ze[rows, 1] = -1.0
        o0 = 2 + nd
        for o in range(self.n_obs):
            d_xi[o0 + o] = -geo["n_st"][o]
            d_pown[o0 + o] = geo["db_st"][o] - geo["dn_st"][o].T @ xi
        d_ze[m - 2, 0] = -1.0
        d_ze[m - 1, 1] = -1.0
        # each dynamic-plane row only feels its own plane's coefficients
        d_chi_rows = np.zeros((m, nd, 8))
        base = geo["db_dchi"] - np.einsum("pcd,c->pd", geo["dn_dchi"], xi)
        for p in range(nd):
            d_chi_rows[2 + p, p] = base[p]
        return d_xi, d_ze, d_vown, d_chi_rows, d_pown

    def stationarity(self, xi, zeta, lam, s_own, geo, params):
        cfg = self.cfg
        beta = cfg["beta"]
        v_pref = params[f"v_pref_h{self.j}"]
        r = np.empty(4)
        grad_xi = 2.0 * (xi - v_pref) + 2.0 * lam[0] * xi + 2.0 * lam[1] * (xi - s_own[2:4])
        grad_xi -= geo["n_dyn"].T @ lam[2:2 + self.nd]
        o0 = 2 + self.nd
        if self.n_obs:
            grad_xi -= geo["n_st"].T @ lam[o0:o0 + self.n_obs]
        r[:2] = grad_xi
        r[2] = 2.0 * beta[0] * zeta[0] - lam[1] - lam[self.m - 2]
        r[3] = 2.0 * beta[1] * zeta[1] - lam[2:2 + self.nd].sum() - lam[self.m - 1]
        return r


def _chain_chi_to_groups(d_chi_rows, d_pown, d_vown, evaluator, geo, n_groups_dims):
    """Map agent-input sensitivities onto (s_own, others..., x) group jacs.

    chi layout per plane row: [p_self, v_self, p_other, v_other]. For the
    robot plane, (p_other, v_other) chain through the base pose/velocity.
    """
    m = d_chi_rows.shape[0]
    nd = evaluator.nd
    n_others = len(evaluator.others)
    jac_s_own = np.zeros((m, 4))
    jac_others = [np.zeros((m, 4)) for _ in range(n_others)]
    nxr = n_groups_dims["x"]
    jac_x = np.zeros((m, nxr))
    for p in range(nd):
        sens = d_chi_rows[:, p, :]  # (m, 8)
        jac_s_own[:, 0:2] += sens[:, 0:2]
        jac_s_own[:, 2:4] += sens[:, 2:4]
        if p < n_others:
            jac_others[p][:, 0:2] += sens[:, 4:6]
            jac_others[p][:, 2:4] += sens[:, 6:8]
        else:
            jac_x[:, 0:2] += sens[:, 4:6]
            jac_x += sens[:, 6:8] @ geo["vel_b_jac"]
    jac_s_own[:, 0:2] += d_pown
    jac_s_own[:, 2:4] += d_vown
    return jac_s_own, jac_others, jac_x


class HorizonProblem:
    """Layout + blocks for one stage of the cascade (or the weighted sum)."""

    def __init__(self, model, n_humans, n_obstacles, config, stage_tasks,
                 lex_tasks, effort_weight, weighted=False, weights=None):
        self.model = model
        self.n_humans = n_humans
        self.n_obstacles = n_obstacles
        self.cfg = config
        self.N = config["horizon"]
        self.dt = config["dt"]
        self.interactive = config["prediction_mode"] == "interactive"
        self.stage_tasks = tuple(stage_tasks)
        self.lex_tasks = tuple(lex_tasks)
        self.weighted = weighted
        self.weights = weights or {}
        self.nx = model.n_q + model.n_nu
        self.nu = model.n_nu
        self.m_lower = 2 + (n_humans - 1 + 1) + n_obstacles + 2 if n_humans else 0
        self._effort_weight = np.asarray(effort_weight, dtype=float)
        self.instance = self._build()

    # ------------------------------------------------------------------
    def _build(self):
        model, N, dt = self.model, self.N, self.dt
        nx, nu = self.nx, self.nu
        layout = VariableLayout()
        for k in range(N + 1):
            layout.add(f"x{k}", nx)
        for k in range(N):
            layout.add(f"u{k}", nu)
        if self.interactive:
            for j in range(self.n_humans):
                for k in range(N + 1):
                    layout.add(f"h{j}s{k}", 4)
                for k in range(N):
                    layout.add(f"h{j}xi{k}", 2)
                    layout.add(f"h{j}ze{k}", 2)
                    layout.add(f"h{j}lam{k}", self.m_lower)

        blocks = []
        params = {"sigma": 1e-6, "obstacles": [], "x_init": np.zeros(nx)}
        for j in range(self.n_humans):
            params[f"s0_h{j}"] = np.zeros(4)
            params[f"v_pref_h{j}"] = np.zeros(2)
            params[f"pred_h{j}"] = np.zeros((N + 1, 4))
            params[f"frozen_planes_h{j}"] = (
                np.tile([1.0, 0.0], (self.n_humans, 1)), np.zeros(self.n_humans)
            )
        for t_i, task in enumerate(self.stage_tasks):
            params[f"ref_t{t_i}"] = np.zeros((N + 1, task.dim))
        for t_i, task in enumerate(self.lex_tasks):
            params[f"lex_ref_t{t_i}"] = np.zeros((N + 1, task.dim))
            params[f"lex_bound_t{t_i}"] = np.zeros((N + 1, task.dim))
        blocks += self._robot_blocks(layout, params)
        blocks += self._limit_blocks()
        blocks += self._barrier_blocks(params)
        if self.interactive:
            blocks += self._human_blocks(params)
        blocks += self._residual_blocks(params)
        blocks += self._lex_blocks(params)
        inst = assemble(layout, blocks, params)
        a_lim = model.pseudo_accel_limits
        for k in range(N):
            inst.set_bounds(f"u{k}", lb=-a_lim, ub=a_lim)
        if self.interactive:
            for j in range(self.n_humans):
                for k in range(N):
                    inst.set_bounds(f"h{j}lam{k}", lb=np.zeros(self.m_lower))
        return inst

    # ------------------------------------------------------------------
    def shift(self, z):
        """One-step warm-start shift; terminal entries repeated."""
        out = z.copy()
        layout = self.instance.layout

        def sh(names):
            for cur, nxt in zip(names[:-1], names[1:]):
                out[layout.slice_of(cur)] = z[layout.slice_of(nxt)]

        sh([f"x{k}" for k in range(self.N + 1)])
        sh([f"u{k}" for k in range(self.N)])
        if self.interactive:
            for j in range(self.n_humans):
                sh([f"h{j}s{k}" for k in range(self.N + 1)])
                sh([f"h{j}xi{k}" for k in range(self.N)])
                sh([f"h{j}ze{k}" for k in range(self.N)])
                sh([f"h{j}lam{k}" for k in range(self.N)])
        return out

    # ------------------------------------------------------------------
    def _robot_blocks(self, layout, params):
        model, dt = self.model, self.dt
        nx, nu = self.nx, self.nu
        blocks = [Block(
            "init_x", EQ, ("x0",), nx,
            lambda parts, p: parts[0] - p["x_init"],
            lambda parts, p: [np.eye(nx)],
            defines="x0",
        )]

        def make_dyn(k):
            def ev(parts, p):
                x_next, x, u = parts
                return x_next - integrate_packed(model, x, u, dt)

            def jac(parts, p):
                _, x, u = parts
                a, b = robot_dynamics_jacobians(model, x, u, dt)
                return [np.eye(nx), -a, -b]

            return Block(f"dyn{k}", EQ, (f"x{k+1}", f"x{k}", f"u{k}"), nx, ev, jac,
                         defines=f"x{k+1}")

        blocks += [make_dyn(k) for k in range(self.N)]

        if self.interactive:
            a_h = np.zeros((4, 4))
            a_h[0, 0] = a_h[1, 1] = 1.0
            b_h = np.zeros((4, 2))
            b_h[0, 0] = b_h[1, 1] = dt
            b_h[2, 0] = b_h[3, 1] = 1.0
            for j in range(self.n_humans):
                blocks.append(Block(
                    f"init_h{j}", EQ, (f"h{j}s0",), 4,
                    (lambda jj: lambda parts, p: parts[0] - p[f"s0_h{jj}"])(j),
                    lambda parts, p: [np.eye(4)],
                    defines=f"h{j}s0",
                ))
                for k in range(self.N):
                    blocks.append(Block(
                        f"hdyn{j}_{k}", EQ, (f"h{j}s{k+1}", f"h{j}s{k}", f"h{j}xi{k}"), 4,
                        (lambda A, B: lambda parts, p: parts[0] - A @ parts[1] - B @ parts[2])(a_h, b_h),
                        (lambda A, B: lambda parts, p: [np.eye(4), -A, -B])(a_h, b_h),
                        defines=f"h{j}s{k+1}",
                    ))
        return blocks

    # ------------------------------------------------------------------
    def _limit_blocks(self):
        model = self.model
        nq, nnu = model.n_q, model.n_nu
        rows = []
        rhs = []
        for i in range(nq):
            lo, hi = model.joint_limits[i]
            if np.isfinite(hi):
                r = np.zeros(self.nx)
                r[i] = 1.0
                rows.append(r)
                rhs.append(-hi)
            if np.isfinite(lo):
                r = np.zeros(self.nx)
                r[i] = -1.0
                rows.append(r)
                rhs.append(lo)
        for i in range(nnu):
            bound = model.pseudo_velocity_limits[i]
            r = np.zeros(self.nx)
            r[nq + i] = 1.0
            rows.append(r.copy())
            rhs.append(-bound)
            rows.append(-r)
            rhs.append(-bound)
        if not rows:
            return []
        mat = np.asarray(rows)
        off = np.asarray(rhs)
        blocks = []
        for k in range(self.N + 1):
            blocks.append(Block(
                f"limits{k}", INEQ, (f"x{k}",), mat.shape[0],
                (lambda M, o: lambda parts, p: M @ parts[0] + o)(mat, off),
                (lambda M: lambda parts, p: [M])(mat),
            ))
        # self-collision clearances
        pairs = kin.self_collision_pairs(model)
        if pairs:
            margins = model.self_collision_margins

            def sc_ev(parts, p):
                q = parts[0][:nq]
                return margins - kin.self_collision_vector(model, q)

            def sc_jac(parts, p):
                q = parts[0][:nq]
                bodies = kin.link_collision_bodies(model, q)
                jc = kin.chain_jacobians(model, q)
                out = np.zeros((len(pairs), self.nx))
                for r, (i, jdx) in enumerate(pairs):
                    _, ga, gb = kin.signed_distance_with_grads(bodies[i], bodies[jdx])
                    for body_idx, grads in ((i, ga), (jdx, gb)):
                        if body_idx == 0:
                            out[r, :nq] -= (grads[0] + grads[1]) @ jc[0]
                        else:
                            out[r, :nq] -= grads[0] @ jc[body_idx - 1] + grads[1] @ jc[body_idx]
                return [out]

            for k in range(self.N + 1):
                blocks.append(Block(
                    f"selfcoll{k}", INEQ, (f"x{k}",), len(pairs), sc_ev, sc_jac
                ))
        return blocks

    # ------------------------------------------------------------------
    def _barrier_blocks(self, params):
        """(1-gamma) h_k - h_{k+1} <= 0 for every robot body x hazard pair."""
        model = self.model
        nq = model.n_q
        gamma = self.cfg["gamma"]
        n_bodies = 1 + len(model.arm)
        n_h = self.n_humans
        n_obs_pairs = n_bodies * self.n_obstacles
        dim = n_bodies * n_h + n_obs_pairs
        if dim == 0:
            return []
        margin_h = self.cfg["robot_human_margin"]
        margin_o = self.cfg["obstacle_margin"]
        human_radius = self.cfg["human_radius"]
        interactive = self.interactive

        def h_and_jac(x, human_positions, p, want_jac):
            q = x[:nq]
            bodies = kin.link_collision_bodies(model, q)
            jc = kin.chain_jacobians(model, q) if want_jac else None
            h = np.empty(dim)
            jx = np.zeros((dim, self.nx)) if want_jac else None
            jh = np.zeros((dim, n_h, 2)) if want_jac else None
            r = 0
            for j in range(n_h):
                hd = kin.disc(human_positions[j], human_radius)
                for b_i, body in enumerate(bodies):
                    sd, ga, gb = kin.signed_distance_with_grads(body, hd)
                    h[r] = sd - margin_h
                    if want_jac:
                        if b_i == 0:
                            jx[r, :nq] = (ga[0] + ga[1]) @ jc[0]
                        else:
                            jx[r, :nq] = ga[0] @ jc[b_i - 1] + ga[1] @ jc[b_i]
                        jh[r, j] = gb[0] + gb[1]
                    r += 1
            for o in range(self.n_obstacles):
                seg = p["obstacles"][o]
                ob = kin.CollisionBody(np.asarray(seg[0], float), np.asarray(seg[1], float), 1e-9)
                for b_i, body in enumerate(bodies):
                    sd, ga, _ = kin.signed_distance_with_grads(body, ob)
                    h[r] = sd + ob.radius - margin_o
                    if want_jac:
                        if b_i == 0:
                            jx[r, :nq] = (ga[0] + ga[1]) @ jc[0]
                        else:
                            jx[r, :nq] = ga[0] @ jc[b_i - 1] + ga[1] @ jc[b_i]
                    r += 1
            return h, jx, jh

        blocks = []
        for k in range(self.N):
            if interactive and n_h:
                groups = (f"x{k}", f"x{k+1}") + tuple(
                    g for j in range(n_h) for g in (f"h{j}s{k}", f"h{j}s{k+1}")
                )
            else:
                groups = (f"x{k}", f"x{k+1}")

            def ev(parts, p, k=k):
                x_k, x_k1 = parts[0], parts[1]
                if interactive and n_h:
                    pos_k = [parts[2 + 2 * j][:2] for j in range(n_h)]
                    pos_k1 = [parts[3 + 2 * j][:2] for j in range(n_h)]
                else:
                    pred = [p[f"pred_h{j}"] for j in range(n_h)]
                    pos_k = [pr[k, :2] for pr in pred]
                    pos_k1 = [pr[k + 1, :2] for pr in pred]
                h_k, _, _ = h_and_jac(x_k, pos_k, p, False)
                h_k1, _, _ = h_and_jac(x_k1, pos_k1, p, False)
                return (1.0 - gamma) * h_k - h_k1

            def jac(parts, p, k=k):
                x_k, x_k1 = parts[0], parts[1]
                if interactive and n_h:
                    pos_k = [parts[2 + 2 * j][:2] for j in range(n_h)]
                    pos_k1 = [parts[3 + 2 * j][:2] for j in range(n_h)]
                else:
                    pred = [p[f"pred_h{j}"] for j in range(n_h)]
                    pos_k = [pr[k, :2] for pr in pred]
                    pos_k1 = [pr[k + 1, :2] for pr in pred]
                _, jx_k, jh_k = h_and_jac(x_k, pos_k, p, True)
                _, jx_k1, jh_k1 = h_and_jac(x_k1, pos_k1, p, True)
                out = [(1.0 - gamma) * jx_k, -jx_k1]
                if interactive and n_h:
                    for j in range(n_h):
                        jk = np.zeros((dim, 4))
                        jk[:, :2] = (1.0 - gamma) * jh_k[:, j]
                        jk1 = np.zeros((dim, 4))
                        jk1[:, :2] = -jh_k1[:, j]
                        out.extend([jk, jk1])
                return out

            blocks.append(Block(f"cbf{k}", INEQ, groups, dim, ev, jac))
        return blocks

    # ------------------------------------------------------------------
    def _human_blocks(self, params):
        blocks = []
        cfg = {
            "human_radius": self.cfg["human_radius"],
            "tau": self.cfg["tau"],
            "dt": self.dt,
            "xi_max": self.cfg["xi_max"],
            "a_max": self.cfg["a_max"],
            "beta": self.cfg["beta"],
            "responsibility_human": self.cfg["responsibility_human"],
            "responsibility_robot": self.cfg["responsibility_robot"],
        }
        frozen = not self.cfg.get("relinearize_planes", True)
        for j in range(self.n_humans):
            others = [l for l in range(self.n_humans) if l != j]
            for k in range(self.N):
                ev = OrcaKktEvaluator(j, others, self.model, self.n_obstacles, cfg, frozen)
                groups = (
                    (f"h{j}xi{k}", f"h{j}ze{k}", f"h{j}lam{k}", f"h{j}s{k}")
                    + tuple(f"h{l}s{k}" for l in others)
                    + (f"x{k}",)
                )
                blocks += self._lower_level_blocks(ev, groups, j, k)
        return blocks

    def _lower_level_blocks(self, ev: OrcaKktEvaluator, groups, j, k):
        m = ev.m
        n_others = len(ev.others)
        dims = {"x": self.nx}

        def unpack(parts):
            xi, zeta, lam, s_own = parts[0], parts[1], parts[2], parts[3]
            others_s = [parts[4 + i] for i in range(n_others)]
            x = parts[4 + n_others]
            return xi, zeta, lam, s_own, others_s, x

        def primal_ev(parts, p):
            xi, zeta, lam, s_own, others_s, x = unpack(parts)
            geo = ev.geometry(s_own, others_s, x, p)
            return ev.constraints(xi, zeta, s_own, geo, p)

        def primal_jacs(parts, p):
            xi, zeta, lam, s_own, others_s, x = unpack(parts)
            geo = ev.geometry(s_own, others_s, x, p)
            d_xi, d_ze, d_vown, d_chi_rows, d_pown = ev.constraint_jacs(xi, zeta, s_own, geo, p)
            jac_s_own, jac_others, jac_x = _chain_chi_to_groups(
                d_chi_rows, d_pown, d_vown, ev, geo, dims
            )
            return [d_xi, d_ze, np.zeros((m, m)), jac_s_own, *jac_others, jac_x]

        def compl_ev(parts, p):
            xi, zeta, lam, s_own, others_s, x = unpack(parts)
            geo = ev.geometry(s_own, others_s, x, p)
            g = ev.constraints(xi, zeta, s_own, geo, p)
            return lam * (-g) - p["sigma"]

        def compl_jacs(parts, p):
            xi, zeta, lam, s_own, others_s, x = unpack(parts)
            geo = ev.geometry(s_own, others_s, x, p)
            g = ev.constraints(xi, zeta, s_own, geo, p)
            base = primal_jacs(parts, p)
            out = []
            for idx, jmat in enumerate(base):
                scaled = -lam[:, None] * jmat
                if idx == 2:
                    scaled = scaled + np.diag(-g)
                out.append(scaled)
            return out

        def stat_ev(parts, p):
            xi, zeta, lam, s_own, others_s, x = unpack(parts)
            geo = ev.geometry(s_own, others_s, x, p)
            return ev.stationarity(xi, zeta, lam, s_own, geo, p)

        def stat_jacs(parts, p):
            xi, zeta, lam, s_own, others_s, x = unpack(parts)
            geo = ev.geometry(s_own, others_s, x, p)
            cfg = ev.cfg
            beta = cfg["beta"]
            nd = ev.nd
            d_xi = np.zeros((4, 2))
            d_ze = np.zeros((4, 2))
            d_lam = np.zeros((4, m))
            d_vown_direct = np.zeros((4, 2))
            d_xi[:2, :2] = (2.0 + 2.0 * lam[0] + 2.0 * lam[1]) * np.eye(2)
            d_lam[:2, 0] = 2.0 * xi
            d_lam[:2, 1] = 2.0 * (xi - s_own[2:4])
            d_lam[:2, 2:2 + nd] = -geo["n_dyn"].T
            o0 = 2 + nd
            if ev.n_obs:
                d_lam[:2, o0:o0 + ev.n_obs] = -geo["n_st"].T
            d_vown_direct[:2] = -2.0 * lam[1] * np.eye(2)
            d_ze[2, 0] = 2.0 * beta[0]
            d_lam[2, 1] = -1.0
            d_lam[2, m - 2] = -1.0
            d_ze[3, 1] = 2.0 * beta[1]
            d_lam[3, 2:2 + nd] = -1.0
            d_lam[3, m - 1] = -1.0
            # coefficient sensitivities: rows 0..1 carry -sum lam_p dn_p/dchi
            chi_sens = np.zeros((4, nd, 8))
            for p_i in range(nd):
                chi_sens[0:2, p_i, :] = -lam[2 + p_i] * geo["dn_dchi"][p_i]
            pos_sens = np.zeros((4, 2))
            for o in range(ev.n_obs):
                pos_sens[0:2] += -lam[o0 + o] * geo["dn_st"][o]
            jac_s_own, jac_others, jac_x = _chain_chi_to_groups(
                chi_sens, pos_sens, d_vown_direct, ev, geo, dims
            )
            return [d_xi, d_ze, d_lam, jac_s_own, *jac_others, jac_x]

        return [
            Block(f"kkt_stat_h{j}_{k}", EQ, groups, 4, stat_ev, stat_jacs),
            Block(f"orca_primal_h{j}_{k}", INEQ, groups, m, primal_ev, primal_jacs),
            Block(f"orca_compl_h{j}_{k}", COMPL, groups, m, compl_ev, compl_jacs),
        ]

    # ------------------------------------------------------------------
    def _task_error_fns(self, task: tasks_mod.Task, ref_param):
        """error value + jacobian closures for one task at one step."""
        model = self.model
        nq = model.n_q

        if task.kind == tasks_mod.EE_POSITION:
            def err(x, ref):
                return kin.forward_kinematics(model, x[:nq]).ee_position - ref

            def jac(x):
                out = np.zeros((2, self.nx))
                out[:, :nq] = kin.chain_jacobians(model, x[:nq])[-1]
                return out
        elif task.kind == tasks_mod.BASE_POSE:
            heading = task.tracks_heading

            def err(x, ref):
                e = x[:2] - ref[:2]
                if heading:
                    e = np.append(e, kin.wrap_angle(x[2] - ref[2]))
                return e

            def jac(x):
                d = 3 if heading else 2
                out = np.zeros((d, self.nx))
                out[0, 0] = out[1, 1] = 1.0
                if heading:
                    out[2, 2] = 1.0
                return out
        else:
            idx = list(task.config_indices)

            def err(x, ref):
                return x[idx] - ref

            def jac(x):
                out = np.zeros((len(idx), self.nx))
                for r, i in enumerate(idx):
                    out[r, i] = 1.0
                return out
        return err, jac

    def _residual_blocks(self, params):
        blocks = []
        model = self.model
        if self.weighted:
            entries = [(t, self.weights.get(t.role or t.name, 1.0)) for t in self.stage_tasks]
        else:
            entries = [(t, 1.0) for t in self.stage_tasks]
        for t_i, (task, w_scale) in enumerate(entries):
            err, jac = self._task_error_fns(task, f"ref_t{t_i}")
            w_stage = weight_sqrt(task.stage_weight) * np.sqrt(w_scale)
            w_term = weight_sqrt(task.terminal_weight) * np.sqrt(2.0 * w_scale)
            for k in range(self.N + 1):
                w = w_term if k == self.N else w_stage
                blocks.append(Block(
                    f"track_t{t_i}_{k}", RESIDUAL, (f"x{k}",), task.dim,
                    (lambda err, w, t_i, k: lambda parts, p: w @ err(parts[0], p[f"ref_t{t_i}"][k]))(err, w, t_i, k),
                    (lambda jac, w: lambda parts, p: [w @ jac(parts[0])])(jac, w),
                ))
        w_eff = weight_sqrt(self.effort_weight)
        for k in range(self.N):
            blocks.append(Block(
                f"effort{k}", RESIDUAL, (f"u{k}",), self.nu,
                (lambda w: lambda parts, p: w @ parts[0])(w_eff),
                (lambda w: lambda parts, p: [w])(w_eff),
            ))
        return blocks

    @property
    def effort_weight(self):
        return self._effort_weight

    def _lex_blocks(self, params):
        blocks = []
        eps = self.cfg["eps_lex"]
        for t_i, task in enumerate(self.lex_tasks):
            err, jac = self._task_error_fns(task, f"lex_ref_t{t_i}")
            d = task.dim
            for k in range(self.N + 1):
                def ev(parts, p, t_i=t_i, k=k, err=err, d=d):
                    e = err(parts[0], p[f"lex_ref_t{t_i}"][k])
                    bound = p[f"lex_bound_t{t_i}"][k] + eps
                    return np.concatenate([e - bound, -e - bound])

                def jc(parts, p, jac=jac, d=d):
                    j = jac(parts[0])
                    return [np.vstack([j, -j])]

                blocks.append(Block(
                    f"lex_t{t_i}_{k}", INEQ, (f"x{k}",), 2 * d, ev, jc
                ))
        return blocks
