"""Receding-horizon controller: lexicographic task cascade with embedded
interactive human prediction, plus the weighted-sum / constant-velocity /
reactive baselines.

In lexicographic mode the hierarchy is solved one stage per task: stage p
minimizes task p's tracking cost plus the effort regularizer subject to
the system constraints and to per-step per-component bounds on every
higher-priority task's errors, taken from that task's own stage solution.
The interactive prediction mode embeds each human's velocity-selection
optimality system as constraints, so predictions react to the robot plan
inside the optimization; the constant-velocity mode replaces them with
trajectories extrapolated before the solve; the reactive mode holds
humans at their estimated positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kinematics as kin
from . import orca as orca_mod
from . import tasks as tasks_mod
from .horizon import HorizonProblem, base_velocity, integrate_packed
from .solver import CONVERGED, SolveReport, SqpSettings, SqpWorkspace, solve_sqp

INTERACTIVE = "interactive"
CVMM = "cvmm"
REACTIVE = "reactive"
LEXICOGRAPHIC = "lexicographic"
WEIGHTED_SUM = "weighted_sum"


@dataclass(frozen=True)
class ControllerConfig:
    horizon: int = 20
    dt: float = 0.1
    gamma: float = 0.3
    human_radius: float = 0.3
    robot_human_margin: float = 0.1
    obstacle_margin: float = 0.05
    prediction_mode: str = INTERACTIVE
    priority_mode: str = LEXICOGRAPHIC
    weights: dict = field(default_factory=lambda: {"ee": 10.0, "base": 1.0})
    sqp: SqpSettings = field(default_factory=lambda: SqpSettings(prox_weight=1.0, sigma_schedule=(1e-2, 1e-4, 8e-7)))
    tau: float = 2.0
    xi_max: float = 1.5
    a_max: float = 2.0
    beta: tuple = (100.0, 100.0)
    responsibility_human: float = 0.5
    responsibility_robot: float = 1.0
    relinearize_planes: bool = True
    eps_lex: float = 1e-6
    name: str = "controller"

    def __post_init__(self):
        if self.horizon < 1 or self.dt <= 0:
            raise ValueError("horizon >= 1 and dt > 0 required")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.robot_human_margin < 0 or self.obstacle_margin < 0:
            raise ValueError("margins must be >= 0")
        if self.prediction_mode not in (INTERACTIVE, CVMM, REACTIVE):
            raise ValueError(f"unknown prediction mode {self.prediction_mode!r}")
        if self.priority_mode not in (LEXICOGRAPHIC, WEIGHTED_SUM):
            raise ValueError(f"unknown priority mode {self.priority_mode!r}")


@dataclass(frozen=True)
class StateEstimate:
    robot: kin.RobotState
    human_positions: np.ndarray  # (n_h, 2)
    human_velocities: np.ndarray  # (n_h, 2)

    def __post_init__(self):
        object.__setattr__(self, "human_positions",
                           np.asarray(self.human_positions, float).reshape(-1, 2))
        object.__setattr__(self, "human_velocities",
                           np.asarray(self.human_velocities, float).reshape(-1, 2))

    @property
    def n_humans(self):
        return self.human_positions.shape[0]


@dataclass
class PlanResult:
    states: np.ndarray                  # (N+1, nx) packed (q, nu)
    controls: np.ndarray                # (N, nu)
    human_states: np.ndarray            # (n_h, N+1, 4)
    human_actions: np.ndarray           # (n_h, N, 2)
    human_slacks: np.ndarray            # (n_h, N, 2)
    human_lams: np.ndarray              # (n_h, N, m_lower)
    stage_reports: list[SolveReport]
    stage_task_errors: list[dict]       # per stage: task index -> (N+1, dim)
    task_errors: dict                   # final-stage errors for every task
    u0: np.ndarray
    degraded_from_stage: int | None = None
    safety_stop: bool = False
    stage_z: list = field(default_factory=list)
    min_barrier: float = np.inf

    @property
    def converged(self):
        return all(r.status == CONVERGED for r in self.stage_reports)


def cvmm_predict(positions, velocities, n_steps, dt):
    """Constant-velocity extrapolation: (n_h, n_steps+1, 4) states."""
    positions = np.asarray(positions, float).reshape(-1, 2)
    velocities = np.asarray(velocities, float).reshape(-1, 2)
    ks = np.arange(n_steps + 1)[None, :, None]
    pos = positions[:, None, :] + ks * dt * velocities[:, None, :]
    vel = np.broadcast_to(velocities[:, None, :], pos.shape)
    return np.concatenate([pos, vel.copy()], axis=2)


def dt_cbf_constraints(robot_bodies_k, robot_bodies_k1, human_discs_k, human_discs_k1,
                       obstacles, margins, gamma):
    """Barrier-chain inequality values h_{k+1} - (1-gamma) h_k (>= 0 feasible)
    for every robot body x (human, obstacle) pair.

    ``margins`` maps "human" and "obstacle" to extra clearances subtracted
    from the signed distances; ``obstacles`` is a list of segments. Returns
    a dict with the stacked values, both barrier evaluations and the pair
    labels, one entry per (robot body x hazard).
    """
    def barrier(bodies, discs):
        vals = []
        labels = []
        for j, hd in enumerate(discs):
            for b_i, body in enumerate(bodies):
                vals.append(kin.signed_distance(body, hd) - margins["human"])
                labels.append(("human", b_i, j))
        for o, seg in enumerate(obstacles):
            ob = kin.CollisionBody(np.asarray(seg[0], float), np.asarray(seg[1], float), 1e-9)
            for b_i, body in enumerate(bodies):
                vals.append(kin.signed_distance(body, ob) + ob.radius - margins["obstacle"])
                labels.append(("obstacle", b_i, o))
        return np.asarray(vals), labels

    h_k, labels = barrier(robot_bodies_k, human_discs_k)
    h_k1, _ = barrier(robot_bodies_k1, human_discs_k1)
    return {
        "values": h_k1 - (1.0 - gamma) * h_k,
        "h_k": h_k,
        "h_k1": h_k1,
        "labels": labels,
    }


class Controller:
    """One robot's planner; ``plan`` is not re-entrant, build one
    controller per robot (separate instances may run concurrently)."""

    def __init__(self, model: kin.RobotModel, config: ControllerConfig):
        self.model = model
        self.config = config
        self._problems: dict = {}
        self._workspaces: dict = {}

    # ------------------------------------------------------------------
    def plan(self, estimate: StateEstimate, hierarchy: tasks_mod.TaskHierarchy,
             obstacles=(), warm: PlanResult | None = None) -> PlanResult:
        cfg = self.config
        n_h = estimate.n_humans
        obstacles = [np.asarray(o, float) for o in obstacles]
        x_init = np.concatenate([estimate.robot.q, estimate.robot.nu])
        if not np.all(np.isfinite(x_init)):
            raise ValueError("robot state estimate must be finite")

        if cfg.priority_mode == WEIGHTED_SUM:
            stage_specs = [
                (tuple(hierarchy.tasks), ())
            ]
        else:
            stage_specs = [
                ((task,), tuple(hierarchy.tasks[:p]))
                for p, task in enumerate(hierarchy.tasks)
            ]

        predictions = None
        if cfg.prediction_mode == CVMM:
            predictions = cvmm_predict(
                estimate.human_positions, estimate.human_velocities, cfg.horizon, cfg.dt
            )
        elif cfg.prediction_mode == REACTIVE:
            predictions = cvmm_predict(
                estimate.human_positions, 0.0 * estimate.human_velocities, cfg.horizon, cfg.dt
            )

        stage_results = []
        prior_bound_data = []  # (task, errors array) per prior stage
        degraded_from = None
        for p, (stage_tasks, lex_tasks) in enumerate(stage_specs):
            hp = self._problem(p, n_h, len(obstacles), hierarchy, stage_tasks, lex_tasks)
            inst = hp.instance
            self._write_params(hp, estimate, obstacles, stage_tasks, lex_tasks,
                               prior_bound_data, predictions, x_init)
            z0 = self._initial_iterate(hp, p, estimate, warm, stage_results, x_init)
            ws = self._workspaces.setdefault((p, self._sig(n_h, len(obstacles), hierarchy)),
                                             SqpWorkspace())
            if warm is None or p >= len(warm.stage_z or []):
                ws.last_converged = False
            projector = self._make_projector(hp, estimate, x_init)
            z, duals, report = solve_sqp(inst, z0, cfg.sqp, ws, projector=projector)
            if report.status != CONVERGED:
                degraded_from = p
                stage_results.append((z, report, hp))
                break
            stage_results.append((z, report, hp))
            if cfg.priority_mode == LEXICOGRAPHIC and p < len(stage_specs) - 1:
                errs = self._task_errors_on(hp, z, stage_tasks[0])
                prior_bound_data.append((stage_tasks[0], np.abs(errs)))

        return self._collect(stage_results, stage_specs, hierarchy, estimate,
                             obstacles, predictions, warm, degraded_from, x_init)

    # ------------------------------------------------------------------
    def _sig(self, n_h, n_obs, hierarchy):
        task_sig = tuple((t.kind, t.dim, t.config_indices) for t in hierarchy.tasks)
        return (n_h, n_obs, task_sig, self.config.prediction_mode, self.config.priority_mode)

    def _problem(self, p, n_h, n_obs, hierarchy, stage_tasks, lex_tasks) -> HorizonProblem:
        key = (p, self._sig(n_h, n_obs, hierarchy))
        if key not in self._problems:
            cfg = self.config
            cfg_dict = {
                "horizon": cfg.horizon, "dt": cfg.dt, "gamma": cfg.gamma,
                "human_radius": cfg.human_radius,
                "robot_human_margin": cfg.robot_human_margin,
                "obstacle_margin": cfg.obstacle_margin,
                "tau": cfg.tau, "xi_max": cfg.xi_max, "a_max": cfg.a_max,
                "beta": np.asarray(cfg.beta, float),
                "responsibility_human": cfg.responsibility_human,
                "responsibility_robot": cfg.responsibility_robot,
                "relinearize_planes": cfg.relinearize_planes,
                "eps_lex": cfg.eps_lex,
                "prediction_mode": cfg.prediction_mode,
                "sqp": cfg.sqp,
            }
            self._problems[key] = HorizonProblem(
                self.model, n_h, n_obs, cfg_dict, stage_tasks, lex_tasks,
                hierarchy.effort_weight,
                weighted=cfg.priority_mode == WEIGHTED_SUM,
                weights=cfg.weights,
            )
        return self._problems[key]

    def _write_params(self, hp: HorizonProblem, estimate, obstacles, stage_tasks,
                      lex_tasks, prior_bound_data, predictions, x_init):
        params = hp.instance.params
        params["x_init"] = x_init
        params["obstacles"] = obstacles
        for t_i, task in enumerate(stage_tasks):
            params[f"ref_t{t_i}"] = task.reference
        for t_i, (task, bounds) in enumerate(prior_bound_data):
            params[f"lex_ref_t{t_i}"] = task.reference
            params[f"lex_bound_t{t_i}"] = bounds
        for j in range(estimate.n_humans):
            s0 = np.concatenate([estimate.human_positions[j], estimate.human_velocities[j]])
            params[f"s0_h{j}"] = s0
            params[f"v_pref_h{j}"] = estimate.human_velocities[j].copy()
            if predictions is not None:
                params[f"pred_h{j}"] = predictions[j]
        if not self.config.relinearize_planes and hp.interactive:
            self._freeze_planes(hp, estimate, x_init)

    def _freeze_planes(self, hp, estimate, x_init):
        """Capture plane coefficients from the current estimates (constant
        within the control step) for the frozen-coefficient ablation."""
        params = hp.instance.params
        cfgd = {
            "tau": self.config.tau, "dt": self.config.dt,
        }
        del cfgd
        for j in range(estimate.n_humans):
            others = [l for l in range(estimate.n_humans) if l != j]
            chi = []
            comb = []
            resp = []
            for l in others:
                chi.append(np.concatenate([
                    estimate.human_positions[j], estimate.human_velocities[j],
                    estimate.human_positions[l], estimate.human_velocities[l],
                ]))
                comb.append(2.0 * self.config.human_radius)
                resp.append(self.config.responsibility_human)
            vel_b, _ = base_velocity(self.model, x_init)
            chi.append(np.concatenate([
                estimate.human_positions[j], estimate.human_velocities[j],
                x_init[:2], vel_b,
            ]))
            comb.append(self.config.human_radius + self.model.base_radius)
            resp.append(self.config.responsibility_robot)
            chi = np.asarray(chi)
            n, b = orca_mod.vo_halfplanes(
                chi[:, 4:6] - chi[:, 0:2], chi[:, 2:4] - chi[:, 6:8],
                np.asarray(comb), chi[:, 2:4],
                self.config.tau, self.config.dt, np.asarray(resp),
            )
            params[f"frozen_planes_h{j}"] = (n, b)

    # ------------------------------------------------------------------
    def _initial_iterate(self, hp: HorizonProblem, p, estimate, warm, stage_results, x_init):
        if warm is not None and warm.stage_z and p < len(warm.stage_z):
            z = hp.shift(warm.stage_z[p])
            # re-align the human blocks with the fresh estimates and the
            # shifted robot plan: a consistent lower-level rollout keeps the
            # first subproblem feasible (shifted multipliers pair badly with
            # the measured human state)
            if hp.interactive and estimate.n_humans:
                robot_states = np.array([
                    z[hp.instance.layout.slice_of(f"x{k}")] for k in range(hp.N + 1)
                ])
                robot_states[0] = x_init
                self._human_rollout(hp, estimate, robot_states, z)
            return z
        if stage_results:
            return stage_results[-1][0].copy()
        return self._cold_start(hp, estimate, x_init)

    def _cold_start(self, hp: HorizonProblem, estimate, x_init):
        """Constant robot trajectory plus a feasibility-consistent forward
        rollout of the human prediction problems."""
        inst = hp.instance
        z = np.zeros(inst.n_vars)
        layout = inst.layout
        for k in range(hp.N + 1):
            z[layout.slice_of(f"x{k}")] = x_init
        if hp.interactive and estimate.n_humans:
            robot_states = np.tile(x_init, (hp.N + 1, 1))
            self._human_rollout(hp, estimate, robot_states, z)
        return z

    def _make_projector(self, hp: HorizonProblem, estimate, x_init):
        """Exact-feasibility restoration: re-roll the robot states from the
        controls and re-solve the human prediction rollout against them."""
        layout = hp.instance.layout
        model = self.model
        dt = self.config.dt

        def project(z):
            z = z.copy()
            x = x_init.copy()
            z[layout.slice_of("x0")] = x
            for k in range(hp.N):
                u = z[layout.slice_of(f"u{k}")]
                x = integrate_packed(model, x, u, dt)
                z[layout.slice_of(f"x{k+1}")] = x
            if hp.interactive and estimate.n_humans:
                robot_states = np.array([
                    z[layout.slice_of(f"x{k}")] for k in range(hp.N + 1)
                ])
                self._human_rollout(hp, estimate, robot_states, z)
            return z

        return project

    def _human_rollout(self, hp: HorizonProblem, estimate, robot_states, z):
        """Forward rollout of every human's velocity problem against a fixed
        robot trajectory; writes states, actions, slacks and multipliers."""
        cfg = self.config
        inst = hp.instance
        layout = inst.layout
        pos = estimate.human_positions.copy()
        vel = estimate.human_velocities.copy()
        v_pref = estimate.human_velocities.copy()
        n_h = estimate.n_humans
        for j in range(n_h):
            z[layout.slice_of(f"h{j}s0")] = np.concatenate([pos[j], vel[j]])
        for k in range(hp.N):
            base_pos = robot_states[k][:2]
            base_vel, _ = base_velocity(self.model, robot_states[k])
            new_pos = pos.copy()
            new_vel = vel.copy()
            for j in range(n_h):
                agent = orca_mod.OrcaAgent(
                    pos[j], vel[j], cfg.human_radius, v_pref[j],
                    xi_max=cfg.xi_max, a_max=cfg.a_max, tau=cfg.tau,
                )
                dyn = []
                for l in range(n_h):
                    if l == j:
                        continue
                    dyn.append(orca_mod.build_agent_halfplane(
                        agent, {"position": pos[l], "velocity": vel[l],
                                "radius": cfg.human_radius},
                        responsibility=cfg.responsibility_human, dt=cfg.dt,
                    ))
                dyn.append(orca_mod.build_agent_halfplane(
                    agent, {"position": base_pos, "velocity": base_vel,
                            "radius": self.model.base_radius},
                    responsibility=cfg.responsibility_robot, dt=cfg.dt,
                ))
                static = [
                    orca_mod.build_static_halfplane(agent, seg)
                    for seg in inst.params["obstacles"]
                ]
                problem = orca_mod.OrcaProblem(
                    agent, tuple(dyn), tuple(static), np.asarray(cfg.beta), cfg.dt
                )
                sol = orca_mod.solve_orca(problem)
                z[layout.slice_of(f"h{j}xi{k}")] = sol.xi
                z[layout.slice_of(f"h{j}ze{k}")] = sol.zeta
                z[layout.slice_of(f"h{j}lam{k}")] = sol.lam
                new_pos[j] = pos[j] + cfg.dt * sol.xi
                new_vel[j] = sol.xi
                z[layout.slice_of(f"h{j}s{k+1}")] = np.concatenate([new_pos[j], new_vel[j]])
            pos, vel = new_pos, new_vel

    # ------------------------------------------------------------------
    def _task_errors_on(self, hp: HorizonProblem, z, task):
        layout = hp.instance.layout
        nq = self.model.n_q
        errs = []
        for k in range(hp.N + 1):
            x = z[layout.slice_of(f"x{k}")]
            state = kin.RobotState(x[:nq], x[nq:])
            errs.append(tasks_mod.evaluate_task_error(task, self.model, state, k))
        return np.asarray(errs)

    def _collect(self, stage_results, stage_specs, hierarchy, estimate, obstacles,
                 predictions, warm, degraded_from, x_init):
        cfg = self.config
        n_h = estimate.n_humans
        usable = [
            (i, z, rep, hp) for i, (z, rep, hp) in enumerate(stage_results)
            if rep.status == CONVERGED
        ]
        if not usable:
            return self._fallback_plan(estimate, hierarchy, warm, obstacles,
                                       predictions, stage_results, x_init)

        final_idx, z, _, hp = usable[-1]
        layout = hp.instance.layout
        N = hp.N
        nx, nu = hp.nx, hp.nu
        states = np.array([z[layout.slice_of(f"x{k}")] for k in range(N + 1)])
        controls = np.array([z[layout.slice_of(f"u{k}")] for k in range(N)])
        if hp.interactive and n_h:
            h_states = np.array([
                [z[layout.slice_of(f"h{j}s{k}")] for k in range(N + 1)]
                for j in range(n_h)
            ])
            h_actions = np.array([
                [z[layout.slice_of(f"h{j}xi{k}")] for k in range(N)]
                for j in range(n_h)
            ])
            h_slacks = np.array([
                [z[layout.slice_of(f"h{j}ze{k}")] for k in range(N)]
                for j in range(n_h)
            ])
            h_lams = np.array([
                [z[layout.slice_of(f"h{j}lam{k}")] for k in range(N)]
                for j in range(n_h)
            ])
        elif n_h:
            h_states = predictions.copy()
            h_actions = np.zeros((n_h, N, 2))
            h_slacks = np.zeros((n_h, N, 2))
            h_lams = np.zeros((n_h, N, 0))
        else:
            h_states = np.zeros((0, N + 1, 4))
            h_actions = np.zeros((0, N, 2))
            h_slacks = np.zeros((0, N, 2))
            h_lams = np.zeros((0, N, 0))

        stage_task_errors = []
        for i, (zz, rep, hpz) in enumerate(stage_results):
            if rep.status != CONVERGED:
                continue
            errs = {}
            n_known = (
                len(hierarchy.tasks) if cfg.priority_mode == WEIGHTED_SUM else i + 1
            )
            for t in range(n_known):
                errs[t] = self._task_errors_on(hpz, zz, hierarchy.tasks[t])
            stage_task_errors.append(errs)
        task_errors = {
            t: self._task_errors_on(hp, z, hierarchy.tasks[t])
            for t in range(len(hierarchy.tasks))
        }

        min_h = self._plan_min_barrier(states, h_states, obstacles)
        result = PlanResult(
            states=states, controls=controls,
            human_states=h_states, human_actions=h_actions,
            human_slacks=h_slacks, human_lams=h_lams,
            stage_reports=[rep for _, rep, _ in stage_results],
            stage_task_errors=stage_task_errors,
            task_errors=task_errors,
            u0=controls[0].copy(),
            degraded_from_stage=degraded_from,
            stage_z=[zz for zz, _, _ in stage_results],
            min_barrier=min_h,
        )
        del final_idx, nx, nu
        return result

    def _plan_min_barrier(self, states, h_states, obstacles):
        cfg = self.config
        nq = self.model.n_q
        min_h = np.inf
        for k in range(states.shape[0]):
            bodies = kin.link_collision_bodies(self.model, states[k, :nq])
            for j in range(h_states.shape[0]):
                hd = kin.disc(h_states[j, k, :2], cfg.human_radius)
                for body in bodies:
                    min_h = min(min_h, kin.signed_distance(body, hd) - cfg.robot_human_margin)
            for seg in obstacles:
                ob = kin.CollisionBody(np.asarray(seg[0], float), np.asarray(seg[1], float), 1e-9)
                for body in bodies:
                    min_h = min(min_h,
                                kin.signed_distance(body, ob) + ob.radius - cfg.obstacle_margin)
        return float(min_h)

    def _fallback_plan(self, estimate, hierarchy, warm, obstacles, predictions,
                       stage_results, x_init):
        """Previous-plan tail when available, else a safety stop that
        decelerates to rest at the input limits."""
        cfg = self.config
        N = cfg.horizon
        n_h = estimate.n_humans
        model = self.model
        nx = model.n_q + model.n_nu
        if warm is not None and not warm.safety_stop and len(warm.controls) == N:
            controls = np.vstack([warm.controls[1:], warm.controls[-1:]])
        else:
            controls = np.zeros((N, model.n_nu))
            nu = x_init[model.n_q:]
            a_lim = model.pseudo_accel_limits
            x = x_init.copy()
            for k in range(N):
                u = np.clip(-x[model.n_q:] / cfg.dt, -a_lim, a_lim)
                controls[k] = u
                x = integrate_packed(model, x, u, cfg.dt)
            del nu
        states = np.zeros((N + 1, nx))
        states[0] = x_init
        for k in range(N):
            # re-clip in case the shifted tail starts from a different state
            controls[k] = np.clip(controls[k], -model.pseudo_accel_limits,
                                  model.pseudo_accel_limits)
            states[k + 1] = integrate_packed(model, states[k], controls[k], cfg.dt)
        if predictions is None:
            predictions = cvmm_predict(
                estimate.human_positions, estimate.human_velocities, N, cfg.dt
            )
        reports = [rep for _, rep, _ in stage_results] or [
            SolveReport("diverged", 0, np.inf, np.inf, 0.0)
        ]
        return PlanResult(
            states=states, controls=controls,
            human_states=predictions if n_h else np.zeros((0, N + 1, 4)),
            human_actions=np.zeros((n_h, N, 2)),
            human_slacks=np.zeros((n_h, N, 2)),
            human_lams=np.zeros((n_h, N, 0)),
            stage_reports=reports,
            stage_task_errors=[],
            task_errors={},
            u0=controls[0].copy(),
            degraded_from_stage=0,
            safety_stop=True,
            stage_z=[],
            min_barrier=self._plan_min_barrier(states, predictions if n_h else np.zeros((0, N + 1, 4)), obstacles),
        )

    # ------------------------------------------------------------------
    def orca_problem_at(self, plan: PlanResult, j: int, k: int, obstacles=()):
        """Reconstruct human j's velocity problem at horizon step k of a
        plan, for certifying the embedded predictions against the
        standalone solver."""
        cfg = self.config
        s = plan.human_states[j, k]
        agent = orca_mod.OrcaAgent(
            s[:2], s[2:4], cfg.human_radius, plan_v_pref(plan, j, k, self),
            xi_max=cfg.xi_max, a_max=cfg.a_max, tau=cfg.tau,
        )
        dyn = []
        for l in range(plan.human_states.shape[0]):
            if l == j:
                continue
            sl = plan.human_states[l, k]
            dyn.append(orca_mod.build_agent_halfplane(
                agent, {"position": sl[:2], "velocity": sl[2:4], "radius": cfg.human_radius},
                responsibility=cfg.responsibility_human, dt=cfg.dt,
            ))
        x = plan.states[k]
        vel_b, _ = base_velocity(self.model, x)
        dyn.append(orca_mod.build_agent_halfplane(
            agent, {"position": x[:2], "velocity": vel_b, "radius": self.model.base_radius},
            responsibility=cfg.responsibility_robot, dt=cfg.dt,
        ))
        static = [orca_mod.build_static_halfplane(agent, seg) for seg in obstacles]
        return orca_mod.OrcaProblem(agent, tuple(dyn), tuple(static),
                                    np.asarray(cfg.beta), cfg.dt)


def plan_v_pref(plan, j, k, controller):
    """The embedded model keeps each human's preferred velocity constant
    over the horizon at the current velocity estimate (step-0 state)."""
    del k, controller
    return plan.human_states[j, 0, 2:4].copy()


def warm_start_shift(controller: Controller, previous: PlanResult):
    """One-step shift of every stage solution, terminal entries repeated.

    Returns the per-stage warm vectors; normally invoked through
    ``plan(..., warm=previous)`` which applies the shift internally.
    """
    out = []
    for p, z in enumerate(previous.stage_z):
        for key, hp in controller._problems.items():
            if key[0] == p:
                out.append(hp.shift(z))
                break
    return out
