"""Gauss-Newton SQP with complementarity relaxation over block NLPs.

The complementarity rows are relaxed to g(z) <= sigma and sigma is driven
down a decreasing schedule; at each sigma level the relaxed problem is
solved by Gauss-Newton SQP with an l1 merit line search. Equality blocks
that declare ``defines`` are eliminated from every QP subproblem
(condensing): the subproblem decision vector holds only the independent
groups, which keeps the dense factorizations small, while merit, residuals
and certificates are always evaluated in the full space. Multipliers for
the eliminated rows are recovered by a reverse sweep so the returned point
carries a complete KKT certificate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import qp
from .nlp import COMPL, EQ, INEQ, RESIDUAL, NlpInstance

CONVERGED = "converged"
MAX_ITER = "max_iter"
INFEASIBLE_QP = "infeasible_qp"
DIVERGED = "diverged"


@dataclass
class SqpSettings:
    max_iterations: int = 40
    kkt_tolerance: float = 5e-7
    eq_tolerance: float = 1e-8
    ineq_tolerance: float = 2e-7
    sigma_schedule: tuple = (1e-2, 1e-4, 1e-6)
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 20
    reg_floor: float = 1e-8
    # cold-start seed for the adaptive Levenberg damping (applied to
    # complementarity-bearing problems); the damping grows when steps
    # overshoot the linearization, decays on clean full steps and vanishes
    # near the solution. It never moves KKT points, only shortens steps.
    prox_weight: float = 0.0
    iterations_per_sigma: int | None = None  # real-time-iteration mode when set
    homotopy_on_warm: bool = False

    def __post_init__(self):
        if self.kkt_tolerance <= 0 or self.eq_tolerance <= 0:
            raise ValueError("tolerances must be > 0")
        sched = tuple(self.sigma_schedule)
        if not sched or any(a <= b for a, b in zip(sched, sched[1:])):
            raise ValueError("sigma schedule must be strictly decreasing")
        if sched[-1] < 1e-8:
            raise ValueError("final sigma must be >= 1e-8")
        object.__setattr__(self, "sigma_schedule", sched)

    @property
    def sigma_final(self):
        return self.sigma_schedule[-1]


@dataclass
class SolveReport:
    status: str
    iterations: int
    kkt_residual: float
    complementarity_residual: float
    wall_time: float
    failed_blocks: tuple = ()
    iteration_log: list = field(default_factory=list)


@dataclass
class SqpWorkspace:
    """Carries warm-start state between solves of one instance."""

    qp_solution: object = None
    duals: dict | None = None
    penalties: dict = field(default_factory=dict)  # block name -> per-row weights
    prox: float = 0.0
    last_converged: bool = False
    failed_blocks: tuple = ()


class _Reduction:
    """Affine elimination of defined groups at the current linearization:
    dz_full = T dz_red + t0 with T kept as per-group small matrices."""

    def __init__(self, nlp: NlpInstance, z):
        self.nlp = nlp
        layout = nlp.layout
        defining = [b for b in nlp.blocks_of(EQ) if b.defines is not None]
        defined_names = {b.defines for b in defining}
        if len(defined_names) != len(defining):
            raise ValueError("a variable group is defined by more than one block")
        self.defining = _topo_sort(defining)
        self.reduced_names = [n for n in layout.names if n not in defined_names]
        self.red_slices = {}
        n = 0
        for name in self.reduced_names:
            d = layout.dim_of(name)
            self.red_slices[name] = slice(n, n + d)
            n += d
        self.n_red = n
        self.T: dict[str, dict[str, np.ndarray]] = {}
        self.t0: dict[str, np.ndarray] = {}
        self.block_vals: dict[str, np.ndarray] = {}
        self.block_jacs: dict[str, list] = {}
        for b in self.defining:
            parts = nlp.parts_for(b, z)
            val = b.values(parts, nlp.params)
            jacs = b.jacobians(parts, nlp.params)
            self.block_vals[b.name] = val
            self.block_jacs[b.name] = jacs
            acc: dict[str, np.ndarray] = {}
            t0_v = -val.copy()
            for g, J in zip(b.var_groups, jacs):
                if g == b.defines:
                    continue
                if g in self.red_slices:
                    _acc_add(acc, g, -J)
                else:
                    t0_v -= J @ self.t0[g]
                    for rg, Tm in self.T[g].items():
                        _acc_add(acc, rg, -(J @ Tm))
            self.T[b.defines] = acc
            self.t0[b.defines] = t0_v

    def reduce_rows(self, block, jacs, J_red, rows, rhs_adjust):
        """Scatter a block's Jacobians into the reduced matrix."""
        for g, J in zip(block.var_groups, jacs):
            if g in self.red_slices:
                J_red[rows, self.red_slices[g]] += J
            else:
                rhs_adjust[rows] += J @ self.t0[g]
                for rg, Tm in self.T[g].items():
                    J_red[rows, self.red_slices[rg]] += J @ Tm

    def expand(self, d_red):
        layout = self.nlp.layout
        d_full = np.zeros(layout.n_vars)
        for name, s in self.red_slices.items():
            d_full[layout.slice_of(name)] = d_red[s]
        for b in self.defining:
            v = b.defines
            d_v = self.t0[v].copy()
            for rg, Tm in self.T[v].items():
                d_v += Tm @ d_red[self.red_slices[rg]]
            d_full[layout.slice_of(v)] = d_v
        return d_full

    def reduced_bounds(self, z):
        lb = np.full(self.n_red, -np.inf)
        ub = np.full(self.n_red, np.inf)
        layout = self.nlp.layout
        for name, s in self.red_slices.items():
            fs = layout.slice_of(name)
            lb[s] = self.nlp.lb[fs] - z[fs]
            ub[s] = self.nlp.ub[fs] - z[fs]
        for b in self.defining:
            fs = layout.slice_of(b.defines)
            if np.any(np.isfinite(self.nlp.lb[fs])) or np.any(np.isfinite(self.nlp.ub[fs])):
                raise ValueError(
                    f"bounds on eliminated group {b.defines!r} are not supported; "
                    "use an inequality block"
                )
        return lb, ub


def _acc_add(acc, key, mat):
    if key in acc:
        acc[key] = acc[key] + mat
    else:
        acc[key] = mat.copy()


def _topo_sort(defining):
    by_defined = {b.defines: b for b in defining}
    order, seen, busy = [], set(), set()

    def visit(b):
        if b.defines in seen:
            return
        if b.defines in busy:
            raise ValueError("cyclic defining blocks")
        busy.add(b.defines)
        for g in b.var_groups:
            if g != b.defines and g in by_defined:
                visit(by_defined[g])
        busy.discard(b.defines)
        seen.add(b.defines)
        order.append(b)

    for b in defining:
        visit(b)
    return order


def _eval_groups(nlp: NlpInstance, z, with_jac):
    """Evaluate residual/eq/ineq/compl stacks (eq split kept/defining)."""
    out = {}
    for kind in (RESIDUAL, EQ, INEQ, COMPL):
        entries = []
        for b in nlp.blocks_of(kind):
            if with_jac:
                v, js = nlp.eval_block_with_jac(b, z)
                entries.append((b, v, js))
            else:
                entries.append((b, nlp.eval_block(b, z), None))
        out[kind] = entries
    return out


def _stack(entries):
    if not entries:
        return np.zeros(0)
    return np.concatenate([v for _, v, _ in entries])


def _merit(nlp: NlpInstance, z, penalties):
    """l1 merit with one penalty weight per constraint row (keyed by
    block); rows never seen by an update default to weight 1."""
    ev = _eval_groups(nlp, z, with_jac=False)
    r = _stack(ev[RESIDUAL])
    f = 0.5 * float(r @ r)
    pen_total = 0.0
    viol = 0.0
    for b, v, _ in ev[EQ]:
        w = penalties.get(b.name)
        a = np.abs(v)
        viol += float(a.sum())
        pen_total += float(a.sum()) if w is None else float(w @ a)
    for kind in (INEQ, COMPL):
        for b, v, _ in ev[kind]:
            w = penalties.get(b.name)
            a = np.maximum(v, 0.0)
            viol += float(a.sum())
            pen_total += float(a.sum()) if w is None else float(w @ a)
    return f + pen_total, f, viol


def recover_eq_duals(nlp: NlpInstance, reduction: _Reduction, z, duals):
    """Multipliers of eliminated equality rows via a reverse sweep.

    Stationarity with respect to each defined group determines its
    defining-row multiplier exactly (the defining Jacobian there is the
    identity), processing groups in reverse topological order.
    """
    layout = nlp.layout
    grad_l = np.zeros(layout.n_vars)
    for b, v, js in _eval_groups(nlp, z, with_jac=True)[RESIDUAL]:
        for g, J in zip(b.var_groups, js):
            grad_l[layout.slice_of(g)] += J.T @ v
        del b
    row = 0
    for b in nlp.blocks_of(EQ):
        if b.defines is None:
            y = duals["eq_kept"][row:row + b.dim]
            _, js = nlp.eval_block_with_jac(b, z)
            for g, J in zip(b.var_groups, js):
                grad_l[layout.slice_of(g)] += J.T @ y
            row += b.dim
    row = 0
    for kind in (INEQ, COMPL):
        for b in nlp.blocks_of(kind):
            lam = duals["ineq"][row:row + b.dim]
            _, js = nlp.eval_block_with_jac(b, z)
            for g, J in zip(b.var_groups, js):
                grad_l[layout.slice_of(g)] += J.T @ lam
            row += b.dim
    grad_l += -duals["lb"] + duals["ub"]

    y_def = {}
    for b in reversed(reduction.defining):
        s = layout.slice_of(b.defines)
        y = -grad_l[s]
        y_def[b.name] = y
        jacs = reduction.block_jacs.get(b.name)
        if jacs is None:
            _, jacs = nlp.eval_block_with_jac(b, z)
        for g, J in zip(b.var_groups, jacs):
            if g != b.defines:
                grad_l[layout.slice_of(g)] += J.T @ y
    return y_def


def nlp_kkt_residuals(nlp: NlpInstance, z, duals) -> dict:
    """Independent KKT residuals of the sigma-relaxed problem at (z, duals).

    ``duals`` holds 'eq_kept' (non-defining eq rows), 'eq_defining' (dict
    block name -> multiplier), 'ineq' (ineq then compl rows), 'lb', 'ub'.
    Complementarity here reports the worst relaxed-row violation beyond
    sigma together with multiplier complementarity of the inequality rows.
    """
    layout = nlp.layout
    grad = np.zeros(layout.n_vars)
    ev = _eval_groups(nlp, z, with_jac=True)
    for b, v, js in ev[RESIDUAL]:
        for g, J in zip(b.var_groups, js):
            grad[layout.slice_of(g)] += J.T @ v
    row = 0
    eq_vals = []
    for b, v, js in ev[EQ]:
        if b.defines is None:
            y = duals["eq_kept"][row:row + b.dim]
            row += b.dim
        else:
            y = duals["eq_defining"][b.name]
        eq_vals.append(v)
        for g, J in zip(b.var_groups, js):
            grad[layout.slice_of(g)] += J.T @ y
    row = 0
    ineq_vals = []
    comp = 0.0
    for kind in (INEQ, COMPL):
        for b, v, js in ev[kind]:
            lam = duals["ineq"][row:row + b.dim]
            ineq_vals.append(v)
            comp = max(comp, float(np.abs(lam * v).max(initial=0.0)))
            for g, J in zip(b.var_groups, js):
                grad[layout.slice_of(g)] += J.T @ lam
            row += b.dim
    grad += -duals["lb"] + duals["ub"]

    c = np.concatenate(eq_vals) if eq_vals else np.zeros(0)
    g_all = np.concatenate(ineq_vals) if ineq_vals else np.zeros(0)
    lo_gap = np.where(np.isfinite(nlp.lb), z - nlp.lb, 0.0)
    hi_gap = np.where(np.isfinite(nlp.ub), nlp.ub - z, 0.0)
    comp = max(
        comp,
        float(np.abs(duals["lb"] * lo_gap).max(initial=0.0)),
        float(np.abs(duals["ub"] * hi_gap).max(initial=0.0)),
    )
    primal_eq = float(np.abs(c).max(initial=0.0))
    primal_ineq = max(
        float(np.maximum(g_all, 0.0).max(initial=0.0)),
        float(np.maximum(nlp.lb - z, 0.0).max(initial=0.0)),
        float(np.maximum(z - nlp.ub, 0.0).max(initial=0.0)),
    )
    primal = max(primal_eq, primal_ineq)
    dual = max(
        float(np.maximum(-duals["ineq"], 0.0).max(initial=0.0)),
        float(np.maximum(-duals["lb"], 0.0).max(initial=0.0)),
        float(np.maximum(-duals["ub"], 0.0).max(initial=0.0)),
    )
    return {
        "stationarity": float(np.abs(grad).max(initial=0.0)),
        "primal": primal,
        "primal_eq": primal_eq,
        "primal_ineq": primal_ineq,
        "dual": dual,
        "complementarity": comp,
    }


def solve_sqp(nlp: NlpInstance, warm_start, settings: SqpSettings,
              workspace: SqpWorkspace | None = None, projector=None):
    """Solve the relaxed NLP; returns (z, duals, SolveReport).

    ``duals`` is the structure documented in :func:`nlp_kkt_residuals`.
    ``projector``, when given, maps an iterate back onto an exactly
    feasible manifold of the defining equalities (and any other cheap,
    exactly solvable subsystem, e.g. the embedded prediction problems);
    it runs at entry and after every accepted step so linearizations are
    always taken near feasibility.
    """
    t_start = time.perf_counter()
    ws = workspace if workspace is not None else SqpWorkspace()
    ws.penalties = {}
    has_compl = bool(nlp.blocks_of(COMPL))
    if ws.duals is None and has_compl:
        # cold start on a complementarity-bearing problem: damp hard until
        # the linearization earns trust
        ws.prox = max(1.0, settings.prox_weight)
    z = np.clip(np.asarray(warm_start, dtype=float).copy(), nlp.lb, nlp.ub)
    if projector is not None:
        z = projector(z)

    schedule = settings.sigma_schedule
    if ws.last_converged and not settings.homotopy_on_warm:
        schedule = (settings.sigma_final,)

    duals = ws.duals
    status = MAX_ITER
    total_iters = 0
    log = []
    failed_blocks = ()
    kkt_now = {"stationarity": np.inf, "primal": np.inf, "dual": 0.0, "complementarity": np.inf}

    for si, sigma in enumerate(schedule):
        nlp.params["sigma"] = sigma
        final_level = si == len(schedule) - 1
        # intermediate homotopy levels only need residuals commensurate
        # with their own relaxation
        tol_stat = settings.kkt_tolerance if final_level else max(
            settings.kkt_tolerance, 0.05 * sigma
        )
        tol_eq = settings.eq_tolerance if final_level else max(
            settings.eq_tolerance, 0.05 * sigma
        )
        tol_ineq = settings.ineq_tolerance if final_level else max(
            settings.ineq_tolerance, 0.05 * sigma
        )
        per_sigma_cap = settings.iterations_per_sigma or settings.max_iterations
        level_done = False
        for _ in range(per_sigma_cap):
            reduction = _Reduction(nlp, z)
            ev = _eval_groups(nlp, z, with_jac=True)
            if duals is not None:
                full_duals = _with_defining(nlp, reduction, z, duals)
                kkt_now = nlp_kkt_residuals(nlp, z, full_duals)
                if (
                    kkt_now["stationarity"] <= tol_stat
                    and kkt_now["primal_eq"] <= tol_eq
                    and kkt_now["primal_ineq"] <= tol_ineq
                    and kkt_now["dual"] <= tol_stat
                ):
                    level_done = True
                    break
            import os as _os
            if _os.environ.get("HITMPC_SQP_DEBUG"):
                log.append({"dbg_stat": kkt_now.get("stationarity"),
                            "dbg_pr": kkt_now.get("primal"), "dbg_prox": ws.prox,
                            "dbg_sigma": sigma})
            step_out = _sqp_step(nlp, reduction, ev, z, settings, ws)
            if step_out is None:
                status = INFEASIBLE_QP
                failed_blocks = ws.failed_blocks
                break
            z_new, duals, info = step_out
            # once near-feasible with clean moderate steps, stop projecting
            # and let plain SQP polish quadratically; feasibility is watched
            # and projection re-engages if it degrades
            polishing = (
                info["alpha"] >= 0.99 and info["step_norm"] <= 0.5
                and kkt_now["primal"] < 1e-4
            )
            if projector is not None and info["alpha"] > 0.0 and not polishing:
                z_proj = projector(z_new)
                phi_proj, _, _ = _merit(nlp, z_proj, ws.penalties)
                if phi_proj <= info["merit"] * 1.1 + 1e-6:
                    z_new = z_proj
                else:
                    # projection undid the progress: damp harder, keep the
                    # unprojected (still bounded) iterate this round
                    ws.prox = min(max(ws.prox, 1e-3) * 5.0, 1e4)
                    z_new = z_proj
            z = z_new
            total_iters += 1
            log.append(info)
            if info["alpha"] == 0.0 and ws.prox >= 1e4:
                # damping saturated with no acceptable step
                status = DIVERGED
                break
        if status in (INFEASIBLE_QP, DIVERGED):
            break
        if settings.iterations_per_sigma is not None:
            continue  # real-time mode presses on through the schedule
        if not level_done and final_level:
            status = MAX_ITER
        if not level_done and not final_level:
            # carry whatever progress was made into the tighter level
            continue

    reduction = _Reduction(nlp, z)
    if duals is None:
        duals = _zero_duals(nlp)
    full_duals = _with_defining(nlp, reduction, z, duals)
    kkt_now = nlp_kkt_residuals(nlp, z, full_duals)
    converged_now = (
        kkt_now["stationarity"] <= settings.kkt_tolerance
        and kkt_now["primal_eq"] <= settings.eq_tolerance
        and kkt_now["primal_ineq"] <= settings.ineq_tolerance
        and kkt_now["dual"] <= settings.kkt_tolerance
    )
    if status not in (INFEASIBLE_QP, DIVERGED):
        status = CONVERGED if converged_now else MAX_ITER
    ws.duals = duals
    ws.last_converged = status == CONVERGED
    report = SolveReport(
        status=status,
        iterations=total_iters,
        kkt_residual=max(kkt_now["stationarity"], kkt_now["primal"], kkt_now["dual"]),
        complementarity_residual=kkt_now["complementarity"],
        wall_time=time.perf_counter() - t_start,
        failed_blocks=failed_blocks,
        iteration_log=log,
    )
    return z, full_duals, report


def _zero_duals(nlp):
    n_eq_kept = sum(b.dim for b in nlp.blocks_of(EQ) if b.defines is None)
    n_in = sum(b.dim for b in nlp.blocks_of(INEQ)) + sum(b.dim for b in nlp.blocks_of(COMPL))
    return {
        "eq_kept": np.zeros(n_eq_kept),
        "ineq": np.zeros(n_in),
        "lb": np.zeros(nlp.n_vars),
        "ub": np.zeros(nlp.n_vars),
    }


def _with_defining(nlp, reduction, z, duals):
    out = dict(duals)
    out["eq_defining"] = recover_eq_duals(nlp, reduction, z, duals)
    return out


def _sqp_step(nlp: NlpInstance, reduction: _Reduction, ev, z, settings: SqpSettings,
              ws: SqpWorkspace):
    layout = nlp.layout
    n_red = reduction.n_red

    res_entries = ev[RESIDUAL]
    m_r = sum(b.dim for b, _, _ in res_entries)
    Jr = np.zeros((m_r, n_red))
    r_eff = np.zeros(m_r)
    row = 0
    for b, v, js in res_entries:
        r_eff[row:row + b.dim] = v
        rows = slice(row, row + b.dim)
        reduction.reduce_rows(b, js, Jr, rows, r_eff)
        row += b.dim

    eq_entries = [(b, v, js) for b, v, js in ev[EQ] if b.defines is None]
    m_eq = sum(b.dim for b, _, _ in eq_entries)
    A = np.zeros((m_eq, n_red))
    c_eff = np.zeros(m_eq)
    row = 0
    for b, v, js in eq_entries:
        c_eff[row:row + b.dim] = v
        reduction.reduce_rows(b, js, A, slice(row, row + b.dim), c_eff)
        row += b.dim

    in_entries = ev[INEQ] + ev[COMPL]
    m_in = sum(b.dim for b, _, _ in in_entries)
    G = np.zeros((m_in, n_red))
    g_eff = np.zeros(m_in)
    row = 0
    for b, v, js in in_entries:
        g_eff[row:row + b.dim] = v
        reduction.reduce_rows(b, js, G, slice(row, row + b.dim), g_eff)
        row += b.dim

    H = Jr.T @ Jr
    # Levenberg-style damping: the floor on residual-covered directions,
    # the adaptive weight elsewhere and on top when recent steps overshot
    # the linearization's validity region
    H[np.arange(n_red), np.arange(n_red)] += settings.reg_floor + ws.prox
    grad = Jr.T @ r_eff
    lb_d, ub_d = reduction.reduced_bounds(z)

    elastic_step = False
    sub = qp.solve_qp(H, grad, A, -c_eff, G, -g_eff, lb_d, ub_d, warm=ws.qp_solution)
    if sub.status == qp.INFEASIBLE or sub.status == qp.MAX_ITERATIONS:
        # slack restoration: take the elastic step when one exists
        sub = _elastic_qp(H, grad, A, c_eff, G, g_eff, lb_d, ub_d)
        if sub is None:
            owners = np.array(nlp.row_owner(INEQ) + nlp.row_owner(COMPL))
            ws.failed_blocks = tuple(sorted(set(owners[g_eff > 1e-8]))) if m_in else ()
            return None
        elastic_step = True
    ws.qp_solution = sub

    d_red = sub.x
    d_full = reduction.expand(d_red)

    duals = {
        "eq_kept": sub.y_eq.copy(),
        "ineq": sub.lam_ineq.copy(),
        "lb": _expand_bound_duals(nlp, reduction, sub.lam_lo),
        "ub": _expand_bound_duals(nlp, reduction, sub.lam_hi),
    }

    y_def = recover_eq_duals(nlp, reduction, z, duals)
    if not elastic_step:
        # elastic duals carry the artificial slack weight; skip them
        _update_penalties(nlp, ws, duals, y_def)

    phi0, f0, viol0 = _merit(nlp, z, ws.penalties)
    grad_f_full = np.zeros(layout.n_vars)
    for b, v, js in res_entries:
        for g, J in zip(b.var_groups, js):
            grad_f_full[layout.slice_of(g)] += J.T @ v
    descent = float(grad_f_full @ d_full) - max(phi0 - f0, 0.0)

    alpha = 1.0
    accepted = False
    viol_try = viol0
    for _ in range(settings.max_backtracks):
        z_try = z + alpha * d_full
        phi_try, _, viol_try = _merit(nlp, z_try, ws.penalties)
        if phi_try <= phi0 + settings.armijo * alpha * min(descent, 0.0):
            accepted = True
            break
        alpha *= settings.backtrack
    if not accepted:
        z_try = z + alpha * d_full
        phi_try, _, viol_try = _merit(nlp, z_try, ws.penalties)
        if phi_try >= phi0:
            ws.prox = min(max(ws.prox, 1e-3) * 10.0, 1e4)
            return z, duals, {"alpha": 0.0, "merit": phi0, "step_norm": 0.0,
                              "kkt": np.nan}
    # adapt the damping: shrink on clean full steps, grow when the step had
    # to be cut or the true violations grew materially
    step_len = float(np.linalg.norm(alpha * d_full))
    if alpha >= 1.0 and viol_try <= 1e-6 and step_len < 1e-2:
        ws.prox = 0.0  # near the solution: undamped Gauss-Newton finishes
    elif alpha >= 1.0 and viol_try <= 2.0 * viol0 + 1e-8:
        ws.prox = ws.prox / 8.0 if ws.prox > 1e-6 else 0.0
    elif alpha < 0.26 or viol_try > 10.0 * viol0 + 1e-6:
        ws.prox = min(max(ws.prox, 1e-3) * 5.0, 1e4)
    info = {
        "alpha": alpha,
        "merit": phi_try,
        "step_norm": float(np.linalg.norm(alpha * d_full)),
        "prox": ws.prox,
    }
    return z_try, duals, info


_PENALTY_CAP = 1e5


def _update_penalties(nlp, ws, duals, y_def):
    """Per-row l1 weights: each row's weight dominates its multiplier."""
    row = 0
    for b in nlp.blocks_of(EQ):
        if b.defines is None:
            y = np.abs(duals["eq_kept"][row:row + b.dim])
            row += b.dim
        else:
            y = np.abs(y_def.get(b.name, np.zeros(b.dim)))
        cur = ws.penalties.get(b.name, np.ones(b.dim))
        ws.penalties[b.name] = np.minimum(np.maximum(cur, 1.5 * y), _PENALTY_CAP)
    row = 0
    for kind in (INEQ, COMPL):
        for b in nlp.blocks_of(kind):
            lam = np.abs(duals["ineq"][row:row + b.dim])
            row += b.dim
            cur = ws.penalties.get(b.name, np.ones(b.dim))
            ws.penalties[b.name] = np.minimum(np.maximum(cur, 1.5 * lam), _PENALTY_CAP)


def _expand_bound_duals(nlp, reduction, lam_red):
    out = np.zeros(nlp.layout.n_vars)
    for name, s in reduction.red_slices.items():
        out[nlp.layout.slice_of(name)] = lam_red[s]
    return out


def _elastic_qp(H, grad, A, c_eff, G, g_eff, lb_d, ub_d, big=1e6):
    """Retry an infeasible subproblem with one elastic slack relaxing the
    inequality rows and turning each equality into a two-sided band;
    None when even the elastic problem keeps a violation."""
    n = H.shape[0]
    m_in = G.shape[0]
    m_eq = A.shape[0]
    H2 = np.zeros((n + 1, n + 1))
    H2[:n, :n] = H
    H2[n, n] = 1.0
    g2 = np.concatenate([grad, [big]])
    rows = []
    rhs = []
    if m_in:
        rows.append(np.hstack([G, -np.ones((m_in, 1))]))
        rhs.append(-g_eff)
    if m_eq:
        rows.append(np.hstack([A, -np.ones((m_eq, 1))]))
        rhs.append(-c_eff)
        rows.append(np.hstack([-A, -np.ones((m_eq, 1))]))
        rhs.append(c_eff)
    G2 = np.vstack(rows) if rows else np.zeros((0, n + 1))
    h2 = np.concatenate(rhs) if rhs else np.zeros(0)
    lb2 = np.concatenate([lb_d, [0.0]])
    ub2 = np.concatenate([ub_d, [np.inf]])
    sub = qp.solve_qp(H2, g2, None, None, G2, h2, lb2, ub2)
    if sub.status != qp.OPTIMAL:
        return None
    lam_in = sub.lam_ineq[:m_in] if m_in else np.zeros(0)
    y_eq = np.zeros(m_eq)
    if m_eq:
        y_eq = sub.lam_ineq[m_in:m_in + m_eq] - sub.lam_ineq[m_in + m_eq:]
    return qp.QpSolution(
        x=sub.x[:n], y_eq=y_eq, lam_ineq=lam_in,
        lam_lo=sub.lam_lo[:n], lam_hi=sub.lam_hi[:n],
        status=sub.status, iterations=sub.iterations,
        objective=sub.objective,
    )
