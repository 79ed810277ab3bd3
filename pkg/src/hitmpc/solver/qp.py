"""Dense convex QP solver with exact multipliers.

Solves  min 1/2 x'Hx + g'x  s.t.  A x = b,  G x <= h,  lb <= x <= ub.

Two cooperating methods:

* a primal-dual active-set fast path that re-guesses the whole active set
  from the current primal-dual point each iteration (one dense KKT
  factorization per iteration; warm-started horizon QPs typically need one
  or two), with active bounds handled by fixing variables instead of
  appending rows; and
* a dual active-set fallback in the Goldfarb-Idnani style that adds one
  violated constraint at a time with exact ratio tests. It never forms a
  dependent working set, detects infeasibility exactly for positive
  definite H, and is finite, so it covers the degenerate cases where the
  fast path cycles.

H must be positive definite (callers add a regularization floor).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

OPTIMAL = "optimal"
MAX_ITERATIONS = "max_iterations"
INFEASIBLE = "infeasible"

_HUGE_DUAL = 1e10


@dataclass
class QpSolution:
    x: np.ndarray
    y_eq: np.ndarray
    lam_ineq: np.ndarray
    lam_lo: np.ndarray
    lam_hi: np.ndarray
    status: str
    iterations: int
    active_ineq: tuple[int, ...] = ()
    active_lo: tuple[int, ...] = ()
    active_hi: tuple[int, ...] = ()
    infeasible_rows: tuple = field(default_factory=tuple)
    objective: float = 0.0


def _as_2d(m, n_cols):
    if m is None:
        return np.zeros((0, n_cols))
    m = np.asarray(m, dtype=float)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    return m


class _Problem:
    """Normalized data: bounds folded into extra inequality rows for the
    fallback path while the fast path keeps them separate."""

    def __init__(self, H, g, a_eq, b_eq, g_ineq, h_ineq, lb, ub):
        self.H = np.asarray(H, dtype=float)
        self.g = np.asarray(g, dtype=float)
        self.n = self.g.shape[0]
        self.A = _as_2d(a_eq, self.n)
        self.b = np.zeros(self.A.shape[0]) if b_eq is None else np.asarray(b_eq, dtype=float)
        self.G = _as_2d(g_ineq, self.n)
        self.h = np.zeros(self.G.shape[0]) if h_ineq is None else np.asarray(h_ineq, dtype=float)
        self.lb = np.full(self.n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
        self.ub = np.full(self.n, np.inf) if ub is None else np.asarray(ub, dtype=float)
        if self.H.shape != (self.n, self.n):
            raise ValueError("H must be n x n")
        if self.A.shape[0] != self.b.shape[0] or self.G.shape[0] != self.h.shape[0]:
            raise ValueError("constraint right-hand sides do not match row counts")
        self.m_eq = self.A.shape[0]
        self.m_in = self.G.shape[0]
        lo_idx = np.flatnonzero(np.isfinite(self.lb))
        hi_idx = np.flatnonzero(np.isfinite(self.ub))
        rows = [self.G]
        rhs = [self.h]
        self.row_labels = [("ineq", int(i)) for i in range(self.m_in)]
        for i in lo_idx:
            e = np.zeros(self.n)
            e[i] = -1.0
            rows.append(e.reshape(1, -1))
            rhs.append(np.array([-self.lb[i]]))
            self.row_labels.append(("lb", int(i)))
        for i in hi_idx:
            e = np.zeros(self.n)
            e[i] = 1.0
            rows.append(e.reshape(1, -1))
            rhs.append(np.array([self.ub[i]]))
            self.row_labels.append(("ub", int(i)))
        self.G_all = np.vstack(rows) if rows else np.zeros((0, self.n))
        self.h_all = np.concatenate(rhs) if rhs else np.zeros(0)

    def split_duals(self, mu_all):
        lam_ineq = mu_all[: self.m_in].copy()
        lam_lo = np.zeros(self.n)
        lam_hi = np.zeros(self.n)
        for label, val in zip(self.row_labels[self.m_in:], mu_all[self.m_in:]):
            kind, idx = label
            if kind == "lb":
                lam_lo[idx] = val
            else:
                lam_hi[idx] = val
        return lam_ineq, lam_lo, lam_hi


def solve_qp(
    H,
    g,
    a_eq=None,
    b_eq=None,
    g_ineq=None,
    h_ineq=None,
    lb=None,
    ub=None,
    warm=None,
    max_iterations: int = 40,
    tol: float = 1e-10,
) -> QpSolution:
    """Solve the dense convex QP; see module docstring for the problem form.

    ``warm`` may be a previous :class:`QpSolution` (its active sets seed the
    fast path). Returns status ``infeasible`` with ``infeasible_rows``
    naming conflicting constraints when no feasible point exists.
    """
    prob = _Problem(H, g, a_eq, b_eq, g_ineq, h_ineq, lb, ub)
    sol = _pdas(prob, warm, max_iterations, tol)
    if sol is not None:
        return sol
    return _dual_active_set(prob)


def _pdas(prob: _Problem, warm, max_iterations, tol):
    """Fast path; returns None when it cannot certify an optimum."""
    n, m_eq, m_in = prob.n, prob.m_eq, prob.m_in
    H, g, A, b, G, h, lb, ub = (
        prob.H, prob.g, prob.A, prob.b, prob.G, prob.h, prob.lb, prob.ub,
    )
    act_in = np.zeros(m_in, dtype=bool)
    act_lo = np.zeros(n, dtype=bool)
    act_hi = np.zeros(n, dtype=bool)
    if warm is not None:
        if len(warm.active_ineq):
            act_in[np.asarray(warm.active_ineq, dtype=int)] = True
        if len(warm.active_lo):
            act_lo[np.asarray(warm.active_lo, dtype=int)] = True
        if len(warm.active_hi):
            act_hi[np.asarray(warm.active_hi, dtype=int)] = True
    act_lo &= np.isfinite(lb)
    act_hi &= np.isfinite(ub)
    act_hi &= ~act_lo

    history = set()
    viol_in = None
    for it in range(1, max_iterations + 1):
        fixed = act_lo | act_hi
        free = ~fixed
        n_f = int(free.sum())
        rows_w = np.flatnonzero(act_in)
        if m_eq + rows_w.size > max(n_f - 1, 0):
            # over-determined guess: keep only the most violated rows
            capacity = max(n_f - 1 - m_eq, 0)
            if capacity == 0 or viol_in is None:
                return None
            scores = viol_in[rows_w]
            keep = rows_w[np.argsort(-scores)[:capacity]]
            act_in[:] = False
            act_in[keep] = True
            rows_w = np.flatnonzero(act_in)
        x_fix = np.where(act_lo, lb, 0.0) + np.where(act_hi, ub, 0.0)

        Af = A[:, free]
        Gw = G[np.ix_(rows_w, free)]
        rhs = np.concatenate([
            -g[free] - H[np.ix_(free, fixed)] @ x_fix[fixed],
            b - A[:, fixed] @ x_fix[fixed],
            h[rows_w] - G[np.ix_(rows_w, fixed)] @ x_fix[fixed],
        ])
        dim = n_f + m_eq + rows_w.size
        kkt = np.zeros((dim, dim))
        kkt[:n_f, :n_f] = H[np.ix_(free, free)]
        kkt[:n_f, n_f:n_f + m_eq] = Af.T
        kkt[:n_f, n_f + m_eq:] = Gw.T
        kkt[n_f:n_f + m_eq, :n_f] = Af
        kkt[n_f + m_eq:, :n_f] = Gw
        if dim:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", sla.LinAlgWarning)
                    sol_vec = sla.lu_solve(
                        sla.lu_factor(kkt, check_finite=False), rhs, check_finite=False
                    )
            except (np.linalg.LinAlgError, ValueError):
                return None
            if not np.all(np.isfinite(sol_vec)) or np.abs(sol_vec).max(initial=0.0) > _HUGE_DUAL:
                return None
            resid = np.abs(kkt @ sol_vec - rhs).max(initial=0.0)
            if resid > 1e-7 * max(1.0, np.abs(rhs).max(initial=0.0)):
                return None  # singular working set
        else:
            sol_vec = np.zeros(0)

        x = np.empty(n)
        x[free] = sol_vec[:n_f]
        x[fixed] = x_fix[fixed]
        y = sol_vec[n_f:n_f + m_eq]
        mu = np.zeros(m_in)
        mu[rows_w] = sol_vec[n_f + m_eq:]

        grad = H @ x + g + A.T @ y + G.T @ mu
        lam_lo = np.where(act_lo, grad, 0.0)
        lam_hi = np.where(act_hi, -grad, 0.0)

        viol_in = G @ x - h
        viol_lo = lb - x
        viol_hi = x - ub

        primal_ok = (
            viol_in.max(initial=0.0) <= 1e-9
            and viol_lo.max(initial=0.0) <= 1e-9
            and viol_hi.max(initial=0.0) <= 1e-9
            and np.abs(A @ x - b).max(initial=0.0) <= 1e-9
        )
        dual_ok = (
            mu.min(initial=0.0) >= -tol
            and lam_lo.min(initial=0.0) >= -tol
            and lam_hi.min(initial=0.0) >= -tol
        )
        if primal_ok and dual_ok:
            return QpSolution(
                x, y, np.maximum(mu, 0.0), np.maximum(lam_lo, 0.0), np.maximum(lam_hi, 0.0),
                OPTIMAL, it,
                tuple(np.flatnonzero(act_in)), tuple(np.flatnonzero(act_lo)),
                tuple(np.flatnonzero(act_hi)),
                objective=float(0.5 * x @ H @ x + g @ x),
            )

        act_in = (act_in & (mu > -tol)) | (~act_in & (viol_in > tol))
        act_lo = (act_lo & (lam_lo > -tol)) | (~act_lo & (viol_lo > tol))
        new_hi = (act_hi & (lam_hi > -tol)) | (~act_hi & (viol_hi > tol))
        act_hi = new_hi & ~act_lo

        key = (act_in.tobytes(), act_lo.tobytes(), act_hi.tobytes())
        if key in history:
            return None
        history.add(key)
    return None


def _dual_active_set(prob: _Problem, max_steps: int = 2000) -> QpSolution:
    """Goldfarb-Idnani style dual active set on the normalized rows.

    Starts from the equality-constrained optimum and drives the most
    violated inequality to zero per outer iteration, dropping blocking
    constraints by dual ratio test. Finite for positive definite H.
    """
    H, g, A, b = prob.H, prob.g, prob.A, prob.b
    G, h = prob.G_all, prob.h_all
    n, m_eq, m = prob.n, prob.m_eq, G.shape[0]

    def eqp_solve(rows, rhs_vec):
        k = len(rows)
        dim = n + m_eq + k
        kkt = np.zeros((dim, dim))
        kkt[:n, :n] = H
        kkt[:n, n:n + m_eq] = A.T
        kkt[n:n + m_eq, :n] = A
        if k:
            Gw = G[rows]
            kkt[:n, n + m_eq:] = Gw.T
            kkt[n + m_eq:, :n] = Gw
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            try:
                out = sla.lu_solve(
                    sla.lu_factor(kkt, check_finite=False), rhs_vec, check_finite=False
                )
            except (np.linalg.LinAlgError, ValueError):
                out = None
        if out is None or not np.all(np.isfinite(out)):
            out, *_ = np.linalg.lstsq(kkt, rhs_vec, rcond=None)
        return out

    W: list[int] = []
    mu_w: list[float] = []
    sol0 = eqp_solve([], np.concatenate([-g, b]))
    x = sol0[:n]
    y = sol0[n:n + m_eq]

    steps = 0
    while steps < max_steps:
        steps += 1
        viol = G @ x - h if m else np.zeros(0)
        if W:
            viol[W] = 0.0
        p = int(np.argmax(viol)) if m else -1
        if m == 0 or viol.max(initial=0.0) <= 1e-9:
            mu_all = np.zeros(m)
            for i, v in zip(W, mu_w):
                mu_all[i] = max(v, 0.0)
            lam_ineq, lam_lo, lam_hi = prob.split_duals(mu_all)
            return QpSolution(
                x, y, lam_ineq, lam_lo, lam_hi, OPTIMAL, steps,
                tuple(i for i in W if i < prob.m_in),
                tuple(prob.row_labels[i][1] for i in W if prob.row_labels[i][0] == "lb"),
                tuple(prob.row_labels[i][1] for i in W if prob.row_labels[i][0] == "ub"),
                objective=float(0.5 * x @ H @ x + g @ x),
            )

        mu_p = 0.0
        while steps < max_steps:
            steps += 1
            rhs_dir = np.concatenate([-G[p], np.zeros(m_eq), np.zeros(len(W))])
            dir_vec = eqp_solve(W, rhs_dir)
            z = dir_vec[:n]
            dr = dir_vec[n:n + m_eq]
            dw = dir_vec[n + m_eq:]
            slope = float(G[p] @ z)

            t_dual = np.inf
            blocker = -1
            for j, (i_row, dwj) in enumerate(zip(W, dw)):
                if dwj < -1e-12:
                    cand = -mu_w[j] / dwj
                    if cand < t_dual:
                        t_dual = cand
                        blocker = j
                del i_row

            if slope >= -1e-12:
                if blocker < 0:
                    bad = tuple(prob.row_labels[i] for i in W + [p])
                    mu_all = np.zeros(m)
                    lam_ineq, lam_lo, lam_hi = prob.split_duals(mu_all)
                    return QpSolution(
                        x, y, lam_ineq, lam_lo, lam_hi, INFEASIBLE, steps,
                        infeasible_rows=bad,
                        objective=float(0.5 * x @ H @ x + g @ x),
                    )
                # dual-only step: make room by dropping the blocker
                mu_w = [v + t_dual * d for v, d in zip(mu_w, dw)]
                mu_p += t_dual
                W.pop(blocker)
                mu_w.pop(blocker)
                continue

            s_p = float(G[p] @ x - h[p])
            t_full = -s_p / slope
            t = min(t_full, t_dual)
            x = x + t * z
            y = y + t * dr
            mu_w = [v + t * d for v, d in zip(mu_w, dw)]
            mu_p += t
            if t_full <= t_dual:
                W.append(p)
                mu_w.append(mu_p)
                break
            W.pop(blocker)
            mu_w.pop(blocker)

    mu_all = np.zeros(m)
    for i, v in zip(W, mu_w):
        mu_all[i] = max(v, 0.0)
    lam_ineq, lam_lo, lam_hi = prob.split_duals(mu_all)
    return QpSolution(
        x, y, lam_ineq, lam_lo, lam_hi, MAX_ITERATIONS, steps,
        objective=float(0.5 * x @ H @ x + g @ x),
    )


def qp_kkt_residuals(H, g, sol: QpSolution, a_eq=None, b_eq=None, g_ineq=None, h_ineq=None,
                     lb=None, ub=None) -> dict:
    """Infinity norms of the QP KKT residuals at a candidate solution."""
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    n = g.shape[0]
    A = _as_2d(a_eq, n)
    b = np.zeros(A.shape[0]) if b_eq is None else np.asarray(b_eq, dtype=float)
    G = _as_2d(g_ineq, n)
    h = np.zeros(G.shape[0]) if h_ineq is None else np.asarray(h_ineq, dtype=float)
    lb_v = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
    ub_v = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
    x = sol.x
    grad = H @ x + g + A.T @ sol.y_eq + G.T @ sol.lam_ineq - sol.lam_lo + sol.lam_hi
    stationarity = float(np.linalg.norm(grad, np.inf)) if n else 0.0
    primal = 0.0
    if A.shape[0]:
        primal = max(primal, float(np.abs(A @ x - b).max()))
    if G.shape[0]:
        primal = max(primal, float(np.maximum(G @ x - h, 0.0).max()))
    primal = max(primal, float(np.maximum(lb_v - x, 0.0).max(initial=0.0)))
    primal = max(primal, float(np.maximum(x - ub_v, 0.0).max(initial=0.0)))
    dual = 0.0
    for lam in (sol.lam_ineq, sol.lam_lo, sol.lam_hi):
        if lam.size:
            dual = max(dual, float(np.maximum(-lam, 0.0).max()))
    comp = 0.0
    if G.shape[0]:
        comp = max(comp, float(np.abs(sol.lam_ineq * (G @ x - h)).max()))
    lo_gap = np.where(np.isfinite(lb_v), x - lb_v, 0.0)
    hi_gap = np.where(np.isfinite(ub_v), ub_v - x, 0.0)
    if n:
        comp = max(comp, float(np.abs(sol.lam_lo * lo_gap).max()))
        comp = max(comp, float(np.abs(sol.lam_hi * hi_gap).max()))
    return {"stationarity": stationarity, "primal": primal, "dual": dual, "complementarity": comp}
