"""Independent brute-force oracles used by the test suite.

These deliberately avoid the library's solver code paths: candidate optima
are produced by enumerating active sets and solving each equality-
constrained case directly, then certified through first-order conditions.
For convex problems any certified KKT point is the global optimum, so the
enumeration can stop at the first valid candidate.
"""

import itertools

import numpy as np


def qp_enumeration_oracle(H, g, a_eq=None, b_eq=None, g_ineq=None, h_ineq=None,
                          lb=None, ub=None, feas_tol=1e-8, dual_tol=1e-8):
    """Global optimum of a convex QP by active-set enumeration.

    Returns (objective, x) or None when no feasible KKT point exists.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    n = g.shape[0]
    A = np.zeros((0, n)) if a_eq is None else np.atleast_2d(np.asarray(a_eq, dtype=float))
    b = np.zeros(A.shape[0]) if b_eq is None else np.asarray(b_eq, dtype=float)
    rows = [] if g_ineq is None else [np.asarray(r, dtype=float) for r in np.atleast_2d(g_ineq)]
    rhs = [] if h_ineq is None else list(np.asarray(h_ineq, dtype=float))
    if lb is not None:
        for i, v in enumerate(np.asarray(lb, dtype=float)):
            if np.isfinite(v):
                e = np.zeros(n)
                e[i] = -1.0
                rows.append(e)
                rhs.append(-v)
    if ub is not None:
        for i, v in enumerate(np.asarray(ub, dtype=float)):
            if np.isfinite(v):
                e = np.zeros(n)
                e[i] = 1.0
                rows.append(e)
                rhs.append(v)
    G = np.asarray(rows) if rows else np.zeros((0, n))
    h = np.asarray(rhs)
    m = G.shape[0]

    best = None
    for size in range(0, min(n, m) + 1):
        for subset in itertools.combinations(range(m), size):
            W = list(subset)
            Gw = G[W]
            dim = n + A.shape[0] + len(W)
            kkt = np.zeros((dim, dim))
            kkt[:n, :n] = H
            kkt[:n, n:n + A.shape[0]] = A.T
            kkt[:n, n + A.shape[0]:] = Gw.T
            kkt[n:n + A.shape[0], :n] = A
            kkt[n + A.shape[0]:, :n] = Gw
            r = np.concatenate([-g, b, h[W]])
            sol, *_ = np.linalg.lstsq(kkt, r, rcond=None)
            if not np.all(np.isfinite(sol)):
                continue
            if np.linalg.norm(kkt @ sol - r, np.inf) > 1e-7:
                continue
            x = sol[:n]
            mu = sol[n + A.shape[0]:]
            if A.shape[0] and np.abs(A @ x - b).max() > feas_tol:
                continue
            if m and (G @ x - h).max() > feas_tol:
                continue
            if len(W) and mu.min() < -dual_tol:
                continue
            obj = float(0.5 * x @ H @ x + g @ x)
            # convex problem: a feasible KKT point is globally optimal
            return obj, x
        del size
    return best


# ---------------------------------------------------------------------------
# relaxed velocity-selection (ORCA) oracle
# ---------------------------------------------------------------------------
# The constraint set, restated independently of the library:
#   g0 = |xi|^2 - xi_max^2                    (speed)
#   g1 = |xi - v|^2 - (dt a_max)^2 - za       (velocity-change, slacked)
#   g2+i = b_i - n_i'xi - zv                  (dynamic planes, shared slack)
#   ...  = b_j - n_j'xi                       (static planes)
#   g[-2] = -za, g[-1] = -zv
# objective f = |xi - v_pref|^2 + ba za^2 + bv zv^2


def _orca_data(problem):
    nd = len(problem.dynamic_planes)
    ns = len(problem.static_planes)
    n_dyn = np.array([p.normal for p in problem.dynamic_planes]).reshape(nd, 2)
    b_dyn = np.array([p.offset for p in problem.dynamic_planes])
    n_st = np.array([p.normal for p in problem.static_planes]).reshape(ns, 2)
    b_st = np.array([p.offset for p in problem.static_planes])
    return {
        "v_pref": np.asarray(problem.agent.v_pref, dtype=float),
        "v": np.asarray(problem.agent.velocity, dtype=float),
        "xi_max": float(problem.agent.xi_max),
        "cap": float(problem.dt * problem.agent.a_max),
        "ba": float(problem.slack_penalty[0]),
        "bv": float(problem.slack_penalty[1]),
        "nd": nd, "ns": ns,
        "n_dyn": n_dyn, "b_dyn": b_dyn, "n_st": n_st, "b_st": b_st,
    }


def _orca_g(d, xi, za, zv):
    parts = [xi @ xi - d["xi_max"] ** 2,
             (xi - d["v"]) @ (xi - d["v"]) - d["cap"] ** 2 - za]
    parts += list(d["b_dyn"] - d["n_dyn"] @ xi - zv) if d["nd"] else []
    parts += list(d["b_st"] - d["n_st"] @ xi) if d["ns"] else []
    parts += [-za, -zv]
    return np.array(parts)


def _orca_grads(d, xi, za, zv):
    m = 4 + d["nd"] + d["ns"]
    J = np.zeros((m, 4))
    J[0, :2] = 2 * xi
    J[1, :2] = 2 * (xi - d["v"])
    J[1, 2] = -1.0
    for i in range(d["nd"]):
        J[2 + i, :2] = -d["n_dyn"][i]
        J[2 + i, 3] = -1.0
    for j in range(d["ns"]):
        J[2 + d["nd"] + j, :2] = -d["n_st"][j]
    J[m - 2, 2] = -1.0
    J[m - 1, 3] = -1.0
    return J


def _orca_f(d, xi, za, zv):
    diff = xi - d["v_pref"]
    return float(diff @ diff + d["ba"] * za**2 + d["bv"] * zv**2)


def _circle_circle(c1, r1, c2, r2):
    delta = c2 - c1
    dd = float(np.linalg.norm(delta))
    if dd < 1e-14 or dd > r1 + r2 + 1e-12 or dd < abs(r1 - r2) - 1e-12:
        return []
    a = (dd**2 + r1**2 - r2**2) / (2 * dd)
    h_sq = r1**2 - a**2
    h = np.sqrt(max(h_sq, 0.0))
    mid = c1 + a * delta / dd
    perp = np.array([-delta[1], delta[0]]) / dd
    return [mid + h * perp, mid - h * perp]


def _circle_line(center, radius, L, c):
    # line L xi = c with L a single row
    n = L[0]
    nn = float(n @ n)
    base = n * (c[0] / nn)
    t_dir = np.array([-n[1], n[0]]) / np.sqrt(nn)
    rel = base - center
    bq = 2 * rel @ t_dir
    cq = rel @ rel - radius**2
    disc = bq**2 - 4 * cq
    if disc < -1e-12:
        return []
    disc = max(disc, 0.0)
    return [base + ((-bq + s * np.sqrt(disc)) / 2) * t_dir for s in (1.0, -1.0)]


def _minimize_1d(phi, params):
    """Dense sampling plus Brent polish over a closed parameter list/range."""
    from scipy.optimize import minimize_scalar

    vals = [phi(p) for p in params]
    i = int(np.argmin(vals))
    lo = params[max(0, i - 1)]
    hi = params[min(len(params) - 1, i + 1)]
    if hi - lo < 1e-15:
        return params[i]
    res = minimize_scalar(phi, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-13})
    x = float(res.x)
    # Newton polish on the sampled scalar function (central differences)
    h = 1e-6 * max(1.0, abs(x))
    for _ in range(4):
        d1 = (phi(x + h) - phi(x - h)) / (2 * h)
        d2 = (phi(x + h) - 2 * phi(x) + phi(x - h)) / (h * h)
        if not np.isfinite(d1) or not np.isfinite(d2) or d2 <= 0:
            break
        step = -d1 / d2
        if abs(step) > (hi - lo):
            break
        x_new = x + step
        if phi(x_new) <= phi(x):
            x = x_new
        if abs(step) < 1e-14:
            break
    return x


def orca_enumeration_oracle(problem, feas_tol=1e-8):
    """Global optimum of the relaxed velocity problem by enumerating active
    sets and solving each equality-restricted case geometrically.

    Returns (objective, z) for the first feasibility- and KKT-certified
    candidate (global optimum by convexity), or None.
    """
    import itertools

    d = _orca_data(problem)
    nd, ns = d["nd"], d["ns"]
    m = 4 + nd + ns
    idx_speed, idx_acc = 0, 1
    idx_dyn = list(range(2, 2 + nd))
    idx_st = list(range(2 + nd, 2 + nd + ns))
    idx_za, idx_zv = m - 2, m - 1

    def candidate_points(active):
        """All candidate z=(xi, za, zv) for a given active set."""
        A = set(active)
        speed_on = idx_speed in A
        acc_on = idx_acc in A
        za_zero = idx_za in A
        zv_zero = idx_zv in A
        dyn_on = [i - 2 for i in A if i in idx_dyn]
        st_on = [j - 2 - nd for j in A if j in idx_st]

        lines = []
        rhs = []
        for j in st_on:
            lines.append(d["n_st"][j])
            rhs.append(d["b_st"][j])
        if zv_zero:
            for i in dyn_on:
                lines.append(d["n_dyn"][i])
                rhs.append(d["b_dyn"][i])
        elif len(dyn_on) >= 2:
            i0 = dyn_on[0]
            for i in dyn_on[1:]:
                lines.append(d["n_dyn"][i] - d["n_dyn"][i0])
                rhs.append(d["b_dyn"][i] - d["b_dyn"][i0])
        L = np.asarray(lines).reshape(len(lines), 2)
        c = np.asarray(rhs)

        def zv_of(xi):
            if zv_zero or not dyn_on:
                return 0.0
            return float(d["b_dyn"][dyn_on[0]] - d["n_dyn"][dyn_on[0]] @ xi)

        def za_of(xi):
            if za_zero or not acc_on:
                return 0.0
            return float((xi - d["v"]) @ (xi - d["v"]) - d["cap"] ** 2)

        def phi(xi):
            return _orca_f(d, xi, za_of(xi), zv_of(xi))

        circles = []
        if speed_on:
            circles.append((np.zeros(2), d["xi_max"]))
        if acc_on and za_zero:
            circles.append((d["v"].copy(), d["cap"]))

        rank = np.linalg.matrix_rank(L, tol=1e-10) if len(L) else 0
        pts = []
        if rank >= 2:
            xi, *_ = np.linalg.lstsq(L, c, rcond=None)
            if np.abs(L @ xi - c).max(initial=0.0) < 1e-8:
                pts = [xi]
        elif rank == 1:
            keep = L[[int(np.argmax(np.linalg.norm(L, axis=1)))]]
            ck = c[[int(np.argmax(np.linalg.norm(L, axis=1)))]]
            if np.abs(L @ np.linalg.lstsq(L, c, rcond=None)[0] - c).max(initial=0.0) > 1e-8:
                return []
            if circles:
                for center, r in circles:
                    pts += _circle_line(center, r, keep, ck)
            else:
                n_row = keep[0]
                base = n_row * (ck[0] / float(n_row @ n_row))
                t_dir = np.array([-n_row[1], n_row[0]]) / np.linalg.norm(n_row)
                grid = np.linspace(-6.0, 6.0, 121)
                t_opt = _minimize_1d(lambda t: phi(base + t * t_dir), list(grid))
                pts = [base + t_opt * t_dir]
        else:
            if len(circles) >= 2:
                pts = _circle_circle(circles[0][0], circles[0][1], circles[1][0], circles[1][1])
            elif len(circles) == 1:
                center, r = circles[0]
                grid = np.linspace(-np.pi, np.pi, 241)
                th = _minimize_1d(lambda a: phi(center + r * np.array([np.cos(a), np.sin(a)])), list(grid))
                pts = [center + r * np.array([np.cos(th), np.sin(th)])]
            else:
                # unconstrained in xi: phi is quadratic unless the
                # velocity-change slack enters as a function of xi
                M = np.eye(2)
                r = d["v_pref"].copy()
                if dyn_on and not zv_zero:
                    n0 = d["n_dyn"][dyn_on[0]]
                    M = M + d["bv"] * np.outer(n0, n0)
                    r = r + d["bv"] * d["b_dyn"][dyn_on[0]] * n0
                xi_quad = np.linalg.solve(M, r)
                if acc_on and not za_zero:
                    # quartic objective: damped Newton with the analytic
                    # gradient/Hessian from several starts
                    n0 = d["n_dyn"][dyn_on[0]] if dyn_on and not zv_zero else np.zeros(2)
                    b0 = d["b_dyn"][dyn_on[0]] if dyn_on and not zv_zero else 0.0
                    bv_eff = d["bv"] if (dyn_on and not zv_zero) else 0.0

                    def newton(start):
                        xi = np.asarray(start, dtype=float).copy()
                        for _ in range(60):
                            dv = xi - d["v"]
                            ring = dv @ dv - d["cap"] ** 2
                            grad = (2 * (xi - d["v_pref"]) + 4 * d["ba"] * ring * dv
                                    + 2 * bv_eff * (n0 @ xi - b0) * n0)
                            if np.abs(grad).max() < 1e-13:
                                break
                            Hm = (2 * np.eye(2) + 4 * d["ba"] * (ring * np.eye(2)
                                  + 2 * np.outer(dv, dv)) + 2 * bv_eff * np.outer(n0, n0))
                            lam_min = np.linalg.eigvalsh(Hm)[0]
                            if lam_min < 1e-9:
                                Hm = Hm + (1e-9 - lam_min) * np.eye(2)
                            step = np.linalg.solve(Hm, -grad)
                            t_ls = 1.0
                            base = phi(xi)
                            while t_ls > 1e-8 and phi(xi + t_ls * step) > base:
                                t_ls *= 0.5
                            xi = xi + t_ls * step
                        return xi

                    cands = [newton(s0) for s0 in
                             (xi_quad, d["v"], d["v_pref"], 0.5 * (d["v"] + d["v_pref"]))]
                    pts = [min(cands, key=phi)]
                else:
                    pts = [xi_quad]
        out = []
        for xi in pts:
            out.append(np.array([xi[0], xi[1], za_of(xi), zv_of(xi)]))
        return out

    for size in range(0, 5):
        for active in itertools.combinations(range(m), size):
            for z in candidate_points(active):
                xi, za, zv = z[:2], z[2], z[3]
                g = _orca_g(d, xi, za, zv)
                if g.max(initial=0.0) > feas_tol:
                    continue
                if np.abs(g[list(active)]).max(initial=0.0) > 1e-7:
                    continue
                J = _orca_grads(d, xi, za, zv)
                diff = xi - d["v_pref"]
                grad_f = np.concatenate([2 * diff, [2 * d["ba"] * za, 2 * d["bv"] * zv]])
                Ja = J[list(active)]
                if len(active):
                    lam_a, *_ = np.linalg.lstsq(Ja.T, -grad_f, rcond=None)
                else:
                    lam_a = np.zeros(0)
                resid = grad_f + (Ja.T @ lam_a if len(active) else 0.0)
                if np.abs(resid).max() > 1e-6 * max(1.0, np.abs(grad_f).max()):
                    continue
                if len(active) and lam_a.min() < -1e-7:
                    continue
                return _orca_f(d, xi, za, zv), z
    return None
