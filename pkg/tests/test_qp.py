import numpy as np
import pytest

from hitmpc.solver import qp
from oracles import qp_enumeration_oracle


def test_unconstrained():
    sol = qp.solve_qp(np.eye(2), np.array([-1.0, -1.0]))
    assert sol.status == qp.OPTIMAL
    np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-12)


def test_single_upper_bound_dual_by_hand():
    # min 1/2 x'x - (1,1)'x  s.t. x1 <= 0.5 -> x = (0.5, 1), dual = 0.5... KKT:
    # grad = x - (1,1) + mu*(1,0) = 0 at x1=0.5 -> mu = 0.5
    sol = qp.solve_qp(
        np.eye(2), np.array([-1.0, -1.0]), g_ineq=np.array([[1.0, 0.0]]), h_ineq=np.array([0.5])
    )
    assert sol.status == qp.OPTIMAL
    np.testing.assert_allclose(sol.x, [0.5, 1.0], atol=1e-12)
    np.testing.assert_allclose(sol.lam_ineq, [0.5], atol=1e-12)


def test_box_constrained_row_dual_one():
    # spec-style: H=I, g=-(1,1), x1 <= 0.5 via bound: dual for that bound = 0.5
    sol = qp.solve_qp(np.eye(2), np.array([-1.0, -1.0]), ub=np.array([0.5, np.inf]))
    assert sol.status == qp.OPTIMAL
    np.testing.assert_allclose(sol.x, [0.5, 1.0], atol=1e-12)
    np.testing.assert_allclose(sol.lam_hi, [0.5, 0.0], atol=1e-12)


def test_equality_constrained():
    H = np.diag([2.0, 4.0])
    g = np.array([0.0, 0.0])
    sol = qp.solve_qp(H, g, a_eq=np.array([[1.0, 1.0]]), b_eq=np.array([1.0]))
    assert sol.status == qp.OPTIMAL
    # analytic: minimize x1^2 + 2 x2^2 st x1+x2=1 -> x = (2/3, 1/3)
    np.testing.assert_allclose(sol.x, [2.0 / 3.0, 1.0 / 3.0], atol=1e-10)


def _random_qp(rng, n, m_eq, m_in, with_bounds):
    M = rng.normal(size=(n, n))
    H = M @ M.T + n * np.eye(n)
    g = rng.normal(size=n)
    A = rng.normal(size=(m_eq, n)) if m_eq else None
    b = rng.normal(size=m_eq) if m_eq else None
    G = rng.normal(size=(m_in, n)) if m_in else None
    # keep the feasible set nonempty by anchoring to a feasible point
    x0 = rng.normal(size=n) * 0.3
    if m_eq:
        b = A @ x0
    h = G @ x0 + rng.uniform(0.0, 1.0, size=m_in) if m_in else None
    lb = ub = None
    if with_bounds:
        lb = x0 - rng.uniform(0.1, 2.0, size=n)
        ub = x0 + rng.uniform(0.1, 2.0, size=n)
    return H, g, A, b, G, h, lb, ub


def test_random_qps_match_enumeration_oracle():
    rng = np.random.default_rng(12345)
    for trial in range(50):
        n = int(rng.integers(2, 9))
        m_eq = int(rng.integers(0, max(1, n // 2)))
        m_in = int(rng.integers(0, 11))
        with_bounds = bool(rng.integers(0, 2)) and (m_in + 2 * n <= 20)
        H, g, A, b, G, h, lb, ub = _random_qp(rng, n, m_eq, m_in, with_bounds)
        sol = qp.solve_qp(H, g, A, b, G, h, lb, ub)
        assert sol.status == qp.OPTIMAL, f"trial {trial}: {sol.status}"
        oracle = qp_enumeration_oracle(H, g, A, b, G, h, lb, ub)
        assert oracle is not None, f"trial {trial}: oracle found no KKT point"
        assert sol.objective == pytest.approx(oracle[0], abs=1e-7), f"trial {trial}"


def test_kkt_residuals_small_on_random_problems():
    rng = np.random.default_rng(777)
    for _ in range(30):
        n = int(rng.integers(2, 10))
        H, g, A, b, G, h, lb, ub = _random_qp(rng, n, 1, 6, True)
        sol = qp.solve_qp(H, g, A, b, G, h, lb, ub)
        assert sol.status == qp.OPTIMAL
        res = qp.qp_kkt_residuals(H, g, sol, A, b, G, h, lb, ub)
        for k, v in res.items():
            assert v <= 1e-8, (k, v)


def test_warm_start_reuses_active_set():
    rng = np.random.default_rng(3)
    H, g, A, b, G, h, lb, ub = _random_qp(rng, 6, 1, 8, False)
    cold = qp.solve_qp(H, g, A, b, G, h)
    warm = qp.solve_qp(H, g, A, b, G, h, warm=cold)
    assert warm.status == qp.OPTIMAL
    assert warm.iterations <= 2
    np.testing.assert_allclose(warm.x, cold.x, atol=1e-9)


def test_infeasible_reports_certificate_rows():
    # x <= -1 and x >= 1 cannot hold
    sol = qp.solve_qp(
        np.eye(1),
        np.zeros(1),
        g_ineq=np.array([[1.0], [-1.0]]),
        h_ineq=np.array([-1.0, -1.0]),
    )
    assert sol.status == qp.INFEASIBLE
    assert len(sol.infeasible_rows) >= 1
    kinds = {r[0] for r in sol.infeasible_rows}
    assert "ineq" in kinds


def test_determinism():
    rng = np.random.default_rng(9)
    H, g, A, b, G, h, lb, ub = _random_qp(rng, 5, 1, 7, True)
    s1 = qp.solve_qp(H, g, A, b, G, h, lb, ub)
    s2 = qp.solve_qp(H, g, A, b, G, h, lb, ub)
    assert s1.x.tobytes() == s2.x.tobytes()
    assert s1.iterations == s2.iterations
