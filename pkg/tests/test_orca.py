import numpy as np
import pytest

from hitmpc import orca
from oracles import orca_enumeration_oracle


def make_agent(pos=(0, 0), vel=(0, 0), v_pref=(1, 0), radius=0.3, xi_max=1.5, a_max=2.0, tau=2.0):
    return orca.OrcaAgent(
        position=np.asarray(pos, float),
        velocity=np.asarray(vel, float),
        radius=radius,
        v_pref=np.asarray(v_pref, float),
        xi_max=xi_max,
        a_max=a_max,
        tau=tau,
    )


def random_problem(rng, max_planes=4):
    """Random relaxed velocity problem with realistic plane geometry."""
    agent = make_agent(
        pos=rng.uniform(-1, 1, 2),
        vel=rng.uniform(-1, 1, 2),
        v_pref=rng.uniform(-1.5, 1.5, 2),
        radius=rng.uniform(0.2, 0.5),
        xi_max=rng.uniform(0.8, 2.0),
        a_max=rng.uniform(1.0, 6.0),
        tau=rng.uniform(1.0, 3.0),
    )
    n_planes = int(rng.integers(0, max_planes + 1))
    n_static = int(rng.integers(0, 2)) if n_planes else 0
    n_dyn = n_planes - n_static
    dyn = []
    while len(dyn) < n_dyn:
        offset = rng.uniform(0.9, 3.0) * _unit(rng.uniform(-np.pi, np.pi))
        other = {
            "position": agent.position + offset,
            "velocity": rng.uniform(-1, 1, 2),
            "radius": rng.uniform(0.2, 0.5),
        }
        dyn.append(orca.build_agent_halfplane(agent, other, responsibility=0.5, dt=0.1))
    static = []
    while len(static) < n_static:
        direction = _unit(rng.uniform(-np.pi, np.pi))
        dist = rng.uniform(agent.radius + 0.3, 3.0)
        center = agent.position + dist * direction
        tangent = np.array([-direction[1], direction[0]])
        seg = (center - tangent, center + tangent)
        static.append(orca.build_static_halfplane(agent, seg))
    beta = rng.uniform(5.0, 200.0, 2)
    return orca.OrcaProblem(agent, tuple(dyn), tuple(static), beta, dt=0.1)


def _unit(theta):
    return np.array([np.cos(theta), np.sin(theta)])


class TestHalfPlaneConstruction:
    def test_far_agent_plane_nonbinding(self):
        agent = make_agent(v_pref=(1.0, 0.0), a_max=50.0)
        other = {"position": np.array([50.0, 0.0]), "velocity": np.zeros(2), "radius": 0.3}
        plane = orca.build_agent_halfplane(agent, other, responsibility=0.5)
        problem = orca.OrcaProblem(agent, (plane,), (), np.array([100.0, 100.0]), dt=0.1)
        sol = orca.solve_orca(problem)
        np.testing.assert_allclose(sol.xi, agent.v_pref, atol=1e-9)
        np.testing.assert_allclose(sol.zeta, 0.0, atol=1e-9)

    def test_head_on_symmetric_pair(self):
        # exact head-on tie: both agents pick the same leg in their own
        # frame, so the pair of planes is point-symmetric (compatible
        # world-frame passing sides) and the offsets coincide
        a = make_agent(pos=(-1, 0), vel=(0.8, 0), v_pref=(0.8, 0))
        b = make_agent(pos=(1, 0), vel=(-0.8, 0), v_pref=(-0.8, 0))
        pa = orca.build_agent_halfplane(a, b, responsibility=0.5)
        pb = orca.build_agent_halfplane(b, a, responsibility=0.5)
        np.testing.assert_allclose(pa.normal, -pb.normal, atol=1e-12)
        assert pa.offset == pytest.approx(pb.offset, abs=1e-12)

    def test_mirror_symmetric_configuration_gives_mirror_planes(self):
        # reflect one agent pair through the x-axis: the construction is
        # equivariant, so the planes are mirror images
        a = make_agent(pos=(-1.0, 0.3), vel=(0.8, -0.2), v_pref=(0.8, -0.2))
        b = make_agent(pos=(-1.0, -0.3), vel=(0.8, 0.2), v_pref=(0.8, 0.2))
        pa = orca.build_agent_halfplane(a, b, responsibility=0.5)
        pb = orca.build_agent_halfplane(b, a, responsibility=0.5)
        np.testing.assert_allclose(pa.normal, [pb.normal[0], -pb.normal[1]], atol=1e-12)
        assert pa.offset == pytest.approx(pb.offset, abs=1e-12)

    def test_plane_guarantee_rollout_oracle(self):
        # velocities satisfying both agents' planes (responsibility 1/2 each)
        # keep the pair collision-free for tau, verified by 1 ms rollout
        rng = np.random.default_rng(2024)
        tau, dt = 2.0, 0.1
        checked = 0
        while checked < 1000:
            pa = rng.uniform(-2, 2, 2)
            pb = rng.uniform(-2, 2, 2)
            ra, rb = rng.uniform(0.2, 0.4, 2)
            if np.linalg.norm(pb - pa) <= ra + rb + 1e-3:
                continue
            va = rng.uniform(-1, 1, 2)
            vb = rng.uniform(-1, 1, 2)
            a = make_agent(pos=pa, vel=va, v_pref=va, radius=ra)
            b = make_agent(pos=pb, vel=vb, v_pref=vb, radius=rb)
            plane_a = orca.build_agent_halfplane(a, b, tau=tau, responsibility=0.5, dt=dt)
            plane_b = orca.build_agent_halfplane(b, a, tau=tau, responsibility=0.5, dt=dt)
            xi_a = _sample_in_plane(rng, plane_a)
            xi_b = _sample_in_plane(rng, plane_b)
            ts = np.arange(0.0, tau + 1e-9, 1e-3)
            rel = (pa - pb)[None, :] + ts[:, None] * (xi_a - xi_b)[None, :]
            min_dist = np.linalg.norm(rel, axis=1).min()
            assert min_dist >= ra + rb - 1e-6, (pa, pb, va, vb, xi_a, xi_b)
            checked += 1

    def test_coincident_centers_error(self):
        agent = make_agent()
        other = {"position": agent.position.copy(), "velocity": np.zeros(2), "radius": 0.3}
        with pytest.raises(orca.DegenerateGeometryError):
            orca.build_agent_halfplane(agent, other)


def _sample_in_plane(rng, plane, speed=1.2):
    # rejection-sample a velocity satisfying n'xi >= b with |xi| <= speed bound
    for _ in range(200):
        xi = rng.uniform(-speed, speed, 2)
        if plane.normal @ xi >= plane.offset - 1e-12:
            return xi
    # fall back to a point on the plane pushed inside
    return plane.normal * (plane.offset + 0.1)


class TestStaticHalfPlane:
    def test_far_obstacle_nonbinding(self):
        agent = make_agent(v_pref=(-1.0, 0.0), a_max=50.0)
        plane = orca.build_static_halfplane(agent, [(5.0, -1.0), (5.0, 1.0)])
        problem = orca.OrcaProblem(agent, (), (plane,), np.array([100.0, 100.0]), dt=0.1)
        sol = orca.solve_orca(problem)
        np.testing.assert_allclose(sol.xi, agent.v_pref, atol=1e-9)

    def test_wall_speed_limit_geometry_oracle(self):
        # agent at surface distance dist from a wall, preferred velocity
        # straight at it: allowed closing speed is dist / tau
        agent = make_agent(pos=(0, 0), vel=(0, 0), v_pref=(2.0, 0.0), xi_max=3.0, a_max=50.0, tau=2.0)
        wall = [(1.0, -5.0), (1.0, 5.0)]
        plane = orca.build_static_halfplane(agent, wall)
        dist = 1.0 - agent.radius
        problem = orca.OrcaProblem(agent, (), (plane,), np.array([100.0, 100.0]), dt=0.1)
        sol = orca.solve_orca(problem)
        assert sol.xi[0] <= dist / agent.tau + 1e-9
        assert sol.xi[0] == pytest.approx(dist / agent.tau, abs=1e-8)

    def test_not_slackable(self):
        agent = make_agent()
        plane = orca.build_static_halfplane(agent, [(2.0, -1.0), (2.0, 1.0)])
        assert plane.slackable is False

    def test_inside_inflated_obstacle_error(self):
        agent = make_agent(pos=(0.0, 0.0), radius=0.5)
        with pytest.raises(orca.DegenerateGeometryError):
            orca.build_static_halfplane(agent, [(0.2, -1.0), (0.2, 1.0)])


class TestSolveOrca:
    def test_unconstrained_returns_v_pref(self):
        agent = make_agent(v_pref=(0.7, -0.4), a_max=50.0)
        sol = orca.solve_orca(orca.OrcaProblem(agent, (), (), np.array([100.0, 100.0]), 0.1))
        np.testing.assert_allclose(sol.xi, [0.7, -0.4], atol=1e-10)
        np.testing.assert_allclose(sol.zeta, 0.0, atol=1e-10)
        np.testing.assert_allclose(sol.lam, 0.0, atol=1e-9)

    def test_speed_disc_projection(self):
        agent = make_agent(vel=(1.0, 0.0), v_pref=(2.0, 0.0), xi_max=1.0, a_max=50.0)
        sol = orca.solve_orca(orca.OrcaProblem(agent, (), (), np.array([100.0, 100.0]), 0.1))
        np.testing.assert_allclose(sol.xi, [1.0, 0.0], atol=1e-9)

    def test_random_problems_match_enumeration_oracle(self):
        rng = np.random.default_rng(99)
        for trial in range(20):
            problem = random_problem(rng)
            sol = orca.solve_orca(problem)
            oracle = orca_enumeration_oracle(problem)
            assert oracle is not None, f"trial {trial}"
            assert sol.objective == pytest.approx(oracle[0], abs=1e-7), f"trial {trial}"

    def test_solver_kkt_residuals(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            problem = random_problem(rng)
            sol = orca.solve_orca(problem)
            res = orca.kkt_residuals(problem, sol)
            assert max(res.values()) <= 1e-8, res

    def test_static_infeasible_error(self):
        agent = make_agent(xi_max=1.0)
        p1 = orca.HalfPlane(np.array([1.0, 0.0]), 2.0, slackable=False)  # xi_x >= 2
        with pytest.raises(orca.StaticInfeasibleError):
            orca.solve_orca(orca.OrcaProblem(agent, (), (p1,), np.array([100.0, 100.0]), 0.1))
        p2 = orca.HalfPlane(np.array([-1.0, 0.0]), 0.5, slackable=False)  # xi_x <= -0.5
        p3 = orca.HalfPlane(np.array([1.0, 0.0]), 0.5, slackable=False)  # xi_x >= 0.5
        with pytest.raises(orca.StaticInfeasibleError) as err:
            orca.solve_orca(orca.OrcaProblem(agent, (), (p2, p3), np.array([100.0, 100.0]), 0.1))
        assert len(err.value.planes) >= 1

    def test_always_feasible_with_slack(self):
        # brutal squeeze: opposing dynamic planes, tiny caps
        agent = make_agent(vel=(0, 0), v_pref=(1.0, 0.0), xi_max=0.5, a_max=0.5)
        up = orca.HalfPlane(np.array([0.0, 1.0]), 0.4, slackable=True)
        down = orca.HalfPlane(np.array([0.0, -1.0]), 0.4, slackable=True)
        sol = orca.solve_orca(
            orca.OrcaProblem(agent, (up, down), (), np.array([50.0, 50.0]), 0.1)
        )
        assert np.all(sol.zeta >= -1e-12)
        assert sol.zeta[1] > 0.01  # shared slack must engage

    def test_rotational_equivariance(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            problem = random_problem(rng)
            angle = rng.uniform(-np.pi, np.pi)
            c, s = np.cos(angle), np.sin(angle)
            R = np.array([[c, -s], [s, c]])
            base = orca.solve_orca(problem)
            rotated = _rotate_problem(problem, R)
            rot_sol = orca.solve_orca(rotated)
            np.testing.assert_allclose(rot_sol.xi, R @ base.xi, atol=1e-8)

    def test_slack_monotonicity(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            problem = random_problem(rng)
            lo = orca.solve_orca(problem)
            harder = orca.OrcaProblem(
                problem.agent, problem.dynamic_planes, problem.static_planes,
                problem.slack_penalty * 4.0, problem.dt,
            )
            hi = orca.solve_orca(harder)
            assert np.linalg.norm(hi.zeta) <= np.linalg.norm(lo.zeta) + 1e-9

    def test_reciprocal_symmetry(self):
        # mirror-symmetric pair: solved velocities are mirror images
        a = make_agent(pos=(-1.2, 0.05), vel=(0.9, 0.0), v_pref=(0.9, 0.0))
        b = make_agent(pos=(1.2, -0.05), vel=(-0.9, 0.0), v_pref=(-0.9, 0.0))
        plane_a = orca.build_agent_halfplane(a, b, responsibility=0.5)
        plane_b = orca.build_agent_halfplane(b, a, responsibility=0.5)
        beta = np.array([100.0, 100.0])
        sa = orca.solve_orca(orca.OrcaProblem(a, (plane_a,), (), beta, 0.1))
        sb = orca.solve_orca(orca.OrcaProblem(b, (plane_b,), (), beta, 0.1))
        np.testing.assert_allclose(sa.xi, -sb.xi, atol=1e-8)


class TestKktResiduals:
    def test_solver_output_residuals_small(self):
        rng = np.random.default_rng(17)
        problem = random_problem(rng)
        sol = orca.solve_orca(problem)
        res = orca.kkt_residuals(problem, sol)
        assert all(v <= 1e-8 for v in res.values())

    def test_unconstrained_perturbed_stationarity(self):
        agent = make_agent(v_pref=(0.5, 0.5))
        problem = orca.OrcaProblem(agent, (), (), np.array([100.0, 100.0]), 0.1)
        cand = orca.OrcaSolution(
            xi=agent.v_pref + np.array([1.0, 0.0]),
            zeta=np.zeros(2),
            lam=np.zeros(4),
            active_set=[],
            objective=1.0,
        )
        res = orca.kkt_residuals(problem, cand)
        assert res["stationarity"] == pytest.approx(2.0)

    def test_perturbed_solution_detected(self):
        rng = np.random.default_rng(23)
        problem = None
        while problem is None:
            cand_problem = random_problem(rng)
            sol = orca.solve_orca(cand_problem)
            if sol.lam.max(initial=0.0) > 1e-3:
                problem = cand_problem
        sol = orca.solve_orca(problem)
        shifted = orca.OrcaSolution(
            xi=sol.xi + np.array([0.05, -0.03]),
            zeta=sol.zeta + 0.05,
            lam=sol.lam,
            active_set=sol.active_set,
            objective=sol.objective,
        )
        res = orca.kkt_residuals(problem, shifted)
        assert res["complementarity"] > 1e-3 or res["stationarity"] > 1e-3


def _rotate_problem(problem, R):
    a = problem.agent
    agent = orca.OrcaAgent(
        position=R @ a.position,
        velocity=R @ a.velocity,
        radius=a.radius,
        v_pref=R @ a.v_pref,
        xi_max=a.xi_max,
        a_max=a.a_max,
        tau=a.tau,
    )
    dyn = tuple(orca.HalfPlane(R @ p.normal, p.offset, True) for p in problem.dynamic_planes)
    st = tuple(orca.HalfPlane(R @ p.normal, p.offset, False) for p in problem.static_planes)
    return orca.OrcaProblem(agent, dyn, st, problem.slack_penalty, problem.dt)
