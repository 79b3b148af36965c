import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leashguide import scenarios
from leashguide.human import (SUBJECT_H1, SUBJECT_H2, STANDING, WALKING, ForceCommand, human_step, mode_rollout,
                              walking_speed)
from leashguide.human_planner import (HumanPlanProblem, HumanPlanSolution, PlanContext, PlannerConfig,
                                      fix_mode_sequence, plan_forces, reference_along)
from leashguide.robot_planner import (VelocityProblem, discount_matrix, plan_velocity, reconstruct_reference)
from leashguide.sim import ScenarioConfig, plan_human_path
from leashguide.world import ObstacleSet, RobotGeometry, SystemState, obstacles_from_map

GEO = RobotGeometry()
CFG = PlannerConfig()


def _fd_grad(fn, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fn(x + e)[0] - fn(x - e)[0]) / (2 * h)
    return g


def _rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)))


def _random_context(rng, n_obs=6):
    human0 = rng.uniform(-1, 1, 2)
    yaw = rng.uniform(-math.pi, math.pi)
    robot0 = human0 + 1.4 * np.array([math.cos(yaw), math.sin(yaw)]) + GEO.d_cf * np.array([math.cos(yaw),
                                                                                             math.sin(yaw)])
    ref = human0 + np.outer(np.arange(CFG.N), 0.15 * np.array([math.cos(yaw), math.sin(yaw)]))
    ctx = PlanContext(human0, robot0, yaw, ref, ref[-1] + 0.5, rng.normal(size=2) * 5, rng.uniform(1, 2),
                      rng.uniform(2, 20), SUBJECT_H2, GEO, CFG)
    centers = human0 + rng.uniform(-4, 4, (n_obs, 2))
    return ctx, centers, rng.uniform(0.05, 0.1, n_obs), yaw


def _random_decision(rng, yaw):
    N = CFG.N
    psi = yaw + np.cumsum(rng.uniform(-0.2, 0.2, N))
    return np.concatenate([rng.uniform(CFG.F_min, CFG.F_max, N), psi, rng.uniform(CFG.l_min, CFG.l_max, N),
                           psi + rng.uniform(-0.5, 0.5, N)])


def stage1_gradient_errors(count: int = 50, seed: int = 0) -> list[float]:
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(count):
        ctx, c, r, yaw = _random_context(rng)
        prob = HumanPlanProblem(ctx, rng.integers(0, 2, CFG.N), c, r)
        z = _random_decision(rng, yaw)
        errs.append(_rel_err(prob.objective(z)[1], _fd_grad(prob.objective, z)))
        g, vjp = prob.constraints(z)
        w = rng.normal(size=len(g))
        errs.append(_rel_err(vjp(w), _fd_grad(lambda x: (prob.constraints(x)[0] @ w,), z)))
    return errs


def test_stage1_gradients_match_finite_differences():
    assert max(stage1_gradient_errors()) <= 1e-4


def stage2_gradient_errors(count: int = 50, seed: int = 1) -> list[float]:
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(count):
        pose = np.r_[rng.uniform(-1, 1, 2), rng.uniform(-math.pi, math.pi)]
        ref = pose + np.cumsum(rng.normal(0, 0.05, (CFG.M, 3)), axis=0)
        centers = pose[:2] + rng.uniform(-2, 2, (5, 2))
        prob = VelocityProblem(pose, ref, rng.integers(0, 2, CFG.M), CFG, GEO, centers, np.full(5, 0.07))
        lo, hi = prob.bounds()
        u = rng.uniform(lo, hi)
        errs.append(_rel_err(prob.objective(u)[1], _fd_grad(prob.objective, u)))
        g, vjp = prob.constraints(u)
        w = rng.normal(size=len(g))
        errs.append(_rel_err(vjp(w), _fd_grad(lambda x: (prob.constraints(x)[0] @ w,), u)))
    return errs


def test_stage2_gradients_match_finite_differences():
    assert max(stage2_gradient_errors()) <= 1e-4


# -- independent audits ---------------------------------------------------------

def _audit_stage1(sol, state, q_curr, obstacles, params):
    """Re-derive the rollout from the planned forces and check every constraint."""
    N = CFG.N
    xh = [np.asarray(state.human, dtype=float)]
    for k in range(N):
        xh.append(human_step(xh[-1], ForceCommand.polar(sol.magnitudes[k], sol.angles[k]), int(sol.modes[k]),
                             params))
    xh = np.array(xh)
    assert np.allclose(xh, sol.human, atol=1e-9)
    assert sol.modes[0] == q_curr
    e = np.column_stack([np.cos(sol.angles), np.sin(sol.angles)])
    c = np.column_stack([np.cos(sol.yaws), np.sin(sol.yaws)])
    xd = xh[1:] + sol.lengths[:, None] * e + GEO.d_cf * c
    assert np.allclose(xd, sol.robot[1:], atol=1e-9)
    v = [CFG.F_min - sol.magnitudes.min(), sol.magnitudes.max() - CFG.F_max,
         CFG.l_min - sol.lengths.min(), sol.lengths.max() - CFG.l_max,
         (math.cos(CFG.phi_F) - np.cos(np.diff(sol.angles))).max(),
         (math.cos(CFG.phi_theta) - np.cos(sol.angles - sol.yaws)).max()]
    for o in obstacles:
        v.append(CFG.d_s + GEO.r_h + o.radius - np.hypot(*(xh[1:] - o.center).T).min())
        for off in GEO.cover_offsets:
            v.append(CFG.d_s + GEO.r_d + o.radius - np.hypot(*(xd + off * c - o.center).T).min())
    return max(0.0, max(v))


def _audit_stage2(plan, pose, modes, obstacles):
    lo = np.array([CFG.vx_bounds[0], -CFG.vy_max, -CFG.omega_max])
    hi = np.array([CFG.vx_bounds[1], CFG.vy_max, CFG.omega_max])
    assert (plan.commands >= lo).all() and (plan.commands <= hi).all()
    p = np.array(pose, dtype=float)
    worst = 0.0
    for u, q in zip(plan.commands, modes):
        D = np.diag(discount_matrix(int(q), CFG))
        c, s = math.cos(p[2]), math.sin(p[2])
        p = p + CFG.robot_dt * np.array([D[0] * (c * u[0] - s * u[1]), D[1] * (s * u[0] + c * u[1]), D[2] * u[2]])
        for off in GEO.cover_offsets:
            cc = p[:2] + off * np.array([math.cos(p[2]), math.sin(p[2])])
            for o in obstacles:
                worst = max(worst, CFG.d_s + GEO.r_d + o.radius - math.hypot(*(cc - o.center)))
    return worst


def corridor_audit(count: int = 20, seed: int = 1) -> tuple[float, float]:
    """Worst stage-1 and stage-2 violations over randomized corridor states."""
    cfg = ScenarioConfig()
    grid = scenarios.corridor_map()
    obs_set = ObstacleSet.from_map(grid)
    obs_all = obstacles_from_map(grid)
    nodes = plan_human_path(grid, cfg.human_start, cfg.yaw0, cfg.target, GEO, cfg.path)
    path = np.array([[n.x, n.y] for n in nodes])
    spacing = walking_speed(CFG.F_nominal, SUBJECT_H2) * SUBJECT_H2.T
    rng = np.random.default_rng(seed)
    done = 0
    worst1 = worst2 = 0.0
    while done < count:
        nd = nodes[int(rng.integers(0, len(nodes) - 3))]
        h = np.array([nd.x, nd.y]) + rng.normal(0, 0.05, 2)
        psi = nd.theta + rng.normal(0, 0.1)
        yaw = psi + rng.normal(0, 0.1)
        r = h + rng.uniform(1.0, 1.6) * np.array([math.cos(psi), math.sin(psi)]) + GEO.d_cf * np.array(
            [math.cos(yaw), math.sin(yaw)])
        if (obs_set.clearance(h)[0] < CFG.d_s + GEO.r_h
                or obs_set.clearance(GEO.cover_centers(r, yaw)).min() < CFG.d_s + GEO.r_d):
            continue
        state = SystemState(tuple(h), tuple(r), yaw)
        q = int(rng.integers(2))
        f = rng.uniform(3, 15)
        ref = reference_along(path, h, CFG.N + 1, spacing, cfg.target)
        sol = plan_forces(state, q, ref, ref[-1], obs_set, CFG, SUBJECT_H2, GEO,
                          force_prev=f * np.array([math.cos(psi), math.sin(psi)]), magnitude_prev=f)
        worst1 = max(worst1, _audit_stage1(sol, state, q, obs_all, SUBJECT_H2))
        traj = reconstruct_reference(state, q, sol, SUBJECT_H2, GEO)
        ref_poses, ref_modes = traj.sample(CFG.robot_dt * np.arange(1, CFG.M + 1))
        plan = plan_velocity((r[0], r[1], yaw), ref_poses, ref_modes, obs_set, CFG, GEO)
        worst2 = max(worst2, _audit_stage2(plan, (r[0], r[1], yaw), ref_modes, obs_all))
        done += 1
    return worst1, worst2


def test_plan_feasibility_audit_on_random_corridor_states():
    worst1, worst2 = corridor_audit()
    assert worst1 <= 1e-6 and worst2 <= 1e-6


# -- stage-1 examples -------------------------------------------------------------

def test_fix_mode_sequence_examples():
    p = SUBJECT_H2
    assert list(fix_mode_sequence(WALKING, np.full(10, 12.0), p)) == [1] * 10
    assert list(fix_mode_sequence(WALKING, np.zeros(10), p)) == [1] + [0] * 9
    mags = np.array([2.0, 2.0, 2.0, 12.0, 12.0, 12.0, 12.0])
    qs = fix_mode_sequence(STANDING, mags, p)
    assert list(qs) == mode_rollout(STANDING, mags, p)
    assert np.count_nonzero(np.diff(qs)) == 1 and int(np.argmax(qs)) == 3


def test_standing_at_target_stays_put():
    h = np.array([2.0, 1.5])
    robot = h + np.array([1.4 + GEO.d_cf, 0.0])
    state = SystemState(tuple(h), tuple(robot), 0.0)
    obs = ObstacleSet.from_map(scenarios.open_room())
    sol = plan_forces(state, STANDING, np.repeat(h[None], CFG.N + 1, axis=0), h, obs, CFG, SUBJECT_H2, GEO)
    assert sol.violation <= 1e-6
    assert np.hypot(*(sol.human - h).T).max() <= 0.3


def test_straight_corridor_pulls_along_x():
    grid = scenarios.straight_corridor(length=10.0)
    obs = ObstacleSet.from_map(grid)
    h = np.array([1.0, 1.5])
    state = SystemState(tuple(h), (h[0] + 1.4 + GEO.d_cf, 1.5), 0.0)
    spacing = walking_speed(CFG.F_nominal, SUBJECT_H2) * SUBJECT_H2.T
    ref = h + np.outer(np.arange(CFG.N + 1), [spacing, 0.0])
    sol = plan_forces(state, WALKING, ref, (9.0, 1.5), obs, CFG, SUBJECT_H2, GEO, force_prev=(12.0, 0.0),
                      magnitude_prev=12.0)
    assert sol.violation <= 1e-6
    assert np.abs(np.degrees(sol.angles)).max() <= 10.0
    assert (np.diff(sol.human[:, 0]) > 0).all()


def test_stage1_rejects_colliding_start():
    from leashguide.human_planner import InfeasibleStateError
    obs = ObstacleSet([[0.0, 0.0]], 0.1)
    with pytest.raises(InfeasibleStateError):
        plan_forces(SystemState((0.0, 0.0), (2.0, 0.0), 0.0), STANDING, [[0, 0]], (1, 0), obs, CFG, SUBJECT_H2)


# -- reference reconstruction --------------------------------------------------------

def _solution(mags, angles, lengths, yaws):
    n = len(mags)
    return HumanPlanSolution(np.asarray(mags, float), np.asarray(angles, float), np.asarray(lengths, float),
                             np.asarray(yaws, float), np.zeros(n, int), np.zeros((n + 1, 2)), np.zeros((n + 1, 2)),
                             0.0, 0.0, True, True)


def test_reference_standing_keeps_human_fixed():
    state = SystemState((0.0, 0.0), (1.725, 0.0), 0.0)
    sol = _solution(np.full(5, 3.0), np.linspace(0, 0.3, 5), np.linspace(1.2, 1.6, 5), np.linspace(0, 0.2, 5))
    traj = reconstruct_reference(state, STANDING, sol, SUBJECT_H2, GEO)
    assert np.array_equal(traj.human, np.zeros((6, 2)))
    e = np.column_stack([np.cos(sol.angles), np.sin(sol.angles)])
    c = np.column_stack([np.cos(sol.yaws), np.sin(sol.yaws)])
    assert np.allclose(traj.poses[1:, :2], sol.lengths[:, None] * e + GEO.d_cf * c, atol=1e-12, rtol=0)


def test_reference_single_walking_step():
    state = SystemState((0.0, 0.0), (1.725, 0.0), 0.0)
    sol = _solution([20.0], [0.0], [1.4], [0.0])
    traj = reconstruct_reference(state, WALKING, sol, SUBJECT_H1, GEO)
    assert traj.human[1] == pytest.approx((0.0724, 0.0), abs=1e-12)
    assert traj.poses[1, :2] == pytest.approx((0.0724 + 1.4 + GEO.d_cf, 0.0), abs=1e-12)


# -- stage-2 examples -------------------------------------------------------------

def test_on_reference_gives_near_zero_command():
    pose = np.array([1.0, 2.0, 0.3])
    plan = plan_velocity(pose, np.repeat(pose[None], CFG.M, axis=0), np.zeros(CFG.M, int), ObstacleSet.from_obstacles([]), CFG)
    assert np.abs(plan.commands).max() <= 1e-6


def test_displaced_reference_closes_the_gap():
    pose = np.array([0.0, 0.0, 0.0])
    goal = np.array([0.5, 0.0, 0.0])
    ref = np.repeat(goal[None], CFG.M, axis=0)
    errs = [0.5]
    for k in range(10):
        plan = plan_velocity(pose, ref, np.zeros(CFG.M, int), ObstacleSet.from_obstacles([]), CFG)
        if k == 0:
            assert plan.first[0] > 0
        pose = plan.poses[1]
        errs.append(float(np.hypot(*(pose[:2] - goal[:2]))))
    assert (np.diff(errs) < 0).all()


def test_reference_through_wall_keeps_clearance():
    occ = np.zeros((30, 40), bool)
    occ[:, 20] = True
    from leashguide.world import GridMap
    grid = GridMap(40, 30, 0.1, (0.0, 0.0), occ)
    obs = ObstacleSet.from_map(grid)
    pose = np.array([1.2, 1.5, 0.0])
    ref = np.column_stack([np.linspace(1.4, 3.0, CFG.M), np.full(CFG.M, 1.5), np.zeros(CFG.M)])
    plan = plan_velocity(pose, ref, np.zeros(CFG.M, int), obs, CFG)
    assert not plan.degraded
    assert _audit_stage2(plan, pose, np.zeros(CFG.M, int), obstacles_from_map(grid)) <= 1e-6
    # the wall stops the robot short of the reference
    centers = GEO.cover_centers(plan.poses[-1, :2], plan.poses[-1, 2])
    assert obs.clearance(centers).min() == pytest.approx(CFG.d_s + GEO.r_d, abs=2e-3)


def test_rotation_equivariance_quarter_turns():
    rng = np.random.default_rng(4)
    pose = np.array([0.3, -0.2, 0.4])
    ref = pose + np.cumsum(rng.normal(0, 0.05, (CFG.M, 3)) + [0.05, 0.01, 0.0], axis=0)
    centers = np.array([[1.0, 0.6], [0.9, -0.8]])
    modes = np.array([0, 1] * (CFG.M // 2))
    base = plan_velocity(pose, ref, modes, ObstacleSet(centers, 0.07), CFG)
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    p2, r2, c2 = pose.copy(), ref.copy(), centers.copy()
    for _ in range(3):
        p2 = np.r_[rot @ p2[:2], p2[2] + math.pi / 2]
        r2 = np.column_stack([r2[:, :2] @ rot.T, r2[:, 2] + math.pi / 2])
        c2 = c2 @ rot.T
        turned = plan_velocity(p2, r2, modes, ObstacleSet(c2, 0.07), CFG)
        # body-frame commands are unchanged by a world rotation
        assert np.abs(turned.commands - base.commands).max() <= 1e-5


def test_discount_identity_iff_standing():
    assert np.array_equal(discount_matrix(STANDING, CFG), np.eye(3))
    assert not np.array_equal(discount_matrix(WALKING, CFG), np.eye(3))


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_commands_respect_boxes_exactly(dx, dy, dth):
    pose = np.zeros(3)
    ref = np.repeat(np.array([[dx, dy, dth]]), CFG.M, axis=0)
    plan = plan_velocity(pose, ref, np.ones(CFG.M, int), ObstacleSet.from_obstacles([]), CFG)
    lo = np.array([CFG.vx_bounds[0], -CFG.vy_max, -CFG.omega_max])
    hi = np.array([CFG.vx_bounds[1], CFG.vy_max, CFG.omega_max])
    assert (plan.commands >= lo).all() and (plan.commands <= hi).all()
    assert (np.hypot(plan.commands[:, 0], plan.commands[:, 1]) <= CFG.speed_max + 1e-12).all()
