"""Stage-2 MPC: body-frame velocity commands that track the stage-1 robot references."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import nlp
from .human import HumanParams, WALKING, human_step, ForceCommand
from .human_planner import HumanPlanSolution, PlannerConfig, _mat, fix_mode_sequence
from .world import ObstacleSet, RobotGeometry, SystemState, wrap_angle


@dataclass
class RobotRefTrajectory:
    """Robot poses (x, y, theta) and human positions at t0 + k*T, k = 0..N."""

    poses: np.ndarray
    human: np.ndarray
    modes: np.ndarray             # mode during step k, k = 0..N-1
    t0: float = 0.0
    T: float = 0.4

    def sample(self, times) -> tuple[np.ndarray, np.ndarray]:
        """Interpolated poses and modes at ``times``; held constant past the end."""
        t = np.asarray(times, dtype=float)
        grid = self.t0 + self.T * np.arange(len(self.poses))
        th = np.unwrap(self.poses[:, 2])
        out = np.column_stack([np.interp(t, grid, self.poses[:, 0]), np.interp(t, grid, self.poses[:, 1]),
                               np.interp(t, grid, th)])
        idx = np.clip(np.floor((t - self.t0) / self.T).astype(int), 0, len(self.modes) - 1)
        return out, self.modes[idx]


@dataclass
class VelocityPlan:
    commands: np.ndarray          # (M, 3) rows of (vx, vy, omega)
    poses: np.ndarray             # (M+1, 3) predicted poses
    objective: float
    violation: float
    converged: bool
    degraded: bool = False

    @property
    def first(self) -> np.ndarray:
        return self.commands[0]


def discount_matrix(q: int, config: PlannerConfig) -> np.ndarray:
    return np.diag(config.D_pulled) if q == WALKING else np.eye(3)


def reconstruct_reference(state: SystemState, q_curr: int, stage1: HumanPlanSolution, params: HumanParams,
                          geometry: RobotGeometry | None = None, t0: float = 0.0) -> RobotRefTrajectory:
    """Replay the planned forces through the human model and place the robot on the rope."""
    geometry = geometry or RobotGeometry()
    q = fix_mode_sequence(q_curr, stage1.magnitudes, params)
    N = len(q)
    xh = np.empty((N + 1, 2))
    xh[0] = state.human
    for k in range(N):
        f = ForceCommand.polar(stage1.magnitudes[k], stage1.angles[k])
        xh[k + 1] = human_step(xh[k], f, int(q[k]), params)
    e = np.column_stack([np.cos(stage1.angles), np.sin(stage1.angles)])
    c = np.column_stack([np.cos(stage1.yaws), np.sin(stage1.yaws)])
    xd = xh[1:] + stage1.lengths[:, None] * e + geometry.d_cf * c
    poses = np.vstack([[state.robot[0], state.robot[1], state.yaw],
                       np.column_stack([xd, stage1.yaws])])
    return RobotRefTrajectory(poses, xh, q, t0, params.T)


class VelocityProblem:
    def __init__(self, pose0, reference, modes, config: PlannerConfig, geometry: RobotGeometry,
                 obstacle_centers=None, obstacle_radii=None):
        self.p0 = np.asarray(pose0, dtype=float)
        self.ref = np.asarray(reference, dtype=float)
        self.M = len(self.ref)
        self.cfg = config
        self.geo = geometry
        Qd = _mat(config.Q_d, 3)
        self.Qxy = Qd[:2, :2]
        self.qth = float(Qd[2, 2])
        self.R = _mat(config.R_d, 3)
        self.D = np.array([np.diag(discount_matrix(int(q), config)) for q in modes])
        self.oc = np.zeros((0, 2)) if obstacle_centers is None else np.asarray(obstacle_centers, dtype=float)
        self.orad = np.zeros(0) if obstacle_radii is None else np.asarray(obstacle_radii, dtype=float)
        self.offsets = np.asarray(geometry.cover_offsets, dtype=float)
        self.dt = config.robot_dt

    def bounds(self):
        c = self.cfg
        lo = np.tile([c.vx_bounds[0], -c.vy_max, -c.omega_max], self.M)
        hi = np.tile([c.vx_bounds[1], c.vy_max, c.omega_max], self.M)
        return lo, hi

    def rollout(self, u):
        u = u.reshape(self.M, 3)
        dt = self.dt
        th = self.p0[2] + np.concatenate([[0.0], np.cumsum(dt * self.D[:, 2] * u[:, 2])])
        c, s = np.cos(th[:-1]), np.sin(th[:-1])
        inc_x = dt * self.D[:, 0] * (c * u[:, 0] - s * u[:, 1])
        inc_y = dt * self.D[:, 1] * (s * u[:, 0] + c * u[:, 1])
        p = np.empty((self.M + 1, 3))
        p[:, 0] = self.p0[0] + np.concatenate([[0.0], np.cumsum(inc_x)])
        p[:, 1] = self.p0[1] + np.concatenate([[0.0], np.cumsum(inc_y)])
        p[:, 2] = th
        return p

    def _backprop(self, u, p, gp):
        """Gradient w.r.t. u given gradients w.r.t. states 0..M (row 0 ignored)."""
        u = u.reshape(self.M, 3)
        dt = self.dt
        c, s = np.cos(p[:-1, 2]), np.sin(p[:-1, 2])
        # increment k moves every later state
        S = np.cumsum(gp[:0:-1, :2], axis=0)[::-1]
        Sx = self.D[:, 0] * S[:, 0]
        Sy = self.D[:, 1] * S[:, 1]
        gu = np.empty((self.M, 3))
        gu[:, 0] = dt * (Sx * c + Sy * s)
        gu[:, 1] = dt * (-Sx * s + Sy * c)
        h = dt * (Sx * (-s * u[:, 0] - c * u[:, 1]) + Sy * (c * u[:, 0] - s * u[:, 1]))
        A = gp[1:, 2].copy()
        A[:-1] += h[1:]
        # omega_i turns every state after step i
        gu[:, 2] = dt * self.D[:, 2] * np.cumsum(A[::-1])[::-1]
        return gu.ravel()

    def objective(self, u):
        p = self.rollout(u)
        uu = u.reshape(self.M, 3)
        d = p[1:, :2] - self.ref[:, :2]
        dth = p[1:, 2] - self.ref[:, 2]
        val = float(np.einsum("kd,de,ke->", d, self.Qxy, d) + self.qth * np.sum(2.0 * (1.0 - np.cos(dth)))
                    + np.einsum("kd,de,ke->", uu, self.R, uu))
        gp = np.zeros((self.M + 1, 3))
        gp[1:, :2] = 2.0 * d @ self.Qxy
        gp[1:, 2] = 2.0 * self.qth * np.sin(dth)
        g = self._backprop(u, p, gp) + (2.0 * uu @ self.R).ravel()
        return val, g

    def circles(self, p):
        e = np.column_stack([np.cos(p[:, 2]), np.sin(p[:, 2])])
        return p[:, None, :2] + self.offsets[None, :, None] * e[:, None, :]

    def constraints(self, u):
        uu = u.reshape(self.M, 3)
        # planar speed stays within the forward limit even with lateral motion
        g_speed = uu[:, 0] ** 2 + uu[:, 1] ** 2 - self.cfg.speed_max ** 2
        if not len(self.oc):
            def vjp_speed(w):
                out = np.zeros((self.M, 3))
                out[:, :2] = 2.0 * w[:, None] * uu[:, :2]
                return out.ravel()
            return g_speed, vjp_speed
        p = self.rollout(u)
        cc = self.circles(p[1:])
        diff = cc[:, :, None, :] - self.oc[None, None]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        g = ((self.cfg.d_s + self.geo.r_d + self.orad)[None, None] - dist).ravel()
        unitv = diff / np.maximum(dist, 1e-12)[..., None]
        th = p[1:, 2]
        ep = np.column_stack([-np.sin(th), np.cos(th)])

        def vjp(w):
            ws = w[:self.M]
            wc = w[self.M:].reshape(dist.shape)
            gc = -np.einsum("kij,kijd->kid", wc, unitv)
            gp = np.zeros((self.M + 1, 3))
            gp[1:, :2] = gc.sum(axis=1)
            gp[1:, 2] = np.einsum("kid,i,kd->k", gc, self.offsets, ep)
            out = self._backprop(u, p, gp).reshape(self.M, 3)
            out[:, :2] += 2.0 * ws[:, None] * uu[:, :2]
            return out.ravel()

        return np.concatenate([g_speed, g]), vjp


def plan_velocity(pose, reference, modes, obstacles: ObstacleSet, config: PlannerConfig,
                  geometry: RobotGeometry | None = None, warm_start=None,
                  options: nlp.NlpOptions | None = None) -> VelocityPlan:
    """Solve the velocity-tracking problem.

    ``reference`` holds the M target poses for steps 1..M and ``modes`` the
    human mode during each step (selects the discount matrix). The yaw
    reference is unwrapped to the branch nearest the current yaw.
    """
    geometry = geometry or RobotGeometry()
    pose = np.asarray(pose, dtype=float)
    ref = np.array(reference, dtype=float).reshape(-1, 3)
    ref[:, 2] = pose[2] + np.unwrap(np.concatenate([[0.0], wrap_angle(ref[:, 2] - pose[2])]))[1:]
    M = len(ref)
    u0 = np.zeros(3 * M) if warm_start is None else np.asarray(warm_start, dtype=float).ravel()
    # candidate obstacles within reach of the horizon
    reach = max(abs(config.vx_bounds[0]), config.vx_bounds[1], config.vy_max) * config.robot_dt * M
    radius = reach + max(np.abs(geometry.cover_offsets)) + config.d_s + geometry.r_d + obstacles.max_radius
    idx = obstacles.near(pose[None, :2], radius) if len(obstacles) else np.zeros(0, dtype=int)
    prob = VelocityProblem(pose, ref, modes, config, geometry, *obstacles.subset(idx)) if len(idx) \
        else VelocityProblem(pose, ref, modes, config, geometry)
    lo, hi = prob.bounds()
    opts = options or nlp.NlpOptions(max_outer=15, max_inner=100, inner_ftol=1e-12, penalty0=1e3)
    res = nlp.minimize(nlp.NlpProblem(prob.objective, np.clip(u0, lo, hi), prob.constraints, lo, hi), opts)
    u = np.clip(res.x, lo, hi).reshape(M, 3)
    # pull rows that overshoot the speed circle back onto it; the box contains the origin
    speed = np.hypot(u[:, 0], u[:, 1])
    over = speed > config.speed_max
    u[over, :2] *= (config.speed_max / speed[over])[:, None]
    violation = nlp.max_violation(prob.constraints(u.ravel())[0])
    if violation > opts.tol_feas:
        zero = np.zeros((M, 3))
        return VelocityPlan(zero, prob.rollout(zero.ravel()), prob.objective(zero.ravel())[0],
                            float(violation), False, degraded=True)
    return VelocityPlan(u, prob.rollout(u.ravel()), float(prob.objective(u.ravel())[0]), float(violation),
                        bool(res.converged))


def write_commands_csv(rows, path) -> None:
    """``rows`` of (t, vx, vy, omega)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "vx", "vy", "omega"])
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
