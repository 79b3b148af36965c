"""Stage-1 MPC: traction force, rope length and yaw over an N-step horizon.

Decision vector layout (each block has N entries)::

    [ force magnitude | force angle | rope length | robot yaw ]

Magnitude bounds are plain box bounds; the force direction is the unit vector
of the angle block, so it is always defined.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import nlp
from .human import HumanParams, STANDING, mode_rollout
from .world import ObstacleSet, RobotGeometry, SystemState, wrap_angle


class InfeasibleStateError(RuntimeError):
    pass


def _mat(v, n):
    a = np.asarray(v, dtype=float)
    return np.diag(a) if a.ndim == 1 else a.reshape(n, n)


@dataclass(frozen=True)
class PlannerConfig:
    N: int = 10
    M: int = 10
    T: float = 0.4
    Q_t: tuple = (50.0, 50.0)
    Q_h: tuple = (10.0, 10.0)
    Q_F: tuple = (0.05, 0.05)
    w_l: float = 0.01
    w_dtheta: float = 5.0
    Q_d: tuple = (20.0, 20.0, 5.0)
    R_d: tuple = (1.0, 1.0, 0.5)
    F_min: float = 2.0
    F_max: float = 25.0
    l_min: float = 0.8
    l_max: float = 2.0
    phi_F: float = math.radians(20.0)
    phi_theta: float = math.radians(45.0)
    d_s: float = 0.1
    K: float = 50.0
    D_pulled: tuple = (0.9, 0.9, 0.95)
    vx_bounds: tuple = (-0.5, 0.8)
    vy_max: float = 0.25
    omega_max: float = 1.0
    speed_max: float = 0.8
    robot_dt: float = 0.1
    mode_iterations: int = 3
    obstacle_margin: float = 0.3
    F_nominal: float = 12.0

    def __post_init__(self):
        for name in ("Q_t", "Q_h", "Q_F"):
            m = _mat(getattr(self, name), 2)
            if np.any(np.linalg.eigvalsh((m + m.T) / 2) <= 0):
                raise ValueError(f"{name} must be positive definite")
        for name in ("Q_d", "R_d"):
            m = _mat(getattr(self, name), 3)
            if np.any(np.linalg.eigvalsh((m + m.T) / 2) <= 0):
                raise ValueError(f"{name} must be positive definite")
        if not (0 < self.F_min <= self.F_max):
            raise ValueError("need 0 < F_min <= F_max")
        if not (0 < self.l_min <= self.l_max):
            raise ValueError("need 0 < l_min <= l_max")
        if not (0 < self.phi_F < math.pi and 0 < self.phi_theta < math.pi):
            raise ValueError("angle bounds must lie in (0, pi)")

    @property
    def l_nominal(self) -> float:
        return 0.5 * (self.l_min + self.l_max)


@dataclass
class HumanPlanSolution:
    magnitudes: np.ndarray
    angles: np.ndarray
    lengths: np.ndarray
    yaws: np.ndarray
    modes: np.ndarray             # q_0 .. q_{N-1}
    human: np.ndarray             # (N+1, 2) predicted human positions
    robot: np.ndarray             # (N+1, 2); row 0 is the current robot position
    objective: float
    violation: float
    converged: bool
    modes_consistent: bool
    hold: bool = False
    iterations: int = 0
    degraded: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def forces(self) -> np.ndarray:
        return self.magnitudes[:, None] * np.column_stack([np.cos(self.angles), np.sin(self.angles)])

    @property
    def decision(self) -> np.ndarray:
        return np.concatenate([self.magnitudes, self.angles, self.lengths, self.yaws])


@dataclass
class PlanContext:
    """Everything the stage-1 problem depends on besides the decision vector."""

    human0: np.ndarray
    robot0: np.ndarray
    yaw0: float
    reference: np.ndarray         # (N, 2): reference for k = 0..N-1
    target: np.ndarray
    force_prev: np.ndarray        # force vector anchoring the smoothness term
    length_prev: float
    magnitude_prev: float         # measured force magnitude anchoring the rope term
    params: HumanParams
    geometry: RobotGeometry
    config: PlannerConfig


class HumanPlanProblem:
    """Objective, constraints and their gradients for a frozen mode sequence."""

    def __init__(self, ctx: PlanContext, modes, obstacle_centers=None, obstacle_radii=None, pairs=None):
        """``pairs`` rows are (step k, body, obstacle) with body 0 the human and
        1, 2 the cover circles; by default every body meets every obstacle."""
        self.ctx = ctx
        cfg = ctx.config
        self.N = cfg.N
        self.q = np.asarray(modes, dtype=float)
        self.Qt = _mat(cfg.Q_t, 2)
        self.Qh = _mat(cfg.Q_h, 2)
        self.QF = _mat(cfg.Q_F, 2)
        self.oc = np.zeros((0, 2)) if obstacle_centers is None else np.asarray(obstacle_centers, dtype=float)
        self.orad = np.zeros(0) if obstacle_radii is None else np.asarray(obstacle_radii, dtype=float)
        self.offsets = np.asarray(ctx.geometry.cover_offsets, dtype=float)
        if pairs is None:
            kk, bb, oo = np.meshgrid(np.arange(self.N), np.arange(3), np.arange(len(self.oc)), indexing="ij")
            pairs = np.column_stack([kk.ravel(), bb.ravel(), oo.ravel()])
        self.pairs = np.asarray(pairs, dtype=int).reshape(-1, 3)
        geo = ctx.geometry
        body_r = np.array([geo.r_h, geo.r_d, geo.r_d])
        self.required = cfg.d_s + body_r[self.pairs[:, 1]] + self.orad[self.pairs[:, 2]]

    # -- decision vector helpers --------------------------------------------
    def split(self, z):
        N = self.N
        return z[:N], z[N:2 * N], z[2 * N:3 * N], z[3 * N:]

    def bounds(self):
        cfg = self.ctx.config
        N = self.N
        lo = np.concatenate([np.full(N, cfg.F_min), np.full(N, -np.inf), np.full(N, cfg.l_min), np.full(N, -np.inf)])
        hi = np.concatenate([np.full(N, cfg.F_max), np.full(N, np.inf), np.full(N, cfg.l_max), np.full(N, np.inf)])
        return lo, hi

    def rollout(self, z):
        ctx = self.ctx
        p = ctx.params
        m, psi, l, th = self.split(z)
        e = np.column_stack([np.cos(psi), np.sin(psi)])
        c = np.column_stack([np.cos(th), np.sin(th)])
        lin = p.alpha * m + p.beta
        v = np.maximum(lin, 0.0)
        s = self.q * v * p.T
        xh = np.empty((self.N + 1, 2))
        xh[0] = ctx.human0
        xh[1:] = ctx.human0 + np.cumsum(s[:, None] * e, axis=0)
        xd = xh[1:] + l[:, None] * e + ctx.geometry.d_cf * c
        circles = xd[:, None, :] + self.offsets[None, :, None] * c[:, None, :]
        return dict(m=m, psi=psi, l=l, th=th, e=e, c=c, s=s,
                    ds=self.q * p.alpha * (lin > 0) * p.T, xh=xh, xd=xd, circles=circles)

    @staticmethod
    def body_points(r) -> np.ndarray:
        """(N, 3, 2): human, then both cover circles, for steps 1..N."""
        return np.concatenate([r["xh"][1:, None, :], r["circles"]], axis=1)

    def _backprop(self, r, gxh, gxd, gc):
        """Map gradients w.r.t. predicted positions to the decision vector."""
        N = self.N
        e, c = r["e"], r["c"]
        ep = np.column_stack([-e[:, 1], e[:, 0]])
        cp = np.column_stack([-c[:, 1], c[:, 0]])
        g_m = np.zeros(N)
        g_psi = np.zeros(N)
        g_l = np.zeros(N)
        g_th = np.zeros(N)
        # cover circles sit on the body axis
        g_th += np.einsum("kid,i,kd->k", gc, self.offsets, cp)
        gd = gxd + gc.sum(axis=1)
        g_l += np.einsum("kd,kd->k", gd, e)
        g_psi += r["l"] * np.einsum("kd,kd->k", gd, ep)
        g_th += self.ctx.geometry.d_cf * np.einsum("kd,kd->k", gd, cp)
        gh = gxh[1:] + gd
        # suffix sums: displacement j moves every later human position
        S = np.cumsum(gh[::-1], axis=0)[::-1]
        g_m += r["ds"] * np.einsum("kd,kd->k", S, e)
        g_psi += r["s"] * np.einsum("kd,kd->k", S, ep)
        return g_m, g_psi, g_l, g_th

    # -- objective ------------------------------------------------------------
    def cost_terms(self, z, r=None):
        ctx = self.ctx
        cfg = ctx.config
        r = r or self.rollout(z)
        m, th, l = r["m"], r["th"], r["l"]
        xh = r["xh"]
        dT = xh[-1] - ctx.target
        terminal = float(dT @ self.Qt @ dT)
        dr = xh[:-1] - ctx.reference
        tracking = float(np.einsum("kd,de,ke->", dr, self.Qh, dr))
        F = m[:, None] * r["e"]
        dF = np.diff(np.vstack([ctx.force_prev, F]), axis=0)
        smooth = float(np.einsum("kd,de,ke->", dF, self.QF, dF))
        dth = np.diff(np.concatenate([[ctx.yaw0], th]))
        yaw = float(cfg.w_dtheta * np.sum(1.0 - np.cos(dth)))
        res = cfg.K * np.diff(np.concatenate([[ctx.length_prev], l])) - np.diff(np.concatenate([[ctx.magnitude_prev], m]))
        rope = float(cfg.w_l * np.sum(res ** 2))
        return dict(terminal=terminal, tracking=tracking, smooth=smooth, yaw=yaw, rope=rope)

    def objective(self, z):
        ctx = self.ctx
        cfg = ctx.config
        N = self.N
        r = self.rollout(z)
        m, psi, l, th = r["m"], r["psi"], r["l"], r["th"]
        e = r["e"]
        ep = np.column_stack([-e[:, 1], e[:, 0]])
        xh = r["xh"]

        gxh = np.zeros((N + 1, 2))
        dT = xh[-1] - ctx.target
        gxh[-1] += 2.0 * self.Qt @ dT
        dr = xh[:-1] - ctx.reference
        gxh[:-1] += 2.0 * dr @ self.Qh
        g_m, g_psi, g_l, g_th = self._backprop(r, gxh, np.zeros((N, 2)), np.zeros((N, 2, 2)))

        F = m[:, None] * e
        dF = np.diff(np.vstack([ctx.force_prev, F]), axis=0)
        gdF = 2.0 * dF @ self.QF
        gF = gdF.copy()
        gF[:-1] -= gdF[1:]
        g_m += np.einsum("kd,kd->k", gF, e)
        g_psi += m * np.einsum("kd,kd->k", gF, ep)

        dth = np.diff(np.concatenate([[ctx.yaw0], th]))
        sd = cfg.w_dtheta * np.sin(dth)
        g_th += sd
        g_th[:-1] -= sd[1:]

        res = cfg.K * np.diff(np.concatenate([[ctx.length_prev], l])) - np.diff(np.concatenate([[ctx.magnitude_prev], m]))
        gr = 2.0 * cfg.w_l * res
        g_l += cfg.K * gr
        g_l[:-1] -= cfg.K * gr[1:]
        g_m -= gr
        g_m[:-1] += gr[1:]

        terms = self.cost_terms(z, r)
        return sum(terms.values()), np.concatenate([g_m, g_psi, g_l, g_th])

    # -- constraints ----------------------------------------------------------
    def constraint_values(self, z, r=None):
        """Named constraint blocks, each <= 0 when satisfied."""
        ctx = self.ctx
        cfg = ctx.config
        geo = ctx.geometry
        r = r or self.rollout(z)
        psi, th = r["psi"], r["th"]
        out = {
            "direction_change": math.cos(cfg.phi_F) - np.cos(np.diff(psi)),
            "force_yaw": math.cos(cfg.phi_theta) - np.cos(psi - th),
        }
        if len(self.pairs):
            d = self.body_points(r)[self.pairs[:, 0], self.pairs[:, 1]] - self.oc[self.pairs[:, 2]]
            out["clearance"] = self.required - np.hypot(d[:, 0], d[:, 1])
        return out

    def constraints(self, z):
        N = self.N
        r = self.rollout(z)
        blocks = self.constraint_values(z, r)
        psi, th = r["psi"], r["th"]
        g = np.concatenate([b.ravel() for b in blocks.values()])
        n_dir, n_yaw = N - 1, N
        pk, pb, po = self.pairs.T
        if len(pk):
            d = self.body_points(r)[pk, pb] - self.oc[po]
            unitv = d / np.maximum(np.hypot(d[:, 0], d[:, 1]), 1e-12)[:, None]
        sin_dir = np.sin(np.diff(psi))
        sin_yaw = np.sin(psi - th)

        def vjp(w):
            w_dir = w[:n_dir]
            w_yaw = w[n_dir:n_dir + n_yaw]
            g_psi = np.zeros(N)
            g_th = np.zeros(N)
            g_psi[1:] += w_dir * sin_dir
            g_psi[:-1] -= w_dir * sin_dir
            g_psi += w_yaw * sin_yaw
            g_th -= w_yaw * sin_yaw
            gP = np.zeros((N, 3, 2))
            if len(pk):
                np.add.at(gP, (pk, pb), -w[n_dir + n_yaw:, None] * unitv)
            gxh = np.zeros((N + 1, 2))
            gxh[1:] = gP[:, 0]
            g_m, gp, g_l, gt = self._backprop(r, gxh, np.zeros((N, 2)), gP[:, 1:])
            return np.concatenate([g_m, g_psi + gp, g_l, g_th + gt])

        return g, vjp


def fix_mode_sequence(q_curr: int, magnitudes, params: HumanParams) -> np.ndarray:
    """Roll the transition rule over the candidate force magnitudes."""
    return np.asarray(mode_rollout(q_curr, np.asarray(magnitudes, dtype=float), params), dtype=int)


def reference_along(path: np.ndarray, position, n: int, spacing: float, target=None) -> np.ndarray:
    """``n`` points spaced ``spacing`` apart along ``path`` starting at the projection of ``position``."""
    pts = np.asarray(path, dtype=float)
    if len(pts) == 1:
        return np.repeat(pts, n, axis=0)
    seg = np.diff(pts, axis=0)
    seglen = np.hypot(seg[:, 0], seg[:, 1])
    s_cum = np.concatenate([[0.0], np.cumsum(seglen)])
    p = np.asarray(position, dtype=float)
    best_s, best_d = 0.0, math.inf
    for i in range(len(seg)):
        if seglen[i] == 0:
            continue
        t = np.clip(np.dot(p - pts[i], seg[i]) / seglen[i] ** 2, 0.0, 1.0)
        d = np.hypot(*(pts[i] + t * seg[i] - p))
        if d < best_d:
            best_d, best_s = d, s_cum[i] + t * seglen[i]
    s = np.minimum(best_s + spacing * np.arange(n), s_cum[-1])
    out = np.column_stack([np.interp(s, s_cum, pts[:, 0]), np.interp(s, s_cum, pts[:, 1])])
    if target is not None:
        out[s >= s_cum[-1]] = np.asarray(target, dtype=float)
    return out


def _rope_direction(ctx: PlanContext) -> float:
    fx = ctx.robot0 - ctx.geometry.d_cf * np.array([math.cos(ctx.yaw0), math.sin(ctx.yaw0)])
    d = fx - ctx.human0
    return math.atan2(d[1], d[0])


def cold_start(ctx: PlanContext) -> np.ndarray:
    cfg = ctx.config
    N = cfg.N
    psi = _rope_direction(ctx)
    l0 = float(np.clip(ctx.length_prev, cfg.l_min, cfg.l_max))
    m0 = float(np.clip(ctx.magnitude_prev, cfg.F_min, cfg.F_max))
    return np.concatenate([np.full(N, m0), np.full(N, psi), np.full(N, l0), np.full(N, ctx.yaw0)])


def shift_decision(z: np.ndarray, N: int, steps: int) -> np.ndarray:
    blocks = [z[i * N:(i + 1) * N] for i in range(4)]
    out = []
    for b in blocks:
        if steps <= 0:
            out.append(b.copy())
        else:
            out.append(np.concatenate([b[steps:], np.repeat(b[-1:], min(steps, N))])[:N])
    return np.concatenate(out)


def _unwrap_like(z: np.ndarray, N: int, psi_ref: float, yaw_ref: float) -> np.ndarray:
    """Shift the angle blocks by whole turns so they start near the given references."""
    z = z.copy()
    z[N:2 * N] += 2 * math.pi * round((psi_ref - z[N]) / (2 * math.pi))
    z[3 * N:] += 2 * math.pi * round((yaw_ref - z[3 * N]) / (2 * math.pi))
    return z


def plan_forces(state: SystemState, q_curr: int, reference, target, obstacles: ObstacleSet,
                config: PlannerConfig, params: HumanParams, geometry: RobotGeometry | None = None,
                warm_start: np.ndarray | None = None, force_prev=None, magnitude_prev: float | None = None,
                length_prev: float | None = None, options: nlp.NlpOptions | None = None) -> HumanPlanSolution:
    """Solve the force-planning problem from ``state``.

    ``reference`` needs N+1 points (k = 0..N); shorter inputs are padded with
    ``target``. ``force_prev`` anchors the force-smoothness term (defaults to
    zero). ``magnitude_prev`` and ``length_prev`` anchor the rope-consistency
    term; they default to the norm of ``force_prev`` and the current distance
    between the human and the attachment point.
    """
    geometry = geometry or RobotGeometry()
    cfg = config
    N = cfg.N
    human0 = np.asarray(state.human, dtype=float)
    robot0 = np.asarray(state.robot, dtype=float)
    centers0 = geometry.cover_centers(robot0, state.yaw)
    if len(obstacles):
        if obstacles.clearance(human0)[0] < 0 or np.any(obstacles.clearance(centers0) < 0):
            raise InfeasibleStateError("current human or robot pose is in collision")

    ref = np.asarray(reference, dtype=float).reshape(-1, 2)
    tgt = np.asarray(target, dtype=float)
    if len(ref) < N + 1:
        ref = np.vstack([ref, np.repeat(tgt[None], N + 1 - len(ref), axis=0)])
    fprev = np.zeros(2) if force_prev is None else np.asarray(force_prev, dtype=float)
    mprev = float(np.hypot(*fprev)) if magnitude_prev is None else float(magnitude_prev)
    fixed = robot0 - geometry.d_cf * np.array([math.cos(state.yaw), math.sin(state.yaw)])
    lprev = float(np.hypot(*(fixed - human0))) if length_prev is None else float(length_prev)
    ctx = PlanContext(human0, robot0, state.yaw, ref[:N], tgt, fprev, lprev, mprev, params, geometry, cfg)

    z0 = cold_start(ctx) if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    z0 = _unwrap_like(z0, N, _rope_direction(ctx), state.yaw)
    opts = options or nlp.NlpOptions(max_outer=12, max_inner=150, inner_ftol=1e-12)
    probe_radius = cfg.d_s + max(geometry.r_h, geometry.r_d) + obstacles.max_radius + cfg.obstacle_margin

    seeds = [z0]
    z_go = z0.copy()
    z_go[:N] = np.maximum(z_go[:N], min(cfg.F_nominal, cfg.F_max))
    # a walking seed lets the smooth solve consider starting or continuing to walk
    if not np.array_equal(fix_mode_sequence(q_curr, z_go[:N], params), fix_mode_sequence(q_curr, z0[:N], params)):
        seeds.append(z_go)

    best = None
    total_iters = 0
    for seed in seeds:
        prob, res, z, consistent, iters = _solve_seeded(ctx, q_curr, seed, obstacles, probe_radius, opts)
        total_iters += iters
        cand = _package(prob, z, res, consistent, iters)
        cand.violation = max(cand.violation, audit(cand, ctx, obstacles))
        cand.converged = bool(res.converged)
        key = (cand.violation > opts.tol_feas, cand.violation if cand.violation > opts.tol_feas else cand.objective)
        if best is None or key < best[0]:
            best = (key, cand)
    out = best[1]
    out.iterations = total_iters
    out.degraded = not out.converged or out.violation > opts.tol_feas
    if out.violation > opts.tol_feas and q_curr == STANDING:
        hold = hold_plan(ctx)
        hold_viol = audit(hold, ctx, obstacles)
        if hold_viol <= opts.tol_feas:
            hold.violation = hold_viol
            hold.iterations = total_iters
            return hold
    return out


def _solve_seeded(ctx: PlanContext, q_curr: int, z, obstacles: ObstacleSet, probe_radius: float,
                  opts: nlp.NlpOptions):
    """Alternate mode freezing and smooth solves from one initial guess."""
    cfg = ctx.config
    N = cfg.N
    q = fix_mode_sequence(q_curr, z[:N], ctx.params)
    pairs: set = set()
    consistent = False
    iters = 0
    for _ in range(max(1, cfg.mode_iterations)):
        probe = HumanPlanProblem(ctx, q)
        pairs |= _near_pairs(probe, z, obstacles, probe_radius)
        for _screen in range(3):
            prob = _problem_with_pairs(ctx, q, obstacles, pairs)
            lo, hi = prob.bounds()
            res = nlp.minimize(nlp.NlpProblem(prob.objective, z, prob.constraints, lo, hi), opts)
            iters += res.iterations
            z = res.x
            # re-solve only if the solution hits obstacles outside the pair set
            extra = _violated_pairs(prob, z, obstacles, opts.tol_feas) - pairs
            if not extra:
                break
            pairs |= extra
        q_new = fix_mode_sequence(q_curr, z[:N], ctx.params)
        if np.array_equal(q_new, q):
            consistent = True
            break
        q = q_new
    return prob, res, z, consistent, iters


def _near_pairs(prob: HumanPlanProblem, z, obstacles: ObstacleSet, radius: float) -> set:
    pts = prob.body_points(prob.rollout(z)).reshape(-1, 2)
    out = set()
    for flat, idx in enumerate(obstacles.near_each(pts, radius)):
        k, b = divmod(flat, 3)
        out.update((k, b, int(o)) for o in idx)
    return out


def _violated_pairs(prob: HumanPlanProblem, z, obstacles: ObstacleSet, tol: float) -> set:
    """Pairs whose clearance constraint is violated at ``z`` by more than ``tol``."""
    cfg = prob.ctx.config
    geo = prob.ctx.geometry
    pts = prob.body_points(prob.rollout(z)).reshape(-1, 2)
    reach = cfg.d_s + max(geo.r_h, geo.r_d) + obstacles.max_radius
    body_r = np.array([geo.r_h, geo.r_d, geo.r_d])
    out = set()
    for flat, idx in enumerate(obstacles.near_each(pts, reach)):
        if not len(idx):
            continue
        k, b = divmod(flat, 3)
        d = np.hypot(*(pts[flat] - obstacles.centers[idx]).T)
        bad = idx[cfg.d_s + body_r[b] + obstacles.radii[idx] - d > tol]
        out.update((k, b, int(o)) for o in bad)
    return out


def _problem_with_pairs(ctx: PlanContext, q, obstacles: ObstacleSet, pairs: set) -> HumanPlanProblem:
    if not pairs:
        return HumanPlanProblem(ctx, q)
    arr = np.array(sorted(pairs), dtype=int)
    used, local = np.unique(arr[:, 2], return_inverse=True)
    centers, radii = obstacles.subset(used)
    return HumanPlanProblem(ctx, q, centers, radii, np.column_stack([arr[:, :2], local]))


def _package(prob: HumanPlanProblem, z, res, consistent: bool, iters: int) -> HumanPlanSolution:
    r = prob.rollout(z)
    ctx = prob.ctx
    terms = prob.cost_terms(z, r)
    return HumanPlanSolution(
        magnitudes=r["m"].copy(), angles=r["psi"].copy(), lengths=r["l"].copy(), yaws=r["th"].copy(),
        modes=prob.q.astype(int).copy(), human=r["xh"].copy(),
        robot=np.vstack([ctx.robot0, r["xd"]]), objective=float(sum(terms.values())),
        violation=float(res.violation), converged=bool(res.converged), modes_consistent=consistent,
        iterations=iters, diagnostics={"terms": terms, "n_pairs": len(prob.pairs)})


def hold_plan(ctx: PlanContext) -> HumanPlanSolution:
    """Keep the current geometry with a force below the walking threshold."""
    cfg = ctx.config
    N = cfg.N
    psi = _rope_direction(ctx)
    l0 = float(np.clip(ctx.length_prev, cfg.l_min, cfg.l_max))
    f = min(cfg.F_min, 0.5 * ctx.params.f_th)
    f = max(f, cfg.F_min)
    z = np.concatenate([np.full(N, f), np.full(N, psi), np.full(N, l0), np.full(N, ctx.yaw0)])
    q = np.zeros(N, dtype=int)
    prob = HumanPlanProblem(ctx, q)
    r = prob.rollout(z)
    terms = prob.cost_terms(z, r)
    return HumanPlanSolution(
        magnitudes=r["m"].copy(), angles=r["psi"].copy(), lengths=r["l"].copy(), yaws=r["th"].copy(),
        modes=q, human=r["xh"].copy(), robot=np.vstack([ctx.robot0, r["xd"]]),
        objective=float(sum(terms.values())), violation=0.0, converged=True, modes_consistent=True,
        hold=True, diagnostics={"terms": terms})


def audit(sol: HumanPlanSolution, ctx: PlanContext, obstacles: ObstacleSet) -> float:
    """Largest violation of the bound, direction and clearance constraints, recomputed from scratch."""
    cfg = ctx.config
    geo = ctx.geometry
    m, psi, l, th = sol.magnitudes, sol.angles, sol.lengths, sol.yaws
    viol = [
        np.max(cfg.F_min - m), np.max(m - cfg.F_max),
        np.max(cfg.l_min - l), np.max(l - cfg.l_max),
        np.max(math.cos(cfg.phi_F) - np.cos(np.diff(psi)), initial=-np.inf),
        np.max(math.cos(cfg.phi_theta) - np.cos(psi - th)),
    ]
    if len(obstacles):
        viol.append(np.max(cfg.d_s + geo.r_h - obstacles.clearance(sol.human[1:])))
        c = np.column_stack([np.cos(th), np.sin(th)])
        for o in geo.cover_offsets:
            viol.append(np.max(cfg.d_s + geo.r_d - obstacles.clearance(sol.robot[1:] + o * c)))
    return float(max(0.0, *viol))


def write_plan_csv(sol: HumanPlanSolution, path) -> None:
    F = sol.forces
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "Fx", "Fy", "l", "theta", "q", "xh", "yh", "xd", "yd"])
        for k in range(len(sol.magnitudes)):
            w.writerow([k, repr(F[k, 0]), repr(F[k, 1]), repr(sol.lengths[k]), repr(sol.yaws[k]),
                        int(sol.modes[k]), repr(sol.human[k + 1, 0]), repr(sol.human[k + 1, 1]),
                        repr(sol.robot[k + 1, 0]), repr(sol.robot[k + 1, 1])])
