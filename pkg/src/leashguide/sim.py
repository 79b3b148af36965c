"""Closed-loop multi-rate simulation of guided walking.

All subsystems run on integer multiples of the plant tick, so a run is a
deterministic function of its configuration and seed.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import estimator as est
from . import pathplan, scenarios
from .human import (ForceCommand, HumanParams, STANDING, WALKING, fit_params, mode_rollout,
                    mode_transition, synthetic_fv, walking_speed)
from .human_planner import (InfeasibleStateError, PlannerConfig, plan_forces, reference_along,
                            shift_decision)
from .metrics import ComfortMetrics, comfort_metrics
from .robot_planner import discount_matrix, plan_velocity, reconstruct_reference
from .traction import (ELASTIC_FCD, INELASTIC, MODES, MotorState, RopeState, device_step, rope_force)
from .world import GridMap, ObstacleSet, RobotGeometry, SystemState, read_map, wrap_angle

REACHED = "reached"
TIMEOUT = "timeout"
COLLISION = "collision"
PLANNER_FAILURE = "planner_failure"

LOG_COLUMNS = ("t", "xh", "yh", "xd", "yd", "theta", "q", "Fx", "Fy", "F", "F_ref", "l", "payout",
               "vx", "vy", "omega", "est_xh", "est_yh", "est_xd", "est_yd", "est_theta", "cov_trace", "event")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Rates:
    plant: float = 200.0
    device: float = 100.0
    robot: float = 10.0
    estimator: float = 20.0
    human_planner: float = 2.0
    log: float = 20.0

    def ticks(self, name: str) -> int:
        ratio = self.plant / getattr(self, name)
        n = int(round(ratio))
        if n < 1 or abs(ratio - n) > 1e-9:
            raise ConfigError(f"rate {name} must divide the plant rate")
        return n


@dataclass(frozen=True)
class SimNoise:
    sigma_dir_deg: float = 2.0      # walking-direction jitter, resampled every step interval
    force_sigma: float = 0.2        # force sensor noise, N
    sigma_l: float = 0.05
    sigma_phi_deg: float = 2.0
    sigma_sxy: float = 0.03
    sigma_stheta_deg: float = 1.0
    init_sigma_human: float = 0.3
    init_sigma_robot: float = 0.05
    init_sigma_theta_deg: float = 3.0
    calib_sigma_v: float = 0.02


@dataclass(frozen=True)
class ScenarioConfig:
    map: str = "builtin:corridor"
    human_start: tuple = scenarios.CORRIDOR_HUMAN_START
    robot_start: tuple = scenarios.CORRIDOR_ROBOT_START
    robot_yaw: float | None = None           # None: face away from the human
    target: tuple = scenarios.CORRIDOR_TARGET
    mode: str = ELASTIC_FCD
    seed: int = 0
    duration_s: float = 180.0
    human_params: HumanParams = HumanParams()
    estimated_params: HumanParams | None = None   # None: calibrate before guiding
    rope: RopeState = RopeState(payout=0.4)
    motor: MotorState = MotorState()
    planner: PlannerConfig = PlannerConfig()
    path: pathplan.PathConfig = pathplan.PathConfig()
    noise: SimNoise = SimNoise()
    rates: Rates = Rates()
    goal_tolerance: float = 0.3
    replan_distance: float = 1.0
    failure_hold_s: float = 1.0
    base_dir: str = "."

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.duration_s < 0:
            raise ConfigError("duration_s must be non-negative")
        if self.rope.mode != self.mode:
            object.__setattr__(self, "rope", replace(self.rope, mode=self.mode))

    @property
    def yaw0(self) -> float:
        if self.robot_yaw is not None:
            return float(self.robot_yaw)
        d = np.subtract(self.robot_start, self.human_start)
        return math.atan2(d[1], d[0])

    def load_grid(self) -> GridMap:
        if self.map.startswith("builtin:"):
            name = self.map.split(":", 1)[1]
            builders = {"corridor": scenarios.corridor_map, "open_room": scenarios.open_room,
                        "straight": scenarios.straight_corridor}
            if name not in builders:
                raise ConfigError(f"unknown builtin map {name!r}")
            return builders[name]()
        p = Path(self.map)
        if not p.is_absolute():
            p = Path(self.base_dir) / p
        if not p.exists():
            raise ConfigError(f"map file not found: {p}")
        return read_map(p)


# -- JSON configuration -------------------------------------------------------

_HUMAN_KEYS = {"alpha": "alpha", "beta": "beta", "f_th": "f_th", "delta_f": "delta_f", "t": "T"}
_ROPE_KEYS = {"k": "K", "l0": "L0", "payout_max": "payout_max", "payout0": "payout", "k_rigid": "k_rigid"}


def _human_from(d: dict, where: str) -> HumanParams:
    unknown = set(d) - set(_HUMAN_KEYS)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return HumanParams(**{_HUMAN_KEYS[k]: float(v) for k, v in d.items()})


def _fields_from(cls, d: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    out = {}
    for k, v in d.items():
        out[k] = tuple(v) if isinstance(v, list) else v
    return cls(**out)


def config_from_dict(data: dict, base_dir: str = ".") -> ScenarioConfig:
    """Build a scenario from the JSON document layout."""
    d = dict(data)
    known = {"map", "human_start", "robot_start", "robot_yaw", "target", "mode", "seed", "duration_s",
             "human_params", "estimated_params", "rope", "pid", "planner", "path", "noise", "rates",
             "goal_tolerance", "replan_distance", "failure_hold_s"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        kw = {"base_dir": base_dir}
        for k in ("map", "mode"):
            if k in d:
                kw[k] = str(d[k])
        for k in ("human_start", "robot_start", "target"):
            if k in d:
                v = tuple(float(x) for x in d[k])
                if len(v) != 2:
                    raise ConfigError(f"{k} needs two coordinates")
                kw[k] = v
        for k in ("robot_yaw", "duration_s", "goal_tolerance", "replan_distance", "failure_hold_s"):
            if k in d and d[k] is not None:
                kw[k] = float(d[k])
        if "seed" in d:
            kw["seed"] = int(d["seed"])
        if "human_params" in d:
            kw["human_params"] = _human_from(d["human_params"], "human_params")
        if d.get("estimated_params") is not None:
            kw["estimated_params"] = _human_from(d["estimated_params"], "estimated_params")
        rope = dict(d.get("rope", {}))
        rate_max = rope.pop("rate_max", None)
        unknown = set(rope) - set(_ROPE_KEYS)
        if unknown:
            raise ConfigError(f"unknown keys in rope: {sorted(unknown)}")
        rope_kw = {_ROPE_KEYS[k]: float(v) for k, v in rope.items()}
        kw["rope"] = RopeState(mode=kw.get("mode", ELASTIC_FCD), **rope_kw)
        motor_kw = {k: float(v) for k, v in d.get("pid", {}).items()}
        if set(motor_kw) - {"kp", "ki", "kd"}:
            raise ConfigError(f"unknown keys in pid: {sorted(set(motor_kw) - {'kp', 'ki', 'kd'})}")
        if rate_max is not None:
            motor_kw["max_rate"] = float(rate_max)
        kw["motor"] = MotorState(**motor_kw)
        planner = dict(d.get("planner", {}))
        for k in ("phi_F", "phi_theta"):
            if k + "_deg" in planner:
                planner[k] = math.radians(float(planner.pop(k + "_deg")))
        kw["planner"] = _fields_from(PlannerConfig, planner, "planner")
        kw["path"] = _fields_from(pathplan.PathConfig, d.get("path", {}), "path")
        kw["noise"] = _fields_from(SimNoise, d.get("noise", {}), "noise")
        kw["rates"] = _fields_from(Rates, d.get("rates", {}), "rates")
        return ScenarioConfig(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(cfg: ScenarioConfig) -> dict:
    hp = cfg.human_params
    out = {
        "map": cfg.map, "human_start": list(cfg.human_start), "robot_start": list(cfg.robot_start),
        "robot_yaw": cfg.robot_yaw, "target": list(cfg.target), "mode": cfg.mode, "seed": cfg.seed,
        "duration_s": cfg.duration_s,
        "human_params": {"alpha": hp.alpha, "beta": hp.beta, "f_th": hp.f_th, "delta_f": hp.delta_f, "t": hp.T},
        "rope": {"k": cfg.rope.K, "l0": cfg.rope.L0, "payout_max": cfg.rope.payout_max,
                 "payout0": cfg.rope.payout, "k_rigid": cfg.rope.k_rigid, "rate_max": cfg.motor.max_rate},
        "pid": {"kp": cfg.motor.kp, "ki": cfg.motor.ki, "kd": cfg.motor.kd},
        "planner": {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(cfg.planner).items()},
        "path": {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(cfg.path).items()},
        "noise": dataclasses.asdict(cfg.noise),
        "rates": dataclasses.asdict(cfg.rates),
        "goal_tolerance": cfg.goal_tolerance, "replan_distance": cfg.replan_distance,
        "failure_hold_s": cfg.failure_hold_s,
    }
    if cfg.estimated_params is not None:
        e = cfg.estimated_params
        out["estimated_params"] = {"alpha": e.alpha, "beta": e.beta, "f_th": e.f_th, "delta_f": e.delta_f, "t": e.T}
    return out


def apply_override(data: dict, assignment: str) -> dict:
    """Apply ``a.b.c=value``; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out = copy.deepcopy(data)
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override path {key!r} crosses a non-object")
    node[parts[-1]] = value
    return out


def load_config(path, overrides=()) -> ScenarioConfig:
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {p}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    for o in overrides:
        data = apply_override(data, o)
    return config_from_dict(data, str(p.parent))


# -- plants -------------------------------------------------------------------

def human_plant_step(position, force, q: int, params: HumanParams, dt: float, heading_offset: float = 0.0,
                     last_direction=None, f_cap: float = math.inf):
    """Advance the human by ``dt``; returns (position, walking direction).

    A walking human moves along the rope at the fitted speed, plus a lateral
    component ``heading_offset`` times that speed (zero-mean jitter leaves the
    mean displacement unchanged). With a slack rope the previous direction is kept.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    p = np.asarray(position, dtype=float)
    f = ForceCommand(tuple(np.asarray(force, dtype=float)))
    direction = f.direction if f.magnitude > 0 else (
        np.zeros(2) if last_direction is None else np.asarray(last_direction, dtype=float))
    if q != WALKING or not np.any(direction):
        return p.copy(), direction
    d = direction + heading_offset * np.array([-direction[1], direction[0]])
    v = walking_speed(min(f.magnitude, f_cap), params)
    return p + v * d * dt, direction


def robot_plant_step(pose, u, q: int, D, dt: float) -> np.ndarray:
    """Integrate a body-frame velocity command; ``D`` is applied only while the human walks."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x, y, th = np.asarray(pose, dtype=float)
    D = np.asarray(D, dtype=float)
    d = (np.diag(D) if D.ndim == 2 else D) if q == WALKING else np.ones(3)
    vx, vy, w = np.asarray(u, dtype=float)
    c, s = math.cos(th), math.sin(th)
    return np.array([x + dt * d[0] * (c * vx - s * vy), y + dt * d[1] * (s * vx + c * vy),
                     wrap_angle(th + dt * d[2] * w)])


class HumanPlant:
    """Ground-truth human: continuous motion, mode re-evaluated every step interval."""

    def __init__(self, position, params: HumanParams, dt: float, q: int = STANDING,
                 sigma_dir: float = 0.0, rng: np.random.Generator | None = None,
                 f_cap: float = math.inf, cutoff_hz: float = 2.0, initial_force: float = 0.0):
        self.position = np.asarray(position, dtype=float).copy()
        self.params = params
        self.dt = dt
        self.q = int(q)
        self.sigma_dir = sigma_dir
        self.rng = rng
        self.f_cap = f_cap
        self.alpha_lp = 1.0 - math.exp(-2.0 * math.pi * cutoff_hz * dt)
        self.f_lp = float(initial_force)
        self.f_eval = float(initial_force)
        self.ticks_per_eval = int(round(params.T / dt))
        self.tick = 0
        self.direction = None
        self.offset = self._draw()

    def _draw(self) -> float:
        if self.sigma_dir > 0 and self.rng is not None:
            return float(self.rng.normal(0.0, self.sigma_dir))
        return 0.0

    def step(self, force) -> None:
        self.position, self.direction = human_plant_step(self.position, force, self.q, self.params, self.dt,
                                                         self.offset, self.direction, self.f_cap)
        self.f_lp += self.alpha_lp * (math.hypot(*force) - self.f_lp)
        self.tick += 1
        if self.tick % self.ticks_per_eval == 0:
            self.q = mode_transition(self.q, self.f_eval, self.f_lp, self.params)
            self.f_eval = self.f_lp
            self.offset = self._draw()


# -- calibration --------------------------------------------------------------

def calibrate(true_params: HumanParams, rng: np.random.Generator, n: int = 200, dt: float = 0.05,
              sigma_v: float = 0.02):
    """Fit the speed line from a simulated straight, steadily accelerating pull."""
    data = synthetic_fv(true_params, n, sigma_v, rng)
    fit = fit_params(data, dt=dt)
    params = replace(true_params, alpha=fit.alpha, beta=fit.beta)
    return params, fit


# -- logging ------------------------------------------------------------------

@dataclass
class TrajectoryLog:
    rows: list = field(default_factory=list)
    # planned quantities kept alongside each row (not part of the CSV)
    fref_vec: list = field(default_factory=list)

    def append(self, row: tuple, fref) -> None:
        self.rows.append(row)
        self.fref_vec.append(tuple(fref))

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        i = LOG_COLUMNS.index(name)
        if name == "event":
            return np.array([r[i] for r in self.rows], dtype=object)
        return np.array([r[i] for r in self.rows], dtype=float)

    def to_csv_text(self) -> str:
        lines = [",".join(LOG_COLUMNS)]
        for r in self.rows:
            cells = []
            for name, v in zip(LOG_COLUMNS, r):
                if name == "event":
                    cells.append(str(v))
                elif name == "q":
                    cells.append(str(int(v)))
                else:
                    cells.append(repr(float(v)))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv_text(), encoding="utf-8")


@dataclass
class SimResult:
    status: str
    log: TrajectoryLog
    beliefs: list
    commands: list
    config: ScenarioConfig
    estimated_params: HumanParams
    path: list
    wall_time: float
    min_clearance: float
    planner_stats: dict
    collision: dict | None = None

    @property
    def duration(self) -> float:
        return float(self.log.rows[-1][0]) if self.log.rows else 0.0


# -- path cache ---------------------------------------------------------------

_PATH_CACHE: dict = {}


def plan_human_path(grid: GridMap, start, heading: float, target, geometry: RobotGeometry,
                    config: pathplan.PathConfig) -> list:
    """A* human path, memoised per map, endpoints, geometry and search settings."""
    key = (hashlib.sha256(grid.occupancy.tobytes()).hexdigest(), grid.width, grid.height, grid.resolution,
           tuple(grid.origin), tuple(round(float(v), 9) for v in (start[0], start[1], heading)),
           tuple(round(float(v), 9) for v in target), geometry, config)
    if key not in _PATH_CACHE:
        if len(_PATH_CACHE) > 32:
            _PATH_CACHE.clear()
        node = pathplan.PathNode(float(start[0]), float(start[1]), float(heading))
        _PATH_CACHE[key] = tuple(pathplan.plan_path(grid, node, target, geometry, config))
    return list(_PATH_CACHE[key])


# -- the loop -----------------------------------------------------------------

class _ForceReference:
    """Piecewise-linear force reference through the planned step midpoints."""

    def __init__(self, t0: float, anchor, plan, T: float):
        mags = np.asarray(plan.magnitudes, dtype=float)
        ang = np.asarray(plan.angles, dtype=float)
        a_mag = math.hypot(*anchor)
        a_ang = math.atan2(anchor[1], anchor[0]) if a_mag > 0 else ang[0]
        a_ang = ang[0] - wrap_angle(ang[0] - a_ang)
        self.times = np.concatenate([[t0], t0 + (np.arange(len(mags)) + 0.5) * T])
        self.mags = np.concatenate([[a_mag], mags])
        self.angles = np.unwrap(np.concatenate([[a_ang], ang]))

    def __call__(self, t: float) -> np.ndarray:
        m = float(np.interp(t, self.times, self.mags))
        a = float(np.interp(t, self.times, self.angles))
        return np.array([m * math.cos(a), m * math.sin(a)])


class _ZeroReference:
    def __call__(self, t: float) -> np.ndarray:
        return np.zeros(2)


def run_scenario(config: ScenarioConfig, progress=None) -> SimResult:
    wall0 = time.perf_counter()
    cfg = config
    grid = cfg.load_grid()
    geometry = RobotGeometry()
    obstacles = ObstacleSet.from_map(grid)
    rates = cfg.rates
    dt = 1.0 / rates.plant
    n_dev, n_rob, n_est, n_hp, n_log = (rates.ticks(k) for k in
                                        ("device", "robot", "estimator", "human_planner", "log"))
    streams = np.random.SeedSequence(cfg.seed).spawn(5)
    rng_cal, rng_dir, rng_force, rng_obs, rng_init = (np.random.default_rng(s) for s in streams)

    true_p = cfg.human_params
    if cfg.estimated_params is None:
        est_p, fit = calibrate(true_p, rng_cal, sigma_v=cfg.noise.calib_sigma_v)
        resid = fit.residual_rms
    else:
        est_p, resid = cfg.estimated_params, cfg.noise.calib_sigma_v
    rope = replace(cfg.rope, mode=cfg.mode)
    motor = cfg.motor
    # the planner assumes the elastic rope in every mode; only the hardware differs
    pcfg = replace(cfg.planner, K=rope.K)
    nz = cfg.noise
    noise_cfg = est.NoiseConfig.from_fit(resid, est_p.T, r=(nz.sigma_l ** 2, math.radians(nz.sigma_phi_deg) ** 2,
                                                            nz.sigma_sxy ** 2, nz.sigma_sxy ** 2,
                                                            math.radians(nz.sigma_stheta_deg) ** 2))
    # each estimator step covers one estimator period
    q_scale = (1.0 / rates.estimator) / est_p.T
    noise_cfg = replace(noise_cfg, q=(noise_cfg.q[0] * q_scale, noise_cfg.q[1] * q_scale) + tuple(noise_cfg.q[2:]))
    camera = est.CameraModel()

    human = HumanPlant(cfg.human_start, true_p, dt, STANDING, math.radians(nz.sigma_dir_deg), rng_dir,
                       f_cap=pcfg.F_max)
    pose = np.array([cfg.robot_start[0], cfg.robot_start[1], cfg.yaw0], dtype=float)
    target = np.asarray(cfg.target, dtype=float)

    def true_state():
        return SystemState(tuple(human.position), (pose[0], pose[1]), pose[2])

    def clearance_now():
        st = true_state()
        ch = obstacles.clearance(human.position)[0] - geometry.r_h
        cc = obstacles.clearance(geometry.cover_centers(st.robot, st.yaw)) - geometry.r_d
        return float(min(ch, cc.min()))

    start_clear = clearance_now()
    if start_clear < 0:
        raise ConfigError("start configuration is in collision")

    z0 = est.synthesize_observation(true_state(), geometry, camera, noise_cfg, rng_obs)
    m0 = np.concatenate([est.recover_human(z0, geometry), z0[2:]])
    s0 = np.array([nz.init_sigma_human, nz.init_sigma_human, nz.init_sigma_robot, nz.init_sigma_robot,
                   math.radians(nz.init_sigma_theta_deg)])
    belief = est.Belief(m0, np.diag(s0 ** 2))

    log = TrajectoryLog()
    beliefs = []
    commands = []
    stats = {"stage1_calls": 0, "stage1_failed": 0, "stage1_hold": 0, "stage2_calls": 0,
             "stage2_degraded": 0, "replans": 0, "stage1_time": 0.0, "stage2_time": 0.0,
             "stop_plans": []}

    path_nodes = []
    path_pts = None

    def replan_path(start_xy, heading):
        nonlocal path_nodes, path_pts
        path_nodes = plan_human_path(grid, start_xy, heading, target, geometry, cfg.path)
        pts = np.array([[n.x, n.y] for n in path_nodes])
        path_pts = np.vstack([pts, target[None]]) if np.hypot(*(pts[-1] - target)) > 1e-9 else pts

    status = None
    try:
        replan_path(cfg.human_start, cfg.yaw0)
    except pathplan.UnreachableError:
        status = PLANNER_FAILURE

    fref = _ZeroReference()
    ref_traj = None
    plan = None
    z_warm = None
    u_warm = None
    u_cmd = np.zeros(3)
    last_good = 0.0
    f_meas = 0.0
    pending_events: list[str] = []
    collision_info = None
    min_clear = start_clear
    spacing = walking_speed(pcfg.F_nominal, est_p) * est_p.T
    n_max = int(math.floor(cfg.duration_s * rates.plant + 1e-9))
    n = 0
    force_vec = rope_force(human.position, geometry.fixed_point(pose[:2], pose[2]), rope).vector

    while True:
        t = n * dt
        st_true = true_state()
        fixed = geometry.fixed_point(pose[:2], pose[2])

        if status is None and collision_info is None and n % n_log == 0:
            if np.hypot(*(human.position - target)) <= cfg.goal_tolerance:
                status = REACHED
                pending_events.append(REACHED)
            elif n >= n_max:
                status = TIMEOUT
                pending_events.append(TIMEOUT)

        if status is None and n > 0 and n % n_est == 0:
            t_prev = t - n_est * dt
            fplan = ForceCommand(tuple(fref(t_prev)))
            q_plan = _planned_mode(ref_traj, t_prev)
            belief = est.predict(belief, fplan, u_cmd, q_plan, est_p, n_est * dt, noise_cfg,
                                 D=discount_matrix(q_plan, pcfg))
            z = est.synthesize_observation(st_true, geometry, camera, noise_cfg, rng_obs)
            belief = est.update(belief, z, geometry, noise_cfg)
            if belief.skipped:
                pending_events.append("update_skipped")
            beliefs.append((t, belief))
        elif n == 0:
            beliefs.append((t, belief))

        if status is None and n % n_hp == 0:
            est_state = belief.state()
            if path_pts is not None and _distance_to_path(path_pts, est_state.human) > cfg.replan_distance:
                try:
                    heading = math.atan2(*(np.subtract(est_state.robot, est_state.human)[::-1]))
                    replan_path(est_state.human, heading)
                    stats["replans"] += 1
                    pending_events.append("replan")
                except pathplan.UnreachableError:
                    pass
            ref = reference_along(path_pts, est_state.human, pcfg.N + 1, spacing, target)
            anchor = fref(t)
            t1 = time.perf_counter()
            stats["stage1_calls"] += 1
            # rope anchor: the length giving the measured force at the nominal payout
            try:
                sol = plan_forces(est_state, human.q, ref, ref[-1], obstacles, pcfg, est_p, geometry,
                                  warm_start=z_warm, force_prev=anchor, magnitude_prev=f_meas,
                                  length_prev=rope.L0 + cfg.rope.payout + f_meas / rope.stiffness)
                ok = sol.violation <= 1e-6
            except InfeasibleStateError:
                sol, ok = None, False
            stats["stage1_time"] += time.perf_counter() - t1
            if ok:
                plan = sol
                if np.any(sol.magnitudes < est_p.f_th):
                    stats["stop_plans"].append(t)
                if sol.hold:
                    stats["stage1_hold"] += 1
                    pending_events.append("hold")
                fref = _ForceReference(t, anchor, sol, est_p.T)
                ref_traj = reconstruct_reference(est_state, human.q, sol, est_p, geometry, t0=t)
                shift = int(round((n_hp * dt) / est_p.T))
                z_warm = shift_decision(sol.decision, pcfg.N, shift)
                last_good = t
            else:
                stats["stage1_failed"] += 1
                pending_events.append("plan_failed")
                if t - last_good > cfg.failure_hold_s:
                    status = PLANNER_FAILURE
                    u_cmd = np.zeros(3)

        if status is None and n % n_rob == 0 and ref_traj is not None:
            times = t + pcfg.robot_dt * np.arange(1, pcfg.M + 1)
            ref_poses, ref_modes = ref_traj.sample(times)
            t1 = time.perf_counter()
            vp = plan_velocity(belief.mean[2:], ref_poses, ref_modes, obstacles, pcfg, geometry, warm_start=u_warm)
            stats["stage2_time"] += time.perf_counter() - t1
            stats["stage2_calls"] += 1
            if vp.degraded:
                stats["stage2_degraded"] += 1
                pending_events.append("mpc_degraded")
            u_cmd = vp.first.copy()
            u_warm = np.vstack([vp.commands[1:], vp.commands[-1:]]).ravel()
            commands.append((t, *u_cmd))

        if n % n_dev == 0:
            f_true = rope_force(human.position, fixed, rope).magnitude
            f_meas = f_true + float(rng_force.normal(0.0, nz.force_sigma))
            f_ref_mag = math.hypot(*fref(t))
            out = device_step(human.position, fixed, rope, motor, f_ref_mag, n_dev * dt, f_meas)
            rope, motor = out.rope, out.motor
            if out.saturated:
                pending_events.append("payout_saturated")

        force_vec = rope_force(human.position, fixed, rope).vector
        if n % n_log == 0:
            if collision_info is not None and status is None:
                status = COLLISION
                pending_events.append(COLLISION)
            fr = fref(t)
            F = math.hypot(*force_vec)
            row = (t, st_true.human[0], st_true.human[1], st_true.robot[0], st_true.robot[1], st_true.yaw,
                   human.q, force_vec[0], force_vec[1], F, math.hypot(*fr),
                   float(np.hypot(*(fixed - human.position))), rope.payout, u_cmd[0], u_cmd[1], u_cmd[2],
                   *belief.mean, belief.trace, ";".join(dict.fromkeys(pending_events)))
            log.append(row, fr)
            pending_events = []
            if progress is not None:
                progress(t)
        if status is not None:
            break

        # plant
        q_before = human.q
        human.step(force_vec)
        pose = robot_plant_step(pose, u_cmd, q_before, pcfg.D_pulled, dt)
        n += 1
        c = clearance_now()
        min_clear = min(min_clear, c)
        if c < 0 and collision_info is None:
            collision_info = {"t": n * dt, "clearance": c, "human": tuple(human.position), "robot": tuple(pose)}

    return SimResult(status, log, beliefs, commands, cfg, est_p, path_nodes, time.perf_counter() - wall0,
                     min_clear, stats, collision_info)


def _planned_mode(ref_traj, t: float) -> int:
    if ref_traj is None:
        return STANDING
    _, q = ref_traj.sample([t])
    return int(q[0])


def _distance_to_path(pts: np.ndarray, p) -> float:
    p = np.asarray(p, dtype=float)
    a, b = pts[:-1], pts[1:]
    ab = b - a
    L2 = np.maximum(np.einsum("kd,kd->k", ab, ab), 1e-12)
    tt = np.clip(np.einsum("kd,kd->k", p - a, ab) / L2, 0.0, 1.0)
    d = a + tt[:, None] * ab - p
    return float(np.min(np.hypot(d[:, 0], d[:, 1]))) if len(a) else float(np.hypot(*(pts[0] - p)))


# -- metrics over runs ----------------------------------------------------------

def actual_comfort(log: TrajectoryLog, f_max: float) -> ComfortMetrics:
    return comfort_metrics(log.column("t"), log.column("F"), log.column("q").astype(int),
                           positions=np.column_stack([log.column("xh"), log.column("yh")]), f_max=f_max)


def planned_comfort(log: TrajectoryLog, params: HumanParams, f_max: float, log_rate: float = 20.0) -> ComfortMetrics:
    """Metrics of the planned force trace.

    The plan is a force sequence at the step interval, so the logged reference
    is sampled at that interval; modes follow the transition rule.
    """
    stride = max(1, int(round(params.T * log_rate)))
    t = log.column("t")[::stride]
    F = log.column("F_ref")[::stride]
    vec = np.asarray(log.fref_vec, dtype=float)[::stride]
    q = mode_rollout(STANDING, F, params)
    heading = np.arctan2(vec[:, 1], vec[:, 0])
    return comfort_metrics(t, F, q, heading=heading, f_max=f_max)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
