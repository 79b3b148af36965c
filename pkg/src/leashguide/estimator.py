"""Unscented Kalman filter over (xh, yh, xd, yd, theta)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .human import HumanParams, WALKING, ForceCommand, walking_speed
from .world import RobotGeometry, SystemState, wrap_angle

N_STATE = 5
THETA = 4
OBS_ANGLES = (1, 4)


class DecompositionError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class Belief:
    mean: np.ndarray
    cov: np.ndarray
    skipped: bool = False         # set when an update was rejected

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(N_STATE))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float).reshape(N_STATE, N_STATE))

    @property
    def trace(self) -> float:
        return float(np.trace(self.cov))

    @property
    def eig_min(self) -> float:
        return float(np.linalg.eigvalsh(self.cov).min())

    def state(self) -> SystemState:
        return SystemState.from_vector(self.mean)


@dataclass(frozen=True)
class NoiseConfig:
    q: tuple = (0.01 ** 2, 0.01 ** 2, 0.005 ** 2, 0.005 ** 2, math.radians(0.5) ** 2)
    r: tuple = (0.05 ** 2, math.radians(2.0) ** 2, 0.03 ** 2, 0.03 ** 2, math.radians(1.0) ** 2)
    k: float = 1.0

    def __post_init__(self):
        if len(self.q) != N_STATE or len(self.r) != N_STATE:
            raise ValueError("Q and R need five variances each")
        if min(self.q) <= 0 or min(self.r) <= 0:
            raise ValueError("variances must be positive")
        if N_STATE + self.k <= 0:
            raise ValueError("n + k must be positive")

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.q)

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.r)

    @classmethod
    def from_fit(cls, residual_rms: float, T: float, **kw) -> "NoiseConfig":
        """Human process noise from the speed-fit residual, integrated over one step."""
        s = max(residual_rms * T, 1e-4)
        base = cls()
        q = (s ** 2, s ** 2) + tuple(base.q[2:])
        return cls(q=q, **kw)


@dataclass(frozen=True)
class CameraModel:
    height: float = 1.7           # human face height H
    mount: float = 0.45           # camera height h_c
    inclination: float = math.radians(15.0)
    max_range: float = 4.0


def _sqrt_psd(a: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(a)
    if w.min() >= -1e-10 * max(1.0, abs(w.max())):
        return v * np.sqrt(np.clip(w, 0.0, None))
    try:
        return np.linalg.cholesky(a + 1e-10 * np.eye(len(a)))
    except np.linalg.LinAlgError as exc:
        raise DecompositionError("covariance is not positive semi-definite") from exc


def sigma_points(belief: Belief, k: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """2n+1 points (rows) and their weights."""
    n = N_STATE
    S = _sqrt_psd((n + k) * belief.cov)
    pts = np.empty((2 * n + 1, n))
    pts[0] = belief.mean
    pts[1:n + 1] = belief.mean + S.T
    pts[n + 1:] = belief.mean - S.T
    w = np.full(2 * n + 1, 1.0 / (2.0 * (n + k)))
    w[0] = k / (n + k)
    return pts, w


def _weighted_mean(pts: np.ndarray, w: np.ndarray, angles) -> np.ndarray:
    m = w @ pts
    for a in angles:
        # centre on the first point, average wrapped residuals
        c = pts[0, a]
        m[a] = wrap_angle(c + w @ wrap_angle(pts[:, a] - c))
    return m


def _residuals(pts: np.ndarray, m: np.ndarray, angles) -> np.ndarray:
    d = pts - m
    for a in angles:
        d[:, a] = wrap_angle(d[:, a])
    return d


def _symmetrize(c: np.ndarray) -> np.ndarray:
    return 0.5 * (c + c.T)


def process_model(x: np.ndarray, force: ForceCommand, u, q: int, params: HumanParams, T: float,
                  D=None) -> np.ndarray:
    """Propagate one state (or rows of states) over ``T``."""
    x = np.array(x, dtype=float)
    single = x.ndim == 1
    X = x.reshape(-1, N_STATE)
    if q == WALKING:
        X[:, :2] += walking_speed(force.magnitude, params) * force.direction * T
    d = np.ones(3) if D is None else np.diag(np.asarray(D, dtype=float)) if np.ndim(D) == 2 else np.asarray(D)
    vx, vy, w = np.asarray(u, dtype=float)
    c, s = np.cos(X[:, THETA]), np.sin(X[:, THETA])
    X[:, 2] += T * d[0] * (c * vx - s * vy)
    X[:, 3] += T * d[1] * (s * vx + c * vy)
    X[:, THETA] = wrap_angle(X[:, THETA] + T * d[2] * w)
    return X[0] if single else X


def predict(belief: Belief, force: ForceCommand, u, q: int, params: HumanParams, T: float,
            noise: NoiseConfig | None = None, D=None) -> Belief:
    noise = noise or NoiseConfig()
    pts, w = sigma_points(belief, noise.k)
    Y = process_model(pts, force, u, q, params, T, D)
    m = _weighted_mean(Y, w, (THETA,))
    d = _residuals(Y, m, (THETA,))
    cov = _symmetrize((d * w[:, None]).T @ d + noise.Q)
    return Belief(m, cov)


def observe(x, geometry: RobotGeometry | None = None) -> np.ndarray:
    """Noise-free observation (l, phi, xd, yd, theta) for one state or rows of states."""
    geometry = geometry or RobotGeometry()
    X = np.asarray(x, dtype=float).reshape(-1, N_STATE)
    th = X[:, THETA]
    fx = X[:, 2] - geometry.d_cf * np.cos(th)
    fy = X[:, 3] - geometry.d_cf * np.sin(th)
    l = np.hypot(fx - X[:, 0], fy - X[:, 1])
    phi = wrap_angle(np.arctan2(X[:, 1] - X[:, 3], X[:, 0] - X[:, 2]) - th)
    Z = np.column_stack([l, phi, X[:, 2], X[:, 3], wrap_angle(th)])
    return Z[0] if np.ndim(x) == 1 else Z


def unscented_update(belief: Belief, z, h, R: np.ndarray, k: float = 1.0,
                     obs_angles=(), state_angles=(THETA,)) -> Belief:
    """Generic unscented measurement update with observation function ``h`` (rows in, rows out)."""
    pts, w = sigma_points(belief, k)
    Z = h(pts)
    zm = _weighted_mean(Z, w, obs_angles)
    dz = _residuals(Z, zm, obs_angles)
    dx = _residuals(pts, belief.mean, state_angles)
    Pzz = _symmetrize((dz * w[:, None]).T @ dz + R)
    Pxz = (dx * w[:, None]).T @ dz
    if np.linalg.cond(Pzz) > 1e12:
        return Belief(belief.mean, belief.cov, skipped=True)
    K = np.linalg.solve(Pzz, Pxz.T).T
    nu = np.asarray(z, dtype=float) - zm
    for a in obs_angles:
        nu[a] = wrap_angle(nu[a])
    mean = belief.mean + K @ nu
    for a in state_angles:
        mean[a] = wrap_angle(mean[a])
    cov = _symmetrize(belief.cov - K @ Pzz @ K.T)
    return Belief(mean, cov)


def update(belief: Belief, z, geometry: RobotGeometry | None = None,
           noise: NoiseConfig | None = None) -> Belief:
    noise = noise or NoiseConfig()
    geometry = geometry or RobotGeometry()
    return unscented_update(belief, z, lambda X: observe(X, geometry), noise.R, noise.k,
                            obs_angles=OBS_ANGLES)


def camera_depth(l_c: float, camera: CameraModel) -> float:
    """Depth along the tilted optical axis to a face at horizontal distance ``l_c``."""
    phi = camera.inclination
    return l_c * math.cos(phi) + (camera.height - camera.mount) * math.sin(phi)


def horizontal_distance(depth: float, camera: CameraModel) -> float:
    phi = camera.inclination
    return depth / math.cos(phi) - (camera.height - camera.mount) * math.tan(phi)


def human_from_camera(robot, bearing: float, l_c: float) -> np.ndarray:
    return np.asarray(robot, dtype=float) + l_c * np.array([math.cos(bearing), math.sin(bearing)])


def recover_human(z, geometry: RobotGeometry | None = None) -> np.ndarray:
    """Human position consistent with an observation: on the gimbal ray, at rope distance ``l``."""
    geometry = geometry or RobotGeometry()
    l, phi, xd, yd, th = np.asarray(z, dtype=float)
    d = geometry.d_cf
    disc = max((d * math.cos(phi)) ** 2 - d * d + l * l, 0.0)
    t = -d * math.cos(phi) + math.sqrt(disc)
    return human_from_camera((xd, yd), th + phi, t)


def synthesize_observation(true_state: SystemState, geometry: RobotGeometry | None = None,
                           camera: CameraModel | None = None, noise: NoiseConfig | None = None,
                           rng: np.random.Generator | None = None) -> np.ndarray:
    """Camera-based observation of the true state; noise-free when ``rng`` is None."""
    geometry = geometry or RobotGeometry()
    camera = camera or CameraModel()
    xh = np.asarray(true_state.human, dtype=float)
    xd = np.asarray(true_state.robot, dtype=float)
    rel = xh - xd
    if math.hypot(*rel) > camera.max_range:
        raise ValueError("human outside camera range")
    bearing = math.atan2(rel[1], rel[0])
    depth = camera_depth(math.hypot(*rel), camera)
    # invert the camera geometry as the real pipeline would
    l_c = horizontal_distance(depth, camera)
    human = human_from_camera(xd, bearing, l_c)
    fixed = geometry.fixed_point(xd, true_state.yaw)
    z = np.array([math.hypot(*(fixed - human)), wrap_angle(bearing - true_state.yaw),
                  xd[0], xd[1], true_state.yaw])
    if rng is not None:
        noise = noise or NoiseConfig()
        z = z + rng.normal(0.0, 1.0, N_STATE) * np.sqrt(noise.r)
        z[0] = max(z[0], 0.0)
        z[1] = wrap_angle(z[1])
        z[4] = wrap_angle(z[4])
    return z


def write_belief_csv(rows, path) -> None:
    """``rows`` of (t, Belief)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mean_xh", "mean_yh", "mean_xd", "mean_yd", "mean_theta", "trace", "eig_min"])
        for t, b in rows:
            w.writerow([repr(float(t))] + [repr(float(v)) for v in b.mean] + [repr(b.trace), repr(b.eig_min)])
