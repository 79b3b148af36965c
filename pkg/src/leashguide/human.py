"""Force-driven standing/walking human model and F-v parameter fitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

STANDING = 0
WALKING = 1


class DegenerateDataError(ValueError):
    pass


@dataclass(frozen=True)
class HumanParams:
    alpha: float = 0.0278
    beta: float = 0.0444
    f_th: float = 5.0
    delta_f: float = 10.0
    T: float = 0.4

    def __post_init__(self):
        if not (self.alpha > 0 and self.f_th > 0 and self.delta_f > 0 and self.T > 0):
            raise ValueError("alpha, f_th, delta_f and T must be positive")


# least-squares lines reported for the two calibration subjects
SUBJECT_H1 = HumanParams(alpha=0.0105, beta=-0.0290)
SUBJECT_H2 = HumanParams(alpha=0.0278, beta=0.0444)


@dataclass(frozen=True)
class ForceCommand:
    """Traction force vector; ``direction`` is the zero vector when slack."""

    vector: tuple[float, float]

    @property
    def magnitude(self) -> float:
        return math.hypot(*self.vector)

    @property
    def direction(self) -> np.ndarray:
        m = self.magnitude
        if m == 0.0:
            return np.zeros(2)
        return np.asarray(self.vector) / m

    @classmethod
    def polar(cls, magnitude: float, angle: float) -> "ForceCommand":
        return cls((magnitude * math.cos(angle), magnitude * math.sin(angle)))


def walking_speed(force: float, params: HumanParams) -> float:
    """Speed along the rope; a negative line value means the human does not move."""
    return max(0.0, params.alpha * force + params.beta)


def mode_transition(q: int, f_k: float, f_next: float, params: HumanParams) -> int:
    df = f_next - f_k
    thr = params.delta_f * params.T
    if q == STANDING:
        return WALKING if (df >= thr or f_k >= params.f_th) else STANDING
    return STANDING if (df < -thr or f_k < params.f_th) else WALKING


def human_step(position, force: ForceCommand, q: int, params: HumanParams) -> np.ndarray:
    p = np.asarray(position, dtype=float)
    if q == STANDING:
        return p.copy()
    return p + walking_speed(force.magnitude, params) * force.direction * params.T


def robot_pose_from(human, e_f, length: float, yaw: float, d_cf: float) -> np.ndarray:
    """Robot centre for a human at ``human`` pulled along ``e_f`` by a rope of ``length``."""
    return (np.asarray(human, dtype=float) + length * np.asarray(e_f, dtype=float)
            + d_cf * np.array([math.cos(yaw), math.sin(yaw)]))


def lowpass(x: np.ndarray, cutoff_hz: float, dt: float) -> np.ndarray:
    """First-order exponential smoother seeded with the first sample."""
    x = np.asarray(x, dtype=float)
    a = 1.0 - math.exp(-2.0 * math.pi * cutoff_hz * dt)
    y = np.empty_like(x)
    acc = x[0]
    for i, v in enumerate(x):
        acc += a * (v - acc)
        y[i] = acc
    return y


@dataclass(frozen=True)
class FitResult:
    alpha: float
    beta: float
    residual_rms: float
    n: int


def fit_params(samples: Sequence[tuple[float, float]], filter_cutoff: float = 2.0,
               dt: float = 0.05) -> FitResult:
    """Low-pass both channels, then fit v = alpha * F + beta by least squares.

    ``dt`` is the sample period of the (uniformly sampled) series.
    """
    data = np.asarray(samples, dtype=float).reshape(-1, 2)
    if len(data) < 2:
        raise DegenerateDataError("need at least 2 samples")
    if filter_cutoff and filter_cutoff > 0:
        f = lowpass(data[:, 0], filter_cutoff, dt)
        v = lowpass(data[:, 1], filter_cutoff, dt)
    else:
        f, v = data[:, 0], data[:, 1]
    if np.ptp(f) <= 1e-12 * max(1.0, float(np.abs(f).max())):
        raise DegenerateDataError("fewer than 2 distinct force values")
    A = np.column_stack([f, np.ones_like(f)])
    (alpha, beta), *_ = np.linalg.lstsq(A, v, rcond=None)
    resid = v - A @ np.array([alpha, beta])
    return FitResult(float(alpha), float(beta), float(np.sqrt(np.mean(resid ** 2))), len(data))


def read_fv_csv(path) -> list[tuple[float, float]]:
    """Read the two-column ``F_newtons,v_mps`` calibration file."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DegenerateDataError("empty file")
    header = [h.strip() for h in rows[0]]
    if header != ["F_newtons", "v_mps"]:
        raise ValueError(f"expected header 'F_newtons,v_mps', got {','.join(header)!r}")
    out = []
    for n, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise ValueError(f"line {n}: expected 2 columns")
        try:
            out.append((float(row[0]), float(row[1])))
        except ValueError:
            raise ValueError(f"line {n}: non-numeric value") from None
    return out


def synthetic_fv(params: HumanParams, n: int, noise: float, rng: np.random.Generator,
                 f_range: tuple[float, float] = (5.0, 40.0)) -> np.ndarray:
    """Force ramp with noisy velocity readings, as logged during a calibration pull."""
    f = np.linspace(f_range[0], f_range[1], n)
    v = params.alpha * f + params.beta + rng.normal(0.0, noise, n)
    return np.column_stack([f, v])


def mode_rollout(q0: int, forces: Iterable[float], params: HumanParams) -> list[int]:
    """Apply the transition rule along a force sequence; returns q_0..q_{n-1}."""
    forces = list(forces)
    qs = [int(q0)]
    for k in range(len(forces) - 1):
        qs.append(mode_transition(qs[-1], forces[k], forces[k + 1], params))
    return qs
