"""Elastic rope and force-control device (reel motor under PID)."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .human import ForceCommand

INELASTIC = "inelastic"
ELASTIC = "elastic"
ELASTIC_FCD = "elastic_fcd"
MODES = (INELASTIC, ELASTIC, ELASTIC_FCD)

K_RIGID = 2000.0


class DegenerateGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class RopeState:
    K: float = 50.0
    L0: float = 1.0
    payout: float = 0.3
    payout_max: float = 0.8
    mode: str = ELASTIC_FCD
    k_rigid: float = K_RIGID

    def __post_init__(self):
        if not (self.K > 0 and self.L0 > 0):
            raise ValueError("K and L0 must be positive")
        if not (0.0 <= self.payout <= self.payout_max):
            raise ValueError(f"payout {self.payout} outside [0, {self.payout_max}]")
        if self.mode not in MODES:
            raise ValueError(f"unknown rope mode {self.mode!r}")

    @property
    def stiffness(self) -> float:
        return self.k_rigid if self.mode == INELASTIC else self.K


@dataclass(frozen=True)
class MotorState:
    payout_rate: float = 0.0
    max_rate: float = 0.5
    kp: float = 0.12
    ki: float = 0.03
    kd: float = 0.0
    integrator: float = 0.0
    last_error: float | None = None


def rope_force(human, fixed_point, rope: RopeState) -> ForceCommand:
    """Hooke force on the human, pointing from the human to the attachment point."""
    h = np.asarray(human, dtype=float)
    f = np.asarray(fixed_point, dtype=float)
    dx, dy = f[0] - h[0], f[1] - h[1]
    d = math.hypot(dx, dy)
    if d == 0.0:
        raise DegenerateGeometryError("human coincides with the rope attachment point")
    stretch = d - rope.payout - rope.L0
    if stretch <= 0.0:
        return ForceCommand((0.0, 0.0))
    mag = rope.stiffness * stretch
    return ForceCommand((mag * dx / d, mag * dy / d))


def fcd_pid_step(f_ref: float, f_meas: float, motor: MotorState, dt: float) -> MotorState:
    """One PID tick; positive error retracts string (negative payout rate)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    e = f_ref - f_meas
    deriv = 0.0 if motor.last_error is None else (e - motor.last_error) / dt
    integ = motor.integrator + e * dt
    raw = -(motor.kp * e + motor.ki * integ + motor.kd * deriv)
    rate = min(max(raw, -motor.max_rate), motor.max_rate)
    if rate != raw:
        # clamping anti-windup: keep the old integrator while saturated
        integ = motor.integrator
        raw = -(motor.kp * e + motor.ki * integ + motor.kd * deriv)
        rate = min(max(raw, -motor.max_rate), motor.max_rate)
    return replace(motor, payout_rate=rate, integrator=integ, last_error=e)


@dataclass(frozen=True)
class DeviceOutput:
    force: ForceCommand
    rope: RopeState
    motor: MotorState
    saturated: bool


def device_step(human, fixed_point, rope: RopeState, motor: MotorState, f_ref: float,
                dt: float, f_meas: float | None = None) -> DeviceOutput:
    """Advance the device by ``dt``.

    ``f_meas`` defaults to the noise-free rope force at the current geometry.
    Only ``elastic_fcd`` moves the reel.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    saturated = False
    if rope.mode == ELASTIC_FCD:
        if f_meas is None:
            f_meas = rope_force(human, fixed_point, rope).magnitude
        motor = fcd_pid_step(f_ref, f_meas, motor, dt)
        payout = rope.payout + motor.payout_rate * dt
        if payout < 0.0 or payout > rope.payout_max:
            payout = min(max(payout, 0.0), rope.payout_max)
            saturated = True
        rope = replace(rope, payout=payout)
    else:
        motor = replace(motor, payout_rate=0.0)
    return DeviceOutput(rope_force(human, fixed_point, rope), rope, motor, saturated)
