"""Comfort-aware leash guidance: human force model, two-stage MPC, UKF and closed-loop simulation."""

from .human import HumanParams, ForceCommand, walking_speed, mode_transition, fit_params
from .traction import RopeState, MotorState, rope_force, device_step
from .world import GridMap, ObstacleSet, RobotGeometry, SystemState
from .sim import ScenarioConfig, run_scenario
from .metrics import ComfortMetrics, comfort_metrics, topsis_rci

__version__ = "0.1.0"
