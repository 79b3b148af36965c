"""Augmented-Lagrangian minimizer for smooth, inequality-constrained problems.

Problems are posed as::

    minimize f(x)  subject to  g(x) <= 0,  lower <= x <= upper

The outer loop updates multipliers and the penalty; each inner problem is a
bound-constrained quasi-Newton (L-BFGS-B) minimization of the augmented
Lagrangian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

ObjectiveFn = Callable[[np.ndarray], "tuple[float, np.ndarray]"]
# returns (g, vjp) where vjp(w) = J(x)^T w
ConstraintFn = Callable[[np.ndarray], "tuple[np.ndarray, Callable[[np.ndarray], np.ndarray]]"]


class NumericFailure(FloatingPointError):
    def __init__(self, message: str, point: np.ndarray):
        super().__init__(message)
        self.point = np.array(point, copy=True)


@dataclass
class NlpProblem:
    objective: ObjectiveFn
    x0: np.ndarray
    constraints: ConstraintFn | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.x0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.full(self.n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float)
        hi = np.full(self.n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        return lo, hi

    def eval_constraints(self, x):
        if self.constraints is None:
            return np.zeros(0), (lambda w: np.zeros(self.n))
        return self.constraints(x)


@dataclass
class NlpOptions:
    tol_stat: float = 1e-6
    tol_feas: float = 1e-6
    max_outer: int = 30
    max_inner: int = 200
    penalty0: float = 10.0
    penalty_growth: float = 5.0
    penalty_max: float = 1e8
    inner_ftol: float = 0.0


@dataclass
class NlpSolution:
    x: np.ndarray
    fun: float
    violation: float
    stationarity: float
    iterations: int
    converged: bool
    multipliers: np.ndarray
    history: list = field(default_factory=list)


def max_violation(g: np.ndarray) -> float:
    return float(np.max(g, initial=0.0)) if len(g) else 0.0


def _check_finite(name: str, value, x):
    if not np.all(np.isfinite(value)):
        raise NumericFailure(f"non-finite {name}", x)


def minimize(problem: NlpProblem, options: NlpOptions | None = None,
             multipliers: np.ndarray | None = None) -> NlpSolution:
    opts = options or NlpOptions()
    lo, hi = problem.bounds()
    x = np.clip(np.asarray(problem.x0, dtype=float), lo, hi)

    f0, _ = problem.objective(x)
    g0, _ = problem.eval_constraints(x)
    _check_finite("objective", f0, x)
    _check_finite("constraints", g0, x)
    m = len(g0)
    lam = np.zeros(m) if multipliers is None or len(multipliers) != m else np.maximum(multipliers, 0.0)
    mu = opts.penalty0
    scipy_bounds = list(zip(np.where(np.isfinite(lo), lo, None), np.where(np.isfinite(hi), hi, None)))

    def merit(z):
        f, gf = problem.objective(z)
        g, vjp = problem.eval_constraints(z)
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            raise NumericFailure("non-finite objective or constraint during search", z)
        if m:
            shifted = np.maximum(lam + mu * g, 0.0)
            val = f + (shifted @ shifted - lam @ lam) / (2.0 * mu)
            grad = gf + vjp(shifted)
        else:
            val, grad = f, gf
        return val, grad

    def stationarity(z, lam_z):
        _, gf = problem.objective(z)
        _, vjp = problem.eval_constraints(z)
        gl = gf + (vjp(lam_z) if m else 0.0)
        proj = np.clip(z - gl, lo, hi) - z
        # scaled so the test is meaningful for large objective gradients
        return float(np.max(np.abs(proj), initial=0.0)) / (1.0 + float(np.max(np.abs(gf), initial=0.0)))

    history = []
    best = None
    converged = False
    prev_viol = math.inf
    it = 0
    for it in range(1, opts.max_outer + 1):
        res = _scipy_minimize(merit, x, jac=True, method="L-BFGS-B", bounds=scipy_bounds,
                              options={"maxiter": opts.max_inner, "ftol": opts.inner_ftol,
                                       "gtol": 0.1 * opts.tol_stat, "maxcor": 20})
        stalled = bool(np.max(np.abs(res.x - x), initial=0.0) <= 1e-14 * (1.0 + np.max(np.abs(x), initial=0.0)))
        x = np.clip(res.x, lo, hi)
        g, _ = problem.eval_constraints(x)
        f, _ = problem.objective(x)
        viol = max_violation(g)
        history.append({"fun": float(f), "violation": viol, "merit": float(res.fun), "penalty": mu})
        lam = np.maximum(lam + mu * g, 0.0) if m else lam
        stat = stationarity(x, lam)
        key = (max(viol, opts.tol_feas), float(f))
        if best is None or key < (max(best[1], opts.tol_feas), best[2]):
            best = (x.copy(), viol, float(f), stat, lam.copy())
        if viol <= opts.tol_feas and stat <= opts.tol_stat:
            converged = True
            best = (x.copy(), viol, float(f), stat, lam.copy())
            break
        if stalled and viol <= opts.tol_feas:
            break
        if viol > 0.25 * prev_viol and viol > opts.tol_feas:
            mu = min(mu * opts.penalty_growth, opts.penalty_max)
        prev_viol = viol

    xb, viol, f, stat, lamb = best
    return NlpSolution(xb, f, viol, stat, it, converged, lamb, history)


def gradient_check(fn: Callable[[np.ndarray], "tuple[float, np.ndarray]"], point, step: float = 1e-6) -> float:
    """Largest componentwise relative gap between the supplied and central-difference gradient."""
    x = np.asarray(point, dtype=float)
    _, g = fn(x)
    g = np.asarray(g, dtype=float)
    fd = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = step
        fd[i] = (fn(x + e)[0] - fn(x - e)[0]) / (2.0 * step)
    scale = np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1.0)
    return float(np.max(np.abs(g - fd) / scale))


def constraint_jacobian(constraints: ConstraintFn, x: np.ndarray) -> np.ndarray:
    g, vjp = constraints(x)
    return np.array([vjp(row) for row in np.eye(len(g))]).reshape(len(g), len(x))
