"""Comfort metrics over force/heading traces and the TOPSIS relative comfort index."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, astuple

import numpy as np

from .world import wrap_angle

CRITERIA = ("f_dot_rms", "theta_dot_rms", "t_over", "n_ch")


class InsufficientDataError(ValueError):
    pass


class DegenerateCriterionError(ValueError):
    def __init__(self, column: str):
        super().__init__(f"criterion column {column!r} is all zero")
        self.column = column


@dataclass(frozen=True)
class ComfortMetrics:
    f_dot_rms: float
    theta_dot_rms: float
    t_over: float
    n_ch: int

    def as_row(self) -> list[float]:
        return [float(v) for v in astuple(self)]


def comfort_metrics(t, force, q, heading=None, positions=None, f_max: float = 25.0) -> ComfortMetrics:
    """Metrics from uniformly or non-uniformly sampled traces.

    The walking heading comes from ``heading`` when given, otherwise from the
    direction of motion of ``positions``. Heading rates skip standing samples
    and the first walking sample after each transition.
    """
    t = np.asarray(t, dtype=float)
    F = np.asarray(force, dtype=float)
    q = np.asarray(q, dtype=int)
    if len(t) < 3:
        raise InsufficientDataError("need at least 3 samples")
    f_dot = np.gradient(F, t)
    f_dot_rms = float(np.sqrt(np.mean(f_dot ** 2)))

    dt = np.gradient(t)
    t_over = float(np.sum(dt * (F > f_max)))
    n_ch = int(np.count_nonzero(np.diff(q) != 0))

    if heading is None:
        p = np.asarray(positions, dtype=float)
        v = np.gradient(p, t, axis=0)
        heading = np.arctan2(v[:, 1], v[:, 0])
    h = np.asarray(heading, dtype=float)
    rates = []
    for a in range(1, len(t)):
        # both endpoints walking, and the earlier one is not a transition sample
        if q[a] == 1 and q[a - 1] == 1 and (a - 2 >= 0 and q[a - 2] == 1):
            rates.append(wrap_angle(h[a] - h[a - 1]) / (t[a] - t[a - 1]))
    theta_dot_rms = float(np.sqrt(np.mean(np.square(rates)))) if rates else 0.0
    return ComfortMetrics(f_dot_rms, theta_dot_rms, t_over, n_ch)


def topsis_rci(matrix, weights=None, names=None) -> np.ndarray:
    """Closeness coefficients for cost-type criteria (smaller is better)."""
    X = np.asarray(matrix, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least two alternatives")
    if np.any(X < 0):
        raise ValueError("criteria values must be non-negative")
    names = names or [f"c{j}" for j in range(X.shape[1])]
    w = np.full(X.shape[1], 1.0 / X.shape[1]) if weights is None else np.asarray(weights, dtype=float)
    if not math.isclose(w.sum(), 1.0, rel_tol=0, abs_tol=1e-12):
        raise ValueError("weights must sum to 1")
    norms = np.sqrt(np.sum(X ** 2, axis=0))
    for j, n in enumerate(norms):
        if n == 0.0:
            raise DegenerateCriterionError(names[j])
    V = X / norms * w
    ideal = V.min(axis=0)
    anti = V.max(axis=0)
    d_plus = np.sqrt(np.sum((V - ideal) ** 2, axis=1))
    d_minus = np.sqrt(np.sum((V - anti) ** 2, axis=1))
    total = d_plus + d_minus
    # all alternatives identical: every one is equally close
    return np.where(total > 0, d_minus / np.where(total > 0, total, 1.0), 1.0)


@dataclass
class ReportRow:
    alternative: str
    metrics: ComfortMetrics | None
    rci: float = float("nan")
    failed: str | None = None


def build_report(rows: list[ReportRow], weights=None) -> list[ReportRow]:
    ok = [r for r in rows if r.metrics is not None and r.failed is None]
    if len(ok) >= 2:
        rci = topsis_rci([r.metrics.as_row() for r in ok], weights, list(CRITERIA))
        for r, v in zip(ok, rci):
            r.rci = float(v)
    return rows


def write_report_csv(rows: list[ReportRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alternative", *CRITERIA, "rci"])
        for r in rows:
            if r.metrics is None or r.failed:
                w.writerow([r.alternative, "", "", "", "", f"failed:{r.failed}"])
            else:
                m = r.metrics
                w.writerow([r.alternative, repr(m.f_dot_rms), repr(m.theta_dot_rms), repr(m.t_over), m.n_ch,
                            repr(r.rci)])


def format_report(rows: list[ReportRow]) -> str:
    head = f"{'alternative':<14}{'F_dot_rms':>11}{'th_dot_rms':>12}{'t_over':>9}{'n_ch':>6}{'RCI':>9}"
    lines = [head, "-" * len(head)]
    for r in rows:
        if r.metrics is None or r.failed:
            lines.append(f"{r.alternative:<14}  failed ({r.failed})")
            continue
        m = r.metrics
        lines.append(f"{r.alternative:<14}{m.f_dot_rms:>11.3f}{m.theta_dot_rms:>12.3f}{m.t_over:>9.3f}"
                     f"{m.n_ch:>6d}{r.rci:>9.4f}")
    return "\n".join(lines)
