import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leashguide.human import (STANDING, WALKING, DegenerateDataError, ForceCommand, HumanParams, SUBJECT_H1,
                              SUBJECT_H2, fit_params, human_step, lowpass, mode_rollout, mode_transition,
                              read_fv_csv, robot_pose_from, synthetic_fv, walking_speed)


def test_walking_speed_examples():
    assert walking_speed(0.0, SUBJECT_H1) == 0.0
    assert walking_speed(20.0, SUBJECT_H1) == pytest.approx(0.181, abs=1e-12)
    assert walking_speed(10.0, SUBJECT_H2) == pytest.approx(0.3224, abs=1e-12)


def test_default_params():
    p = HumanParams()
    assert (p.f_th, p.delta_f, p.T) == (5.0, 10.0, 0.4)
    with pytest.raises(ValueError):
        HumanParams(alpha=-1.0)


def test_mode_transition_examples():
    p = HumanParams(f_th=5.0, delta_f=5.0, T=0.4)   # delta_F * T = 2
    assert mode_transition(STANDING, 0.0, 10.0, p) == WALKING
    assert mode_transition(WALKING, 4.0, 4.0, p) == STANDING
    assert mode_transition(WALKING, 10.0, 10.0, p) == WALKING


def test_mode_transition_ties_favour_walking():
    p = HumanParams(f_th=5.0, delta_f=5.0, T=0.4)
    assert mode_transition(STANDING, 0.0, 2.0, p) == WALKING       # dF == delta_F * T
    assert mode_transition(STANDING, 5.0, 5.0, p) == WALKING       # F == F_th
    assert mode_transition(WALKING, 10.0, 8.0, p) == WALKING       # dF == -delta_F * T
    assert mode_transition(WALKING, 5.0, 5.0, p) == WALKING


def test_mode_transition_is_total_and_exclusive():
    p = HumanParams(f_th=5.0, delta_f=5.0, T=0.4)
    thr = p.delta_f * p.T
    grid = np.arange(0.0, 40.25, 0.5)
    for q, fk, fn in itertools.product((0, 1), grid, grid):
        df = fn - fk
        if q == 0:
            cases = [df < thr and fk < p.f_th, df >= thr or fk >= p.f_th]
        else:
            cases = [df < -thr or fk < p.f_th, df >= -thr and fk >= p.f_th]
        assert sum(cases) == 1
        # case order is (standing, walking) for both starting modes
        assert mode_transition(q, fk, fn, p) == cases.index(True)


def test_human_step_examples():
    f = ForceCommand((20.0, 0.0))
    assert np.array_equal(human_step((1.0, 2.0), f, STANDING, SUBJECT_H1), [1.0, 2.0])
    d = human_step((0.0, 0.0), f, WALKING, SUBJECT_H1)
    assert d == pytest.approx((0.0724, 0.0), abs=1e-12)
    d90 = human_step((0.0, 0.0), ForceCommand((0.0, 20.0)), WALKING, SUBJECT_H1)
    assert d90 == pytest.approx((0.0, 0.0724), abs=1e-12)


@settings(max_examples=100)
@given(st.floats(0, 40), st.floats(-math.pi, math.pi), st.sampled_from([0, 1]))
def test_human_step_displacement_length(mag, ang, q):
    f = ForceCommand.polar(mag, ang)
    d = human_step((0.3, -0.2), f, q, SUBJECT_H2) - np.array([0.3, -0.2])
    expected = q * walking_speed(mag, SUBJECT_H2) * SUBJECT_H2.T if mag > 0 else 0.0
    assert np.hypot(*d) == pytest.approx(expected, abs=1e-12)


def test_robot_pose_from_examples():
    assert robot_pose_from((0, 0), (1, 0), 1.0, 0.0, 0.325) == pytest.approx((1.325, 0.0))
    assert robot_pose_from((0, 0), (1, 0), 1.0, math.pi / 2, 0.325) == pytest.approx((1.0, 0.325))


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-math.pi, math.pi), st.floats(0.1, 3),
       st.floats(-math.pi, math.pi))
def test_robot_pose_inversion(x, y, a, l, th):
    e = np.array([math.cos(a), math.sin(a)])
    xd = robot_pose_from((x, y), e, l, th, 0.325)
    back = xd - 0.325 * np.array([math.cos(th), math.sin(th)]) - np.array([x, y])
    assert np.hypot(*back) == pytest.approx(l, abs=1e-12)


def test_fit_noiseless_recovers_line():
    f = np.linspace(5, 40, 50)
    v = 0.0105 * f - 0.0290
    fit = fit_params(list(zip(f, v)))
    assert fit.alpha == pytest.approx(0.0105, abs=1e-12)
    assert fit.beta == pytest.approx(-0.0290, abs=1e-12)
    assert fit.residual_rms < 1e-12


def test_fit_two_points_exact():
    fit = fit_params([(2.0, 1.0), (4.0, 2.0)])
    assert fit.alpha == pytest.approx(0.5, abs=1e-12)
    assert fit.beta == pytest.approx(0.0, abs=1e-12)


def test_fit_degenerate():
    with pytest.raises(DegenerateDataError):
        fit_params([(3.0, 0.1), (3.0, 0.2), (3.0, 0.3)])
    with pytest.raises(DegenerateDataError):
        fit_params([(3.0, 0.1)])


def test_fit_monte_carlo_alpha_within_five_percent():
    ok = 0
    for seed in range(100):
        data = synthetic_fv(SUBJECT_H1, 200, 0.02, np.random.default_rng(seed))
        ok += abs(fit_params(data).alpha - 0.0105) <= 0.05 * 0.0105
    assert ok >= 95


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 10))
def test_fit_scale_consistency(c):
    data = synthetic_fv(SUBJECT_H2, 60, 0.02, np.random.default_rng(5))
    a = fit_params(data)
    b = fit_params(np.column_stack([data[:, 0], c * data[:, 1]]))
    assert b.alpha == pytest.approx(c * a.alpha, rel=1e-9)
    assert b.beta == pytest.approx(c * a.beta, rel=1e-9, abs=1e-12)


def test_lowpass_unity_dc_gain_and_smoothing():
    x = np.full(50, 3.0)
    assert np.allclose(lowpass(x, 2.0, 0.05), 3.0)
    step = np.r_[np.zeros(5), np.ones(45)]
    y = lowpass(step, 2.0, 0.05)
    assert (np.diff(y) >= 0).all() and y[-1] == pytest.approx(1.0, abs=1e-3) and y[5] < 1.0


def test_read_fv_csv(tmp_path):
    p = tmp_path / "fv.csv"
    p.write_text("F_newtons,v_mps\n10,0.1\n20,0.2\n\n", encoding="utf-8")
    assert read_fv_csv(p) == [(10.0, 0.1), (20.0, 0.2)]
    p.write_text("", encoding="utf-8")
    with pytest.raises(DegenerateDataError):
        read_fv_csv(p)
    p.write_text("F,v\n1,2\n", encoding="utf-8")
    with pytest.raises(ValueError):
        read_fv_csv(p)
    p.write_text("F_newtons,v_mps\n1,abc\n", encoding="utf-8")
    with pytest.raises(ValueError, match="line 2"):
        read_fv_csv(p)


def test_mode_rollout_matches_repeated_transitions():
    p = HumanParams()
    forces = [0, 10, 12, 12, 3, 3, 9]
    qs = mode_rollout(STANDING, forces, p)
    assert len(qs) == len(forces)
    q = STANDING
    for k in range(len(forces) - 1):
        q = mode_transition(q, forces[k], forces[k + 1], p)
        assert qs[k + 1] == q
