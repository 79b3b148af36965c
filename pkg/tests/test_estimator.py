import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leashguide import estimator as est
from leashguide.human import SUBJECT_H1, STANDING, WALKING, ForceCommand
from leashguide.world import RobotGeometry, SystemState

GEO = RobotGeometry()


def _belief(mean=(0.0, 0.0, 1.725, 0.0, 0.0), cov=None):
    return est.Belief(np.array(mean, float), np.eye(5) * 0.01 if cov is None else cov)


def test_sigma_weights_and_offsets():
    pts, w = est.sigma_points(est.Belief(np.zeros(5), np.eye(5)), 1.0)
    assert w[0] == pytest.approx(1 / 6) and w[1:] == pytest.approx(np.full(10, 1 / 12))
    assert np.linalg.norm(pts[1:], axis=1) == pytest.approx(np.full(10, math.sqrt(6)))
    pts, _ = est.sigma_points(est.Belief(np.ones(5), np.zeros((5, 5))))
    assert np.array_equal(pts, np.ones((11, 5)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_sigma_points_match_moments(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(5, 5))
    cov = A @ A.T + 1e-3 * np.eye(5)
    mean = rng.normal(size=5)
    pts, w = est.sigma_points(est.Belief(mean, cov))
    m = w @ pts
    d = pts - m
    assert np.allclose(m, mean, atol=1e-10)
    assert np.allclose((d * w[:, None]).T @ d, cov, atol=1e-10)


def test_predict_examples():
    noise = est.NoiseConfig()
    b = _belief()
    out = est.predict(b, ForceCommand((0.0, 0.0)), (0, 0, 0), STANDING, SUBJECT_H1, 0.4, noise)
    assert np.allclose(out.mean, b.mean, atol=1e-12)
    assert np.allclose(out.cov, b.cov + noise.Q, atol=1e-12)
    # a known heading makes the robot block exact
    sure = _belief(cov=np.diag([0.01, 0.01, 0.01, 0.01, 0.0]))
    out = est.predict(sure, ForceCommand((0.0, 0.0)), (0.5, 0, 0), STANDING, SUBJECT_H1, 0.4, noise)
    assert out.mean - sure.mean == pytest.approx((0, 0, 0.2, 0, 0), abs=1e-12)
    out = est.predict(b, ForceCommand((20.0, 0.0)), (0, 0, 0), WALKING, SUBJECT_H1, 0.4, noise)
    assert out.mean - b.mean == pytest.approx((0.0724, 0, 0, 0, 0), abs=1e-12)


def linear_kalman_gap(steps: int = 1000) -> float:
    """Standing human, pure rotation input and a linear sensor: the unscented filter is exact."""
    rng = np.random.default_rng(0)
    noise = est.NoiseConfig()
    H = np.eye(5)
    H[0, 2] = 0.3
    R = np.diag(noise.r)
    T = 0.1
    b = est.Belief(np.array([0.0, 0.0, 1.7, 0.0, 0.1]), np.diag([0.3, 0.3, 0.1, 0.1, 0.05]))
    m, P = b.mean.copy(), b.cov.copy()
    worst = 0.0
    truth = m.copy()
    for k in range(steps):
        w = 0.05 * math.sin(0.01 * k)
        b = est.predict(b, ForceCommand((0.0, 0.0)), (0.0, 0.0, w), STANDING, SUBJECT_H1, T, noise)
        m = m + np.array([0, 0, 0, 0, T * w])
        P = P + noise.Q
        truth[4] = (truth[4] + T * w)
        z = H @ truth + rng.normal(0, 1, 5) * np.sqrt(noise.r)
        b = est.unscented_update(b, z, lambda X: X @ H.T, R, noise.k, obs_angles=())
        S = H @ P @ H.T + R
        K = P @ H.T @ np.linalg.inv(S)
        m = m + K @ (z - H @ m)
        P = (np.eye(5) - K @ H) @ P
        P = 0.5 * (P + P.T)
        worst = max(worst, np.abs(b.mean - m).max(), np.abs(b.cov - P).max())
    assert abs(truth[4]) < math.pi   # no wrapping involved
    return worst


def test_standing_filter_matches_linear_kalman():
    assert linear_kalman_gap() <= 1e-8


def test_update_zero_innovation():
    b = _belief()
    # the filter's own predicted observation: weighted sigma-point images
    pts, w = est.sigma_points(b)
    Z = est.observe(pts)
    zhat = w @ Z
    for a in est.OBS_ANGLES:
        zhat[a] = Z[0, a] + w @ np.angle(np.exp(1j * (Z[:, a] - Z[0, a])))
    out = est.update(b, zhat)
    assert np.allclose(out.mean, b.mean, atol=1e-12)
    assert out.trace <= b.trace
    # with a tight prior h(mean) is the predicted observation up to second order
    tight = _belief(cov=np.eye(5) * 1e-8)
    assert np.allclose(est.update(tight, est.observe(tight.mean)).mean, tight.mean, atol=1e-7)


def test_precise_pose_noisy_length_shrinks_human_variance():
    cov = np.diag([0.04, 0.04, 1e-6, 1e-6, 1e-6])
    b = _belief(cov=cov)
    noise = est.NoiseConfig(r=(0.05 ** 2, 1.0, 1e-8, 1e-8, 1e-8))
    out = est.update(b, est.observe(b.mean) + [0.03, 0, 0, 0, 0], noise=noise)
    assert out.cov[0, 0] + out.cov[1, 1] < cov[0, 0] + cov[1, 1]


@given(st.floats(-math.pi, math.pi))
def test_observation_invariant_to_full_turns(theta):
    x = np.array([0.1, -0.3, 1.5, 0.2, theta])
    d = est.observe(x) - est.observe(x + [0, 0, 0, 0, 2 * math.pi])
    d[[1, 4]] = np.angle(np.exp(1j * d[[1, 4]]))
    assert np.abs(d).max() <= 1e-9


def random_walk_covariance_check(steps: int = 10_000, seed: int = 5) -> tuple[bool, float]:
    """(symmetric at every step, smallest eigenvalue seen) over random predict/update steps."""
    rng = np.random.default_rng(seed)
    noise = est.NoiseConfig()
    b = _belief()
    truth = b.mean.copy()
    symmetric, eig_min = True, math.inf
    for k in range(steps):
        q = int(rng.integers(2))
        f = ForceCommand.polar(rng.uniform(0, 25), rng.uniform(-math.pi, math.pi))
        u = (rng.uniform(-0.5, 0.8), rng.uniform(-0.25, 0.25), rng.uniform(-1, 1))
        b = est.predict(b, f, u, q, SUBJECT_H1, 0.1, noise)
        truth = est.process_model(truth, f, u, q, SUBJECT_H1, 0.1)
        if k % 2 == 0:
            b = est.update(b, est.observe(truth) + rng.normal(0, 1, 5) * np.sqrt(noise.r), noise=noise)
        symmetric &= bool(np.array_equal(b.cov, b.cov.T))
        eig_min = min(eig_min, b.eig_min)
    return symmetric, eig_min


def test_covariance_stays_symmetric_psd():
    symmetric, eig_min = random_walk_covariance_check()
    assert symmetric and eig_min >= -1e-12


def test_camera_round_trip_and_flat_camera():
    s = SystemState((1.0, 2.0), (2.5, 2.6), 0.7)
    z = est.synthesize_observation(s, GEO)
    assert est.recover_human(z, GEO) == pytest.approx(s.human, abs=1e-9)
    flat = est.CameraModel(height=1.0, mount=1.0, inclination=0.0)
    assert est.camera_depth(2.3, flat) == 2.3 and est.horizontal_distance(2.3, flat) == 2.3
    with pytest.raises(ValueError):
        est.synthesize_observation(SystemState((0, 0), (9, 0), 0.0), GEO)


def test_observation_noise_matches_r():
    s = SystemState((0.0, 0.0), (1.7, 0.3), 0.2)
    noise = est.NoiseConfig()
    clean = est.synthesize_observation(s, GEO)
    rng = np.random.default_rng(8)
    draws = np.array([est.synthesize_observation(s, GEO, noise=noise, rng=rng) for _ in range(10_000)])
    d = draws - clean
    d[:, [1, 4]] = np.angle(np.exp(1j * d[:, [1, 4]]))
    var = d.var(axis=0)
    assert np.all(np.abs(var / np.array(noise.r) - 1.0) <= 0.10)


def test_repeated_updates_shrink_then_settle():
    rng = np.random.default_rng(2)
    noise = est.NoiseConfig()
    b = est.Belief(np.array([0.0, 0.0, 1.725, 0.0, 0.0]), np.diag([0.25, 0.25, 0.04, 0.04, 0.03]))
    truth = SystemState((0.05, -0.05), (1.76, 0.02), 0.02)
    traces = [b.trace]
    for _ in range(200):
        b = est.predict(b, ForceCommand((0.0, 0.0)), (0, 0, 0), STANDING, SUBJECT_H1, 0.1, noise)
        b = est.update(b, est.synthesize_observation(truth, GEO, noise=noise, rng=rng), noise=noise)
        traces.append(b.trace)
    traces = np.array(traces)
    assert traces[-1] < 0.25 * traces[0]
    tail = traces[100:]
    assert tail.max() - tail.min() < 0.05 * tail.mean()


def test_noise_config_validation():
    with pytest.raises(ValueError):
        est.NoiseConfig(q=(1, 1, 1, 1))
    with pytest.raises(ValueError):
        est.NoiseConfig(r=(0, 1, 1, 1, 1))
    nc = est.NoiseConfig.from_fit(0.05, 0.4)
    assert nc.q[0] == pytest.approx((0.05 * 0.4) ** 2)
