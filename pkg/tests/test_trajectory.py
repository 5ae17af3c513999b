import pytest
from gmpy2 import mpfr

from fgbfi import (
    BallEscapeError,
    BoundingBall,
    ConfigurationError,
    PrecisionConfig,
    ball_contains,
    construct_trajectory,
    dense_sample,
    estimate_ball,
    tumor_system,
    verify_round_trip,
)
from fgbfi.trajectory import REMEDIATION
from conftest import X0_TUMOR_A, wide_ball


@pytest.fixture(scope="module")
def fast():
    cfg = PrecisionConfig(bits=64, eps_series="1e-12")
    sys_ = tumor_system("5", "3", "0.7", cfg)
    ball = estimate_ball(sys_, X0_TUMOR_A, "5", cfg)
    return cfg, sys_, ball


def test_single_clamped_step_when_T_is_tiny(fast):
    cfg, sys_, ball = fast
    traj = construct_trajectory(sys_, X0_TUMOR_A, "1e-6", "forward", ball, cfg)
    assert traj.n_steps == 1
    with cfg.context():
        assert traj.steps[0].dt == mpfr("1e-6")
    # a single clamped step still yields degree statistics
    assert traj.config_min_degree == traj.min_degree


def test_time_tiling_is_exact(fast):
    cfg, sys_, ball = fast
    traj = construct_trajectory(sys_, X0_TUMOR_A, "0.5", "forward", ball, cfg)
    with cfg.context():
        acc = mpfr(0)
        for st in traj.steps:
            acc = acc + abs(st.dt)
        assert acc == traj.total_time == mpfr("0.5")
        # t_start values chain consistently
        t = mpfr(0)
        for st in traj.steps:
            assert st.t_start == t
            t = t + abs(st.dt)


def test_construction_is_deterministic(fast):
    cfg, sys_, ball = fast
    a = construct_trajectory(sys_, X0_TUMOR_A, "0.5", "forward", ball, cfg)
    b = construct_trajectory(sys_, X0_TUMOR_A, "0.5", "forward", ball, cfg)
    assert a.n_steps == b.n_steps
    assert all(x == y for x, y in zip(a.endpoint, b.endpoint))
    assert all(s.dt == t.dt and s.degree == t.degree
               for s, t in zip(a.steps, b.steps))


def test_zero_time_trajectory(fast):
    cfg, sys_, ball = fast
    traj = construct_trajectory(sys_, X0_TUMOR_A, "0", "forward", ball, cfg)
    assert traj.n_steps == 0
    assert all(a == b for a, b in zip(traj.endpoint, traj.x0))


def test_direction_validation(fast):
    cfg, sys_, ball = fast
    with pytest.raises(ConfigurationError):
        construct_trajectory(sys_, X0_TUMOR_A, "0.1", "sideways", ball, cfg)


def test_x0_outside_ball_rejected(fast):
    cfg, sys_, _ = fast
    with cfg.context():
        tiny = BoundingBall(center=(mpfr(100), mpfr(100), mpfr(100)),
                            radius=mpfr(1))
    with pytest.raises(ConfigurationError):
        construct_trajectory(sys_, X0_TUMOR_A, "0.1", "forward", tiny, cfg)


def test_ball_contains_closed_boundary():
    with PrecisionConfig().context():
        ball = BoundingBall(center=(mpfr(1), mpfr(2), mpfr(3)), radius=mpfr(2))
        assert ball_contains(ball, (mpfr(1), mpfr(2), mpfr(3)))
        assert ball_contains(ball, (mpfr(3), mpfr(2), mpfr(3)))      # distance == radius
        assert not ball_contains(ball, (mpfr(4), mpfr(2), mpfr(3)))  # radius + 1 outside
    with pytest.raises(ValueError):
        ball_contains(ball, (1, 2))


def test_coarse_backward_run_escapes_with_remediation():
    cfg = PrecisionConfig(bits=40, eps_series="1e-3", eps_roundtrip="1e-2")
    sys_ = tumor_system("5", "3", "0.7", cfg)
    ball = estimate_ball(sys_, X0_TUMOR_A, "27.327", cfg)
    with pytest.raises(BallEscapeError) as exc:
        construct_trajectory(sys_, X0_TUMOR_A, "27.327", "backward", ball, cfg)
    assert REMEDIATION in str(exc.value)
    assert float(exc.value.escape_time) > 0


def test_verify_zero_time_trivially_passes(fast):
    cfg, sys_, ball = fast
    report = verify_round_trip(sys_, X0_TUMOR_A, "0", ball, cfg)
    assert report.passed
    assert report.max_deviation == 0


def test_verify_low_precision_discriminates():
    """The check must reject a 64-bit / 1e-12 attempt at the long run."""
    cfg = PrecisionConfig(bits=64, eps_series="1e-12")
    sys_ = tumor_system("5", "3", "0.7", cfg)
    ball = estimate_ball(sys_, X0_TUMOR_A, "27.327", cfg)
    try:
        report = verify_round_trip(sys_, X0_TUMOR_A, "27.327", ball, cfg)
        assert not report.passed
    except BallEscapeError as exc:
        assert exc.leg in ("forward", "backward")


def test_dense_sample_grid_equals_T(fast):
    cfg, sys_, ball = fast
    traj = construct_trajectory(sys_, X0_TUMOR_A, "0.25", "forward", ball, cfg)
    samples = dense_sample(traj, "0.25")
    assert len(samples) == 2
    with cfg.context():
        assert samples[0][0] == 0
        assert samples[1][0] == mpfr("0.25")
    assert all(a == b for a, b in zip(samples[0][1], traj.x0))
    assert all(a == b for a, b in zip(samples[1][1], traj.endpoint))


def test_dense_sample_step_boundary_continuity(fast):
    cfg, sys_, ball = fast
    traj = construct_trajectory(sys_, X0_TUMOR_A, "0.3", "forward", ball, cfg)
    assert traj.n_steps >= 2
    with cfg.context():
        boundary = abs(traj.steps[0].dt)
        samples = dense_sample(traj, boundary)  # grid hits the first boundary
        t1, state1 = samples[1]
        assert t1 == boundary
        for p in range(3):
            assert state1[p] == traj.steps[1].coeffs[p][0]


def test_dense_sample_final_point_is_T(fast):
    cfg, sys_, ball = fast
    traj = construct_trajectory(sys_, X0_TUMOR_A, "0.25", "forward", ball, cfg)
    samples = dense_sample(traj, "0.1")   # 0.25 not a multiple of 0.1
    with cfg.context():
        assert samples[-1][0] == mpfr("0.25")
    assert all(a == b for a, b in zip(samples[-1][1], traj.endpoint))


def test_dense_sample_validation(fast):
    cfg, sys_, ball = fast
    traj = construct_trajectory(sys_, X0_TUMOR_A, "0.25", "forward", ball, cfg)
    with pytest.raises(ValueError):
        dense_sample(traj, "0")
    with pytest.raises(ValueError):
        dense_sample(traj, "0.5")
    lean = construct_trajectory(sys_, X0_TUMOR_A, "0.25", "forward", ball, cfg,
                                keep_steps=False)
    with pytest.raises(ValueError):
        dense_sample(lean, "0.1")


def test_keep_steps_false_retains_stats(fast):
    cfg, sys_, ball = fast
    full = construct_trajectory(sys_, X0_TUMOR_A, "0.5", "forward", ball, cfg)
    lean = construct_trajectory(sys_, X0_TUMOR_A, "0.5", "forward", ball, cfg,
                                keep_steps=False)
    assert lean.steps == []
    assert lean.n_steps == full.n_steps
    assert lean.stats == full.stats
    assert all(a == b for a, b in zip(lean.endpoint, full.endpoint))


def test_sink_receives_every_step(fast):
    cfg, sys_, ball = fast
    seen = []
    construct_trajectory(sys_, X0_TUMOR_A, "0.2", "forward", ball, cfg,
                         sink=lambda st, x: seen.append((st.degree, tuple(x))),
                         keep_steps=False)
    assert seen
    full = construct_trajectory(sys_, X0_TUMOR_A, "0.2", "forward", ball, cfg)
    assert len(seen) == full.n_steps
    assert all(a == b for a, b in zip(seen[-1][1], full.endpoint))


def test_backward_leg_retraces_forward(fast):
    cfg, sys_, ball = fast
    fwd = construct_trajectory(sys_, X0_TUMOR_A, "1", "forward", ball, cfg)
    bwd = construct_trajectory(sys_, fwd.endpoint, "1", "backward", ball, cfg)
    with cfg.context():
        for a, b in zip(bwd.endpoint, fwd.x0):
            assert abs(a - b) < mpfr("1e-9")


def test_estimate_ball_contains_start_and_is_deterministic(fast):
    cfg, sys_, _ = fast
    b1 = estimate_ball(sys_, X0_TUMOR_A, "5", cfg)
    b2 = estimate_ball(sys_, X0_TUMOR_A, "5", cfg)
    assert all(x == y for x, y in zip(b1.center, b2.center))
    assert b1.radius == b2.radius
    assert ball_contains(b1, [mpfr(v) for v in X0_TUMOR_A])


@pytest.mark.slow
def test_round_trip_deviation_contracts_with_eps(cfg160):
    devs = []
    for eps in ("1e-20", "1e-30", "1e-40"):
        cfg = PrecisionConfig(bits=160, eps_series=eps)
        sys_ = tumor_system("5", "3", "0.7", cfg)
        report = verify_round_trip(sys_, X0_TUMOR_A, "27.327",
                                   wide_ball(), cfg)
        devs.append(float(report.max_deviation))
    # monotone decrease, with a factor-10 safety margin
    assert devs[0] > devs[1] / 10
    assert devs[1] > devs[2] / 10
    assert devs[0] > devs[1] > devs[2]


def test_estimate_ball_backward_covers_growing_linear_orbit():
    """A trustworthy backward probe (non-chaotic system) joins the ball."""
    from fgbfi import QuadraticSystem
    cfg = PrecisionConfig(bits=64, eps_series="1e-12")
    decay = QuadraticSystem(
        "decay", [["-2", "0"], ["0", "-1"]],
        [[["0", "0"], ["0", "0"]]] * 2, bits=64,
    )
    ball = estimate_ball(decay, ["1", "1"], "1", cfg, direction=-1)
    # backward orbit reaches (e^2, e^1): must be inside
    with cfg.context():
        assert ball_contains(ball, (mpfr("7.389"), mpfr("2.718")))
    # and the backward construction itself stays contained
    traj = construct_trajectory(decay, ["1", "1"], "1", "backward", ball, cfg)
    with cfg.context():
        assert abs(traj.endpoint[0] - mpfr("7.38905609893")) < mpfr("1e-9")


def test_estimate_ball_backward_chaotic_falls_back_to_forward():
    cfg = PrecisionConfig(bits=64, eps_series="1e-12")
    sys_ = tumor_system("5", "3", "0.7", cfg)
    fwd = estimate_ball(sys_, X0_TUMOR_A, "27.327", cfg, direction=1)
    bwd = estimate_ball(sys_, X0_TUMOR_A, "27.327", cfg, direction=-1)
    # the exploding backward probe is rejected: same ball as forward
    assert all(a == b for a, b in zip(fwd.center, bwd.center))
    assert fwd.radius == bwd.radius
