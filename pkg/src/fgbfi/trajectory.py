"""Whole-interval trajectory construction and backward-forward verification.

The construction loop chains guaranteed-convergence Taylor steps until the
requested time span is tiled exactly (the final step is clamped to land on
T).  Every arrival point must stay inside a user-supplied bounding ball;
leaving it is the method's signal that the requested accuracy cannot track
the true solution, and aborts the run.

Verification re-integrates backward from the forward endpoint and compares
the recovered initial point coordinate-wise against the original, together
with the run-global polynomial degree extrema of both legs.
"""

from __future__ import annotations

from dataclasses import dataclass

import gmpy2
from gmpy2 import mpfr

from .numerics import ConfigurationError, PrecisionConfig
from .systems import QuadraticSystem
from .taylor import (
    _compute_step_active,
    _evaluate_active,
    _step_size_active,
)

__all__ = [
    "BallEscapeError",
    "BoundingBall",
    "Trajectory",
    "VerificationReport",
    "ball_contains",
    "construct_trajectory",
    "dense_sample",
    "estimate_ball",
    "verify_round_trip",
    "REMEDIATION",
]

#: diagnostic attached to every ball-escape abort
REMEDIATION = "Decrease the value eps_p and/or eps_m"


class BallEscapeError(RuntimeError):
    """The constructed solution left the bounding ball."""

    def __init__(self, escape_time, leg=None):
        self.escape_time = escape_time
        self.leg = leg
        where = f" during the {leg} leg" if leg else ""
        super().__init__(
            f"accuracy insufficient: trajectory left the bounding ball at "
            f"t = {float(escape_time):.6g}{where}. {REMEDIATION}"
        )


@dataclass(frozen=True)
class BoundingBall:
    """Closed Euclidean ball assumed to contain the studied solution."""

    center: tuple
    radius: object

    def __post_init__(self):
        if not len(self.center):
            raise ConfigurationError("ball center must be non-empty")


def _contains_active(center, radius_sq, x):
    d2 = mpfr(0)
    for c, v in zip(center, x):
        diff = v - c
        d2 += diff * diff
    return d2 <= radius_sq


def ball_contains(ball: BoundingBall, x) -> bool:
    """True when x lies inside or on the sphere bounding ``ball``."""
    if len(x) != len(ball.center):
        raise ValueError(
            f"state length {len(x)} != ball dimension {len(ball.center)}"
        )
    prec = max(getattr(v, "precision", 53) for v in tuple(ball.center) + tuple(x))
    with gmpy2.context(precision=prec):
        c = [mpfr(v) for v in ball.center]
        r = mpfr(ball.radius)
        return _contains_active(c, r * r, [mpfr(v) for v in x])


class Trajectory:
    """Ordered Taylor steps tiling [0, T], plus endpoint and degree stats.

    ``min_degree``/``max_degree`` cover every step.  The configuration
    extrema ``config_min_degree``/``config_max_degree`` exclude the final
    clamped step (whose length is the leftover fraction of T, so its degree
    says nothing about the method configuration); the backward-forward
    degree comparison uses these.
    """

    def __init__(self, system, direction, x0, total_time, steps, endpoint,
                 min_degree, max_degree, n_steps,
                 config_min_degree=None, config_max_degree=None):
        self.system = system
        self.direction = direction
        self.x0 = tuple(x0)
        self.total_time = total_time
        self.steps = steps
        self.endpoint = tuple(endpoint)
        self.min_degree = min_degree
        self.max_degree = max_degree
        self.n_steps = n_steps
        self.config_min_degree = (
            config_min_degree if config_min_degree is not None else min_degree
        )
        self.config_max_degree = (
            config_max_degree if config_max_degree is not None else max_degree
        )

    @property
    def stats(self):
        return {
            "steps": self.n_steps,
            "min_degree": self.min_degree,
            "max_degree": self.max_degree,
            "config_min_degree": self.config_min_degree,
            "config_max_degree": self.config_max_degree,
        }

    def __repr__(self):
        return (
            f"Trajectory({self.system.name!r}, direction={self.direction:+d}, "
            f"T={float(self.total_time):.6g}, steps={self.n_steps}, "
            f"degrees=[{self.min_degree}, {self.max_degree}])"
        )


def _normalize_direction(direction):
    if direction in (1, "forward", "+1", "+"):
        return 1
    if direction in (-1, "backward", "-1", "-"):
        return -1
    raise ConfigurationError(f"direction must be forward/backward, got {direction!r}")


def construct_trajectory(system: QuadraticSystem, x0, total_time, direction,
                         ball: BoundingBall, config: PrecisionConfig,
                         sink=None, keep_steps=True) -> Trajectory:
    """Chain guaranteed Taylor steps over [0, total_time].

    ``direction`` is +1/'forward' or -1/'backward'; time bookkeeping is in
    elapsed (nonnegative) time either way.  ``sink``, when given, receives
    ``(step, arrival_state)`` after each accepted step; with
    ``keep_steps=False`` only endpoint and statistics are retained (dense
    sampling then unavailable).

    Raises :class:`BallEscapeError` when an arrival point leaves the ball.
    """
    system.check_config(config)
    way = _normalize_direction(direction)
    if len(x0) != system.n:
        raise ConfigurationError(
            f"x0 has length {len(x0)}, system dimension is {system.n}"
        )
    if len(ball.center) != system.n:
        raise ConfigurationError(
            f"ball dimension {len(ball.center)} != system dimension {system.n}"
        )
    with config.context():
        T = mpfr(total_time)
        if gmpy2.is_nan(T) or T < 0:
            raise ConfigurationError(f"total_time must be >= 0, got {total_time}")
        eps_p = config.eps_series_value
        delta = config.delta_value
        cap = config.degree_cap
        center = [mpfr(v) for v in ball.center]
        radius_sq = mpfr(ball.radius) ** 2
        x = [mpfr(v) for v in x0]
        if not _contains_active(center, radius_sq, x):
            raise ConfigurationError("x0 lies outside the bounding ball")

        steps = []
        n_steps = 0
        min_deg = None
        max_deg = None
        full_min = None   # extrema over full-budget (unclamped) steps
        full_max = None
        t = mpfr(0)
        while t < T:
            budget = _step_size_active(system, x, delta)
            raw = budget.dt_max
            rem = T - t
            clamped = raw > rem
            if clamped:
                raw = rem
                t_new = T
            else:
                t_new = t + raw
            dt = raw if way == 1 else -raw
            step = _compute_step_active(system, x, dt, eps_p, cap, t_start=t)
            arrival = _evaluate_active(step, dt)
            if not _contains_active(center, radius_sq, arrival):
                raise BallEscapeError(t_new)
            n_steps += 1
            d = step.degree
            if min_deg is None or d < min_deg:
                min_deg = d
            if max_deg is None or d > max_deg:
                max_deg = d
            if not clamped:
                if full_min is None or d < full_min:
                    full_min = d
                if full_max is None or d > full_max:
                    full_max = d
            if keep_steps:
                steps.append(step)
            if sink is not None:
                sink(step, arrival)
            t = t_new
            x = arrival
        if full_min is None:
            # every step was clamped (single-step run): nothing to exclude
            full_min, full_max = min_deg, max_deg
        return Trajectory(
            system, way, [mpfr(v) for v in x0], T, steps, x,
            min_deg, max_deg, n_steps,
            config_min_degree=full_min, config_max_degree=full_max,
        )


def dense_sample(traj: Trajectory, grid_step):
    """Sample a kept-steps trajectory at t = 0, g, 2g, ..., T.

    Sampling evaluates the stored step polynomials (no re-integration); the
    final grid point is exactly T even when the grid does not divide T.
    Times are elapsed times regardless of direction.
    """
    if not traj.steps and traj.n_steps:
        raise ValueError("trajectory was built with keep_steps=False")
    with traj.system.context():
        T = traj.total_time
        g = mpfr(grid_step)
        if not g > 0:
            raise ValueError("grid_step must be positive")
        if g > T:
            raise ValueError("grid_step must not exceed the total time")
        ends = []
        acc = mpfr(0)
        for st in traj.steps:
            acc = acc + abs(st.dt)
            ends.append(acc)
        if ends:
            ends[-1] = T  # the final step is clamped onto T by construction
        samples = []
        idx = 0
        k = 0
        while True:
            t = k * g
            if t > T:
                break
            while idx < len(ends) - 1 and t > ends[idx]:
                idx += 1
            st = traj.steps[idx]
            local = t - st.t_start
            if traj.direction < 0:
                local = -local
            samples.append((t, tuple(_evaluate_active(st, local))))
            if t == T:
                break
            k += 1
        if samples[-1][0] != T:
            samples.append((T, traj.endpoint))
        return samples


@dataclass(frozen=True)
class VerificationReport:
    """Outcome of one backward-forward accuracy check."""

    forward_endpoint: tuple
    backward_endpoint: tuple
    deviations: tuple
    max_deviation: object
    forward_degrees: tuple   # (min, max)
    backward_degrees: tuple  # (min, max)
    eps_roundtrip: str
    passed: bool


def verify_round_trip(system: QuadraticSystem, x0, total_time,
                      ball: BoundingBall, config: PrecisionConfig) -> VerificationReport:
    """Integrate forward over [0, T], back over the same span, and compare.

    Passing requires every coordinate of the recovered initial point to lie
    within eps_roundtrip of the original AND the run-global maximum and
    minimum polynomial degrees of the two legs to coincide.
    """
    system.check_config(config)
    with config.context():
        T = mpfr(total_time)
        x0m = tuple(mpfr(v) for v in x0)
        if T == 0:
            zero = mpfr(0)
            return VerificationReport(
                forward_endpoint=x0m,
                backward_endpoint=x0m,
                deviations=tuple(zero for _ in x0m),
                max_deviation=zero,
                forward_degrees=(None, None),
                backward_degrees=(None, None),
                eps_roundtrip=config.eps_roundtrip,
                passed=True,
            )
    try:
        fwd = construct_trajectory(system, x0, total_time, 1, ball, config,
                                   keep_steps=False)
    except BallEscapeError as exc:
        raise BallEscapeError(exc.escape_time, leg="forward") from None
    try:
        bwd = construct_trajectory(system, fwd.endpoint, total_time, -1, ball,
                                   config, keep_steps=False)
    except BallEscapeError as exc:
        raise BallEscapeError(exc.escape_time, leg="backward") from None
    with config.context():
        deviations = tuple(
            abs(b - a) for a, b in zip(x0m, bwd.endpoint)
        )
        max_dev = max(deviations)
        degrees_match = (
            fwd.config_max_degree == bwd.config_max_degree
            and fwd.config_min_degree == bwd.config_min_degree
        )
        passed = bool(max_dev < config.eps_roundtrip_value) and degrees_match
        return VerificationReport(
            forward_endpoint=fwd.endpoint,
            backward_endpoint=bwd.endpoint,
            deviations=deviations,
            max_deviation=max_dev,
            forward_degrees=(fwd.config_min_degree, fwd.config_max_degree),
            backward_degrees=(bwd.config_min_degree, bwd.config_max_degree),
            eps_roundtrip=config.eps_roundtrip,
            passed=passed,
        )


def estimate_ball(system: QuadraticSystem, x0, total_time,
                  config: PrecisionConfig, inflate=2, samples=4000,
                  direction=1) -> BoundingBall:
    """Bounding ball from a coarse preliminary sweep, radius inflated.

    A fixed-step RK4 probe over [0, total_time] outlines the region the
    solution inhabits; the ball is the midpoint of the per-coordinate extent
    with the largest observed distance inflated by ``inflate``.  Backward
    requests also run a backward probe, but it only contributes if it
    round-trips (re-running it forward recovers the starting point to
    within 0.1% of the sweep extent): a coarse backward probe of a chaotic
    system explodes, and following it would produce an unbounded, useless
    ball, so such runs fall back to the forward (attractor) estimate.
    Deterministic; callers with sharper bounds should supply their own ball.
    """
    system.check_config(config)
    way = _normalize_direction(direction)
    with config.context():
        T = mpfr(total_time)
        if not T > 0:
            raise ConfigurationError("estimate_ball needs total_time > 0")
        n = system.n
        half = mpfr("0.5")
        sixth = 1 / mpfr(6)
        rhs = system.rhs_active
        h_abs = T / samples

        def rk4_sweep(start, h):
            x = [mpfr(v) for v in start]
            pts = [list(x)]
            for _ in range(samples):
                k1 = rhs(x)
                k2 = rhs([x[i] + half * h * k1[i] for i in range(n)])
                k3 = rhs([x[i] + half * h * k2[i] for i in range(n)])
                k4 = rhs([x[i] + h * k3[i] for i in range(n)])
                x = [
                    x[i] + sixth * h * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
                    for i in range(n)
                ]
                if not all(gmpy2.is_finite(v) for v in x):
                    return pts, False
                pts.append(list(x))
            return pts, True

        def extent_center(points):
            lo = [min(p[i] for p in points) for i in range(n)]
            hi = [max(p[i] for p in points) for i in range(n)]
            spread = max(hi[i] - lo[i] for i in range(n))
            return [(lo[i] + hi[i]) * half for i in range(n)], spread

        def max_dist_sq(points, center):
            worst = mpfr(0)
            for pt in points:
                d2 = mpfr(0)
                for i in range(n):
                    diff = pt[i] - center[i]
                    d2 += diff * diff
                if d2 > worst:
                    worst = d2
            return worst

        pts, _ = rk4_sweep(x0, h_abs)
        if way < 0:
            bwd, finite = rk4_sweep(x0, -h_abs)
            if finite:
                ret, ret_finite = rk4_sweep(bwd[-1], h_abs)
                _, spread = extent_center(pts + bwd)
                tol = max(spread, mpfr(1)) * mpfr("1e-3")
                x0m = [mpfr(v) for v in x0]
                if ret_finite and all(
                    abs(a - b) <= tol for a, b in zip(ret[-1], x0m)
                ):
                    pts = pts + bwd

        center, _ = extent_center(pts)
        radius = gmpy2.sqrt(max_dist_sq(pts, center)) * mpfr(inflate)
        if radius == 0:
            radius = mpfr(1)  # equilibrium probe: any positive radius works
        return BoundingBall(center=tuple(center), radius=radius)
