"""Lyapunov spectra via Benettin's algorithm over the variational extension.

Instead of integrating a separately coded linearization, the perturbation
vectors ride along as extra coordinates of the quadratically extended system
(see :func:`fgbfi.systems.extend_with_variational`), so the same
guaranteed-step series engine propagates base state and tangent dynamics
together.

Per segment the m extended solutions share one initial base block.  They are
advanced in lockstep -- common step length (the smallest of the m guaranteed
budgets) and common polynomial degree (the largest adaptive degree) -- which
keeps the m base blocks bit-identical, since the base recurrence never reads
perturbation coordinates.  Exponents accumulate the logarithms of the
Gram-Schmidt pre-normalization norms of the arriving perturbation vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import gmpy2
from gmpy2 import mpfr

from .numerics import ConfigurationError, PrecisionConfig
from .systems import QuadraticSystem, extend_with_variational
from .taylor import (
    _compute_step_active,
    _evaluate_active,
    _extend_to_degree,
    _step_size_active,
)
from .trajectory import BallEscapeError, BoundingBall, Trajectory, dense_sample

__all__ = [
    "LinearDependenceError",
    "PerturbationGroup",
    "LyapunovResult",
    "builtin_groups",
    "gram_schmidt_pass",
    "benettin",
    "kaplan_yorke",
    "divergence_average",
]


class LinearDependenceError(ArithmeticError):
    """A perturbation vector collapsed during orthogonalization."""


@dataclass(frozen=True)
class PerturbationGroup:
    """Initial perturbation directions, stored before normalization."""

    label: str
    vectors: tuple

    def __post_init__(self):
        vs = tuple(tuple(v) for v in self.vectors)
        object.__setattr__(self, "vectors", vs)
        if not vs:
            raise ConfigurationError("perturbation group needs >= 1 vector")


#: stock three-vector groups used throughout the experiments (integer entries
#: are exact at any precision)
_GROUP_TABLE = {
    "I": ((5, 7, 13), (10, -1, 11), (8, 6, 9)),
    "II": ((-6, 13, 5), (63, 1, -17), (31, -7, 19)),
    "III": ((1, -4, 75), (7, -13, 11), (-40, 51, 39)),
    "IV": ((1, 1, 2), (1, -37, 11), (29, -3, 5)),
}


def builtin_groups():
    """The stock perturbation groups, keyed by label."""
    return {
        label: PerturbationGroup(label, vectors)
        for label, vectors in _GROUP_TABLE.items()
    }


@dataclass(frozen=True)
class LyapunovResult:
    """Spectrum estimate plus the run metadata needed to reproduce it."""

    exponents: tuple          # algorithm (Gram-Schmidt) order
    exponents_sorted: tuple   # descending
    d_ky: object
    segments: int
    tau: object
    total_time: object
    group_label: str
    drift: tuple              # |lambda_i(T) - lambda_i(0.9 T)| per exponent
    drift_sum: object         # |sum lambda(T) - sum lambda(0.9 T)|
    bits: int
    eps_series: str

    @property
    def stabilized(self):
        """Largest-exponent drift below 1% (relative, floored at 1e-3)."""
        lam1 = abs(self.exponents_sorted[0])
        scale = max(float(lam1), 1e-3)
        return float(self.drift[0]) < 0.01 * scale


def _gs_pass_active(vectors, eps_machine):
    """Classical Gram-Schmidt; returns (orthonormal frame, pre-norm norms)."""
    frame = []
    norms = []
    threshold = 10 * eps_machine
    for i, vec in enumerate(vectors):
        v = list(vec)
        coefs = []
        for e in frame:
            dot = mpfr(0)
            for a, b in zip(v, e):
                dot += a * b
            coefs.append(dot)
        for dot, e in zip(coefs, frame):
            v = [a - dot * b for a, b in zip(v, e)]
        norm_sq = mpfr(0)
        for a in v:
            norm_sq += a * a
        norm = gmpy2.sqrt(norm_sq)
        if norm < threshold:
            raise LinearDependenceError(
                f"vector {i + 1} is linearly dependent on its predecessors "
                f"(norm {float(norm):.3g} after projection)"
            )
        norms.append(norm)
        frame.append([a / norm for a in v])
    return frame, norms


def gram_schmidt_pass(vectors):
    """Orthonormalize ``vectors`` in order; also return the norms removed.

    The i-th returned norm is the length of vector i after the components
    along vectors 1..i-1 have been projected out (for i = 1, its raw length).
    """
    vecs = [tuple(v) for v in vectors]
    if not vecs:
        raise ValueError("need at least one vector")
    dim = len(vecs[0])
    if any(len(v) != dim for v in vecs):
        raise ValueError("vectors must share one dimension")
    if len(vecs) > dim:
        raise ValueError("more vectors than dimensions")
    prec = max(
        (x.precision for v in vecs for x in v if isinstance(x, mpfr)),
        default=53,
    )
    with gmpy2.context(precision=prec):
        eps_m = gmpy2.exp2(mpfr(1 - prec))
        frame, norms = _gs_pass_active(
            [[mpfr(x) for x in v] for v in vecs], eps_m
        )
        return [tuple(v) for v in frame], norms


def _lockstep_segment(ext, runs, tau, center, radius_sq, base_n,
                      eps_p, cap, delta, t_offset):
    """Advance m extended states over [0, tau] with shared steps.

    Shared dt = min of the per-run guaranteed budgets; shared degree = max of
    the per-run adaptive degrees.  Both choices respect every run's own
    guarantee, and make the base blocks of all runs bit-identical.
    """
    t = mpfr(0)
    while t < tau:
        raw = None
        for state in runs:
            cand = _step_size_active(ext, state, delta).dt_max
            if raw is None or cand < raw:
                raw = cand
        rem = tau - t
        if raw > rem:
            raw = rem
            t_new = tau
        else:
            t_new = t + raw
        steps = [
            _compute_step_active(ext, state, raw, eps_p, cap) for state in runs
        ]
        d_star = max(st.degree for st in steps)
        for st in steps:
            if st.degree < d_star:
                _extend_to_degree(ext, st, d_star)
        runs = [_evaluate_active(st, raw) for st in steps]
        base = runs[0][:base_n]
        d2 = mpfr(0)
        for c, v in zip(center, base):
            diff = v - c
            d2 += diff * diff
        if not d2 <= radius_sq:
            raise BallEscapeError(t_offset + t_new)
        t = t_new
    return runs


def benettin(system: QuadraticSystem, y0, group: PerturbationGroup,
             total_time, segments: int, ball: BoundingBall,
             config: PrecisionConfig, extended=None) -> LyapunovResult:
    """Estimate the Lyapunov spectrum along the solution through ``y0``.

    The time span [0, total_time] splits into ``segments`` equal pieces of
    length tau.  Each iteration orthonormalizes the current perturbation
    vectors (accumulating log norms, except on the very first pass), then
    integrates the extended system once per vector over one segment.  The
    accumulated sums divided by the total time are the exponent estimates,
    reported in Gram-Schmidt order and sorted.

    ``extended`` may pass a precomputed variational extension of ``system``.
    Containment is checked on the base coordinates against ``ball``.
    """
    system.check_config(config)
    if segments < 1:
        raise ConfigurationError("segments must be >= 1")
    ext = extended if extended is not None else extend_with_variational(system)
    if ext.n != 2 * system.n:
        raise ConfigurationError("extended system has the wrong dimension")
    n = system.n
    m = len(group.vectors)
    if m > n:
        raise ConfigurationError(
            f"group has {m} vectors, more than the dimension {n}"
        )
    with config.context():
        T = mpfr(total_time)
        if not T > 0:
            raise ConfigurationError("total_time must be positive")
        tau = T / segments
        eps_p = config.eps_series_value
        eps_m = config.eps_machine
        delta = config.delta_value
        cap = config.degree_cap
        y = [mpfr(v) for v in y0]
        if len(y) != n:
            raise ConfigurationError(f"y0 has length {len(y)}, dimension is {n}")
        center = [mpfr(v) for v in ball.center]
        if len(center) != n:
            raise ConfigurationError("ball dimension != system dimension")
        radius_sq = mpfr(ball.radius) ** 2
        d2 = mpfr(0)
        for c, v in zip(center, y):
            diff = v - c
            d2 += diff * diff
        if not d2 <= radius_sq:
            raise ConfigurationError("y0 lies outside the bounding ball")
        zs = [[mpfr(x) for x in vec] for vec in group.vectors]
        if any(len(z) != n for z in zs):
            raise ConfigurationError("perturbation vectors must have length n")

        acc = [mpfr(0) for _ in range(m)]
        k90 = max(1, (segments * 9) // 10)
        acc90 = None
        t90 = None
        for k in range(segments + 1):
            try:
                frame, norms = _gs_pass_active(zs, eps_m)
            except LinearDependenceError as exc:
                raise LinearDependenceError(
                    f"segment {k}: {exc}"
                ) from None
            if k != 0:
                for i in range(m):
                    acc[i] += gmpy2.log(norms[i])
            if k == k90:
                acc90 = list(acc)
                t90 = k90 * tau
            if k != segments:
                runs = [y + frame[i] for i in range(m)]
                runs = _lockstep_segment(
                    ext, runs, tau, center, radius_sq, n,
                    eps_p, cap, delta, k * tau,
                )
                y = runs[0][:n]
                zs = [run[n:] for run in runs]

        exponents = tuple(a / T for a in acc)
        if acc90 is None or t90 is None or not t90 > 0:
            drift = tuple(mpfr(0) for _ in exponents)
            drift_sum = mpfr(0)
        else:
            drift = tuple(
                abs(exponents[i] - acc90[i] / t90) for i in range(m)
            )
            total_now = sum(exponents, mpfr(0))
            total_90 = sum((a / t90 for a in acc90), mpfr(0))
            drift_sum = abs(total_now - total_90)
        exponents_sorted = tuple(sorted(exponents, reverse=True))
        d_ky = kaplan_yorke(exponents_sorted) if m > 0 else mpfr(0)
        return LyapunovResult(
            exponents=exponents,
            exponents_sorted=exponents_sorted,
            d_ky=d_ky,
            segments=segments,
            tau=tau,
            total_time=T,
            group_label=group.label,
            drift=drift,
            drift_sum=drift_sum,
            bits=config.bits,
            eps_series=config.eps_series,
        )


def kaplan_yorke(exponents):
    """Kaplan-Yorke dimension j + (sum_{i<=j} lambda_i) / |lambda_{j+1}|.

    j is the largest index whose descending-order partial sum is still
    nonnegative; all-negative spectra give 0, all-nonnegative sums give n.
    Input order does not matter (sorted internally).
    """
    lams = list(exponents)
    if not lams:
        raise ValueError("need at least one exponent")
    prec = max(
        (x.precision for x in lams if isinstance(x, mpfr)), default=53
    )
    with gmpy2.context(precision=prec):
        lams = sorted((mpfr(x) for x in lams), reverse=True)
        n = len(lams)
        partial = mpfr(0)
        j = 0
        best_sum = None
        s = mpfr(0)
        for k in range(n):
            s = s + lams[k]
            if s >= 0:
                j = k + 1
                best_sum = mpfr(s)
        if j == 0:
            return mpfr(0)
        if j == n:
            return mpfr(n)
        nxt = lams[j]
        if nxt == 0:
            raise ArithmeticError(
                "degenerate spectrum: zero exponent after the last "
                "nonnegative partial sum"
            )
        return j + best_sum / abs(nxt)


def divergence_average(traj: Trajectory, grid_step):
    """Trapezoidal time average of trace J along a dense-sampled trajectory.

    trace J(X) = trace A + sum_p <(Q_p + Q_p^T) X, e_p>; its time average
    over the exact solution equals the sum of the Lyapunov exponents, which
    makes this an independent cross-check on Benettin estimates.
    """
    samples = dense_sample(traj, grid_step)
    sys = traj.system
    with sys.context():
        values = []
        for t, state in samples:
            tr = mpfr(sys.trace_a)
            for w, x in zip(sys.trace_w, state):
                tr += w * x
            values.append((t, tr))
        total = mpfr(0)
        half = mpfr("0.5")
        for (t0, f0), (t1, f1) in zip(values, values[1:]):
            total += (t1 - t0) * (f0 + f1) * half
        span = values[-1][0] - values[0][0]
        if not span > 0:
            raise ValueError("trajectory must span positive time")
        return total / span
