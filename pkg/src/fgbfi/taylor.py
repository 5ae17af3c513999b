"""Single-step power-series engine.

A step expands the local solution of dX/dt = A X + Phi(X) as per-coordinate
polynomials in t.  Coefficients follow the quadratic-system recurrence

    alpha_{p,i+1} = [ sum_q A_pq alpha_{q,i}
                      + sum_{(u,v) in nz(Q_p)} (Q_p)_{uv} c_{uv,i} ] / (i+1)

where c_{uv,i} is the order-i Cauchy product of the u and v coefficient
sequences.  The guaranteed step length 1/(h2 + delta) keeps the expansion
inside its convergence radius, so the adaptive truncation below always
terminates for sane tolerances.

All functions ending in ``_active`` assume the caller holds the right gmpy2
context; the public wrappers activate the system's own precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from operator import mul

import gmpy2
from gmpy2 import mpfr

from .systems import QuadraticSystem

__all__ = [
    "AccuracyError",
    "StepBudget",
    "TaylorStep",
    "step_size",
    "compute_coefficients",
    "cauchy_products",
    "evaluate",
]


class AccuracyError(ArithmeticError):
    """The series tolerance is unreachable within the degree cap."""


@dataclass(frozen=True)
class StepBudget:
    """Guaranteed-convergence step bound at one initial condition."""

    h1: object
    h2: object
    dt_max: object


class TaylorStep:
    """One integration step: coefficient arrays and the signed step taken.

    ``coeffs[p][i]`` is the order-i coefficient of coordinate p; index 0 is
    the step's initial condition.  ``dt`` is negative for backward steps.
    """

    __slots__ = ("t_start", "dt", "coeffs", "degree")

    def __init__(self, t_start, dt, coeffs, degree):
        self.t_start = t_start
        self.dt = dt
        self.coeffs = coeffs
        self.degree = degree

    def __repr__(self):
        return (
            f"TaylorStep(t_start={float(self.t_start):.6g}, "
            f"dt={float(self.dt):.6g}, degree={self.degree})"
        )


def _conv(a, b, i):
    """Order-i coefficient of the product of series a and b.

    Accumulates a[0]*b[i] + a[1]*b[i-1] + ... in ascending-j order; every
    Cauchy product in the package (and the brute-force test oracle) uses
    this same primitive so results agree bit for bit.
    """
    return sum(map(mul, a, b[i::-1]))


def _advance_order(system, coeffs, i):
    """Append the order-(i+1) coefficient to every coordinate sequence."""
    pairs = system.pairs
    cvals = [_conv(coeffs[u], coeffs[v], i) for (u, v) in pairs]
    div = i + 1
    for p in range(system.n):
        acc = mpfr(0)
        for j, coeff in system.a_terms[p]:
            acc += coeff * coeffs[j][i]
        for k, coeff in system.q_terms[p]:
            acc += coeff * cvals[k]
        coeffs[p].append(acc / div)


def _step_size_active(system, x, delta):
    h1 = mpfr(0)
    for v in x:
        h1 += abs(v)
    if h1 > 1:
        h2 = system.mu * h1 * h1 + (system.a_norm + 2 * system.mu) * h1
    else:
        h2 = system.a_norm + system.mu
    return StepBudget(h1, h2, 1 / (h2 + delta))


def _compute_step_active(system, x0, dt, eps_series, degree_cap, t_start=None):
    """Adaptive-degree coefficient computation; assumes an active context.

    The series is truncated at the smallest degree d >= 2 whose last two
    terms satisfy |alpha_{p,i}| * |dt|**i < eps_series for every coordinate.
    """
    coeffs = [[v] for v in x0]
    dt_abs = abs(dt)
    pw = mpfr(1)
    prev_small = False
    i = 0
    while True:
        _advance_order(system, coeffs, i)
        order = i + 1
        pw = pw * dt_abs
        small = True
        for p in range(system.n):
            if abs(coeffs[p][order]) * pw >= eps_series:
                small = False
                break
        if small and prev_small and order >= 2:
            degree = order
            break
        if order >= degree_cap:
            worst_p = 0
            worst = mpfr(-1)
            for p in range(system.n):
                mag = abs(coeffs[p][order]) * pw
                if mag > worst:
                    worst, worst_p = mag, p
            raise AccuracyError(
                "accuracy unreachable at this precision: coordinate "
                f"{system.labels[worst_p]} still has term magnitude "
                f"{float(worst):.3g} >= eps_series at degree {degree_cap}"
            )
        prev_small = small
        i = order
    return TaylorStep(
        t_start if t_start is not None else mpfr(0), dt, coeffs, degree
    )


def _extend_to_degree(system, step, target_degree):
    """Grow a step's coefficient arrays up to ``target_degree`` in place."""
    i = len(step.coeffs[0]) - 1
    while i < target_degree:
        _advance_order(system, step.coeffs, i)
        i += 1
    step.degree = target_degree


def _evaluate_active(step, t_local):
    """Horner evaluation of every coordinate polynomial at t_local."""
    out = []
    for cs in step.coeffs:
        acc = cs[-1]
        for k in range(len(cs) - 2, -1, -1):
            acc = acc * t_local + cs[k]
        out.append(acc)
    return out


# ---------------------------------------------------------------------------
# public wrappers
# ---------------------------------------------------------------------------

def step_size(system: QuadraticSystem, x0, delta) -> StepBudget:
    """Guaranteed step bound: h1, h2 and dt_max = 1/(h2 + delta).

    h1 is the sum of absolute initial coordinates; for h1 > 1,
    h2 = mu h1^2 + (|A|_1 + 2 mu) h1, otherwise h2 = |A|_1 + mu.
    """
    if len(x0) != system.n:
        raise ValueError(f"state length {len(x0)} != dimension {system.n}")
    with system.context():
        d = mpfr(delta)
        if not d > 0:
            raise ValueError("delta must be positive")
        return _step_size_active(system, [mpfr(v) for v in x0], d)


def compute_coefficients(system: QuadraticSystem, x0, dt, eps_series,
                         degree_cap, t_start=0) -> TaylorStep:
    """Build the Taylor step of signed length ``dt`` starting at ``x0``.

    The caller is responsible for keeping |dt| within the step_size budget;
    the adaptive truncation then converges below ``eps_series`` or raises
    :class:`AccuracyError` at ``degree_cap``.
    """
    if len(x0) != system.n:
        raise ValueError(f"state length {len(x0)} != dimension {system.n}")
    with system.context():
        return _compute_step_active(
            system,
            [mpfr(v) for v in x0],
            mpfr(dt),
            mpfr(eps_series),
            int(degree_cap),
            t_start=mpfr(t_start),
        )


def cauchy_products(system: QuadraticSystem, coeffs, order: int) -> dict:
    """Order-``order`` Cauchy products for exactly the pairs the system needs.

    Returns ``{(u, v): c_uv}`` for the index pairs with a nonzero entry in
    some Q_p; coefficient sequences must reach index ``order``.
    """
    if any(len(c) < order + 1 for c in coeffs):
        raise ValueError(f"need coefficients through order {order}")
    with system.context():
        return {
            (u, v): _conv(coeffs[u], coeffs[v], order)
            for (u, v) in system.pairs
        }


def evaluate(step: TaylorStep, t_local):
    """Evaluate the step polynomials at local time ``t_local``."""
    prec = step.coeffs[0][0].precision
    with gmpy2.context(precision=prec):
        t = mpfr(t_local)
        if abs(t) > abs(step.dt):
            raise ValueError(
                f"t_local {float(t):.6g} outside the step's validity interval "
                f"|t| <= {float(abs(step.dt)):.6g}"
            )
        return _evaluate_active(step, t)
