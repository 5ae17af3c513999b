"""Post-processing: recurrence scanning and RK4 reference comparisons.

The distance series rho(t) = |X(t) - X(0)| over a dense grid exposes the
Poisson-stable returns of a bounded trajectory as local minima; the RK4
driver reproduces a classical fixed-step reference in the same big-float
context so endpoint differences isolate method error from roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import gmpy2
from gmpy2 import mpfr

from .numerics import PrecisionConfig
from .systems import QuadraticSystem
from .trajectory import Trajectory, dense_sample

__all__ = [
    "ReturnEvent",
    "RK4Comparison",
    "distance_series",
    "find_returns",
    "rk4_integrate",
    "rk4_error",
]


@dataclass(frozen=True)
class ReturnEvent:
    """One rapprochement of the trajectory with its initial point."""

    index: int
    t: object
    state: tuple
    rho: object


@dataclass(frozen=True)
class RK4Comparison:
    """Endpoint disagreement between fixed-step RK4 and a reference."""

    dt_rk: object
    rk4_endpoint: tuple
    reference_endpoint: tuple
    error: object


def distance_series(traj: Trajectory, grid_step):
    """Euclidean distance to the initial point at every dense grid time."""
    samples = dense_sample(traj, grid_step)
    with traj.system.context():
        x0 = traj.x0
        out = []
        for t, state in samples:
            d2 = mpfr(0)
            for a, b in zip(state, x0):
                diff = a - b
                d2 += diff * diff
            out.append((t, gmpy2.sqrt(d2)))
        return out


def find_returns(series, window: int = 5, states=None):
    """Strict local minima of rho over +-window grid points.

    The initial point is always reported as event 0.  Edge points compete
    only against their in-range neighbours, so a descent into the final
    grid point counts as a return there.  ``states``, when given, must align
    with ``series`` and fills each event's state snapshot.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    n = len(series)
    if n == 0:
        return []
    events = []

    def state_at(i):
        return tuple(states[i]) if states is not None else None

    events.append(ReturnEvent(0, series[0][0], state_at(0), series[0][1]))
    rho = [s[1] for s in series]
    for i in range(1, n):
        lo = max(0, i - window)
        hi = min(n - 1, i + window)
        is_min = True
        for j in range(lo, hi + 1):
            if j == i:
                continue
            if not rho[i] < rho[j]:
                is_min = False
                break
        if is_min:
            events.append(
                ReturnEvent(len(events), series[i][0], state_at(i), rho[i])
            )
    return events


def rk4_integrate(system: QuadraticSystem, x0, dt_rk, total_time,
                  config: PrecisionConfig):
    """Classical fixed-step RK4 endpoint, computed in the big-float context.

    The final step is clamped so the grid lands on ``total_time`` exactly.
    """
    system.check_config(config)
    with config.context():
        h_nominal = mpfr(dt_rk)
        if not h_nominal > 0:
            raise ValueError(f"dt_rk must be positive, got {dt_rk}")
        T = mpfr(total_time)
        n = system.n
        x = [mpfr(v) for v in x0]
        if len(x) != n:
            raise ValueError(f"x0 has length {len(x)}, dimension is {n}")
        half = mpfr("0.5")
        sixth = 1 / mpfr(6)
        rhs = system.rhs_active
        t = mpfr(0)
        while t < T:
            rem = T - t
            if h_nominal > rem:
                h = rem
                t_new = T
            else:
                h = h_nominal
                t_new = t + h
            hh = half * h
            k1 = rhs(x)
            k2 = rhs([x[i] + hh * k1[i] for i in range(n)])
            k3 = rhs([x[i] + hh * k2[i] for i in range(n)])
            k4 = rhs([x[i] + h * k3[i] for i in range(n)])
            hs = sixth * h
            x = [
                x[i] + hs * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
                for i in range(n)
            ]
            t = t_new
        return tuple(x)


def rk4_error(system: QuadraticSystem, x0, dt_rk, total_time,
              reference: Trajectory, config: PrecisionConfig) -> RK4Comparison:
    """Euclidean endpoint distance between RK4 and a reference trajectory."""
    with config.context():
        if not mpfr(total_time) == reference.total_time:
            raise ValueError("reference trajectory does not cover [0, T]")
    endpoint = rk4_integrate(system, x0, dt_rk, total_time, config)
    with config.context():
        d2 = mpfr(0)
        for a, b in zip(endpoint, reference.endpoint):
            diff = a - b
            d2 += diff * diff
        return RK4Comparison(
            dt_rk=mpfr(dt_rk),
            rk4_endpoint=endpoint,
            reference_endpoint=reference.endpoint,
            error=gmpy2.sqrt(d2),
        )
