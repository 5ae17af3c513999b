import random

import pytest
from gmpy2 import mpfr

from fgbfi import (
    BoundingBall,
    PrecisionConfig,
    estimate_ball,
    lorenz_system,
    tumor_system,
)

# initial points used throughout the experiments
X0_TUMOR_A = ("0.1450756817", "0.8395885828", "9.954786333")   # I=0.7 runs
X0_TUMOR_B = ("1.292927957", "0.5183621413", "1.168939477")    # I=0.4 runs
X0_LORENZ = ("-8", "8", "27")


@pytest.fixture(scope="session")
def cfg160():
    return PrecisionConfig()


@pytest.fixture(scope="session")
def cfg_fast():
    """Cheap profile for structural tests that do not need 1e-40 accuracy."""
    return PrecisionConfig(bits=64, eps_series="1e-12")


@pytest.fixture(scope="session")
def tumor_a(cfg160):
    return tumor_system("5", "3", "0.7", cfg160)


@pytest.fixture(scope="session")
def tumor_b(cfg160):
    return tumor_system("5", "3", "0.4", cfg160)


@pytest.fixture(scope="session")
def lorenz(cfg160):
    return lorenz_system(config=cfg160)


@pytest.fixture(scope="session")
def ball_a(tumor_a, cfg160):
    return estimate_ball(tumor_a, X0_TUMOR_A, "27.327", cfg160)


@pytest.fixture(scope="session")
def ball_b(tumor_b, cfg160):
    return estimate_ball(tumor_b, X0_TUMOR_B, "30", cfg160)


def wide_ball(n=3, radius="1e6"):
    return BoundingBall(center=tuple(mpfr(0) for _ in range(n)),
                        radius=mpfr(radius))


def tumor_rhs_textual(N, H, I, x):
    """The three growth equations written out verbatim, term by term.

    Independent oracle for the canonical-form evaluation: no matrices, no
    shared code path with QuadraticSystem.rhs_active.
    """
    x1, x2, x3 = x
    d1 = 2 * N * x1 - x1 * x1 - H * x1 * x3
    d2 = ((4 - I) * x2 + mpfr("0.5") * x1 * x1 - mpfr("0.14") * x2 * x2
          - mpfr("0.5") * H * x2 * x3 + mpfr("0.001") * x3 * x3)
    d3 = (-I * x3 + mpfr("0.07") * x2 * x2 + mpfr("0.5") * H * x2 * x3
          - mpfr("0.002") * x3 * x3)
    return [d1, d2, d3]


def lorenz_rhs_textual(sigma, r, b, x):
    x1, x2, x3 = x
    return [sigma * (x2 - x1), r * x1 - x2 - x1 * x3, x1 * x2 - b * x3]


def random_states(seed, count, ranges):
    """Deterministic batch of state tuples as decimal strings."""
    rnd = random.Random(seed)
    out = []
    for _ in range(count):
        out.append(tuple(repr(rnd.uniform(lo, hi)) for lo, hi in ranges))
    return out
