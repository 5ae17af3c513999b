"""Arbitrary-precision floating-point context and precision bookkeeping.

All arithmetic in this package runs on MPFR big floats (via gmpy2) with a
fixed mantissa width and round-to-nearest-even.  A :class:`PrecisionConfig`
bundles the mantissa width with the series / round-trip tolerances and the
step-size margin, validates their mutual consistency, and hands out an
activated gmpy2 context.
"""

from __future__ import annotations

import numbers
from dataclasses import dataclass

import gmpy2
from gmpy2 import mpfr

__all__ = [
    "ConfigurationError",
    "PrecisionConfig",
    "machine_epsilon",
    "make_context",
    "to_mpfr",
    "format_mpfr",
]

MIN_MANTISSA_BITS = 24
#: ratio enforced between machine epsilon and the series tolerance
DEFAULT_GUARD_FACTOR = 1e-6


class ConfigurationError(ValueError):
    """A precision parameter violates its invariants."""


def _decimal_literal(value) -> str:
    """Normalize a numeric input to the decimal string that names it.

    Strings pass through untouched so that values such as ``"1e-40"`` reach
    MPFR as a single decimal-to-binary conversion (no double rounding through
    a Python float).
    """
    if isinstance(value, str):
        return value
    if isinstance(value, numbers.Integral):
        return str(int(value))
    return repr(float(value))


def machine_epsilon(mantissa_bits: int):
    """Return 2**(1 - mantissa_bits), the spacing of floats just above 1.

    Computed exactly (a power of two is representable at any precision).
    """
    if mantissa_bits < 2:
        raise ConfigurationError(
            f"mantissa_bits must be >= 2, got {mantissa_bits}"
        )
    with gmpy2.context(precision=max(mantissa_bits, 2)):
        return gmpy2.exp2(mpfr(1 - mantissa_bits))


@dataclass(frozen=True)
class PrecisionConfig:
    """Numeric working profile shared by every stage of a run.

    Parameters
    ----------
    bits:
        Mantissa width in bits of every big float created under this config.
    eps_series:
        Tolerance for truncating local power-series expansions.
    eps_roundtrip:
        Maximum per-coordinate deviation allowed between the initial point
        and the point recovered after backward integration.
    delta:
        Positive margin added to the step-size denominator (units 1/time);
        keeps the step strictly inside the guaranteed convergence radius.
    degree_cap:
        Hard ceiling on the polynomial degree of a single step; hitting it
        means the requested tolerance is unreachable at this precision.
    guard_factor:
        Required ratio eps_machine <= eps_series * guard_factor.

    Tolerances may be given as decimal strings (``"1e-40"``) to avoid a
    float64 round trip.
    """

    bits: int = 160
    eps_series: str = "1e-40"
    eps_roundtrip: str = "1e-10"
    delta: str = "1"
    degree_cap: int = 200
    guard_factor: float = DEFAULT_GUARD_FACTOR

    def __post_init__(self):
        object.__setattr__(self, "eps_series", _decimal_literal(self.eps_series))
        object.__setattr__(self, "eps_roundtrip", _decimal_literal(self.eps_roundtrip))
        object.__setattr__(self, "delta", _decimal_literal(self.delta))
        self.validate()

    def validate(self):
        if self.bits < MIN_MANTISSA_BITS:
            raise ConfigurationError(
                f"bits >= {MIN_MANTISSA_BITS} required, got {self.bits}"
            )
        if self.degree_cap < 2:
            raise ConfigurationError(
                f"degree_cap >= 2 required, got {self.degree_cap}"
            )
        with gmpy2.context(precision=self.bits):
            eps_p = mpfr(self.eps_series)
            eps_r = mpfr(self.eps_roundtrip)
            delta = mpfr(self.delta)
            if not eps_p > 0:
                raise ConfigurationError("eps_series > 0 required")
            if not eps_r > 0:
                raise ConfigurationError("eps_roundtrip > 0 required")
            if not delta > 0:
                raise ConfigurationError("delta > 0 required")
            eps_m = gmpy2.exp2(mpfr(1 - self.bits))
            if not eps_m <= eps_p * mpfr(repr(self.guard_factor)):
                raise ConfigurationError(
                    "eps_machine <= eps_series * guard_factor violated: "
                    f"2^(1-{self.bits}) = {format_mpfr(eps_m, 6, 'e')} > "
                    f"{self.eps_series} * {self.guard_factor:g}"
                )
            if not eps_p < eps_r:
                raise ConfigurationError(
                    f"eps_series < eps_roundtrip violated: "
                    f"{self.eps_series} >= {self.eps_roundtrip}"
                )

    # -- context handling ---------------------------------------------------

    def context(self):
        """Context manager activating this precision on the current thread."""
        return gmpy2.context(precision=self.bits)

    def activate(self):
        """Make this precision current on the calling thread."""
        gmpy2.set_contextgmpy2.context(precision=self.bits)

    # -- derived quantities (valid under the active context) ----------------

    @property
    def eps_machine(self):
        return gmpy2.exp2(mpfr(1 - self.bits))

    @property
    def eps_series_value(self):
        return mpfr(self.eps_series)

    @property
    def eps_roundtrip_value(self):
        return mpfr(self.eps_roundtrip)

    @property
    def delta_value(self):
        return mpfr(self.delta)

    def describe(self) -> dict:
        """Plain-data summary used in manifests and report headers."""
        return {
            "bits": self.bits,
            "eps_series": self.eps_series,
            "eps_roundtrip": self.eps_roundtrip,
            "delta": self.delta,
            "degree_cap": self.degree_cap,
            "guard_factor": self.guard_factor,
        }


def make_context(config: PrecisionConfig):
    """Validate ``config`` and return its activated gmpy2 context handle."""
    config.validate()
    ctx = gmpy2.context(precision=config.bits)
    gmpy2.set_context(ctx)
    return ctx


def to_mpfr(value):
    """Convert a number to mpfr under the active context.

    Strings and integers convert with a single correctly-rounded step;
    floats are accepted as-is (their binary value is used verbatim).
    """
    if isinstance(value, str):
        return mpfr(value)
    return mpfr(value)


def format_mpfr(x, digits: int = 10, style: str = "f") -> str:
    """Format an mpfr as fixed-point ('f') or scientific ('e') decimal.

    gmpy2's own 'e' formatting is unreliable in some builds, so scientific
    notation is assembled from gmpy2.digits().
    """
    x = mpfr(x)
    if style == "f":
        return format(x, f".{digits}f")
    if style != "e":
        raise ValueError(f"unknown style {style!r}")
    if gmpy2.is_nan(x):
        return "nan"
    if gmpy2.is_infinite(x):
        return "inf" if x > 0 else "-inf"
    if x == 0:
        return "0." + "0" * digits + "e+00"
    digs, exp, _ = gmpy2.digits(x, 10, digits + 1)
    sign = ""
    if digs.startswith("-"):
        sign, digs = "-", digs[1:]
    # digits() yields  0.<digs> * 10**exp
    mantissa = digs[0] + "." + digs[1:]
    e10 = exp - 1
    return f"{sign}{mantissa}e{e10:+03d}"
