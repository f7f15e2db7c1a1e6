"""Unit conventions.

Everything inside the package is angular: frequencies and couplings in
rad/us, rates in 1/us, times in us.  Conversion happens once, when a value
is read from a config file or written to an output file.
"""

import math

TWO_PI = 2.0 * math.pi

#: Unit tags understood by the config reader.
MHZ_OVER_2PI = "MHz_over_2pi"  # value is omega/2pi in MHz
MHZ_RATE = "MHz_rate"  # value is a plain rate in 1/us
US = "us"

UNIT_TAGS = (MHZ_OVER_2PI, MHZ_RATE, US)


def from_mhz(f_mhz):
    """omega/2pi in MHz -> angular rad/us."""
    return TWO_PI * f_mhz


def to_mhz(omega):
    """angular rad/us -> omega/2pi in MHz."""
    return omega / TWO_PI


def to_internal(value, unit):
    """Convert a tagged scalar (or array) to internal units."""
    if unit == MHZ_OVER_2PI:
        return from_mhz(value)
    if unit in (MHZ_RATE, US):
        return value
    raise ValueError(f"unknown unit tag {unit!r}; expected one of {UNIT_TAGS}")
