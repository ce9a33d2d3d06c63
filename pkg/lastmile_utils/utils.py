"""Utils functions shared by the simulation and trace pipelines."""

import logging
import numbers
import re
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path

import astropy.units as u

__all__ = [
    "LastMileError",
    "SchedulingInPast",
    "NonPositiveRate",
    "ConfigInvalid",
    "AxisTooShort",
    "MalformedJson",
    "EmptyDocument",
    "PathNotFound",
    "EmptyTrack",
    "EmptyWindow",
    "DegenerateOD",
    "miles_to_km",
    "km_to_miles",
    "read_config",
    "check_config_keys",
    "check_number",
    "clean_text",
    "round_display",
    "set_log_level",
]

logger = logging.getLogger("lastmile_utils")

# Logger setup
# This will stream all logger messages to standard error and
# apply formatting for that. stdout is reserved for data and summaries.
logger.propagate = False  # prevents duplicated logging messages
LOGFORMAT = logging.Formatter(
    "%(asctime)s %(levelname)s: %(message)s", datefmt="%m/%d/%Y %I:%M:%S%p"
)
ch = logging.StreamHandler(stream=sys.stderr)
ch.setFormatter(LOGFORMAT)
# To prevent duplicate handlers, only add if they haven't been set previously
if len(logger.handlers) == 0:
    logger.addHandler(ch)
logger.setLevel(logging.INFO)


class LastMileError(Exception):
    """Base class for every error raised by lastmile_utils"""


class SchedulingInPast(LastMileError):
    pass


class NonPositiveRate(LastMileError):
    pass


class ConfigInvalid(LastMileError):
    """A configuration value violates its invariant.

    Attributes
    ----------
    field: str
        Name of the offending configuration key
    cell: tuple, optional
        Sweep coordinates (policy, d_s, d_h) when raised from a sweep cell
    """

    def __init__(self, field, message, cell=None):
        self.field = field
        self.cell = cell
        msg = f"{field}: {message}"
        if cell is not None:
            msg += f" (cell policy={cell[0]}, d_s={cell[1]}, d_h={cell[2]})"
        super().__init__(msg)


class AxisTooShort(LastMileError):
    pass


class MalformedJson(LastMileError):
    pass


class EmptyDocument(LastMileError):
    pass


class PathNotFound(LastMileError):
    pass


class EmptyTrack(LastMileError):
    pass


class EmptyWindow(LastMileError):
    pass


class DegenerateOD(LastMileError):
    pass


def set_log_level(level):
    """Set the level of the package logger, e.g. ``logging.WARNING`` for --quiet"""
    logger.setLevel(level)


def miles_to_km(value):
    """Convert statute miles (or miles per hour) to kilometres (or km/h)"""
    return (value * u.imperial.mile).to(u.km).value


def km_to_miles(value):
    """Convert kilometres (or km/h) to statute miles (or miles per hour)"""
    return (value * u.km).to(u.imperial.mile).value


def read_config(path, sections=None):
    """
    Read a TOML scenario or sweep config file

    Parameters
    ----------
    path: str or Path
        Path to the config file
    sections: dict, optional
        Mapping of section name to the set of allowed keys.
        Unknown sections or keys raise ConfigInvalid.

    Returns
    -------
    dict
        The parsed config, one dict per section

    """
    path = Path(path)
    if not path.exists():
        msg = f"Config file not found: {path}"
        logger.error(msg)
        raise PathNotFound(msg)

    try:
        with open(path, "rb") as f:
            config = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        msg = f"Could not parse config file {path}: {e}"
        logger.error(msg)
        raise ConfigInvalid(str(path), str(e)) from e

    if sections is not None:
        for section, values in config.items():
            if section not in sections:
                msg = f"unknown config section in {path}"
                logger.error(f"Config section [{section}]: {msg}")
                raise ConfigInvalid(section, msg)
            if not isinstance(values, dict):
                logger.error(f"Config section [{section}] in {path} is not a table")
                raise ConfigInvalid(section, "expected a table of key = value pairs")
            check_config_keys(values, sections[section], section=section)

    logger.debug(f"Config read from {path}: {config}")
    return config


def check_config_keys(values, allowed, section=None):
    """Raise ConfigInvalid naming the first key not in ``allowed``"""
    for key in values:
        if key not in allowed:
            field = f"{section}.{key}" if section else key
            logger.error(f"Unknown config key {field}")
            raise ConfigInvalid(field, "unknown config key")


def check_number(field, value, integer=False):
    """
    Raise ConfigInvalid unless ``value`` is a real number (an integer if ``integer``)

    Booleans are rejected.
    """
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind):
        expected = "an integer" if integer else "a number"
        logger.error(f"Invalid config {field}={value!r}: expected {expected}")
        raise ConfigInvalid(field, f"expected {expected}, got {value!r}")
    return value


# Code points outside the XML 1.0 Char production, lone surrogates included
_XML_INVALID = re.compile("[^\t\n\r\x20-\ud7ff\ue000-\ufffd\U00010000-\U0010ffff]")


def clean_text(value):
    """Drop characters that XML 1.0 cannot carry and that UTF-8 cannot encode"""
    return _XML_INVALID.sub("", value)


def round_display(value, decimals=1):
    """
    Round a value for display using round-half-up at ``decimals`` places

    Exact inputs (Fraction, int) are rounded without passing through a float,
    so 1090.5 displays as 1091.

    Parameters
    ----------
    value: Fraction, int or float
    decimals: int

    Returns
    -------
    Decimal
    """
    if isinstance(value, Fraction):
        exact = Decimal(value.numerator) / Decimal(value.denominator)
    else:
        exact = Decimal(str(value))
    quantum = Decimal(1).scaleb(-decimals)
    return exact.quantize(quantum, rounding=ROUND_HALF_UP)
