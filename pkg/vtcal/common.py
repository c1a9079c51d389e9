"""Small helper classes and the error hierarchy."""

import numpy as np

from vtcal.htables import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC


class BaseClass:
    """Implement basic functionality for all classes."""

    def __str__(self):
        """Return a string representation."""
        return self.__repr__()

    def __eq__(self, other):
        """Override equality operator, comparing arrays by value."""
        if not isinstance(other, self.__class__):
            return False
        if self.__dict__.keys() != other.__dict__.keys():
            return False
        return all(
            _values_equal(value, other.__dict__[key])
            for key, value in self.__dict__.items()
        )

    def __ne__(self, other):
        """Override inequality operator."""
        return not self.__eq__(other)

    __hash__ = None


def _values_equal(first, second):
    """Compare two attribute values, arrays included."""
    if isinstance(first, np.ndarray) or isinstance(second, np.ndarray):
        return (
            isinstance(first, np.ndarray)
            and isinstance(second, np.ndarray)
            and first.shape == second.shape
            and np.array_equal(first, second)
        )
    if isinstance(first, dict) and isinstance(second, dict):
        return first.keys() == second.keys() and all(
            _values_equal(value, second[key]) for key, value in first.items()
        )
    if isinstance(first, (list, tuple)) and isinstance(second, (list, tuple)):
        return len(first) == len(second) and all(
            _values_equal(a, b) for a, b in zip(first, second)
        )
    return first == second


class VtcalError(Exception):
    """Base class for all errors raised by vtcal."""

    exit_code = 1


class ConfigError(VtcalError, ValueError):
    """An invalid or incompatible configuration value."""

    exit_code = EXIT_CONFIG


class PersistenceError(VtcalError, OSError):
    """A file could not be read, written or trusted."""

    exit_code = EXIT_IO


class NumericError(VtcalError, ArithmeticError):
    """A numeric operation produced or met a non-finite value."""

    exit_code = EXIT_NUMERIC


class DegenerateVectorError(NumericError, ValueError):
    """A vector is too close to zero to be normalized."""


class HookError(VtcalError, RuntimeError):
    """A hook broke the hidden-state contract."""


def hook_name(hook):
    """Return a readable name for a hook callable."""
    return getattr(hook, "name", None) or getattr(hook, "__name__", repr(hook))
