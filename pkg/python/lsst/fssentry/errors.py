# This file is part of fssentry.
#
# Developed for the LSST Data Management System.
# This product includes software developed by the LSST Project
# (https://www.lsst.org).
# See the COPYRIGHT file at the top-level directory of this distribution
# for details of code ownership.
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

"""Exception classes used throughout the package."""

from __future__ import annotations

__all__ = [
    "AttackError",
    "ConfigError",
    "DivergenceError",
    "FormatError",
    "FsSentryError",
    "NumericError",
    "SamplingError",
    "ShapeError",
]


class FsSentryError(Exception):
    """Base class for all exceptions raised by this package."""


class FormatError(FsSentryError, ValueError):
    """Exception raised when a file on disk does not follow its declared
    format.

    Parameters
    ----------
    field : `str`
        Name of the offending field (e.g. "magic", "version", "payload").
    message : `str`
        Description of the problem.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ShapeError(FsSentryError, ValueError):
    """Exception raised when a tensor shape does not match the expected one.

    Parameters
    ----------
    expected : `tuple` [ `int`, ... ]
        Expected shape, ``-1`` marks a free extent.
    actual : `tuple` [ `int`, ... ]
        Actual shape.
    what : `str`, optional
        What is being checked.
    """

    def __init__(self, expected: tuple[int, ...], actual: tuple[int, ...], what: str = "tensor"):
        super().__init__(f"{what} shape mismatch: expected {expected}, actual {actual}")
        self.expected = expected
        self.actual = actual


class NumericError(FsSentryError, ArithmeticError):
    """Exception raised when a computation produces non-finite values.

    Parameters
    ----------
    message : `str`
        Description of the problem.
    layer : `int`, optional
        Index of the first layer with non-finite output, if known.
    """

    def __init__(self, message: str, layer: int | None = None):
        if layer is not None:
            message = f"{message} (layer {layer})"
        super().__init__(message)
        self.layer = layer


class DivergenceError(FsSentryError, RuntimeError):
    """Exception raised when training produces a non-finite loss.

    Parameters
    ----------
    index : `int`
        Episode or epoch index at which training diverged.
    what : `str`
        Either "episode" or "epoch".
    """

    def __init__(self, index: int, what: str = "episode"):
        super().__init__(f"training diverged at {what} {index}: non-finite loss")
        self.index = index


class AttackError(FsSentryError, RuntimeError):
    """Exception raised when an attack produces a non-finite gradient.

    Parameters
    ----------
    iteration : `int`
        Attack iteration index.
    """

    def __init__(self, iteration: int):
        super().__init__(f"non-finite gradient at attack iteration {iteration}")
        self.iteration = iteration


class SamplingError(FsSentryError, ValueError):
    """Exception raised when a split or class has too few samples or
    classes for the requested episode.
    """


class ConfigError(FsSentryError, ValueError):
    """Exception raised for invalid or inconsistent configuration."""
