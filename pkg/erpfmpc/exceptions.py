"""
Exception types raised across the planner.
"""

from typing import Optional

import numpy as np


class ValidationError(ValueError):
    """Raised when an input or parameter violates a documented invariant."""

    def __init__(self, field: str, constraint: str):
        """
        Args:
            field: Name of the offending field (dotted for nested config keys)
            constraint: Human-readable description of the violated constraint
        """
        self.field = field
        self.constraint = constraint
        super().__init__(f"{field}: {constraint}")


class ConfigError(ValueError):
    """Raised when a configuration or scenario file cannot be parsed."""

    def __init__(self, message: str, line: Optional[int] = None,
                 column: Optional[int] = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class NonFiniteError(ArithmeticError):
    """Raised when the solver meets a non-finite cost or gradient."""

    def __init__(self, message: str, iterate: np.ndarray):
        self.iterate = np.array(iterate, dtype=float, copy=True)
        super().__init__(message)
