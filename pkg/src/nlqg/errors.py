"""Exception types shared across the package."""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid experiment configuration.

    ``key`` is the dotted key path (``dg.D``) and ``line`` the 1-based line in
    the source file when it is known.
    """

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = ""
        if key is not None:
            where = f"{key}"
            if line is not None:
                where += f" (line {line})"
            where += ": "
        super().__init__(where + message)


class NumericalInstability(RuntimeError):
    """Raised when a time step blows up (non-finite values or a norm jump)."""

    def __init__(self, message: str, step: int | None = None, time: float | None = None):
        self.step = step
        self.time = time
        super().__init__(message if step is None else f"{message} (step {step}, t={time:.6g})")


class UnphysicalState(RuntimeError):
    """Raised when a state leaves the physical domain (e.g. negative density)."""


class CollapseError(ValueError):
    """Post-measurement state has vanishing norm."""
