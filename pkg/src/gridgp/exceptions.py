"""Exception types shared across the package.

Input-validation problems raise plain ``ValueError`` (or the parse-error
subclasses below, which carry file locations); failures of the numerical
machinery raise ``NumericalError`` so callers can tell bad input from a
computation that broke down.
"""

from __future__ import annotations


class NumericalError(RuntimeError):
    """A numerical routine failed (factorization, singular system, divergence)."""


class PowerFlowError(NumericalError):
    """Power-flow iteration diverged or failed to converge.

    ``mismatch_trace`` holds the per-iteration maximum complex-power
    mismatch (pu) observed before the failure.
    """

    def __init__(self, message: str, mismatch_trace: list[float] | None = None):
        super().__init__(message)
        self.mismatch_trace = list(mismatch_trace) if mismatch_trace else []


class FeederFormatError(ValueError):
    """Feeder file failed to parse or validate; carries a line number when known."""

    def __init__(self, message: str, *, line: int | None = None, source: str = ""):
        loc = f"{source or 'feeder'}"
        if line is not None:
            loc += f", line {line}"
        super().__init__(f"{loc}: {message}")
        self.line = line
        self.source = source


class DatasetFormatError(ValueError):
    """Dataset/series CSV failed to parse; carries a line number when known."""

    def __init__(self, message: str, *, line: int | None = None, source: str = ""):
        loc = f"{source or 'dataset'}"
        if line is not None:
            loc += f", line {line}"
        super().__init__(f"{loc}: {message}")
        self.line = line
        self.source = source
