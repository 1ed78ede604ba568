"""Exception hierarchy shared by every toriclab module.

Each error carries a short machine-readable ``code`` and an optional
``detail`` dict so the CLI can serialize it without string parsing.
"""

from __future__ import annotations


class ToricLabError(Exception):
    code = "ToricLabError"
    # exit status used by the command-line front end
    exit_code = 3

    def __init__(self, message: str = "", **detail):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.detail = detail

    def to_dict(self) -> dict:
        return {"error": self.code, "message": self.message, "detail": _plain(self.detail)}


def _plain(obj):
    # make numpy scalars and arrays json friendly
    try:
        import numpy as np
    except ImportError:  # pragma: no cover
        np = None
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if np is not None:
        if isinstance(obj, np.ndarray):
            return _plain(obj.tolist())
        if isinstance(obj, np.generic):
            return obj.item()
    return obj


class ValidationError(ToricLabError):
    exit_code = 2


class NumericalError(ToricLabError):
    exit_code = 3


def _make(name: str, base: type) -> type:
    return type(name, (base,), {"code": name})


# input / geometry validation
NotDelzant = _make("NotDelzant", ValidationError)
Unbounded = _make("Unbounded", ValidationError)
EmptyInterior = _make("EmptyInterior", ValidationError)
ConfigError = _make("ConfigError", ValidationError)
IoError = _make("IoError", ValidationError)
Degenerate = _make("Degenerate", ValidationError)
SpacingTooCoarse = _make("SpacingTooCoarse", ValidationError)
PreconditionViolated = _make("PreconditionViolated", ValidationError)

# numerical failures
OutsideDomain = _make("OutsideDomain", NumericalError)
StencilOutOfDomain = _make("StencilOutOfDomain", NumericalError)
NotConvexHere = _make("NotConvexHere", NumericalError)
NotInImage = _make("NotInImage", NumericalError)
MaxIterations = _make("MaxIterations", NumericalError)
LeftDomain = _make("LeftDomain", NumericalError)
NoPathFound = _make("NoPathFound", NumericalError)
ConvexityLost = _make("ConvexityLost", NumericalError)
Diverged = _make("Diverged", NumericalError)
NotCompact = _make("NotCompact", NumericalError)
ResampleOutOfDomain = _make("ResampleOutOfDomain", NumericalError)
BisectionFailed = _make("BisectionFailed", NumericalError)
InsufficientResolution = _make("InsufficientResolution", NumericalError)

__all__ = [
    "ToricLabError", "ValidationError", "NumericalError",
    "NotDelzant", "Unbounded", "EmptyInterior", "ConfigError", "IoError",
    "Degenerate", "SpacingTooCoarse", "PreconditionViolated",
    "OutsideDomain", "StencilOutOfDomain", "NotConvexHere", "NotInImage",
    "MaxIterations", "LeftDomain", "NoPathFound", "ConvexityLost", "Diverged",
    "NotCompact", "ResampleOutOfDomain", "BisectionFailed",
    "InsufficientResolution",
]
