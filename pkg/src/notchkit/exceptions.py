"""Exception hierarchy.

Every error raised by the toolkit derives from :class:`NotchkitError`.  Each
class carries an ``exit_code`` so the command-line front end can map failures
onto stable process exit statuses (1 usage, 2 parse, 3 validation,
4 numeric/diagnostic, 5 I/O).
"""


class NotchkitError(Exception):
    exit_code = 4


class ParameterError(NotchkitError, ValueError):
    exit_code = 3


class ResolutionError(ParameterError):
    """Waveform too short (or too long) for the requested resolution bandwidth."""


class GeometryError(ParameterError):
    """Notch or band geometry does not fit the frequency grid."""


class ModelError(ParameterError):
    """Impairment model violates a physical constraint (e.g. non-Hermitian crosstalk)."""


class PlanError(ParameterError):
    """Stitch plan fails its coverage or overlap invariants."""

    def __init__(self, message, uncovered=()):
        super().__init__(message)
        self.uncovered = list(uncovered)


class GridError(ParameterError):
    """Two spectra that must share a grid do not."""


class RegionError(ParameterError):
    """A band selects no bins of a grid."""


class NormalizationError(NotchkitError, ArithmeticError):
    """The normalization factor is undefined (no power inside the band of interest)."""


class StitchError(NotchkitError):
    """Traces do not jointly cover the band of interest."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class PairingError(NotchkitError):
    """No un-notched partner trace exists for some claimed bins."""


class FitError(NotchkitError, ArithmeticError):
    """Least-squares fit is degenerate."""


class DiagnosticError(NotchkitError):
    """A numerical diagnostic failed; ``curve`` holds the offending data."""

    def __init__(self, message, curve=None):
        super().__init__(message)
        self.curve = curve


class ParseError(NotchkitError):
    exit_code = 2

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(ParseError):
    """File parsed but its content violates the documented format."""


class ValidationError(ParameterError):
    """Scenario failed validation; ``problems`` lists every violated constraint."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
