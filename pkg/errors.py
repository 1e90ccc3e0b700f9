"""
Exception types shared by the thermometry modules.

Every error is a ValueError (or ArithmeticError for numerical degeneracy) so
callers that only care about "bad input" can catch the builtin.
"""


class InvalidAxisError(ValueError):
    """Axis vector is not a unit 3-vector."""


class InvalidMatrixError(ValueError):
    """Matrix is not a 3x3 Hermitian matrix."""


class RegimeError(ValueError):
    """Field too strong for the m_s=0 level to stay the ground state."""

    def __init__(self, ratio, message=None):
        self.ratio = ratio
        super().__init__(
            message
            or f"gamma_e*|B|/D = {ratio:.6g} is outside the model regime (< 0.5)"
        )


class ModelError(ValueError):
    """Synthesized signal would become nonpositive."""


class InvalidModeError(ValueError):
    """Spectrum synthesis called with a field configuration for the other mode."""


class InsufficientGuessesError(ValueError):
    """Peak detection found fewer candidates than the requested peak count."""


class DegenerateFitError(ArithmeticError):
    """Normal matrix of the fit is singular."""

    def __init__(self, parameters):
        self.parameters = list(parameters)
        super().__init__(
            "singular normal matrix; collinear parameters: "
            + ", ".join(self.parameters)
        )


class UnconvergedFitError(ValueError):
    """A D extraction was attempted on a fit that did not converge."""


class InsufficientPeaksError(ValueError):
    """Fit does not hold the number of resolved peaks the extraction needs."""


class DegenerateCalibrationError(ArithmeticError):
    """D-T design matrix is rank deficient."""


class NonInvertibleError(ArithmeticError):
    """Calibration slope is zero."""


class InsufficientDataError(ValueError):
    """Too few values for the requested statistic."""


class ZeroSlopeError(ValueError):
    """Lineshape model has no slope to convert voltage into frequency."""


class InvalidSegmentError(ValueError):
    """Welch segment length or overlap is out of range."""


class EmptyBandError(ValueError):
    """No PSD bins fall inside the averaging band."""


class ParseError(ValueError):
    """Input file is malformed."""

    def __init__(self, path, line_number, reason):
        self.path = str(path)
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"{self.path}:{line_number}: {reason}")


class ConfigError(ValueError):
    """Run configuration failed validation; carries one message per field."""

    def __init__(self, field_errors):
        self.field_errors = list(field_errors)
        super().__init__(
            "invalid configuration:\n  " + "\n  ".join(self.field_errors)
        )
