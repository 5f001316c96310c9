"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line front end can map
failures to distinct process statuses without inspecting messages.
"""


class ArmingtonError(Exception):
    exit_code = 5
    kind = "error"

    def to_dict(self):
        return {"error": self.kind, "message": str(self)}


class ParseError(ArmingtonError):
    """Malformed input row. ``line`` is the 1-based line in the source."""

    exit_code = 2
    kind = "parse"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConflictError(ParseError):
    kind = "conflict"


class DimensionError(ArmingtonError):
    exit_code = 3
    kind = "dimension"


class NotApplicableError(ArmingtonError):
    """The method cannot run on this data (e.g. IVFE without quantities)."""

    exit_code = 3
    kind = "not_applicable"


class NumericalError(ArmingtonError):
    exit_code = 4
    kind = "numerical"


class SingularDesignError(NumericalError):
    kind = "singular_design"

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class SingularRecoveryError(NumericalError):
    """``1 + kappa * omega`` (or a transform gradient) is not usable."""

    kind = "singular_recovery"


class ConvergenceError(NumericalError):
    kind = "convergence"


class EstimationError(ArmingtonError):
    exit_code = 5
    kind = "estimation"


class IdentificationError(EstimationError):
    """Too few instruments, or instruments with no explanatory power."""

    kind = "identification"


class ComplexRootsError(EstimationError):
    kind = "complex_roots"

    def __init__(self, message, alpha1, alpha2):
        super().__init__(message)
        self.alpha1 = alpha1
        self.alpha2 = alpha2


class DegenerateError(EstimationError):
    kind = "degenerate"
