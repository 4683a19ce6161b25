"""Exception types raised by the estimation pipeline."""


class RsPoseError(Exception):
    """Base class for all library errors."""


class NumericalFailure(RsPoseError):
    """Linear algebra on a solver instance broke down (tiny pivot, singular block)."""


class DegenerateInput(RsPoseError):
    """Input configuration admits no usable solution (rank-deficient, no real roots)."""


class InsufficientData(RsPoseError):
    """Fewer correspondences than the minimal sample size."""


class NoValidHypothesis(RsPoseError):
    """Every RANSAC iteration failed to produce a real candidate."""


class DivergenceDetected(RsPoseError):
    """Nonlinear refinement could not decrease the cost at maximum damping."""


class AmbiguousDecomposition(RsPoseError):
    """Essential-matrix factorizations tie on the cheirality vote."""


class GenerationFailed(RsPoseError):
    """Synthetic scene generation could not produce enough correspondences."""


class ParseError(RsPoseError):
    """Dataset file is not valid JSON or misses required fields."""

    def __init__(self, message, path=None, field=None):
        self.path = path
        self.field = field
        ctx = f" [file: {path}]" if path else ""
        ctx += f" [field: {field}]" if field else ""
        super().__init__(message + ctx)


class ValidationError(RsPoseError):
    """Dataset content violates an invariant (bounds, counts, units)."""


class TemplateFormatError(RsPoseError):
    """Solver template file has a wrong magic header or version."""
