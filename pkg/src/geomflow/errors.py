"""Exception types shared across the package.

Solver-level failures (singular matrices, stalled Newton iterations, degenerate
geometry) are ordinary exceptions.  The two detection types, BlowupDetected and
PinchOffDetected, are raised by the evolution drivers when a run terminates
early on purpose; they carry the last valid state and the detection time so
callers can still inspect and serialize the partial result.
"""

from __future__ import annotations


class GeomFlowError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GeomFlowError):
    """Invalid run configuration.  ``field`` holds a dotted path into the config."""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class SingularMatrixError(GeomFlowError):
    """Direct factorization detected (numerical) rank deficiency."""


class NoConvergenceError(GeomFlowError):
    """Newton iteration failed to reach tolerance within the iteration budget."""

    def __init__(self, iterations: int, residual_norm: float):
        self.iterations = iterations
        self.residual_norm = residual_norm
        super().__init__(
            f"Newton did not converge in {iterations} iterations "
            f"(residual {residual_norm:.3e})"
        )


class DegenerateEdgeError(GeomFlowError):
    """A polygonal curve has an edge of (numerically) zero length."""


class DegenerateTriangleError(GeomFlowError):
    """A surface mesh has a triangle of (numerically) zero area."""


class MeshTopologyError(GeomFlowError):
    """Triangle mesh is not a closed orientable surface."""


class NonSimplePolygonError(GeomFlowError):
    """A polygon handed to a shape metric self-intersects."""


class NonPositiveCurvatureError(GeomFlowError):
    """A Newton iterate produced kappa <= 0 where a non-integer power requires kappa > 0."""


class NonPositiveError(GeomFlowError):
    """A convergence-table error entry is not strictly positive."""


class ZeroInitialMeasureError(GeomFlowError):
    """A normalized diagnostic series starts from a zero measure."""


class BlowupDetected(GeomFlowError):
    """Curve evolution halted: mesh ratio, edge length or area crossed a blow-up threshold.

    Attributes
    ----------
    time : float
        Time of the offending step (first invalid state).
    state :
        Last valid CurveState.
    diagnostics :
        DiagnosticsSeries recorded up to and including the last valid state.
    cause : Exception or str
        Threshold description, or the step-level error that triggered the halt.
    """

    def __init__(self, time: float, state, diagnostics, cause):
        self.time = time
        self.state = state
        self.diagnostics = diagnostics
        self.cause = cause
        super().__init__(f"blow-up detected at t={time:.6g}: {cause}")


class PinchOffDetected(GeomFlowError):
    """Surface evolution halted: triangle area or edge length fell below the pinch thresholds.

    Same payload convention as BlowupDetected.
    """

    def __init__(self, time: float, state, diagnostics, cause):
        self.time = time
        self.state = state
        self.diagnostics = diagnostics
        self.cause = cause
        super().__init__(f"pinch-off detected at t={time:.6g}: {cause}")
