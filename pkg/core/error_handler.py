"""
Error Handler for the elliptic measure laboratory

Provides the lab's exception hierarchy and a centralized handler that turns
failures into categorized, logged reports. The verification matrix routes every
failing invariant through the handler so a failure becomes a row, not a crash.
"""

import logging
import traceback
from enum import Enum
from typing import Callable, List, Optional, Sequence
from dataclasses import dataclass


logger = logging.getLogger(__name__)


class ErrorCategory(Enum):
    """Error categories for classification."""
    GEOMETRY = "geometry"
    DYADIC = "dyadic"
    SOLVER = "solver"
    MEASURE = "measure"
    CONFIG = "config"
    STORAGE = "storage"
    UNKNOWN = "unknown"


class ErrorSeverity(Enum):
    """Error severity levels."""
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"
    CRITICAL = "critical"


@dataclass
class ErrorContext:
    """Context information for an error."""
    category: ErrorCategory
    severity: ErrorSeverity
    operation: str
    user_message: str
    technical_details: str
    domain: Optional[str] = None
    invariant: Optional[str] = None


# Custom Exception Classes

class LabError(Exception):
    """Base exception for laboratory errors."""

    def __init__(self, message: str, category: ErrorCategory = ErrorCategory.UNKNOWN):
        super().__init__(message)
        self.category = category


class GeometryError(LabError):
    """Domain construction and geometric query errors."""

    def __init__(self, message: str):
        super().__init__(message, ErrorCategory.GEOMETRY)


class DisconnectedDomainError(GeometryError):
    """The interior cells do not form a single connected component."""
    pass


class DegenerateBallError(GeometryError):
    """A surface ball contains no interior cell to serve as corkscrew."""
    pass


class UnreachablePointError(GeometryError):
    """No chain of interior cells joins the two points."""
    pass


class ResolutionError(GeometryError):
    """The requested scale is below what the lattice resolves."""
    pass


class DyadicError(LabError):
    """Dyadic lattice and Whitney construction errors."""

    def __init__(self, message: str):
        super().__init__(message, ErrorCategory.DYADIC)


class DyadicRangeError(DyadicError):
    """A generation outside [k_min, k_max] was requested."""
    pass


class WhitneyTuningError(DyadicError):
    """No admissible (K0, k*) connects a Whitney region."""
    pass


class SolverError(LabError):
    """Discrete elliptic solver errors."""

    def __init__(self, message: str):
        super().__init__(message, ErrorCategory.SOLVER)


class EllipticityError(SolverError):
    """Coefficient matrix violates the ellipticity bounds."""

    def __init__(self, message: str, cell: Optional[int] = None, value: Optional[float] = None):
        super().__init__(message)
        self.cell = cell
        self.value = value


class PoleError(SolverError):
    """Pole too close to the boundary for the lattice to resolve."""
    pass


class SolverConvergenceError(SolverError):
    """Linear solve failed to reach the residual tolerance."""

    def __init__(self, message: str, residual_history: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.residual_history: List[float] = list(residual_history or [])


class MaximumPrincipleError(SolverError):
    """Computed solution leaves the range of its boundary data."""
    pass


class MeasureError(LabError):
    """Measure, density and functional evaluation errors."""

    def __init__(self, message: str):
        super().__init__(message, ErrorCategory.MEASURE)


class DensityError(MeasureError):
    """Radon-Nikodym density undefined because the reference measure vanishes."""
    pass


class CoverageError(MeasureError):
    """A cone or ball reaches cells where the solution is not available."""
    pass


class ScenarioAssertionError(MeasureError):
    """An invariant checked during a scenario run was violated."""

    def __init__(self, invariant: str, message: str):
        super().__init__(f"{invariant}: {message}")
        self.invariant = invariant


class LabConfigError(LabError):
    """Configuration errors."""

    def __init__(self, message: str):
        super().__init__(message, ErrorCategory.CONFIG)


class StorageError(LabError):
    """Run registry and dump file errors."""

    def __init__(self, message: str):
        super().__init__(message, ErrorCategory.STORAGE)


class ErrorHandler:
    """
    Global error handler for the laboratory.

    Provides centralized error handling with:
    - Error categorization (geometry, dyadic, solver, measure, config, storage)
    - Severity classification
    - Readable messages naming the failing domain and invariant
    - Detailed logging for debugging
    - A callback hook so reports can be collected

    Usage:
        error_handler = get_error_handler()

        try:
            run_check()
        except Exception as e:
            error_handler.handle_error(e, "whitney_cover", domain="square")
    """

    def __init__(self):
        """Initialize error handler."""
        self._report_callback: Optional[Callable[[ErrorContext], None]] = None
        self._error_count = 0

    def set_report_callback(self, callback: Callable[[ErrorContext], None]) -> None:
        """
        Set callback receiving every handled error.

        Args:
            callback: Function(error_context: ErrorContext)
        """
        self._report_callback = callback

    def handle_error(
        self,
        error: Exception,
        context: str,
        domain: Optional[str] = None,
        invariant: Optional[str] = None,
        notify: bool = True
    ) -> ErrorContext:
        """
        Handle an error with appropriate categorization and response.

        Args:
            error: The exception that occurred
            context: Description of the operation that failed
            domain: Optional domain name the operation ran on
            invariant: Optional invariant name being checked
            notify: Whether to call the report callback (default: True)

        Returns:
            ErrorContext with categorized error information
        """
        self._error_count += 1

        if isinstance(error, LabError):
            category = error.category
        else:
            category = self._categorize_error(error)

        severity = self._determine_severity(error, category)
        user_message = self._generate_user_message(error, category, context)
        technical_details = self._get_technical_details(error)

        error_context = ErrorContext(
            category=category,
            severity=severity,
            operation=context,
            user_message=user_message,
            technical_details=technical_details,
            domain=domain,
            invariant=invariant
        )

        self._log_error(error_context)

        if notify and self._report_callback:
            try:
                self._report_callback(error_context)
            except Exception as e:
                logger.error(f"Failed to deliver error report: {e}")

        return error_context

    def _categorize_error(self, error: Exception) -> ErrorCategory:
        """
        Categorize a foreign error based on its type and message.

        Args:
            error: The exception to categorize

        Returns:
            ErrorCategory
        """
        error_type = type(error).__name__.lower()
        error_msg = str(error).lower()

        if any(keyword in error_type or keyword in error_msg for keyword in [
            'singular', 'factor', 'linalg', 'converge', 'sparse'
        ]):
            return ErrorCategory.SOLVER

        if any(keyword in error_type or keyword in error_msg for keyword in [
            'database', 'sqlite', 'file', 'permission', 'cbor'
        ]):
            return ErrorCategory.STORAGE

        if any(keyword in error_type or keyword in error_msg for keyword in [
            'yaml', 'config', 'field'
        ]):
            return ErrorCategory.CONFIG

        return ErrorCategory.UNKNOWN

    def _determine_severity(
        self,
        error: Exception,
        category: ErrorCategory
    ) -> ErrorSeverity:
        """
        Determine the severity of an error.

        Args:
            error: The exception
            category: Error category

        Returns:
            ErrorSeverity
        """
        if isinstance(error, (MemoryError, StorageError)):
            return ErrorSeverity.CRITICAL

        # tuning retries and skipped items are recoverable
        if isinstance(error, (WhitneyTuningError, DegenerateBallError)):
            return ErrorSeverity.WARNING

        if category == ErrorCategory.CONFIG:
            return ErrorSeverity.CRITICAL

        return ErrorSeverity.ERROR

    def _generate_user_message(
        self,
        error: Exception,
        category: ErrorCategory,
        context: str
    ) -> str:
        """
        Generate a readable error message.

        Args:
            error: The exception
            category: Error category
            context: Operation context

        Returns:
            Message text
        """
        if isinstance(error, SolverConvergenceError) and error.residual_history:
            return (
                f"Linear solve did not converge (last residual "
                f"{error.residual_history[-1]:.3e} after {len(error.residual_history)} steps)"
            )
        if isinstance(error, ScenarioAssertionError):
            return f"Invariant violated: {error}"
        if isinstance(error, LabError):
            return str(error)
        if category == ErrorCategory.UNKNOWN:
            return f"Unexpected {type(error).__name__} during {context}: {error}"
        return f"{category.value} failure during {context}: {error}"

    def _get_technical_details(self, error: Exception) -> str:
        """
        Get technical details for logging.

        Args:
            error: The exception

        Returns:
            Technical details string
        """
        details = [
            f"Exception Type: {type(error).__name__}",
            f"Message: {str(error)}",
            "Traceback:",
            "".join(traceback.format_exception(type(error), error, error.__traceback__))
        ]
        return "\n".join(details)

    def _log_error(self, error_context: ErrorContext):
        """
        Log error with appropriate level.

        Args:
            error_context: Error context information
        """
        log_message = (
            f"[{error_context.category.value.upper()}] "
            f"{error_context.operation}: {error_context.user_message}"
        )

        extra_info = []
        if error_context.domain:
            extra_info.append(f"domain={error_context.domain}")
        if error_context.invariant:
            extra_info.append(f"invariant={error_context.invariant}")

        if extra_info:
            log_message += f" ({', '.join(extra_info)})"

        if error_context.severity == ErrorSeverity.CRITICAL:
            logger.critical(log_message)
            logger.critical(f"Technical details:\n{error_context.technical_details}")
        elif error_context.severity == ErrorSeverity.ERROR:
            logger.error(log_message)
            logger.debug(f"Technical details:\n{error_context.technical_details}")
        elif error_context.severity == ErrorSeverity.WARNING:
            logger.warning(log_message)
            logger.debug(f"Technical details:\n{error_context.technical_details}")
        else:
            logger.info(log_message)

    def get_error_count(self) -> int:
        """
        Get total number of errors handled.

        Returns:
            Error count
        """
        return self._error_count

    def reset_error_count(self):
        """Reset error counter."""
        self._error_count = 0


# Global error handler instance
_global_error_handler: Optional[ErrorHandler] = None


def get_error_handler() -> ErrorHandler:
    """
    Get the global error handler instance.

    Returns:
        Global ErrorHandler instance
    """
    global _global_error_handler
    if _global_error_handler is None:
        _global_error_handler = ErrorHandler()
    return _global_error_handler


def set_error_handler(handler: ErrorHandler):
    """
    Set the global error handler instance.

    Args:
        handler: ErrorHandler instance to use globally
    """
    global _global_error_handler
    _global_error_handler = handler
