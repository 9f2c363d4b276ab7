"""
Exception hierarchy for puzzlekit analyses.

Every error carries keyword context and can be turned into an ErrorData record,
which is what the command line prints as its JSON error object.
"""

from typing import Any, Dict


class PuzzlekitError(Exception):
    """Base class for all analysis errors"""

    exit_code = 1

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = context

    def to_error_data(self) -> Any:
        from .schemas import create_error_data

        return create_error_data(
            error_type=type(self).__name__,
            error_message=self.message,
            context=self.context,
        )


class ConfigurationError(PuzzlekitError):
    """Invalid experiment configuration or environment"""

    exit_code = 2


class MapDefinitionError(ConfigurationError):
    """A map definition file or expression could not be loaded"""


class DomainError(PuzzlekitError):
    """Point outside the domain of the map"""


class FormMismatch(PuzzlekitError):
    """Declared critical order does not match the local form"""


class MultiplicityUndetermined(PuzzlekitError):
    """Every Taylor coefficient up to the tested order vanishes"""


class NotParabolic(PuzzlekitError):
    """Multiplier of the point is not +1 or -1"""


class BranchEscape(PuzzlekitError):
    """Inverse-branch iteration left the monotone branch"""


class PartitionUnavailable(PuzzlekitError):
    """No periodic orbit usable for an admissible set"""


class BoundaryPoint(PuzzlekitError):
    """Point lies on the preimage lattice of the admissible set"""


class DepthOverflow(PuzzlekitError):
    """Requested depth exceeds the cap for the active precision"""


class NoEntryWithinHorizon(PuzzlekitError):
    """Orbit does not enter the target set within the horizon"""


class ChainBroken(PuzzlekitError):
    """Pullback sequence is inconsistent with the forward orbit"""


class PrecisionExhausted(PuzzlekitError):
    """Combinatorial depth not reachable at the active precision"""


class NoReturn(PuzzlekitError):
    """Critical orbit does not return to the current nest level"""


class CascadeTooShort(PuzzlekitError):
    """Central cascade is shorter than the long-cascade threshold"""


class CascadeNotFound(PuzzlekitError):
    """Requested cascade is not among those detected in the nest"""


class DegenerateConfiguration(PuzzlekitError):
    """Intervals do not form a valid cross-ratio configuration"""


class NotDiffeomorphic(PuzzlekitError):
    """Iterate is not a diffeomorphism on the interval"""


class NotAdmissible(PuzzlekitError):
    """Neighbourhood violates the admissibility conditions"""


class NotComparable(PuzzlekitError):
    """Boundary fundamental domains are below the comparability threshold"""


class TraceBroken(PuzzlekitError):
    """Traced boundary curve fails to close"""


class CriticalValueOnBoundary(PuzzlekitError):
    """A critical value of the iterate lies on the traced boundary"""


class BadCorrespondence(PuzzlekitError):
    """Admissible sets cannot be matched in order"""


class GridInconsistent(PuzzlekitError):
    """Matched conjugacy grid is not strictly monotone"""


class RootNotBracketed(PuzzlekitError):
    """Root finder was handed a bracket without sign change"""
