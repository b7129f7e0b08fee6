"""Exception hierarchy shared by all flexgrid modules.

Two families matter for the CLI exit-code contract: ``InputError``
(malformed or inconsistent user input, exit code 2) and
``ComputationError`` (a numerically valid request that could not be
completed, exit code 3).
"""


class FlexGridError(Exception):
    """Base class for all errors raised by this package."""


class InputError(FlexGridError):
    """Bad or inconsistent input files/arguments (CLI exit code 2)."""


class ComputationError(FlexGridError):
    """A computation failed on otherwise valid input (CLI exit code 3)."""


# -- input side ---------------------------------------------------------

class ParseError(InputError):
    """File does not match the expected JSON/CSV schema."""


class ValidationError(InputError):
    """Parsed data violates a model invariant; names the offending element."""


class ZeroBaseError(InputError):
    """Per-unit conversion attempted with a zero base quantity."""


class UnknownIdError(InputError):
    """A referenced bus/branch id does not exist in the grid."""


class NonMonotonicTimestampError(InputError):
    """Measurement timestamps are not strictly increasing."""


class UnknownParameterError(InputError):
    """A referenced uncertain-parameter id does not exist."""


class InvalidSpecError(InputError):
    """A synthetic fixture spec is out of its allowed range."""


# -- computation side ---------------------------------------------------

class NonConvergenceError(ComputationError):
    """Newton-Raphson hit the iteration cap; carries the last mismatch."""

    def __init__(self, message, mismatch=None):
        super().__init__(message)
        self.mismatch = mismatch


class InsufficientDataError(ComputationError):
    """Too few (or degenerate) measurement frames for a regression."""


class IllConditionedError(ComputationError):
    """Regression system condition number above threshold after ridge."""


class MissingSensitivityRowError(ComputationError):
    """A limited bus/branch has no fitted sensitivity row."""


class AnchorMismatchError(ComputationError):
    """Sensitivity set was estimated around a different operating point."""


class OriginInfeasibleError(ComputationError):
    """The anchor operating point already violates a constraint."""


class EmptyUncertaintyError(ComputationError):
    """No uncertain parameters could be built for a time slot."""
