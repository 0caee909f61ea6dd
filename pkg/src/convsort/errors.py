"""Exception types shared across the package.

The CLI maps these onto exit codes: :class:`FormatError` (bad files or
configuration documents) exits with 2, :class:`NumericalError` (a run that
started on valid inputs but cannot produce a result) exits with 3.
"""


class ConvsortError(Exception):
    """Base class for package-specific errors."""


class FormatError(ConvsortError):
    """A file, payload, or configuration document violates its schema."""


class NumericalError(ConvsortError):
    """A computation cannot proceed on the given data."""


class NoSelectableAtomError(NumericalError):
    """All candidate correlations are zero; greedy selection has nothing to pick."""


class IllConditionedSupportError(NumericalError):
    """Adding an atom would make the selected support numerically singular."""
