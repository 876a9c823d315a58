"""Exception hierarchy shared by the library, the CLI and the HTTP service.

Two families matter downstream: :class:`InputError` covers everything a caller
can fix by changing their input (CLI exit code 3, HTTP 400), while
:class:`NumericalError` covers failures of the numerics on structurally valid
input (CLI exit code 4, HTTP 422).
"""


class SpdeFieldError(Exception):
    """Base class for all package errors."""


class InputError(SpdeFieldError):
    """Invalid caller input: bad geometry, malformed files, rank defects."""


class NumericalError(SpdeFieldError):
    """Numerics failed on structurally valid input."""


class CollinearInput(InputError):
    """All mesh input locations lie on a single line."""


class DegeneratePolygon(InputError):
    """Boundary polygon is self-intersecting, repeated, or has near-zero area."""


class GraphFormatError(InputError):
    """Adjacency file violates the expected format.

    Parameters
    ----------
    message : str
    line : int, optional
        One-based line number of the offending line, if known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class AsymmetricGraph(InputError):
    """Adjacency listing is not symmetric (i lists j but j does not list i)."""


class ConstraintRankError(InputError):
    """Linear constraint rows are rank deficient or over-determined."""


class SingletonComponentWarning(UserWarning):
    """A graph component has a single region; it is left with unit iid variance."""


class NotPositiveDefinite(NumericalError):
    """Matrix passed to a Cholesky-type factorisation is not positive definite."""


class NewtonDivergence(NumericalError):
    """Inner mode-finding Newton iteration failed to converge."""


class OptimizerFailure(NumericalError):
    """Hyperparameter optimizer returned no usable maximum."""


class GridExplosion(NumericalError):
    """Hyperparameter grid exceeded its point budget."""
